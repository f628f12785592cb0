"""
Tests for shrink chains, the continuous shrink dynamics and spinal chains.
"""

import math

import numpy as np
import pytest

from app.services import shrink_service
from app.services.geometry import ConvexPolytope, recenter
from app.services.hyperplane_measure import DrivingMeasure
from app.services.split_kernels import BisectionFailure, SplitKernelSpec, UnsplittableCell
from app.services.shrink_service import (
    ShrinkChainState,
    TypicalCellEnsemble,
    compare_typical_cell,
    csd_run,
    csd_waiting_time,
    csd_waiting_time_thinning,
    default_initial_body,
    distort_holding_times,
    extract_spinal_chain,
    get_shrink_service,
    merge_ensembles,
    normalize_body,
    oldest_interior_mass,
    rescale_ensemble,
    shape_functionals,
    shrink_step,
    spinal_residuals,
    spinal_time_diagnostic,
    stationarity_test,
    suggest_thinning,
    volume_weighted_resample,
    window_census,
    zero_cell_report,
)
from app.services.tessellation_service import simulate_window
from config import get_config


class TestShrinkStep:
    def test_normalizations(self, iso2):
        body = ConvexPolytope.box([1.0, 1.0], [3.0, 2.0])
        centered = normalize_body(body, "centered", iso2)
        np.testing.assert_allclose(centered.barycenter, 0.0, atol=1e-12)
        unit = normalize_body(body, "centered_unit", iso2)
        assert iso2.hit_mass(unit) == pytest.approx(1.0)
        assert normalize_body(body, "raw", iso2) is body

    def test_unknown_normalization(self, unit_square):
        with pytest.raises(ValueError):
            ShrinkChainState(unit_square, "unit")

    def test_step_shrinks_the_body(self, unit_square, iso2, rng):
        state = ShrinkChainState(unit_square, "raw")
        for _ in range(10):
            nxt = shrink_step(state, SplitKernelSpec.stit(), iso2, rng)
            assert nxt.body.volume < state.body.volume
            state = nxt

    def test_unit_chain_keeps_unit_mass(self, iso3, rng):
        state = ShrinkChainState(default_initial_body(3, iso3), "centered_unit")
        for _ in range(20):
            state = shrink_step(state, SplitKernelSpec.apportionment(2.0), iso3, rng)
            assert iso3.hit_mass(state.body) == pytest.approx(1.0)

    def test_unsplittable_body(self, iso2, rng):
        sliver = ShrinkChainState(ConvexPolytope.box([0.0, 0.0], [1.0, 0.05]))
        with pytest.raises(UnsplittableCell):
            shrink_step(sliver, SplitKernelSpec.hard_core(0.1), iso2, rng)

    def test_volume_floor_rejects_thin_pieces(self, unit_square, iso2, rng):
        state = ShrinkChainState(unit_square, "raw")
        for _ in range(10):
            nxt = shrink_step(state, SplitKernelSpec.stit(), iso2, rng, eps_vol_rel=0.3)
            assert nxt.body.volume >= 0.3 * state.body.volume - 1e-12
            state = nxt

    def test_impossible_volume_floor(self, unit_square, iso2, rng):
        state = ShrinkChainState(unit_square, "raw")
        with pytest.raises(UnsplittableCell):
            shrink_step(state, SplitKernelSpec.stit(), iso2, rng, resample_limit=5, eps_vol_rel=0.6)

    def test_service_reads_volume_floor_from_config(self):
        assert get_shrink_service().eps_vol_rel == get_config().EPS_VOL_REL

    def test_bisection_failure_is_raised(self, unit_square, iso2, rng, monkeypatch):
        def failing(K, L, c, rng):
            raise BisectionFailure("unresolved fraction")

        monkeypatch.setattr(shrink_service, "kernel_sample", failing)
        with pytest.raises(BisectionFailure):
            shrink_step(ShrinkChainState(unit_square, "raw"), SplitKernelSpec.apportionment(2.0), iso2, rng)

    def test_default_bodies(self, iso2, iso3):
        hexagon = default_initial_body(2, iso2)
        assert hexagon.vertex_count == 6
        assert iso2.hit_mass(hexagon) == pytest.approx(1.0)
        assert iso3.hit_mass(default_initial_body(3, iso3)) == pytest.approx(1.0)


class TestWaitingTimes:
    def test_waiting_time_law(self, rng):
        a = 2.0
        draws = np.array([csd_waiting_time(a, rng) for _ in range(20000)])
        # P(Δ > s) = exp(-a (e^s - 1))
        s = 0.3
        assert (draws > s).mean() == pytest.approx(math.exp(-a * math.expm1(s)), abs=0.01)

    def test_thinning_has_same_law(self, rng):
        a = 0.7
        direct = np.array([csd_waiting_time(a, rng) for _ in range(5000)])
        thinned = np.array([csd_waiting_time_thinning(a, rng) for _ in range(5000)])
        assert direct.mean() == pytest.approx(thinned.mean(), rel=0.05)


class TestCSD:
    @pytest.fixture(scope="class")
    def stit_ensemble(self):
        L = DrivingMeasure.isotropic(2)
        return csd_run(SplitKernelSpec.stit(), L, default_initial_body(2, L), 400,
                       burn_in=500, thin=5, seed=17)

    def test_ensemble_size_and_provenance(self, stit_ensemble):
        assert len(stit_ensemble) == 400
        assert stit_ensemble.provenance == "csd"
        assert stit_ensemble.diagnostics["restarts"] == 0

    def test_mean_mass_rescaled_to_dimension(self, stit_ensemble, iso2):
        assert stit_ensemble.hit_masses(iso2).mean() == pytest.approx(2.0)

    def test_samples_are_centered(self, stit_ensemble):
        for s in stit_ensemble.samples[:20]:
            np.testing.assert_allclose(s.body.barycenter, 0.0, atol=1e-9)

    def test_split_half(self, stit_ensemble):
        a, b = stit_ensemble.split_half()
        assert len(a) + len(b) == len(stit_ensemble)

    @pytest.mark.slow
    def test_pure_scaling_kernel_is_invariant(self, iso2):
        # the scaled constant kernel only changes time, so the shape law is that of STIT
        K0 = default_initial_body(2, iso2)
        a = csd_run(SplitKernelSpec.stit(), iso2, K0, 150, burn_in=200, thin=3, seed=1)
        b = csd_run(SplitKernelSpec.scaled_constant(3.0), iso2, K0, 150, burn_in=200, thin=3, seed=2)
        assert compare_typical_cell(a, b, iso2, alpha=1e-3)["all_pass"]


class TestEnsembles:
    def test_window_census(self, stit_2d):
        inner = ConvexPolytope.box([2.0, 2.0], [8.0, 8.0])
        ens = window_census(stit_2d, inner)
        assert ens.provenance == "window_census"
        inside = [leaf for leaf in stit_2d.leaves() if inner.contains(leaf.polytope.barycenter, tol=0.0)]
        assert len(ens) == len(inside)
        for s in ens.samples:
            np.testing.assert_allclose(s.body.barycenter, 0.0, atol=1e-9)

    def test_empty_census(self, unit_square, iso2):
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 0.0, seed=1)
        with pytest.raises(ValueError):
            window_census(Y, ConvexPolytope.box([0.0, 0.0], [0.1, 0.1]))

    def test_merge(self, unit_square):
        one = TypicalCellEnsemble([recenter(unit_square)], [1.0], "csd")
        merged = merge_ensembles([one, one])
        assert len(merged) == 2

    def test_invalid_weights(self, unit_square):
        with pytest.raises(ValueError):
            TypicalCellEnsemble([recenter(unit_square)], [0.0], "csd")

    def test_volume_weighted_resample(self, rng):
        idx = volume_weighted_resample([1.0, 3.0], 4000, rng)
        assert (idx == 1).mean() == pytest.approx(0.75, abs=0.03)

    def test_rescale_ensemble(self, unit_square):
        ens = TypicalCellEnsemble([recenter(unit_square)] * 2, [1.0, 3.0], "csd", 2.0)
        big = rescale_ensemble(ens, 2.0)
        assert [s.body.volume for s in big.samples] == pytest.approx([4.0, 4.0])
        np.testing.assert_array_equal(big.weights, ens.weights)
        assert big.provenance == "csd"
        assert big.horizon == 2.0
        assert ens.samples[0].body.volume == pytest.approx(1.0)
        with pytest.raises(ValueError):
            rescale_ensemble(ens, 0.0)

    def test_zero_cell_is_volume_weighted(self, iso2):
        W = ConvexPolytope.centered_box(5.0, 2)
        runs = [simulate_window(W, SplitKernelSpec.stit(), iso2, 1.0, seed=seed) for seed in range(60)]
        report = zero_cell_report(runs, ConvexPolytope.centered_box(3.5, 2), seed=2)
        assert report["runs"] == 60
        assert report["typical_cells"] > 60
        assert report["zero_mean_volume"] > report["typical_mean_volume"]
        assert report["weighted_mean_volume"] > report["typical_mean_volume"]
        assert 0.0 <= report["p_value"] <= 1.0

    def test_zero_cell_needs_runs(self):
        with pytest.raises(ValueError):
            zero_cell_report([], ConvexPolytope.centered_box(1.0, 2))

    def test_shape_functionals(self, unit_square):
        shape = shape_functionals(unit_square)
        assert shape["vertex_count"] == 4.0
        assert shape["isoperimetric"] == pytest.approx(math.pi / 4.0)
        assert shape["anisotropy"] == pytest.approx(math.sqrt(2.0), rel=0.02)


class TestDiagnostics:
    def test_stationary_trace(self, rng):
        assert stationarity_test(rng.standard_normal(2000))["stationary"]

    def test_drifting_trace(self):
        assert not stationarity_test(np.linspace(0.0, 1.0, 2000))["stationary"]

    def test_suggest_thinning(self, rng):
        x = np.zeros(5000)
        for i in range(1, len(x)):
            x[i] = 0.9 * x[i - 1] + rng.standard_normal()
        lag = suggest_thinning(x)
        assert 15 <= lag <= 60

    def test_constant_trace(self):
        assert suggest_thinning(np.ones(100)) is None


class TestSpinalChains:
    def test_chain_is_valid(self, stit_2d):
        chain = extract_spinal_chain(stit_2d, [5.0, 5.0])
        assert chain.is_valid()
        assert chain.entries[0].time_mark == stit_2d.horizon
        assert chain.entries[-1].node_id == stit_2d.root_id

    def test_marks_are_death_times(self, stit_2d):
        chain = extract_spinal_chain(stit_2d, [3.0, 4.0])
        for child, parent in zip(chain.entries, chain.entries[1:]):
            assert parent.time_mark == child.birth

    def test_residuals_bounded_by_caps(self, stit_2d):
        chains = [extract_spinal_chain(stit_2d, p) for p in ([2.0, 2.0], [5.0, 5.0], [8.0, 3.0])]
        residuals, caps = spinal_residuals(chains)
        assert len(residuals) == sum(len(c) - 1 for c in chains)
        assert np.all(residuals <= caps + 1e-12)

    def test_distortion_changes_marks(self, stit_2d):
        chain = extract_spinal_chain(stit_2d, [5.0, 5.0])
        doubled = distort_holding_times(chain, 2.0)
        assert len(doubled) == len(chain)
        if len(chain) > 1:
            e = chain.entries[-1]
            assert doubled.entries[-1].time_mark == pytest.approx(2.0 * (e.time_mark - e.birth))

    def test_time_diagnostic_report(self, stit_2d):
        chains = [extract_spinal_chain(stit_2d, p) for p in ([2.0, 2.0], [5.0, 5.0], [8.0, 3.0], [3.0, 8.0])]
        report = spinal_time_diagnostic(chains, min_chains=4)
        assert report["n_chains"] == 4
        assert report["n_residuals"] == sum(len(c) - 1 for c in chains)
        assert 0.0 <= report["corrected_p_value"] <= 1.0
        with pytest.raises(ValueError):
            spinal_time_diagnostic(chains)

    def test_oldest_interior_mass(self, stit_2d, iso2):
        chain = extract_spinal_chain(stit_2d, [5.0, 5.0])
        mass = oldest_interior_mass(chain, stit_2d.window)
        if mass is not None:
            assert mass <= iso2.hit_mass(stit_2d.window)
