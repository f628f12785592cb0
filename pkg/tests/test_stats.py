"""
Tests for the minus-sampled estimators, jackknife intervals and zeta constants.
"""

import math

import numpy as np
import pytest

from app.services.geometry import ConvexPolytope
from app.services.hyperplane_measure import DiscreteAtoms, DrivingMeasure, Isotropic
from app.services.split_kernels import SplitKernelSpec
from app.services.stats_service import (
    StatRow,
    StatsService,
    TessellationStats,
    _polygon_area_inside,
    _segment_length_inside,
    effective_time,
    inequality_panel,
    jackknife,
    kernel_time,
    mean_tcell_lambda_mass,
    mean_tcell_v1,
    planar_rows,
    planar_stats,
    spatial_stats,
    zeta_constants,
)
from app.services.tessellation_service import simulate_window


@pytest.fixture
def inner_2d():
    return ConvexPolytope.box([2.0, 2.0], [8.0, 8.0])


@pytest.fixture
def inner_3d():
    return ConvexPolytope.box([0.5, 0.5, 0.5], [2.5, 2.5, 2.5])


class TestClipping:
    def test_segment_through_square(self, unit_square):
        normals, offsets = unit_square.facet_hyperplanes()
        length = _segment_length_inside(np.array([-1.0, 0.5]), np.array([2.0, 0.5]), normals, offsets)
        assert length == pytest.approx(1.0)

    def test_segment_missing_square(self, unit_square):
        normals, offsets = unit_square.facet_hyperplanes()
        assert _segment_length_inside(np.array([-1.0, 2.0]), np.array([2.0, 2.0]), normals, offsets) == 0.0

    def test_polygon_clipped_by_cube(self, unit_cube):
        normals, offsets = unit_cube.facet_hyperplanes()
        square = np.array([[-1.0, -1.0, 0.5], [2.0, -1.0, 0.5], [2.0, 2.0, 0.5], [-1.0, 2.0, 0.5]])
        assert _polygon_area_inside(square, normals, offsets) == pytest.approx(1.0)


class TestJackknife:
    def test_ratio_estimator(self):
        tallies = [{"x": float(k), "n": 1.0} for k in (1, 2, 3, 4, 5)]
        jk = jackknife(tallies, lambda T: {"mean": T["x"] / T["n"]})
        assert jk["values"]["mean"] == pytest.approx(3.0)
        # for the sample mean the jackknife variance is the usual s^2 / n
        assert jk["half_widths"]["mean"] == pytest.approx(1.959963984540054 * math.sqrt(2.5 / 5))

    def test_single_replication_has_no_interval(self):
        jk = jackknife([{"x": 1.0}], lambda T: {"x": T["x"]})
        assert math.isnan(jk["half_widths"]["x"])


class TestTimes:
    def test_raw_scaled_kernel_time(self, unit_square, iso2):
        Y = simulate_window(unit_square, SplitKernelSpec.scaled_constant(2.0), iso2, 0.5, seed=1)
        assert kernel_time(Y) == pytest.approx(1.0)

    def test_effective_time_includes_rho(self, unit_square):
        L = DrivingMeasure.isotropic(2, rho=3.0)
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), L, 0.5, seed=1)
        assert effective_time(Y) == pytest.approx(1.5)
        assert kernel_time(Y) == pytest.approx(0.5)

    def test_targets_follow_effective_time(self, unit_square):
        L = DrivingMeasure.isotropic(2, rho=2.0)
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), L, 1.0, seed=1)
        rows = planar_rows(Y)
        assert rows["L_A"].target == pytest.approx(2.0)
        assert rows["mean_lambda_mass"].target == pytest.approx(2.0)

    def test_anisotropic_measure_has_no_stit_rows(self, unit_square):
        L = DrivingMeasure(rho=1.0, R=DiscreteAtoms([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]))
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), L, 1.0, seed=1)
        rows = planar_rows(Y)
        assert "L_A" not in rows
        assert "mu_VE" in rows


class TestPlanarStats:
    def test_topological_identities(self, stit_2d, inner_2d):
        st = planar_stats(stit_2d, inner_2d)
        assert st["mu_VE"] == pytest.approx(3.0)
        assert st["kappa"] == pytest.approx(1.0)
        assert st.passed("mu_VE")
        assert st["a"] * st["lambda_C"] == pytest.approx(1.0)

    def test_length_density_is_plausible(self, stit_2d, inner_2d):
        st = planar_stats(stit_2d, inner_2d)
        assert 0.5 * stit_2d.horizon < st["L_A"] < 1.5 * stit_2d.horizon

    def test_frame_columns(self, stit_2d, inner_2d):
        frame = planar_stats(stit_2d, inner_2d).to_frame()
        assert list(frame.columns) == ["quantity", "estimate", "ci_half_width", "target",
                                       "tolerance", "asserted", "passed", "note"]
        assert "L_A" in set(frame["quantity"])

    def test_dimension_mismatch(self, stit_3d, inner_3d):
        with pytest.raises(ValueError):
            planar_stats(stit_3d, inner_3d)

    def test_cell_means(self, stit_2d, inner_2d, iso2):
        mass = mean_tcell_lambda_mass(stit_2d, inner_2d)
        assert mass > 0
        assert mean_tcell_v1(stit_2d, inner_2d) == pytest.approx(mass * math.pi / 2.0)

    @pytest.mark.slow
    def test_planar_stit_table(self):
        W = ConvexPolytope.box([0.0, 0.0], [30.0, 30.0])
        L = DrivingMeasure.isotropic(2)
        K = SplitKernelSpec.stit()
        runs = [simulate_window(W, K, L, 1.0, seed=s) for s in range(100)]
        service = StatsService()
        inner = service.inner_window(W, service.pilot_clearance(W, K, L, 1.0))
        st = service.planar_stats(runs, inner)
        failed = [k for k, r in st.rows.items() if r.asserted and st.passed(k) is False]
        assert failed == []


class TestSpatialStats:
    def test_derived_parameters(self, stit_3d, inner_3d):
        st = spatial_stats(stit_3d, inner_3d)
        assert st["xi"] == 1.0
        assert st["lambda_P"] == pytest.approx(st["lambda_E"] - st["lambda_V"] + st["lambda_C"])
        assert st["psi"] + 3.0 * st["kappa"] == pytest.approx(4.0)
        assert set(st.notes["inequalities"]) == {"chi_ge_9_2", "chi_lt_6", "kappa_ge_bound"}

    def test_inequality_panel_uses_confidence_band(self):
        values = {"chi_lower_margin": -0.1, "chi_upper_margin": 0.5, "kappa_margin": -0.5}
        half = {"chi_lower_margin": 0.2, "chi_upper_margin": float("nan"), "kappa_margin": 0.1}
        panel = inequality_panel(values, half)
        assert panel == {"chi_ge_9_2": True, "chi_lt_6": True, "kappa_ge_bound": False}


class TestStatsService:
    def test_inner_window(self):
        service = StatsService()
        W = ConvexPolytope.box([0.0, 0.0], [10.0, 10.0])
        assert service.inner_window(W, 2.0).volume == pytest.approx(36.0)
        with pytest.raises(ValueError):
            service.inner_window(W, 6.0)

    def test_pilot_clearance_is_memoized(self, iso2):
        service = StatsService()
        W = ConvexPolytope.box([0.0, 0.0], [5.0, 5.0])
        first = service.pilot_clearance(W, SplitKernelSpec.stit(), iso2, 2.0, seed=4)
        assert service.pilot_clearance(W, SplitKernelSpec.stit(), iso2, 2.0, seed=4) == first
        assert len(service._clearance_cache) == 1

    def test_row_pass_logic(self):
        st = TessellationStats(2, 1.0, None, None, 1, {"x": 1.04, "y": 2.0}, {},
                               {"x": StatRow(1.0, 0.05), "y": StatRow(None, None, asserted=False)})
        assert st.passed("x")
        assert st.passed("y") is None
        assert st.all_passed


class TestZeta:
    def test_isotropic_planar(self):
        z = zeta_constants(Isotropic(2), 200_000, seed=3)["zeta"]
        assert abs(z["estimate"] - 2.0 / math.pi) <= 4.0 * z["se"]

    def test_isotropic_spatial(self):
        z = zeta_constants(Isotropic(3), 200_000, seed=5)
        for name, target in (("zeta2", math.pi / 4.0), ("zeta3", math.pi / 8.0)):
            assert z[name]["target"] == pytest.approx(target)
            assert abs(z[name]["estimate"] - target) <= 4.0 * z[name]["se"]

    def test_parallel_atoms(self):
        z = zeta_constants(DiscreteAtoms([[1.0, 0.0]], [1.0]), 10_000, seed=1)["zeta"]
        assert z["estimate"] == 0.0
        assert z["target"] is None

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            zeta_constants(Isotropic(2), 100)
