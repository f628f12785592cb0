"""
Tests for the window split dynamics and structural operations.
"""

import math

import numpy as np
import pytest
from scipy import stats

from app.services.geometry import ConvexPolytope, erosion, split_polytope
from app.services.hyperplane_measure import DrivingMeasure
from app.services.split_kernels import BisectionFailure, SplitKernel, SplitKernelSpec, cut_depth, kernel_sample
from app.services.tessellation_service import (
    OriginOutsideWindow,
    ancestor_path,
    check_tessellation,
    copy_factory,
    iterate,
    iterate_power,
    leaf_cells,
    locate_leaf,
    rescale_tessellation,
    simulate_window,
    time_restrict,
    zero_cell,
)


@pytest.fixture
def centered_square():
    return ConvexPolytope.centered_box(2.0, 2)


class TestSimulateWindow:
    def test_structure_is_valid(self, stit_2d):
        assert check_tessellation(stit_2d) == []
        assert stit_2d.split_count() == len(stit_2d.leaves()) - 1

    def test_spatial_structure_is_valid(self, stit_3d):
        assert check_tessellation(stit_3d) == []
        assert stit_3d.split_count() > 0

    def test_zero_horizon_is_the_window(self, unit_square, iso2):
        Y = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 0.0, seed=1)
        assert len(Y.nodes) == 1
        assert Y.root.is_leaf
        assert Y.maximal_polytopes == []

    def test_negative_horizon_rejected(self, unit_square, iso2):
        with pytest.raises(ValueError):
            simulate_window(unit_square, SplitKernelSpec.stit(), iso2, -1.0)

    def test_same_seed_same_result(self, unit_square, iso2):
        a = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 5.0, seed=42)
        b = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 5.0, seed=42)
        assert [mp.birth_time for mp in a.maximal_polytopes] == [mp.birth_time for mp in b.maximal_polytopes]

    def test_children_born_at_parent_death(self, stit_2d):
        for node in stit_2d.nodes.values():
            if node.children:
                assert all(stit_2d.nodes[c].birth == node.death for c in node.children)
                assert stit_2d.maximal_polytopes[node.facet].birth_time == node.death

    def test_expected_first_split_time(self, unit_square, iso2):
        # the first split of the window is Exp(Λ([W]))
        rate = iso2.hit_mass(unit_square)
        times = []
        for seed in range(400):
            Y = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, 10.0, seed=seed)
            times.append(Y.root.death)
        assert np.mean(times) == pytest.approx(1.0 / rate, rel=0.15)

    def test_hard_core_cells_freeze(self, iso2):
        W = ConvexPolytope.box([0.0, 0.0], [2.0, 2.0])
        Y = simulate_window(W, SplitKernelSpec.hard_core(0.3, rate_mode="raw"), iso2, 50.0, seed=5)
        assert check_tessellation(Y) == []
        frozen = [leaf for leaf in Y.leaves() if leaf.frozen]
        assert frozen
        for leaf in frozen:
            assert leaf.frozen_at == leaf.birth
            assert erosion(leaf.polytope, 0.3) is None

    def test_hard_core_canonical_never_cuts_shallow(self, iso2):
        W = ConvexPolytope.box([0.0, 0.0], [4.0, 4.0])
        Y = simulate_window(W, SplitKernelSpec.hard_core(0.1), iso2, 3.0, seed=11)
        for node in Y.nodes.values():
            if node.split_plane is not None:
                assert cut_depth(node.polytope, node.split_plane) >= 0.1 - 1e-9

    def test_apportionment_splits(self, iso2):
        W = ConvexPolytope.box([0.0, 0.0], [10.0, 10.0])
        Y = simulate_window(W, SplitKernelSpec.apportionment(4.0), iso2, 1.0, seed=3)
        assert Y.split_count() > 0
        assert check_tessellation(Y) == []
        assert not any(leaf.frozen for leaf in Y.leaves())

    def test_bisection_failure_is_raised(self, unit_square, iso2, monkeypatch):
        def failing(self, c, rng):
            raise BisectionFailure("unresolved fraction")

        monkeypatch.setattr(SplitKernel, "sample", failing)
        with pytest.raises(BisectionFailure):
            simulate_window(unit_square, SplitKernelSpec.apportionment(2.0), iso2, 50.0, seed=1)

    def test_single_bisection_failure_is_resampled(self, unit_square, iso2, monkeypatch):
        original = SplitKernel.sample
        calls = []

        def flaky(self, c, rng):
            calls.append(1)
            if len(calls) == 1:
                raise BisectionFailure("unresolved fraction")
            return original(self, c, rng)

        monkeypatch.setattr(SplitKernel, "sample", flaky)
        Y = simulate_window(unit_square, SplitKernelSpec.apportionment(2.0), iso2, 10.0, seed=1)
        assert Y.split_count() > 0
        assert not Y.root.frozen


class TestMarkovDynamics:
    def test_restriction_matches_shorter_run(self, iso2):
        W = ConvexPolytope.box([0.0, 0.0], [6.0, 6.0])
        K = SplitKernelSpec.stit()
        restricted = time_restrict(simulate_window(W, K, iso2, 2.0, seed=21), 1.0)
        direct = simulate_window(W, K, iso2, 1.0, seed=21)
        assert sorted(restricted.nodes) == sorted(direct.nodes)
        for nid, node in direct.nodes.items():
            other = restricted.nodes[nid]
            assert other.birth == node.birth
            assert other.death == node.death
            assert other.children == node.children
            np.testing.assert_array_equal(other.polytope.vertices, node.polytope.vertices)
        assert [mp.birth_time for mp in restricted.maximal_polytopes] == \
            [mp.birth_time for mp in direct.maximal_polytopes]

    def test_first_split_is_exponential(self, unit_square, iso2):
        t = 3.0
        rate = iso2.hit_mass(unit_square)
        pit = []
        for seed in range(300):
            death = simulate_window(unit_square, SplitKernelSpec.stit(), iso2, t, seed=seed).root.death
            if death <= t:
                pit.append(-math.expm1(-rate * death) / -math.expm1(-rate * t))
        assert stats.kstest(pit, "uniform").pvalue > 1e-3

    def test_cell_clocks_restart_at_birth(self, stit_2d, iso2):
        # given its birth, each split cell lived Exp(Λ([c])) truncated at the horizon
        pit = []
        for node in stit_2d.nodes.values():
            if node.children is None:
                continue
            rate = iso2.hit_mass(node.polytope)
            life, room = node.death - node.birth, stit_2d.horizon - node.birth
            pit.append(-math.expm1(-rate * life) / -math.expm1(-rate * room))
        assert len(pit) > 100
        assert stats.kstest(pit, "uniform").pvalue > 1e-3

    def test_split_fractions_ignore_history(self, unit_square, iso2, rng):
        K = SplitKernelSpec.apportionment(4.0)
        W = ConvexPolytope.box([0.0, 0.0], [10.0, 10.0])
        in_place = []
        for seed in range(5):
            Y = simulate_window(W, K, iso2, 1.0, seed=seed)
            for node in Y.nodes.values():
                if node.children is not None:
                    in_place.append(Y.nodes[node.children[1]].polytope.volume / node.polytope.volume)
        isolated = []
        for _ in range(len(in_place)):
            _, minus, _ = split_polytope(unit_square, kernel_sample(K, iso2, unit_square, rng))
            isolated.append(minus.volume)
        assert len(in_place) > 100
        assert stats.ks_2samp(in_place, isolated).pvalue > 1e-3


class TestStructuralOperations:
    def test_leaf_cells_tile_the_window(self, stit_2d):
        leaves = leaf_cells(stit_2d)
        assert len(leaves) == len(stit_2d.leaves())
        assert sum(c.polytope.volume for c in leaves) == pytest.approx(stit_2d.window.volume)

    def test_time_restrict(self, stit_2d):
        Y = time_restrict(stit_2d, 1.0)
        assert check_tessellation(Y) == []
        assert Y.horizon == 1.0
        assert all(mp.birth_time <= 1.0 for mp in Y.maximal_polytopes)
        assert Y.split_count() == sum(mp.birth_time <= 1.0 for mp in stit_2d.maximal_polytopes)

    def test_time_restrict_to_zero(self, stit_2d):
        Y = time_restrict(stit_2d, 0.0)
        assert len(Y.leaves()) == 1

    def test_time_restrict_out_of_range(self, stit_2d):
        with pytest.raises(ValueError):
            time_restrict(stit_2d, 3.0)

    def test_locate_leaf(self, stit_2d):
        leaf = locate_leaf(stit_2d, [5.0, 5.0])
        assert leaf.is_leaf
        assert leaf.polytope.contains([5.0, 5.0])

    def test_locate_outside_window(self, stit_2d):
        with pytest.raises(OriginOutsideWindow):
            locate_leaf(stit_2d, [-1.0, 5.0])

    def test_zero_cell(self, centered_square, iso2):
        Y = simulate_window(centered_square, SplitKernelSpec.stit(), iso2, 2.0, seed=9)
        assert zero_cell(Y).polytope.contains([0.0, 0.0])

    def test_ancestor_path_nests(self, stit_2d):
        path = ancestor_path(stit_2d, locate_leaf(stit_2d, [2.0, 7.0]))
        assert path[-1].id == stit_2d.root_id
        volumes = [n.polytope.volume for n in path]
        assert volumes == sorted(volumes)

    def test_rescale(self, stit_2d):
        Y = rescale_tessellation(stit_2d, 2.0)
        assert Y.horizon == pytest.approx(1.0)
        assert Y.window.volume == pytest.approx(400.0)
        assert check_tessellation(Y) == []

    def test_iterate(self, unit_square, iso2):
        K = SplitKernelSpec.stit()
        Y1 = simulate_window(unit_square, K, iso2, 3.0, seed=1)
        Y = iterate(Y1, copy_factory(K, iso2, 2.0, seed=2))
        assert Y.horizon == pytest.approx(5.0)
        assert check_tessellation(Y) == []
        assert Y.split_count() >= Y1.split_count()
        late = [mp for mp in Y.maximal_polytopes if mp.birth_time > 3.0]
        assert len(late) == Y.split_count() - Y1.split_count()

    def test_iterate_power_of_one(self, stit_2d, iso2):
        factory = copy_factory(SplitKernelSpec.stit(), iso2, 1.0, seed=0)
        assert iterate_power(stit_2d, 1, factory) is stit_2d

    def test_iterate_power_rounds(self, unit_square, iso2):
        K = SplitKernelSpec.stit()
        Y = simulate_window(unit_square, K, iso2, 1.0, seed=4)
        Y3 = iterate_power(Y, 3, copy_factory(K, iso2, 1.0, seed=5))
        assert Y3.horizon == pytest.approx(3.0)
        assert check_tessellation(Y3) == []
        assert max(mp.birth_time for mp in Y3.maximal_polytopes) <= 3.0

    def test_iterate_power_never_reuses_copy_indices(self, unit_square, iso2):
        K = SplitKernelSpec.stit()
        base = copy_factory(K, iso2, 1.0, seed=6)
        seen = []

        def recording(cell, k):
            seen.append(k)
            return base(cell, k)

        Y = simulate_window(unit_square, K, iso2, 1.0, seed=6)
        Y2 = iterate(Y, recording)
        iterate_power(Y, 3, recording)
        assert seen[len(Y.leaves()):] == list(range(len(Y.leaves()) + len(Y2.leaves())))

    def test_iterate_offset_shifts_indices(self, unit_square, iso2):
        seen = []
        K = SplitKernelSpec.stit()
        base = copy_factory(K, iso2, 0.5, seed=8)

        def recording(cell, k):
            seen.append(k)
            return base(cell, k)

        Y = simulate_window(unit_square, K, iso2, 2.0, seed=8)
        iterate(Y, recording, index_offset=10)
        assert seen == list(range(10, 10 + len(Y.leaves())))

    def test_rescale_divides_time_marks(self, stit_2d):
        Y = rescale_tessellation(stit_2d, 2.0)
        for nid, node in stit_2d.nodes.items():
            assert Y.nodes[nid].birth == pytest.approx(node.birth / 2.0)
            assert Y.nodes[nid].polytope.volume == pytest.approx(4.0 * node.polytope.volume)
        back = rescale_tessellation(Y, 0.5)
        np.testing.assert_allclose(back.root.polytope.vertices, stit_2d.root.polytope.vertices)

    def test_zero_rho_rejected(self, unit_square):
        L = DrivingMeasure.isotropic(2, rho=0.0)
        with pytest.raises(ValueError):
            simulate_window(unit_square, SplitKernelSpec.stit(), L, 1.0)

    def test_leaf_deaths_are_infinite(self, stit_2d):
        assert all(math.isinf(leaf.death) for leaf in stit_2d.leaves())
