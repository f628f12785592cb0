"""
Tests for driving measures and hitting-hyperplane sampling.
"""

import math

import numpy as np
import pytest

from app.services.geometry import ConvexPolytope, gamma1
from app.services.hyperplane_measure import (
    DiscreteAtoms,
    DrivingMeasure,
    Isotropic,
    RejectionOverflow,
    TabulatedDensity,
    direction_from_json,
    hit_fraction,
    quasi_random_directions,
    sample_direction,
    sample_hitting_hyperplane,
)


class TestHitMass:
    def test_isotropic_square(self, unit_square, iso2):
        assert iso2.hit_mass(unit_square) == pytest.approx(4.0 / math.pi)

    def test_rho_scales_linearly(self, unit_cube):
        L = DrivingMeasure.isotropic(3, rho=2.5)
        assert L.hit_mass(unit_cube) == pytest.approx(2.5 * 1.5)

    def test_axis_atoms_on_box(self):
        box = ConvexPolytope.box([0.0, 0.0], [3.0, 1.0])
        L = DrivingMeasure(rho=1.0, R=DiscreteAtoms([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]))
        assert L.hit_mass(box) == pytest.approx(2.0)

    def test_monte_carlo_agrees_with_closed_form(self, unit_cube, iso3):
        assert iso3.monte_carlo_hit_mass(unit_cube) == pytest.approx(1.5, rel=1e-3)

    def test_perimeter_relation_in_plane(self, iso2, rng):
        # Λ([c]) = gamma1 * V1 with V1 = perimeter / 2
        polygon = ConvexPolytope.from_points(rng.uniform(0.0, 1.0, size=(30, 2)))
        assert iso2.hit_mass(polygon) == pytest.approx(gamma1(2) * polygon.surface_measure / 2.0)

    def test_hit_fraction_of_nested_squares(self, iso2):
        inner = ConvexPolytope.box([0.25, 0.25], [0.75, 0.75])
        outer = ConvexPolytope.box([0.0, 0.0], [1.0, 1.0])
        assert hit_fraction(iso2, inner, outer) == pytest.approx(0.5)


class TestDirectionLaws:
    def test_atoms_are_symmetrized(self):
        R = DiscreteAtoms([[2.0, 0.0]], [1.0])
        np.testing.assert_allclose(R.directions, [[1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_allclose(R.weights, [0.5, 0.5])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            DiscreteAtoms([[1.0, 0.0], [0.0, 1.0]], [1.0, -0.5])

    def test_uniform_density_matches_isotropic(self, unit_cube):
        R = TabulatedDensity.from_function(3, lambda u: 1.0)
        assert R.expected_width(unit_cube) == pytest.approx(Isotropic(3).expected_width(unit_cube), rel=1e-3)

    def test_density_is_made_even(self):
        grid = quasi_random_directions(2, 360)
        R = TabulatedDensity(grid, np.where(grid[:, 0] > 0, 2.0, 0.0))
        u = np.array([[1.0, 0.0], [-1.0, 0.0]])
        values = R.density(u)
        assert values[0] == pytest.approx(values[1])
        assert R.values.mean() == pytest.approx(1.0)

    def test_json_round_trip_keeps_law(self):
        R = DiscreteAtoms([[1.0, 0.0], [0.0, 1.0]], [0.75, 0.25])
        back = direction_from_json(R.to_json(), 2)
        np.testing.assert_allclose(back.weights, R.weights)

    def test_unknown_law_rejected(self):
        with pytest.raises(ValueError):
            direction_from_json({"type": "gaussian"}, 2)

    def test_measure_rejects_nonpositive_rho(self):
        with pytest.raises(ValueError):
            DrivingMeasure.from_json({"rho": 0.0}, 2)


class TestHittingSampler:
    def test_directions_are_unit_vectors(self, iso3, rng):
        for _ in range(50):
            assert np.linalg.norm(sample_direction(iso3, rng)) == pytest.approx(1.0)

    @pytest.mark.parametrize("sampler", ["rejection", "importance"])
    def test_planes_hit_the_cell(self, unit_cube, rng, sampler):
        L = DrivingMeasure(rho=1.0, R=Isotropic(3), sampler=sampler)
        for _ in range(200):
            H = sample_hitting_hyperplane(L, unit_cube, rng)
            proj = unit_cube.vertices @ H.normal
            assert proj.min() <= H.offset <= proj.max()

    def test_atom_directions_only(self, unit_square, rng):
        L = DrivingMeasure(rho=1.0, R=DiscreteAtoms([[1.0, 0.0]], [1.0]))
        for _ in range(50):
            H = sample_hitting_hyperplane(L, unit_square, rng)
            np.testing.assert_allclose(H.normal, [1.0, 0.0])

    def test_direction_law_weighted_by_width(self, rng):
        # a 4 x 1 box is hit by vertical lines four times as often
        box = ConvexPolytope.box([0.0, 0.0], [4.0, 1.0])
        L = DrivingMeasure(rho=1.0, R=DiscreteAtoms([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5]))
        n = 4000
        vertical = sum(abs(sample_hitting_hyperplane(L, box, rng).normal[0]) > 0.5 for _ in range(n))
        assert vertical / n == pytest.approx(0.8, abs=0.03)

    def test_offsets_uniform_on_hit_interval(self, unit_square, rng):
        L = DrivingMeasure(rho=1.0, R=DiscreteAtoms([[1.0, 0.0]], [1.0]))
        offsets = np.array([sample_hitting_hyperplane(L, unit_square, rng).offset for _ in range(4000)])
        assert offsets.mean() == pytest.approx(0.5, abs=0.02)
        assert offsets.var() == pytest.approx(1.0 / 12.0, abs=0.01)

    def test_rejection_overflow(self, unit_square, rng):
        L = DrivingMeasure(rho=1.0, R=Isotropic(2), rejection_limit=0)
        with pytest.raises(RejectionOverflow):
            sample_hitting_hyperplane(L, unit_square, rng)
