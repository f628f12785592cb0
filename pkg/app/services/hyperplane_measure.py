"""
Hyperplane Measure Service
Translation-invariant driving measures Λ = rho * R ⊗ length: hit masses of
convex cells and sampling of hyperplanes that hit a given cell.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from cachetools import LRUCache, cached
from scipy.spatial import cKDTree

from app.services.geometry import ConvexPolytope, Hyperplane, isotropic_mean_width

logger = logging.getLogger(__name__)

REJECTION_LIMIT = 10 ** 6
HIT_MASS_DIRECTIONS = 4096
DENSITY_GRID_2D = 720
DENSITY_GRID_3D = 3072


class RejectionOverflow(RuntimeError):
    """Too many rejected proposals: the direction law or the body is degenerate."""


# ============================================================================
# Direction sets
# ============================================================================

@cached(cache=LRUCache(maxsize=32))
def quasi_random_directions(dim: int, n: int) -> np.ndarray:
    """
    Deterministic, evenly spread unit vectors.

    Equally spaced angles on the circle; a Fibonacci lattice on the sphere.
    The returned array is read-only (it is shared through the cache).
    """
    k = np.arange(n) + 0.5
    if dim == 2:
        theta = 2.0 * np.pi * k / n
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    elif dim == 3:
        z = 1.0 - 2.0 * k / n
        phi = np.pi * (1.0 + math.sqrt(5.0)) * k
        s = np.sqrt(1.0 - z ** 2)
        dirs = np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    else:
        raise ValueError(f"Unsupported dimension {dim}")
    dirs.setflags(write=False)
    return dirs


@cached(cache=LRUCache(maxsize=8))
def symmetric_grid(dim: int) -> np.ndarray:
    """Antipodally closed direction grid: 720 angle bins (2D) or 1536 lattice points plus antipodes (3D)."""
    if dim == 2:
        grid = quasi_random_directions(2, DENSITY_GRID_2D)
    else:
        half = np.array(quasi_random_directions(3, DENSITY_GRID_3D))
        half = half[half[:, 2] > 0]
        grid = np.vstack([half, -half])
    grid = np.array(grid)
    grid.setflags(write=False)
    return grid


# ============================================================================
# Directional distributions
# ============================================================================

class DirectionalDistribution:
    """Even probability law R on the unit sphere."""

    kind = "abstract"

    def __init__(self, dim: int):
        if dim not in (2, 3):
            raise ValueError(f"Unsupported dimension {dim}")
        self.dim = dim

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.array([self.sample(rng) for _ in range(n)])

    def expected_width(self, c: ConvexPolytope) -> float:
        """E_{u~R}[w_c(u)]."""
        raise NotImplementedError

    def direction_weights(self, directions: np.ndarray) -> np.ndarray:
        """Quadrature weights of R on a quasi-uniform direction set."""
        raise NotImplementedError

    def to_json(self) -> Dict:
        raise NotImplementedError


class Isotropic(DirectionalDistribution):
    kind = "isotropic"

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        v = rng.standard_normal((n, self.dim))
        return v / np.linalg.norm(v, axis=1)[:, None]

    def expected_width(self, c: ConvexPolytope) -> float:
        return isotropic_mean_width(c)

    def direction_weights(self, directions: np.ndarray) -> np.ndarray:
        return np.full(len(directions), 1.0 / len(directions))

    def to_json(self) -> Dict:
        return {"type": "isotropic"}


class DiscreteAtoms(DirectionalDistribution):
    """Finitely many directions; stored symmetrized with halved weights."""

    kind = "atoms"

    def __init__(self, directions: Sequence[Sequence[float]], weights: Sequence[float]):
        dirs = np.asarray(directions, dtype=float)
        w = np.asarray(weights, dtype=float)
        super().__init__(dirs.shape[1])
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("Atom weights must be nonnegative with positive total")
        dirs = dirs / np.linalg.norm(dirs, axis=1)[:, None]
        w = w / w.sum()
        self.directions = np.vstack([dirs, -dirs])
        self.weights = np.concatenate([w, w]) / 2.0

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.directions[rng.choice(len(self.weights), p=self.weights)]

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.directions[rng.choice(len(self.weights), size=n, p=self.weights)]

    def expected_width(self, c: ConvexPolytope) -> float:
        return float(self.weights @ c.widths(self.directions))

    def direction_weights(self, directions: np.ndarray) -> np.ndarray:
        raise ValueError("Atomic direction laws have no density")

    def to_json(self) -> Dict:
        # one representative per antipodal pair, weights of the pair summed
        m = len(self.weights) // 2
        atoms = [list(self.directions[i]) + [2.0 * self.weights[i]] for i in range(m)]
        return {"type": "atoms", "atoms": [[float(x) for x in a] for a in atoms]}


class TabulatedDensity(DirectionalDistribution):
    """
    Direction density tabulated on a grid and linearly interpolated.

    Values are relative to the uniform probability on the sphere and are
    normalized to mean one over the grid. The table is made even by averaging
    f(u) with f(-u).
    """

    kind = "density"

    def __init__(self, points: Sequence[Sequence[float]], values: Sequence[float]):
        pts = np.asarray(points, dtype=float)
        vals = np.asarray(values, dtype=float)
        super().__init__(pts.shape[1])
        if np.any(vals < 0):
            raise ValueError("Density values must be nonnegative")
        if len(pts) < 3:
            raise ValueError("A density grid needs at least three directions")
        self.points = pts / np.linalg.norm(pts, axis=1)[:, None]
        self._tree = cKDTree(self.points)
        angles = np.arctan2(self.points[:, 1], self.points[:, 0])
        self._order = np.argsort(angles)
        self._angles = angles[self._order]
        self._raw = vals
        even = 0.5 * (vals + self._interpolate_raw(-self.points))
        self.values = even / even.mean()
        self.f_max = float(self.values.max())

    @classmethod
    def from_function(cls, dim: int, func) -> "TabulatedDensity":
        grid = symmetric_grid(dim)
        return cls(grid, np.array([func(u) for u in grid]))

    def _interpolate_with(self, values: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        if self.dim == 2:
            q = np.arctan2(u[:, 1], u[:, 0])
            return np.interp(q, self._angles, values[self._order], period=2.0 * np.pi)
        k = min(3, len(self.points))
        dist, idx = self._tree.query(u, k=k)
        dist = np.atleast_2d(dist)
        idx = np.atleast_2d(idx)
        exact = dist[:, 0] < 1e-12
        w = 1.0 / np.maximum(dist, 1e-12)
        out = (values[idx] * w).sum(axis=1) / w.sum(axis=1)
        out[exact] = values[idx[exact, 0]]
        return out

    def _interpolate_raw(self, u: np.ndarray) -> np.ndarray:
        return self._interpolate_with(self._raw, u)

    def density(self, u: np.ndarray) -> np.ndarray:
        return self._interpolate_with(self.values, u)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        while True:
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            if rng.random() * self.f_max <= self.density(v)[0]:
                return v

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out: List[np.ndarray] = []
        got = 0
        while got < n:
            batch = max(2 * (n - got), 64)
            v = rng.standard_normal((batch, self.dim))
            v /= np.linalg.norm(v, axis=1)[:, None]
            keep = v[rng.random(batch) * self.f_max <= self.density(v)]
            out.append(keep)
            got += len(keep)
        return np.vstack(out)[:n]

    def direction_weights(self, directions: np.ndarray) -> np.ndarray:
        f = self.density(directions)
        return f / f.sum()

    def expected_width(self, c: ConvexPolytope) -> float:
        dirs = quasi_random_directions(self.dim, HIT_MASS_DIRECTIONS)
        return float(self.direction_weights(dirs) @ c.widths(dirs))

    def to_json(self) -> Dict:
        grid = np.column_stack([self.points, self.values])
        return {"type": "density", "grid": grid.tolist()}


def direction_from_json(data: Dict, dim: int) -> DirectionalDistribution:
    """Parse {"type": "isotropic" | "atoms" | "density", ...}."""
    kind = data.get("type")
    if kind == "isotropic":
        return Isotropic(dim)
    if kind == "atoms":
        atoms = np.asarray(data["atoms"], dtype=float)
        if atoms.ndim != 2 or atoms.shape[1] != dim + 1:
            raise ValueError(f"atoms must be rows of {dim} coordinates plus a weight")
        return DiscreteAtoms(atoms[:, :dim], atoms[:, dim])
    if kind == "density":
        grid = np.asarray(data["grid"], dtype=float)
        if grid.ndim != 2 or grid.shape[1] != dim + 1:
            raise ValueError(f"grid must be rows of {dim} coordinates plus a density value")
        return TabulatedDensity(grid[:, :dim], grid[:, dim])
    raise ValueError(f"Unknown direction law type {kind!r}")


# ============================================================================
# Driving measure
# ============================================================================

@dataclass
class DrivingMeasure:
    """Λ = rho * R ⊗ length with rho the surface density."""
    rho: float
    R: DirectionalDistribution
    sampler: str = "rejection"
    rejection_limit: int = REJECTION_LIMIT

    @classmethod
    def isotropic(cls, dim: int, rho: float = 1.0) -> "DrivingMeasure":
        return cls(rho=rho, R=Isotropic(dim))

    @property
    def dim(self) -> int:
        return self.R.dim

    def hit_mass(self, c: ConvexPolytope) -> float:
        """Λ([c]) = rho * E_R[w_c(u)]."""
        return self.rho * self.R.expected_width(c)

    def monte_carlo_hit_mass(self, c: ConvexPolytope, n: int = HIT_MASS_DIRECTIONS) -> float:
        """Hit mass by averaging widths over a quasi-random direction set."""
        if isinstance(self.R, DiscreteAtoms):
            return self.hit_mass(c)
        dirs = quasi_random_directions(self.dim, n)
        return self.rho * float(self.R.direction_weights(dirs) @ c.widths(dirs))

    def to_json(self) -> Dict:
        return {"rho": self.rho, "directions": self.R.to_json(), "sampler": self.sampler}

    @classmethod
    def from_json(cls, data: Dict, dim: int) -> "DrivingMeasure":
        rho = float(data.get("rho", 1.0))
        if rho <= 0:
            raise ValueError("rho must be positive")
        sampler = data.get("sampler", "rejection")
        if sampler not in ("rejection", "importance"):
            raise ValueError(f"Unknown sampler {sampler!r}")
        return cls(rho=rho, R=direction_from_json(data.get("directions", {"type": "isotropic"}), dim),
                   sampler=sampler)


def sample_direction(L: DrivingMeasure, rng: np.random.Generator) -> np.ndarray:
    return L.R.sample(rng)


def _hyperplane_on_hit_interval(c: ConvexPolytope, u: np.ndarray, rng: np.random.Generator) -> Hyperplane:
    proj = c.vertices @ u
    return Hyperplane.from_normal(u, rng.uniform(proj.min(), proj.max()))


def _sample_rejection(L: DrivingMeasure, c: ConvexPolytope, rng: np.random.Generator) -> Hyperplane:
    diam = c.diameter
    for _ in range(L.rejection_limit):
        u = L.R.sample(rng)
        if rng.random() * diam <= c.width(u):
            return _hyperplane_on_hit_interval(c, u, rng)
    raise RejectionOverflow(f"No hitting hyperplane after {L.rejection_limit} proposals for {c!r}")


def _sample_importance(L: DrivingMeasure, c: ConvexPolytope, rng: np.random.Generator) -> Hyperplane:
    if isinstance(L.R, DiscreteAtoms):
        dirs, base = L.R.directions, L.R.weights
    else:
        dirs = quasi_random_directions(L.dim, HIT_MASS_DIRECTIONS)
        base = L.R.direction_weights(dirs)
    p = base * c.widths(dirs)
    total = p.sum()
    if total <= 0:
        raise RejectionOverflow(f"Direction law gives zero hit mass for {c!r}")
    u = np.array(dirs[rng.choice(len(p), p=p / total)])
    return _hyperplane_on_hit_interval(c, u, rng)


def sample_hitting_hyperplane(L: DrivingMeasure, c: ConvexPolytope, rng: np.random.Generator) -> Hyperplane:
    """
    Draw H from Λ restricted to the hyperplanes hitting c, normalized.

    The rejection sampler proposes u ~ R and accepts it with probability
    w_c(u) / diam(c); the offset is then uniform on the hit interval. The
    importance sampler is exact for atomic laws and quadrature-based otherwise.

    Raises:
        RejectionOverflow: after `L.rejection_limit` rejected proposals
    """
    if L.sampler == "importance":
        return _sample_importance(L, c, rng)
    return _sample_rejection(L, c, rng)


def hit_fraction(L: DrivingMeasure, c_inner: ConvexPolytope, c_outer: ConvexPolytope) -> float:
    """Λ([c_inner]) / Λ([c_outer])."""
    return L.hit_mass(c_inner) / L.hit_mass(c_outer)
