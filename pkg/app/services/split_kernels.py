"""
Split Kernel Service
Rates and cutting-hyperplane laws of the split kernels: STIT, time-scaled
STIT, erosion hard-core and volume apportionment.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
from scipy import optimize

from app.services.geometry import (
    ConvexPolytope,
    DegenerateCut,
    Hyperplane,
    clip_halfspace,
    erosion,
)
from app.services.hyperplane_measure import DrivingMeasure, sample_hitting_hyperplane

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("stit", "scaled", "erosion", "apportionment")
RATE_MODES = ("canonical", "raw")
FRACTION_TOL = 1e-10
RAMP_QUADRATURE_NODES = 16
RAMP_REJECTION_LIMIT = 10 ** 5


class UnsplittableCell(RuntimeError):
    """The kernel has no hyperplane to offer (empty eroded body)."""


class BisectionFailure(RuntimeError):
    """The volume-fraction offset could not be resolved to tolerance."""


# ============================================================================
# Kernel specifications
# ============================================================================

@dataclass(frozen=True)
class ApportionmentLaw:
    """Symmetric Beta(a, a) law of the volume fraction; a = 1 is the uniform law."""
    a: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"Beta parameter must be positive, got {self.a}")

    @property
    def name(self) -> str:
        return "uniform" if self.a == 1.0 else "beta"

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.beta(self.a, self.a))


@dataclass(frozen=True)
class SplitKernelSpec:
    """
    Variant record of a split kernel.

    Attributes:
        kind: 'stit', 'scaled', 'erosion' or 'apportionment'
        alpha: rate multiplier of the scaled kernel
        r: hard-core distance of the erosion kernel
        mode: 'hard' or 'ramp' (erosion only)
        eps: ramp width, 0 < eps < r
        law: volume-fraction law of the apportionment kernel
        rate_mode: 'canonical' (rate Λ([c]) always) or 'raw' (the kernel's own mass)
    """
    kind: str = "stit"
    alpha: float = 1.0
    r: float = 0.0
    mode: str = "hard"
    eps: float = 0.0
    law: Optional[ApportionmentLaw] = None
    rate_mode: str = "canonical"

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"Unknown kernel {self.kind!r}")
        if self.rate_mode not in RATE_MODES:
            raise ValueError(f"Unknown rate mode {self.rate_mode!r}")
        if self.kind == "scaled" and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.kind == "erosion":
            if self.r <= 0:
                raise ValueError("erosion distance r must be positive")
            if self.mode not in ("hard", "ramp"):
                raise ValueError(f"Unknown erosion mode {self.mode!r}")
            if self.mode == "ramp" and not 0 < self.eps < self.r:
                raise ValueError("ramp width must satisfy 0 < eps < r")
        if self.kind == "apportionment" and self.law is None:
            object.__setattr__(self, "law", ApportionmentLaw())

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------
    @classmethod
    def stit(cls, rate_mode: str = "canonical") -> "SplitKernelSpec":
        return cls(kind="stit", rate_mode=rate_mode)

    @classmethod
    def scaled_constant(cls, alpha: float, rate_mode: str = "raw") -> "SplitKernelSpec":
        return cls(kind="scaled", alpha=alpha, rate_mode=rate_mode)

    @classmethod
    def hard_core(cls, r: float, mode: str = "hard", eps: float = 0.0,
                  rate_mode: str = "canonical") -> "SplitKernelSpec":
        return cls(kind="erosion", r=r, mode=mode, eps=eps, rate_mode=rate_mode)

    @classmethod
    def apportionment(cls, a: float = 1.0, rate_mode: str = "canonical") -> "SplitKernelSpec":
        return cls(kind="apportionment", law=ApportionmentLaw(a), rate_mode=rate_mode)

    def scaled(self, alpha: float) -> "SplitKernelSpec":
        """Kernel acting on alpha-scaled cells the way this one acts on the originals."""
        if self.kind != "erosion":
            return self
        return SplitKernelSpec(kind="erosion", r=self.r * alpha, mode=self.mode,
                               eps=self.eps * alpha, rate_mode=self.rate_mode)

    @property
    def label(self) -> str:
        if self.kind == "scaled":
            return f"scaled({self.alpha:g})"
        if self.kind == "erosion":
            return f"erosion({self.r:g},{self.mode})"
        if self.kind == "apportionment":
            return f"apportionment({self.law.name},{self.law.a:g})"
        return "stit"

    def to_json(self) -> Dict:
        data: Dict = {"kernel": self.kind, "rate_mode": self.rate_mode}
        if self.kind == "scaled":
            data["alpha"] = self.alpha
        elif self.kind == "erosion":
            data.update({"r": self.r, "mode": self.mode})
            if self.mode == "ramp":
                data["eps"] = self.eps
        elif self.kind == "apportionment":
            data.update({"law": self.law.name, "a": self.law.a})
        return data

    @classmethod
    def from_json(cls, data: Dict) -> "SplitKernelSpec":
        return kernel_from_json(data)


def kernel_from_json(data: Dict) -> SplitKernelSpec:
    """Parse the kernel JSON record."""
    kind = data.get("kernel", "stit")
    rate_mode = data.get("rate_mode", "raw" if kind == "scaled" else "canonical")
    if kind == "stit":
        return SplitKernelSpec.stit(rate_mode)
    if kind == "scaled":
        return SplitKernelSpec.scaled_constant(float(data["alpha"]), rate_mode)
    if kind == "erosion":
        return SplitKernelSpec.hard_core(float(data["r"]), data.get("mode", "hard"),
                                         float(data.get("eps", 0.0)), rate_mode)
    if kind == "apportionment":
        law = data.get("law", "uniform")
        if law == "uniform":
            a = 1.0
        elif law == "beta":
            a = float(data["a"])
        else:
            raise ValueError(f"Unknown apportionment law {law!r}")
        return SplitKernelSpec.apportionment(a, rate_mode)
    raise ValueError(f"Unknown kernel {kind!r}")


# ============================================================================
# Helpers
# ============================================================================

def cut_depth(c: ConvexPolytope, H: Hyperplane) -> float:
    """
    Largest distance to the boundary of c attained on H ∩ c.

    Solved as a linear program: maximize s subject to x in H and
    <x, n_f> + s <= h_f for every facet f.
    """
    normals, offsets = c.facet_hyperplanes()
    d = c.dim
    cost = np.zeros(d + 1)
    cost[-1] = -1.0
    a_ub = np.hstack([normals, np.ones((len(normals), 1))])
    a_eq = np.append(H.normal, 0.0)[None, :]
    res = optimize.linprog(cost, A_ub=a_ub, b_ub=offsets, A_eq=a_eq, b_eq=[H.offset],
                           bounds=[(None, None)] * (d + 1), method="highs")
    if not res.success:
        return -np.inf
    return float(res.x[-1])


def _minus_fraction(c: ConvexPolytope, u: np.ndarray, offset: float, volume: float) -> float:
    H = Hyperplane(normal=u, offset=offset)
    try:
        piece = clip_halfspace(c, H, "minus", min_volume=0.0)
    except DegenerateCut:
        return 0.0 if offset - (c.vertices @ u).min() < 0.5 * c.width(u) else 1.0
    return 0.0 if piece is None else piece.volume / volume


def volume_fraction_offset(c: ConvexPolytope, u, U: float) -> float:
    """
    Offset r with vol(c ∩ {<x,u> <= r}) = U * vol(c).

    Args:
        c: Cell to apportion
        u: Unit direction
        U: Target volume fraction in (0, 1)

    Returns:
        The offset, accurate to FRACTION_TOL in volume fraction

    Raises:
        BisectionFailure: the monotone fraction map could not be resolved
    """
    if not 0.0 < U < 1.0:
        raise ValueError(f"volume fraction must lie in (0, 1), got {U}")
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    proj = c.vertices @ u
    lo, hi = float(proj.min()), float(proj.max())
    volume = c.volume

    def excess(r: float) -> float:
        return _minus_fraction(c, u, r, volume) - U

    try:
        offset = optimize.bisect(excess, lo, hi, xtol=1e-15 * max(hi - lo, 1e-300),
                                 rtol=4 * np.finfo(float).eps, maxiter=400)
    except (ValueError, RuntimeError) as e:
        raise BisectionFailure(f"Bisection for fraction {U} failed: {e}") from e
    if abs(excess(offset)) > FRACTION_TOL:
        raise BisectionFailure(f"Fraction {U} only resolved to {abs(excess(offset)):.2e}")
    return float(offset)


def _eroded_hit_mass(L: DrivingMeasure, c: ConvexPolytope, s: float) -> float:
    body = erosion(c, s)
    return 0.0 if body is None else L.hit_mass(body)


def _ramp_mass(K: SplitKernelSpec, L: DrivingMeasure, c: ConvexPolytope) -> float:
    nodes, weights = np.polynomial.legendre.leggauss(RAMP_QUADRATURE_NODES)
    lo, hi = K.r - K.eps, K.r
    s = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    values = np.array([_eroded_hit_mass(L, c, si) for si in s])
    return float(0.5 * (hi - lo) * (weights @ values) / K.eps)


def _sample_erosion(K: SplitKernelSpec, L: DrivingMeasure, c: ConvexPolytope,
                    rng: np.random.Generator) -> Hyperplane:
    if K.mode == "hard":
        body = erosion(c, K.r)
        if body is None:
            raise UnsplittableCell(f"erosion by {K.r:g} leaves nothing of {c!r}")
        return sample_hitting_hyperplane(L, body, rng)

    # ramp: depth level s has density proportional to Λ([ero(c, s)]) on [r - eps, r]
    outer = erosion(c, K.r - K.eps)
    if outer is None:
        raise UnsplittableCell(f"erosion by {K.r - K.eps:g} leaves nothing of {c!r}")
    envelope = L.hit_mass(outer)
    for _ in range(RAMP_REJECTION_LIMIT):
        s = rng.uniform(K.r - K.eps, K.r)
        body = erosion(c, s)
        if body is not None and rng.random() * envelope <= L.hit_mass(body):
            return sample_hitting_hyperplane(L, body, rng)
    raise UnsplittableCell(f"ramp erosion found no admissible depth for {c!r}")


def _sample_apportionment(K: SplitKernelSpec, L: DrivingMeasure, c: ConvexPolytope,
                          rng: np.random.Generator) -> Hyperplane:
    u = sample_hitting_hyperplane(L, c, rng).normal
    U = K.law.sample(rng)
    return Hyperplane.from_normal(u, volume_fraction_offset(c, u, U))


# ============================================================================
# Kernel operations
# ============================================================================

def kernel_rate(K: SplitKernelSpec, L: DrivingMeasure, c: ConvexPolytope) -> float:
    """Total mass of the split kernel on c, i.e. the split rate of the cell."""
    if K.rate_mode == "canonical" or K.kind in ("stit", "apportionment"):
        return L.hit_mass(c)
    if K.kind == "scaled":
        return K.alpha * L.hit_mass(c)
    if K.mode == "hard":
        return _eroded_hit_mass(L, c, K.r)
    return _ramp_mass(K, L, c)


def kernel_sample(K: SplitKernelSpec, L: DrivingMeasure, c: ConvexPolytope,
                  rng: np.random.Generator) -> Hyperplane:
    """
    Draw the cutting hyperplane of c from the normalized kernel.

    Raises:
        UnsplittableCell: erosion kernels on cells thinner than the hard-core distance
        BisectionFailure: apportionment offset not resolved
    """
    if K.kind in ("stit", "scaled"):
        return sample_hitting_hyperplane(L, c, rng)
    if K.kind == "erosion":
        return _sample_erosion(K, L, c, rng)
    return _sample_apportionment(K, L, c, rng)


class SplitKernel:
    """A kernel spec bound to its driving measure."""

    def __init__(self, spec: SplitKernelSpec, measure: DrivingMeasure):
        self.spec = spec
        self.measure = measure

    def rate(self, c: ConvexPolytope) -> float:
        return kernel_rate(self.spec, self.measure, c)

    def sample(self, c: ConvexPolytope, rng: np.random.Generator) -> Hyperplane:
        return kernel_sample(self.spec, self.measure, c, rng)

    def __repr__(self) -> str:
        return f"SplitKernel({self.spec.label}, rho={self.measure.rho:g})"
