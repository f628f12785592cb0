"""
Shrink Service
Shrink chains, the continuous shrink dynamics as a typical-cell sampler,
spinal chains extracted from window simulations and their diagnostics.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from statsmodels.tsa.stattools import acf

from app.services.geometry import (
    EPS_VOL_REL,
    CenteredBody,
    ConvexPolytope,
    GeometryError,
    recenter,
    split_polytope,
)
from app.services.hyperplane_measure import DrivingMeasure, RejectionOverflow, quasi_random_directions
from app.services.split_kernels import (
    BisectionFailure,
    SplitKernelSpec,
    UnsplittableCell,
    kernel_sample,
)
from app.services.tessellation_service import (
    NestedTessellation,
    ancestor_path,
    locate_leaf,
    zero_cell,
)

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("raw", "centered", "centered_unit")
STATIONARITY_P = 1e-4
ACF_THRESHOLD = 0.05
ANISOTROPY_DIRECTIONS = 256
RESAMPLE_LIMIT = 100


class NonErgodicitySuspected(UserWarning):
    """The Λ-mass trace of a chain fails the split-half stationarity test."""


# ============================================================================
# Shrink chains
# ============================================================================

@dataclass
class ShrinkChainState:
    body: ConvexPolytope
    normalization: str = "raw"

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"Unknown normalization {self.normalization!r}")


def normalize_body(body: ConvexPolytope, normalization: str, L: DrivingMeasure) -> ConvexPolytope:
    """Apply none / recenter / recenter and rescale to unit Λ-mass."""
    if normalization == "raw":
        return body
    centered = recenter(body).body
    if normalization == "centered":
        return centered
    return centered.scaled(1.0 / L.hit_mass(centered))


def default_initial_body(dim: int, L: DrivingMeasure) -> ConvexPolytope:
    """Centered unit-Λ-mass hexagon (2D) or cube (3D) used to start chains."""
    body = ConvexPolytope.regular_polygon(6) if dim == 2 else ConvexPolytope.cube(1.0, 3)
    return normalize_body(body, "centered_unit", L)


def shrink_step(state: ShrinkChainState, K: SplitKernelSpec, L: DrivingMeasure,
                rng: np.random.Generator, resample_limit: int = RESAMPLE_LIMIT,
                eps_vol_rel: float = EPS_VOL_REL) -> ShrinkChainState:
    """
    Split the body by the kernel, keep either side with probability 1/2, normalize.

    Pieces below eps_vol_rel times the body volume count as degenerate cuts.

    Raises:
        UnsplittableCell: the kernel cannot split the body
        BisectionFailure: the resample budget ran out after an unresolved
            apportionment offset
    """
    body = state.body
    min_volume = eps_vol_rel * body.volume
    unresolved: Optional[BisectionFailure] = None
    for attempt in range(resample_limit):
        try:
            H = kernel_sample(K, L, body, rng)
            plus, minus, _ = split_polytope(body, H, min_volume=min_volume)
            break
        except BisectionFailure as e:
            unresolved = e
            logger.warning(f"Shrink step: unresolved offset, resampling (attempt {attempt + 1}): {e}")
        except (GeometryError, RejectionOverflow) as e:
            logger.debug(f"Shrink step: resampling cut (attempt {attempt + 1}): {e}")
    else:
        if unresolved is not None:
            raise unresolved
        raise UnsplittableCell(f"no admissible cut after {resample_limit} attempts")
    kept = plus if rng.random() < 0.5 else minus
    return ShrinkChainState(normalize_body(kept, state.normalization, L), state.normalization)


# ============================================================================
# Ensembles
# ============================================================================

@dataclass
class TypicalCellEnsemble:
    samples: List[CenteredBody]
    weights: np.ndarray
    provenance: str
    horizon: float = 1.0
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.samples) != len(self.weights):
            raise ValueError("one weight per sample is required")
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise ValueError("weights must be nonnegative with at least one positive")

    def __len__(self) -> int:
        return len(self.samples)

    def hit_masses(self, L: DrivingMeasure) -> np.ndarray:
        return np.array([L.hit_mass(s.body) for s in self.samples])

    def split_half(self) -> Tuple["TypicalCellEnsemble", "TypicalCellEnsemble"]:
        m = len(self.samples) // 2
        return (TypicalCellEnsemble(self.samples[:m], self.weights[:m], self.provenance, self.horizon),
                TypicalCellEnsemble(self.samples[m:], self.weights[m:], self.provenance, self.horizon))


def window_census(Y: NestedTessellation, inner: ConvexPolytope) -> TypicalCellEnsemble:
    """Leaf cells with barycenter in `inner`, recentered and scaled by the horizon."""
    scale = Y.horizon if Y.horizon > 0 else 1.0
    samples = [recenter(leaf.polytope.scaled(scale)) for leaf in Y.leaves()
               if inner.contains(leaf.polytope.barycenter, tol=0.0)]
    if not samples:
        raise ValueError("no leaf has its barycenter in the inner window")
    return TypicalCellEnsemble(samples, np.ones(len(samples)), "window_census", Y.horizon)


def merge_ensembles(ensembles: Sequence[TypicalCellEnsemble]) -> TypicalCellEnsemble:
    samples = [s for e in ensembles for s in e.samples]
    weights = np.concatenate([e.weights for e in ensembles])
    return TypicalCellEnsemble(samples, weights, ensembles[0].provenance, ensembles[0].horizon)


def volume_weighted_resample(volumes: Sequence[float], n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with probability proportional to volume (the zero-cell modification)."""
    v = np.asarray(volumes, dtype=float)
    return rng.choice(len(v), size=n, p=v / v.sum())


def rescale_ensemble(ens: TypicalCellEnsemble, factor: float) -> TypicalCellEnsemble:
    """Scale every sample body by `factor`; weights and provenance are kept."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    samples = [CenteredBody(s.body.scaled(factor)) for s in ens.samples]
    return TypicalCellEnsemble(samples, ens.weights.copy(), ens.provenance, ens.horizon, dict(ens.diagnostics))


def zero_cell_report(runs: Sequence[NestedTessellation], inner: ConvexPolytope, seed=None) -> Dict[str, float]:
    """
    Compare zero-cell volumes with the volume-weighted typical cell.

    Typical cells are the leaves with barycenter in `inner`, pooled over all
    runs. Resampling them with probability proportional to volume gives the
    law the zero cells should follow.

    Args:
        runs: Replications whose windows contain the origin in their interior
        inner: Window for the typical-cell census
        seed: Seed of the resampling

    Returns:
        Dict of mean volumes and the two-sample KS statistic and p-value
    """
    if not runs:
        raise ValueError("at least one run is required")
    zero = np.array([zero_cell(Y).polytope.volume for Y in runs])
    typical = np.array([leaf.polytope.volume for Y in runs for leaf in Y.leaves()
                        if inner.contains(leaf.polytope.barycenter, tol=0.0)])
    if typical.size == 0:
        raise ValueError("no leaf has its barycenter in the inner window")
    rng = np.random.default_rng(seed)
    weighted = typical[volume_weighted_resample(typical, typical.size, rng)]
    res = stats.ks_2samp(zero, weighted)
    logger.debug(f"Zero cell: {zero.size} runs, {typical.size} typical cells, KS p={res.pvalue:.3g}")
    return {
        "zero_mean_volume": float(zero.mean()),
        "typical_mean_volume": float(typical.mean()),
        "weighted_mean_volume": float(weighted.mean()),
        "ks_stat": float(res.statistic),
        "p_value": float(res.pvalue),
        "runs": int(zero.size),
        "typical_cells": int(typical.size),
    }


# ============================================================================
# Continuous shrink dynamics
# ============================================================================

def csd_waiting_time(a: float, rng: np.random.Generator) -> float:
    """Next jump after growth start: inverts a(e^Δ - 1) = E with E ~ Exp(1)."""
    return math.log1p(rng.exponential() / a)


def csd_waiting_time_thinning(a: float, rng: np.random.Generator, block: float = 1.0) -> float:
    """Same law as `csd_waiting_time`, drawn by thinning the rate a e^s blockwise."""
    s = 0.0
    while True:
        bound = a * math.exp(s + block)
        s_next = s + rng.exponential(1.0 / bound)
        if s_next > s + block:
            s += block
            continue
        s = s_next
        if rng.random() * bound <= a * math.exp(s):
            return s


def suggest_thinning(trace: Sequence[float], threshold: float = ACF_THRESHOLD) -> Optional[int]:
    """First lag at which the autocorrelation of the trace drops below threshold."""
    x = np.asarray(trace, dtype=float)
    if len(x) < 4 or np.std(x) == 0:
        return None
    nlags = min(len(x) - 1, 1000)
    r = acf(x, nlags=nlags, fft=True)
    below = np.flatnonzero(r < threshold)
    return int(below[0]) if len(below) else None


def stationarity_test(trace: Sequence[float]) -> Dict:
    """Two-sample KS between first and second half of the trace."""
    x = np.asarray(trace, dtype=float)
    m = len(x) // 2
    result = stats.ks_2samp(x[:m], x[m:])
    return {"ks_stat": float(result.statistic), "p_value": float(result.pvalue),
            "stationary": bool(result.pvalue >= STATIONARITY_P)}


class ShrinkService:
    """
    Continuous shrink dynamics.

    Between jumps the centered body grows as e^s K. The jump rate at growth
    time s is a e^s with a the Λ-mass at the last jump, so the next jump
    comes after ln(1 + E/a). A jump is a centered shrink step. States are
    recorded on a deterministic time grid after burn-in, which samples the
    time-stationary law rather than the post-jump law.
    """

    def __init__(self, burn_in: int = None, thin: int = None, resample_limit: int = None,
                 eps_vol_rel: float = None):
        self.burn_in = burn_in if burn_in is not None else 10 ** 4
        self.thin = thin or 50
        self.resample_limit = resample_limit or RESAMPLE_LIMIT
        self.eps_vol_rel = eps_vol_rel or EPS_VOL_REL

    def csd_run(
        self,
        K: SplitKernelSpec,
        L: DrivingMeasure,
        K0: ConvexPolytope,
        n_samples: int,
        burn_in: Optional[int] = None,
        thin: Optional[int] = None,
        seed=None,
    ) -> TypicalCellEnsemble:
        """
        Sample the typical cell by running the continuous shrink dynamics.

        Args:
            K: Split kernel
            L: Driving measure
            K0: Initial body
            n_samples: Number of recorded states
            burn_in: Jumps discarded before recording
            thin: Recording spacing, in mean holding times
            seed: Seed of the chain

        Returns:
            Ensemble rescaled so that its mean Λ-mass equals the dimension
        """
        burn_in = self.burn_in if burn_in is None else burn_in
        thin = self.thin if thin is None else thin
        rng = np.random.default_rng(seed)
        state = ShrinkChainState(recenter(K0).body, "centered")
        restarts = 0

        def jump(current: ShrinkChainState) -> ShrinkChainState:
            nonlocal restarts
            try:
                return shrink_step(current, K, L, rng, self.resample_limit, self.eps_vol_rel)
            except UnsplittableCell as e:
                restarts += 1
                logger.warning(f"CSD chain restarted from the initial body: {e}")
                return ShrinkChainState(recenter(K0).body, "centered")

        holding = []
        for _ in range(burn_in):
            delta = csd_waiting_time(L.hit_mass(state.body), rng)
            holding.append(delta)
            state = jump(ShrinkChainState(state.body.scaled(math.exp(delta)), "centered"))
        mean_holding = float(np.mean(holding)) if holding else csd_waiting_time(L.hit_mass(state.body), rng)
        spacing = thin * mean_holding

        samples: List[CenteredBody] = []
        trace: List[float] = []
        next_record = spacing  # growth time since the last jump
        delta = csd_waiting_time(L.hit_mass(state.body), rng)
        jumps = 0
        while len(samples) < n_samples:
            if delta > next_record:
                grown = state.body.scaled(math.exp(next_record))
                samples.append(CenteredBody(grown))
                trace.append(L.hit_mass(grown))
                next_record += spacing
                continue
            state = jump(ShrinkChainState(state.body.scaled(math.exp(delta)), "centered"))
            jumps += 1
            next_record -= delta
            delta = csd_waiting_time(L.hit_mass(state.body), rng)

        trace_arr = np.array(trace)
        d = K0.dim
        factor = d / trace_arr.mean()
        half = len(trace_arr) // 2
        drift = {
            "pre_rescale_mean_mass": float(trace_arr.mean()),
            "drift_first_half": float(trace_arr[:half].mean() / d) if half else None,
            "drift_second_half": float(trace_arr[half:].mean() / d),
        }
        stationarity = stationarity_test(trace_arr) if len(trace_arr) >= 8 else {"stationary": True}
        if not stationarity["stationary"]:
            warnings.warn(f"Λ-mass trace not stationary (p={stationarity['p_value']:.2e})",
                          NonErgodicitySuspected)
            logger.warning(f"Non-ergodicity suspected for kernel {K.label}: {stationarity}")
        diagnostics = {
            **drift,
            "rescale_factor": float(factor),
            "stationarity": stationarity,
            "restarts": restarts,
            "jumps": jumps + burn_in,
            "mean_holding_time": mean_holding,
            "acf_lag": suggest_thinning(trace_arr),
        }
        rescaled = [CenteredBody(s.body.scaled(factor)) for s in samples]
        logger.info(f"CSD run ({K.label}): {n_samples} samples, {restarts} restarts")
        return TypicalCellEnsemble(rescaled, np.ones(n_samples), "csd", 1.0, diagnostics)


# ============================================================================
# Spinal chains
# ============================================================================

@dataclass
class SpinalEntry:
    polytope: ConvexPolytope
    time_mark: float
    birth: float
    hit_mass: float
    node_id: Optional[int] = None


@dataclass
class SpinalChain:
    """Seed leaf first; each later entry is the parent of the one before it."""
    entries: List[SpinalEntry]
    horizon: float
    point: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)

    def is_valid(self, rel_tol: float = 1e-9) -> bool:
        for a, b in zip(self.entries, self.entries[1:]):
            if a.time_mark < b.time_mark or b.time_mark <= 0.0:
                return False
            if a.polytope.volume > b.polytope.volume * (1.0 + rel_tol):
                return False
            if a.hit_mass > b.hit_mass * (1.0 + rel_tol):
                return False
        return self.entries[0].time_mark == self.horizon


def extract_spinal_chain(Y: NestedTessellation, point, L: Optional[DrivingMeasure] = None) -> SpinalChain:
    """
    Ancestor cells of the leaf containing `point`.

    The seed carries time mark t; every ancestor carries its death time,
    the birth time of the entry before it.

    Raises:
        OriginOutsideWindow: point not interior to the window
    """
    L = L or Y.measure
    leaf = locate_leaf(Y, point)
    path = ancestor_path(Y, leaf)
    entries = [
        SpinalEntry(
            polytope=node.polytope,
            time_mark=Y.horizon if i == 0 else node.death,
            birth=node.birth,
            hit_mass=L.hit_mass(node.polytope),
            node_id=node.id,
        )
        for i, node in enumerate(path)
    ]
    return SpinalChain(entries, Y.horizon, np.asarray(point, dtype=float))


def distort_holding_times(chain: SpinalChain, factor: float) -> SpinalChain:
    """Copy of the chain with every ancestor lifetime multiplied by `factor`."""
    births = [0.0] * len(chain.entries)
    marks = [0.0] * len(chain.entries)
    for i in range(len(chain.entries) - 1, 0, -1):
        e = chain.entries[i]
        marks[i] = births[i] + factor * (e.time_mark - e.birth)
        births[i - 1] = marks[i]
    marks[0] = max(chain.horizon, births[0])
    entries = [SpinalEntry(e.polytope, marks[i], births[i], e.hit_mass, e.node_id)
               for i, e in enumerate(chain.entries)]
    return SpinalChain(entries, chain.horizon, chain.point)


def spinal_residuals(chains: Sequence[SpinalChain]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rescaled holding times of the ancestors and the horizon caps.

    The seed entry is excluded (it is still alive at the horizon). An ancestor
    k with birth b is only observed because it split before t, so its rescaled
    lifetime is Exp(1) truncated at Λ([k])(t - b).
    """
    residuals, caps = [], []
    for chain in chains:
        for e in chain.entries[1:]:
            residuals.append(e.hit_mass * (e.time_mark - e.birth))
            caps.append(e.hit_mass * (chain.horizon - e.birth))
    return np.array(residuals), np.array(caps)


def spinal_time_diagnostic(chains: Sequence[SpinalChain], min_chains: int = 100) -> Dict:
    """
    KS tests of the spinal time-mark law.

    Reports the plain test of the pooled residuals against Exp(1) and the
    truncation-corrected probability-integral-transform test; the corrected
    test decides `passed`.
    """
    if len(chains) < min_chains:
        raise ValueError(f"need at least {min_chains} chains, got {len(chains)}")
    residuals, caps = spinal_residuals(chains)
    if len(residuals) == 0:
        raise ValueError("chains contain no ancestor entries")
    plain = stats.kstest(residuals, stats.expon.cdf)
    pit = -np.expm1(-residuals) / -np.expm1(-caps)
    corrected = stats.kstest(pit, stats.uniform.cdf)
    return {
        "n_chains": len(chains),
        "n_residuals": int(len(residuals)),
        "ks_stat": float(plain.statistic),
        "p_value": float(plain.pvalue),
        "corrected_ks_stat": float(corrected.statistic),
        "corrected_p_value": float(corrected.pvalue),
        "passed": bool(corrected.pvalue > 0.01),
    }


def oldest_interior_mass(chain: SpinalChain, window: ConvexPolytope) -> Optional[float]:
    """Λ-mass of the oldest chain entry that does not touch the window boundary."""
    normals, offsets = window.facet_hyperplanes()
    tol = window.tolerance()
    for e in reversed(chain.entries):
        gap = offsets[None, :] - e.polytope.vertices @ normals.T
        if gap.min() > tol:
            return e.hit_mass
    return None


# ============================================================================
# Typical-cell comparison
# ============================================================================

def shape_functionals(body: ConvexPolytope) -> Dict[str, float]:
    """Scale- and translation-invariant shape descriptors."""
    if body.dim == 2:
        iso = 4.0 * math.pi * body.volume / body.surface_measure ** 2
    else:
        iso = 36.0 * math.pi * body.volume ** 2 / body.surface_measure ** 3
    w = body.widths(quasi_random_directions(body.dim, ANISOTROPY_DIRECTIONS))
    return {"vertex_count": float(body.vertex_count), "isoperimetric": float(iso),
            "anisotropy": float(w.max() / w.min())}


def compare_typical_cell(ensA: TypicalCellEnsemble, ensB: TypicalCellEnsemble,
                         L: Optional[DrivingMeasure] = None, alpha: float = 0.01) -> Dict:
    """Two-sample KS tests on shape functionals of the renormalized samples."""
    if not len(ensA) or not len(ensB):
        raise ValueError("both ensembles must be nonempty")
    L = L or DrivingMeasure.isotropic(ensA.samples[0].body.dim)

    def table(ens: TypicalCellEnsemble) -> Dict[str, np.ndarray]:
        rows = [shape_functionals(normalize_body(s.body, "centered_unit", L)) for s in ens.samples]
        return {k: np.array([r[k] for r in rows]) for k in rows[0]}

    a, b = table(ensA), table(ensB)
    report = {}
    for name in a:
        res = stats.ks_2samp(a[name], b[name])
        report[name] = {"ks_stat": float(res.statistic), "p_value": float(res.pvalue),
                        "mean_a": float(a[name].mean()), "mean_b": float(b[name].mean())}
    report["all_pass"] = all(v["p_value"] > alpha for v in report.values() if isinstance(v, dict))
    return report


# ============================================================================
# Singleton accessor
# ============================================================================

_shrink_service_instance: Optional[ShrinkService] = None


def get_shrink_service() -> ShrinkService:
    """Get or create shrink service singleton."""
    global _shrink_service_instance
    if _shrink_service_instance is None:
        from config import get_config
        cfg = get_config()
        _shrink_service_instance = ShrinkService(burn_in=cfg.CSD_BURN_IN, thin=cfg.CSD_THIN,
                                                 resample_limit=cfg.RESAMPLE_LIMIT,
                                                 eps_vol_rel=cfg.EPS_VOL_REL)
    return _shrink_service_instance


def csd_run(K: SplitKernelSpec, L: DrivingMeasure, K0: ConvexPolytope, n_samples: int,
            burn_in: Optional[int] = None, thin: Optional[int] = None, seed=None) -> TypicalCellEnsemble:
    return get_shrink_service().csd_run(K, L, K0, n_samples, burn_in, thin, seed)
