"""
Statistics Service
Minus-sampled estimators of intensities, densities and topological mean
values of simulated tessellations, with jackknife confidence half-widths and
the closed-form STIT targets.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from cachetools import LRUCache
from scipy.spatial import cKDTree

from app.services.geometry import ConvexPolytope, erosion, gamma1
from app.services.hyperplane_measure import DirectionalDistribution, DrivingMeasure, Isotropic
from app.services.split_kernels import SplitKernelSpec
from app.services.tessellation_service import NestedTessellation, simulate_window
from app.services.vertex_complex import (
    BOUNDARY_VERTEX,
    COLLINEAR_TOL,
    VERTEX_MERGE_REL,
    X_VERTEX,
    VertexComplex,
    build_complex,
    cell_sides_2d,
    check_clearance,
)

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054
ZETA_CHUNK = 100_000

Tessellations = Union[NestedTessellation, Sequence[NestedTessellation]]


# ============================================================================
# Report container
# ============================================================================

@dataclass
class StatRow:
    target: Optional[float] = None
    tolerance: Optional[float] = None  # relative
    asserted: bool = True
    note: str = ""


@dataclass
class TessellationStats:
    """Estimates, confidence half-widths and targets of one statistics run."""
    d: int
    t: float
    window: ConvexPolytope
    inner: ConvexPolytope
    n_replications: int
    values: Dict[str, float]
    half_widths: Dict[str, float]
    rows: Dict[str, StatRow] = field(default_factory=dict)
    notes: Dict[str, Any] = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def passed(self, key: str) -> Optional[bool]:
        row = self.rows.get(key)
        if row is None or row.target is None or row.tolerance is None:
            return None
        est = self.values.get(key, float("nan"))
        scale = abs(row.target) if row.target != 0 else 1.0
        return bool(abs(est - row.target) <= row.tolerance * scale)

    @property
    def all_passed(self) -> bool:
        return all(self.passed(k) is not False for k, r in self.rows.items() if r.asserted)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for key, value in self.values.items():
            row = self.rows.get(key, StatRow(asserted=False))
            records.append({
                "quantity": key,
                "estimate": value,
                "ci_half_width": self.half_widths.get(key, float("nan")),
                "target": row.target,
                "tolerance": row.tolerance,
                "asserted": row.asserted and row.target is not None,
                "passed": self.passed(key),
                "note": row.note,
            })
        return pd.DataFrame.from_records(records)


# ============================================================================
# Clipping helpers
# ============================================================================

def _segment_length_inside(p: np.ndarray, q: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> float:
    d = q - p
    lo, hi = 0.0, 1.0
    nd = normals @ d
    slack = offsets - normals @ p
    for a, b in zip(nd, slack):
        if abs(a) < 1e-300:
            if b < 0:
                return 0.0
        elif a > 0:
            hi = min(hi, b / a)
        else:
            lo = max(lo, b / a)
        if lo >= hi:
            return 0.0
    return (hi - lo) * float(np.linalg.norm(d))


def _polygon_area_inside(points: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> float:
    poly = [np.asarray(p, dtype=float) for p in points]
    for n, h in zip(normals, offsets):
        if len(poly) < 3:
            return 0.0
        out = []
        m = len(poly)
        for i in range(m):
            a, b = poly[i], poly[(i + 1) % m]
            da, db = float(a @ n - h), float(b @ n - h)
            if da <= 0:
                out.append(a)
            if (da < 0 < db) or (db < 0 < da):
                out.append(a + da / (da - db) * (b - a))
        poly = out
    if len(poly) < 3:
        return 0.0
    arr = np.array(poly)
    return float(0.5 * np.linalg.norm(np.cross(arr, np.roll(arr, -1, axis=0)).sum(axis=0)))


def _inside(inner: ConvexPolytope, point: np.ndarray) -> bool:
    return inner.contains(point, tol=0.0)


def _as_list(Y: Tessellations) -> List[NestedTessellation]:
    return [Y] if isinstance(Y, NestedTessellation) else list(Y)


def kernel_time(Y: NestedTessellation) -> float:
    """Horizon times the rate multiplier of a raw scaled kernel."""
    K = Y.kernel
    if K is not None and K.kind == "scaled" and K.rate_mode == "raw":
        return Y.horizon * K.alpha
    return Y.horizon


def effective_time(Y: NestedTessellation) -> float:
    """Horizon in units where the kernel runs at canonical rates with rho = 1."""
    return kernel_time(Y) * (Y.measure.rho if Y.measure is not None else 1.0)


def _stit_like(Y: NestedTessellation) -> bool:
    K = Y.kernel
    isotropic = Y.measure is None or isinstance(Y.measure.R, Isotropic)
    return isotropic and (K is None or K.kind in ("stit", "scaled"))


def _first_order_applies(Y: NestedTessellation) -> bool:
    K = Y.kernel
    return K is None or K.rate_mode == "canonical" or K.kind in ("stit", "apportionment", "scaled")


# ============================================================================
# Per-replication tallies
# ============================================================================

def _vertex_tally(cx: VertexComplex, inner: ConvexPolytope) -> Dict[str, float]:
    n_v = n_x = deg = 0
    for v in cx.vertices:
        if v.vclass == BOUNDARY_VERTEX or not _inside(inner, v.location):
            continue
        n_v += 1
        deg += v.degree
        if v.vclass == X_VERTEX:
            n_x += 1
    return {"n_V": n_v, "n_T": n_v - n_x, "n_X": n_x, "degree_sum": deg}


def _cell_tally(Y: NestedTessellation, inner: ConvexPolytope, cx: VertexComplex) -> Dict[str, float]:
    L = Y.measure or DrivingMeasure.isotropic(Y.dim)
    g1 = gamma1(Y.dim)
    coords = cx.coordinates
    tree = cKDTree(coords) if len(coords) else None
    tol = 10 * cx.merge_tol
    tally = {"n_C": 0, "perimeter_sum": 0.0, "volume_sum": 0.0, "corner_sum": 0, "cell_vertex_sum": 0,
             "mass_sum": 0.0, "v1_sum": 0.0, "facet_count_sum": 0, "edge_count_sum": 0}
    for leaf in Y.leaves():
        body = leaf.polytope
        if not _inside(inner, body.barycenter):
            continue
        tally["n_C"] += 1
        tally["perimeter_sum"] += body.surface_measure
        tally["volume_sum"] += body.volume
        tally["corner_sum"] += body.vertex_count
        tally["edge_count_sum"] += len(body.edges())
        tally["facet_count_sum"] += len(body.faces) if body.dim == 3 else body.vertex_count
        tally["mass_sum"] += L.hit_mass(body)
        tally["v1_sum"] += DrivingMeasure.isotropic(Y.dim).hit_mass(body) / g1
        if tree is not None:
            center = body.barycenter
            radius = float(np.linalg.norm(body.vertices - center, axis=1).max()) + tol
            near = tree.query_ball_point(center, radius)
            tally["cell_vertex_sum"] += sum(1 for vid in near if abs(body.boundary_distance(coords[vid])) <= tol)
    return tally


def planar_tally(Y: NestedTessellation, inner: ConvexPolytope, merge_rel: float = VERTEX_MERGE_REL,
                 collinear_tol: float = COLLINEAR_TOL) -> Dict[str, float]:
    """Counts and sums of one planar replication inside `inner`."""
    cx = build_complex(Y, merge_rel, collinear_tol)
    normals, offsets = inner.facet_hyperplanes()
    tally: Dict[str, float] = {"area": inner.volume}
    tally.update(_vertex_tally(cx, inner))
    tally["length_inside"] = sum(_segment_length_inside(c.start, c.end, normals, offsets) for c in cx.carriers)
    for name, segments in (("I", [(c.start, c.end) for c in cx.carriers]),
                           ("E", cx.edge_segments()),
                           ("S", cell_sides_2d(cx, collinear_tol))):
        mids = [(p, q) for p, q in segments if _inside(inner, 0.5 * (p + q))]
        tally[f"n_{name}"] = len(mids)
        tally[f"len_{name}"] = sum(float(np.linalg.norm(q - p)) for p, q in mids)
    tally.update(_cell_tally(Y, inner, cx))
    return tally


def spatial_tally(Y: NestedTessellation, inner: ConvexPolytope, merge_rel: float = VERTEX_MERGE_REL,
                  collinear_tol: float = COLLINEAR_TOL) -> Dict[str, float]:
    """Counts and sums of one spatial replication inside `inner`."""
    cx = build_complex(Y, merge_rel, collinear_tol)
    normals, offsets = inner.facet_hyperplanes()
    tally: Dict[str, float] = {"volume": inner.volume}
    tally.update(_vertex_tally(cx, inner))
    edges = cx.edge_segments()
    mids = [(p, q) for p, q in edges if _inside(inner, 0.5 * (p + q))]
    tally["n_E"] = len(mids)
    tally["len_E"] = sum(float(np.linalg.norm(q - p)) for p, q in mids)
    tally["edge_length_inside"] = sum(_segment_length_inside(p, q, normals, offsets) for p, q in edges)
    tally["area_inside"] = sum(_polygon_area_inside(mp.geometry.points, normals, offsets)
                               for mp in Y.maximal_polytopes)
    sides = [(c.start, c.end) for c in cx.carriers if _inside(inner, 0.5 * (c.start + c.end))]
    tally["n_sides"] = len(sides)
    tally["len_sides"] = sum(float(np.linalg.norm(q - p)) for p, q in sides)
    tally.update(_cell_tally(Y, inner, cx))
    return tally


# ============================================================================
# Estimators
# ============================================================================

def _ratio(a: float, b: float) -> float:
    return a / b if b else float("nan")


def planar_estimates(T: Dict[str, float]) -> Dict[str, float]:
    A = T["area"]
    est = {
        "L_A": T["length_inside"] / A,
        "lambda_V": T["n_V"] / A,
        "lambda_I": T["n_I"] / A,
        "lambda_E": T["n_E"] / A,
        "lambda_S": T["n_S"] / A,
        "lambda_C": T["n_C"] / A,
        "L_I": _ratio(T["len_I"], T["n_I"]),
        "L_E": _ratio(T["len_E"], T["n_E"]),
        "L_S": _ratio(T["len_S"], T["n_S"]),
        "p": _ratio(T["perimeter_sum"], T["n_C"]),
        "a": _ratio(A, T["n_C"]),
        "a_measured": _ratio(T["volume_sum"], T["n_C"]),
        "mu_VE": _ratio(T["degree_sum"], T["n_V"]),
        "nu0_C": _ratio(T["corner_sum"], T["n_C"]),
        "nu1_C": _ratio(T["edge_count_sum"], T["n_C"]),
        "mu_CV": _ratio(T["cell_vertex_sum"], T["n_C"]),
        "mean_lambda_mass": _ratio(T["mass_sum"], T["n_C"]),
        "mean_V1": _ratio(T["v1_sum"], T["n_C"]),
        "kappa": _ratio(T["n_T"], T["n_V"]),
    }
    est["ratio_LI_LE"] = _ratio(est["L_I"], est["L_E"])
    est["ratio_LS_LE"] = _ratio(est["L_S"], est["L_E"])
    est["lambda_E_over_V"] = _ratio(est["lambda_E"], est["lambda_V"])
    est["lambda_C_over_V"] = _ratio(est["lambda_C"], est["lambda_V"])
    est["a_times_lambda_C"] = est["a_measured"] * est["lambda_C"]
    est["closure_L_A"] = _ratio(est["L_A"], est["lambda_C"] * est["p"] / 2.0)
    return est


def spatial_estimates(T: Dict[str, float]) -> Dict[str, float]:
    V = T["volume"]
    lam_V = T["n_V"] / V
    lam_E = T["n_E"] / V
    lam_C = T["n_C"] / V
    lam_P = lam_E - lam_V + lam_C
    kappa = _ratio(T["n_T"], T["n_V"])
    chi = _ratio(6.0 * lam_V, lam_P)
    S_V = T["area_inside"] / V
    L_V = T["edge_length_inside"] / V
    L_E = _ratio(T["len_E"], T["n_E"])
    denom_f = 12.0 + chi * (kappa - 2.0)
    est = {
        "lambda_V": lam_V,
        "lambda_E": lam_E,
        "lambda_C": lam_C,
        "lambda_P": lam_P,
        "kappa": kappa,
        "chi": chi,
        "S_V": S_V,
        "L_V": L_V,
        "L_E": L_E,
        "psi": 4.0 - 3.0 * kappa,
        "tau": 1.0 + kappa,
        "xi": 1.0,
        "mu_VE": _ratio(T["degree_sum"], T["n_V"]),
        "lambda_I": kappa * lam_V,
        "lambda_I_measured": T["n_sides"] / V,
        "L_I": _ratio(L_V, kappa * lam_V),
        "L_I_measured": _ratio(T["len_sides"], T["n_sides"]),
        "lambda_S_C": (4.0 + kappa) * lam_V,
        "lambda_S_P": 3.0 * kappa * lam_V,
        "lambda_F": (_ratio(12.0, chi) + kappa - 2.0) * lam_V,
        "mu_CV": _ratio(4.0 * chi, 6.0 - chi),
        "mu_CE": _ratio(6.0 * chi, 6.0 - chi),
        "mu_CP": _ratio(12.0, 6.0 - chi),
        "mu_EP": 3.0,
        "mu_FP": _ratio(12.0, denom_f),
        "A_F_over_A_P": _ratio(12.0, denom_f),
        "nu0_P": chi * (4.0 + kappa) / 6.0,
        "nu0_F": _ratio(6.0 * kappa * chi, denom_f),
        "mu_relint_F_E": _ratio(2.0 * chi, denom_f),
        "mu_relint_F_V": _ratio(kappa * chi, denom_f),
        "nu0_C": _ratio(2.0 * kappa * chi, 6.0 - chi),
        "nu1_C": _ratio(3.0 * kappa * chi, 6.0 - chi),
        "nu2_C": _ratio(12.0 + (kappa - 2.0) * chi, 6.0 - chi),
        "nu0_C_measured": _ratio(T["corner_sum"], T["n_C"]),
        "nu2_C_measured": _ratio(T["facet_count_sum"], T["n_C"]),
        "relint_I_vertices": _ratio(2.0 - kappa, kappa),
        "relint_S_C_vertices": _ratio(4.0 - 3.0 * kappa, 3.0 * kappa),
        "relint_S_P_vertices": _ratio(2.0 - kappa, kappa + 4.0),
        "mean_lambda_mass": _ratio(T["mass_sum"], T["n_C"]),
        "mean_V1": _ratio(T["v1_sum"], T["n_C"]),
        "lambda_E_over_V": _ratio(lam_E, lam_V),
        "closure_L_V": _ratio(lam_E * L_E, L_V),
        "chi_lower_margin": chi - 4.5,
        "chi_upper_margin": 6.0 - chi,
        "kappa_margin": kappa - _ratio(12.0 - 2.0 * chi, chi),
    }
    return est


def jackknife(tallies: Sequence[Dict[str, float]],
              estimator: Callable[[Dict[str, float]], Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    """Pooled estimates and leave-one-replication-out 95% half-widths."""
    keys = tallies[0].keys()
    total = {k: sum(T[k] for T in tallies) for k in keys}
    full = estimator(total)
    n = len(tallies)
    if n < 2:
        return {"values": full, "half_widths": {k: float("nan") for k in full}}
    loo = [estimator({k: total[k] - T[k] for k in keys}) for T in tallies]
    half = {}
    for k in full:
        vals = np.array([e[k] for e in loo], dtype=float)
        half[k] = float(Z_95 * math.sqrt((n - 1) / n * np.nansum((vals - np.nanmean(vals)) ** 2)))
    return {"values": full, "half_widths": half}


# ============================================================================
# Targets
# ============================================================================

def planar_rows(Y: NestedTessellation) -> Dict[str, StatRow]:
    rows = {
        "mu_VE": StatRow(3.0, 1e-9),
        "nu0_C": StatRow(4.0, 0.05),
        "nu1_C": StatRow(4.0, 0.05),
        "mu_CV": StatRow(6.0, 0.05),
        "ratio_LI_LE": StatRow(3.0, 0.05),
        "ratio_LS_LE": StatRow(1.5, 0.05),
        "lambda_E_over_V": StatRow(1.5, 0.05),
        "lambda_C_over_V": StatRow(0.5, 0.05),
        "a_times_lambda_C": StatRow(1.0, 0.03, note="mean measured cell area against 1/lambda_C"),
        "closure_L_A": StatRow(1.0, 0.03),
        "kappa": StatRow(1.0, 1e-9, note="planar nested tessellations only have T-vertices"),
    }
    t = effective_time(Y)
    if _first_order_applies(Y):
        rows["mean_lambda_mass"] = StatRow(2.0 / kernel_time(Y), 0.03)
    if _stit_like(Y):
        rows.update({
            "L_A": StatRow(t, 0.02),
            "lambda_V": StatRow(2.0 * t * t / math.pi, 0.05),
            "lambda_I": StatRow(t * t / math.pi, 0.07),
            "lambda_E": StatRow(3.0 * t * t / math.pi, 0.05),
            "lambda_S": StatRow(4.0 * t * t / math.pi, 0.05),
            "lambda_C": StatRow(t * t / math.pi, 0.05),
            "L_E": StatRow(math.pi / (3.0 * t), 0.05),
            "L_S": StatRow(math.pi / (2.0 * t), 0.05),
            "L_I": StatRow(math.pi / t, 0.05),
            "p": StatRow(2.0 * math.pi / t, 0.05),
            "a": StatRow(math.pi / (t * t), 0.05,
                         note=f"tabulated value pi/(2t^2) = {math.pi / (2 * t * t):.6g} disagrees with 1/lambda_C"),
            "mean_V1": StatRow(math.pi / t, 0.03),
        })
    return rows


def spatial_rows(Y: NestedTessellation) -> Dict[str, StatRow]:
    rows = {
        "mu_VE": StatRow(4.0, 0.05),
        "lambda_E_over_V": StatRow(2.0, 0.05),
        "closure_L_V": StatRow(1.0, 0.03),
        "psi": StatRow(None, None, asserted=False, note="4 - 3 kappa"),
        "tau": StatRow(None, None, asserted=False, note="1 + kappa"),
        "xi": StatRow(1.0, 0.0, note="all edges are pi-edges"),
        "chi_lower_margin": StatRow(None, None, asserted=False, note="chi >= 9/2"),
        "chi_upper_margin": StatRow(None, None, asserted=False, note="chi < 6"),
        "kappa_margin": StatRow(None, None, asserted=False, note="kappa >= (12 - 2 chi)/chi"),
    }
    t = effective_time(Y)
    if _first_order_applies(Y):
        rows["mean_lambda_mass"] = StatRow(3.0 / kernel_time(Y), 0.03)
    if _stit_like(Y):
        rows.update({
            "S_V": StatRow(t, 0.03),
            "L_V": StatRow(math.pi / 4.0 * t * t, 0.05),
            "lambda_V": StatRow(math.pi / 8.0 * t ** 3, 0.07),
            "kappa": StatRow(2.0 / 3.0, 0.05),
            "chi": StatRow(36.0 / 7.0, 0.05),
            "mean_V1": StatRow(6.0 / t, 0.03),
        })
    return rows


def inequality_panel(values: Dict[str, float], half_widths: Dict[str, float]) -> Dict[str, bool]:
    """χ >= 9/2, χ < 6 and κ >= (12 - 2χ)/χ, each allowed to fail only within its confidence band."""
    def ok(key: str) -> bool:
        hw = half_widths.get(key, 0.0)
        hw = 0.0 if hw is None or math.isnan(hw) else hw
        return bool(values[key] + hw >= 0.0)
    return {"chi_ge_9_2": ok("chi_lower_margin"), "chi_lt_6": ok("chi_upper_margin"),
            "kappa_ge_bound": ok("kappa_margin")}


# ============================================================================
# Service
# ============================================================================

class StatsService:
    """Estimator suite over finished tessellations."""

    def __init__(self, merge_rel: float = None, collinear_tol: float = None, clearance_factor: float = None):
        self.merge_rel = merge_rel or VERTEX_MERGE_REL
        self.collinear_tol = collinear_tol or COLLINEAR_TOL
        self.clearance_factor = clearance_factor or 3.0
        self._clearance_cache: LRUCache = LRUCache(maxsize=64)

    # ------------------------------------------------------------------
    # Inner windows
    # ------------------------------------------------------------------
    def pilot_clearance(self, W: ConvexPolytope, K: SplitKernelSpec, L: DrivingMeasure, t: float,
                        seed: int = 0) -> float:
        """clearance_factor times the mean leaf diameter of one pilot run (memoized)."""
        key = json.dumps([W.to_json(), K.to_json(), L.to_json(), t, seed, self.clearance_factor], sort_keys=True)
        if key in self._clearance_cache:
            return self._clearance_cache[key]
        pilot = simulate_window(W, K, L, t, seed=seed)
        diam = float(np.mean([leaf.polytope.diameter for leaf in pilot.leaves()]))
        clearance = self.clearance_factor * diam
        self._clearance_cache[key] = clearance
        logger.info(f"Pilot clearance for {K.label} at t={t:g}: {clearance:.4g}")
        return clearance

    def inner_window(self, W: ConvexPolytope, clearance: float) -> ConvexPolytope:
        inner = erosion(W, clearance)
        if inner is None:
            raise ValueError(f"clearance {clearance:g} leaves no inner window")
        return inner

    # ------------------------------------------------------------------
    # Estimators
    # ------------------------------------------------------------------
    def planar_stats(self, Y: Tessellations, inner: ConvexPolytope) -> TessellationStats:
        """Planar mean-value table over one or more replications."""
        runs = _as_list(Y)
        if runs[0].dim != 2:
            raise ValueError("planar_stats needs a 2D tessellation")
        clearance_hits = sum(check_clearance(y, inner) for y in runs)
        tallies = [planar_tally(y, inner, self.merge_rel, self.collinear_tol) for y in runs]
        jk = jackknife(tallies, planar_estimates)
        stats = TessellationStats(2, runs[0].horizon, runs[0].window, inner, len(runs),
                                  jk["values"], jk["half_widths"], planar_rows(runs[0]))
        stats.notes.update({"clearance_violations": clearance_hits,
                            "a_tabulated": math.pi / (2.0 * effective_time(runs[0]) ** 2)})
        logger.info(f"Planar statistics over {len(runs)} replications: "
                    f"L_A={stats['L_A']:.4g}, lambda_V={stats['lambda_V']:.4g}")
        return stats

    def spatial_stats(self, Y: Tessellations, inner: ConvexPolytope) -> TessellationStats:
        """Spatial mean values, derived parameters and the inequality panel."""
        runs = _as_list(Y)
        if runs[0].dim != 3:
            raise ValueError("spatial_stats needs a 3D tessellation")
        clearance_hits = sum(check_clearance(y, inner) for y in runs)
        tallies = [spatial_tally(y, inner, self.merge_rel, self.collinear_tol) for y in runs]
        jk = jackknife(tallies, spatial_estimates)
        stats = TessellationStats(3, runs[0].horizon, runs[0].window, inner, len(runs),
                                  jk["values"], jk["half_widths"], spatial_rows(runs[0]))
        stats.notes["inequalities"] = inequality_panel(stats.values, stats.half_widths)
        stats.notes["clearance_violations"] = clearance_hits
        logger.info(f"Spatial statistics over {len(runs)} replications: "
                    f"kappa={stats['kappa']:.4g}, chi={stats['chi']:.4g}")
        return stats


# ============================================================================
# Cell means and zeta constants
# ============================================================================

def cells_in_window(Y: NestedTessellation, inner: ConvexPolytope) -> List[ConvexPolytope]:
    cells = [leaf.polytope for leaf in Y.leaves() if _inside(inner, leaf.polytope.barycenter)]
    if not cells:
        raise ValueError("no leaf has its barycenter in the inner window")
    return cells


def mean_tcell_lambda_mass(Y: NestedTessellation, inner: ConvexPolytope,
                           L: Optional[DrivingMeasure] = None) -> float:
    """Unweighted mean Λ-mass of leaves with barycenter in `inner`."""
    L = L or Y.measure or DrivingMeasure.isotropic(Y.dim)
    return float(np.mean([L.hit_mass(c) for c in cells_in_window(Y, inner)]))


def mean_tcell_v1(Y: NestedTessellation, inner: ConvexPolytope) -> float:
    """Mean first intrinsic volume of leaves with barycenter in `inner`."""
    iso = DrivingMeasure.isotropic(Y.dim)
    return float(np.mean([iso.hit_mass(c) for c in cells_in_window(Y, inner)]) / gamma1(Y.dim))


def zeta_constants(R: DirectionalDistribution, n: int, seed=None) -> Dict[str, Dict[str, float]]:
    """
    Monte Carlo |det| averages of independent R-directions.

    2D: zeta = E|det(u1, u2)|. 3D: zeta2 = E|u1 x u2| and zeta3 = E|det(u1, u2, u3)|.
    Each entry carries the estimate, its standard error and, for isotropic R,
    the closed-form value.
    """
    if n < 10 ** 4:
        raise ValueError(f"zeta estimation needs n >= 10^4, got {n}")
    rng = np.random.default_rng(seed)
    names = ("zeta",) if R.dim == 2 else ("zeta2", "zeta3")
    sums = {k: 0.0 for k in names}
    squares = {k: 0.0 for k in names}
    done = 0
    while done < n:
        m = min(ZETA_CHUNK, n - done)
        u1, u2 = R.sample_many(rng, m), R.sample_many(rng, m)
        if R.dim == 2:
            vals = {"zeta": np.abs(u1[:, 0] * u2[:, 1] - u1[:, 1] * u2[:, 0])}
        else:
            u3 = R.sample_many(rng, m)
            cross = np.cross(u1, u2)
            vals = {"zeta2": np.linalg.norm(cross, axis=1), "zeta3": np.abs(np.einsum("ij,ij->i", cross, u3))}
        for k, v in vals.items():
            sums[k] += float(v.sum())
            squares[k] += float((v ** 2).sum())
        done += m
    targets = {"zeta": 2.0 / math.pi, "zeta2": math.pi / 4.0, "zeta3": math.pi / 8.0}
    out = {}
    for k in names:
        mean = sums[k] / n
        var = max(squares[k] / n - mean ** 2, 0.0)
        out[k] = {"estimate": mean, "se": math.sqrt(var / n),
                  "target": targets[k] if isinstance(R, Isotropic) else None}
    return out


# ============================================================================
# Singleton accessor
# ============================================================================

_stats_service_instance: Optional[StatsService] = None


def get_stats_service() -> StatsService:
    """Get or create stats service singleton."""
    global _stats_service_instance
    if _stats_service_instance is None:
        from config import get_config
        cfg = get_config()
        _stats_service_instance = StatsService(merge_rel=cfg.VERTEX_MERGE_REL, collinear_tol=cfg.COLLINEAR_TOL,
                                               clearance_factor=cfg.CLEARANCE_FACTOR)
    return _stats_service_instance


def planar_stats(Y: Tessellations, inner: ConvexPolytope) -> TessellationStats:
    return get_stats_service().planar_stats(Y, inner)


def spatial_stats(Y: Tessellations, inner: ConvexPolytope) -> TessellationStats:
    return get_stats_service().spatial_stats(Y, inner)
