"""
Vertex Complex
Vertices and edges of a simulated tessellation: segment endpoints and
crossings merged at a tolerance, edges split at vertices, T/X classification.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from app.services.geometry import ConvexPolytope
from app.services.tessellation_service import NestedTessellation

logger = logging.getLogger(__name__)

VERTEX_MERGE_REL = 1e-7
COLLINEAR_TOL = 1e-6
PAIR_CHUNK = 256

T_VERTEX = "T"
X_VERTEX = "X"
BOUNDARY_VERTEX = "window_boundary"


class ClearanceTooSmall(UserWarning):
    """The inner window reaches cells that touch the window boundary."""


@dataclass
class VertexRecord:
    location: np.ndarray
    incident_edges: np.ndarray  # unit directions, one row per edge
    vclass: str

    @property
    def degree(self) -> int:
        return int(len(self.incident_edges))


@dataclass
class Carrier:
    """A straight segment of the skeleton before splitting at vertices."""
    start: np.ndarray
    end: np.ndarray
    facet: int  # index of the maximal polytope it belongs to


@dataclass
class VertexComplex:
    dim: int
    window: ConvexPolytope
    merge_tol: float
    vertices: List[VertexRecord]
    edges: List[Tuple[int, int]]
    carriers: List[Carrier]
    on_carrier: List[List[Tuple[float, int]]] = field(default_factory=list)  # (parameter, vertex id)

    @property
    def coordinates(self) -> np.ndarray:
        return np.array([v.location for v in self.vertices]).reshape(-1, self.dim)

    def edge_segments(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return [(self.vertices[i].location, self.vertices[j].location) for i, j in self.edges]


# ============================================================================
# Segment machinery
# ============================================================================

def carriers_of(Y: NestedTessellation) -> List[Carrier]:
    """Maximal segments (2D) or the boundary sides of maximal polygons (3D)."""
    out = []
    for k, mp in enumerate(Y.maximal_polytopes):
        for p, q in mp.geometry.segments():
            out.append(Carrier(np.asarray(p, dtype=float), np.asarray(q, dtype=float), k))
    return out


def proper_crossings(starts: np.ndarray, ends: np.ndarray, tol: float) -> List[np.ndarray]:
    """Points where two segments meet at relative-interior points of both."""
    n = len(starts)
    if n < 2:
        return []
    d = ends - starts
    lengths = np.linalg.norm(d, axis=1)
    lo = np.minimum(starts, ends) - tol
    hi = np.maximum(starts, ends) + tol
    points = []
    for first in range(0, n, PAIR_CHUNK):
        rows = np.arange(first, min(first + PAIR_CHUNK, n))
        overlap = np.all((lo[rows, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[rows, None, :]), axis=2)
        overlap &= rows[:, None] < np.arange(n)[None, :]
        ii, jj = np.nonzero(overlap)
        if len(ii) == 0:
            continue
        ii = rows[ii]
        d1, d2 = d[ii], d[jj]
        r = starts[ii] - starts[jj]
        a = np.einsum("ij,ij->i", d1, d1)
        e = np.einsum("ij,ij->i", d2, d2)
        b = np.einsum("ij,ij->i", d1, d2)
        c = np.einsum("ij,ij->i", d1, r)
        f = np.einsum("ij,ij->i", d2, r)
        denom = a * e - b * b
        ok = denom > 1e-12 * a * e
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(ok, (b * f - c * e) / denom, -1.0)
            u = np.where(ok, (a * f - b * c) / denom, -1.0)
        margin1 = tol / lengths[ii]
        margin2 = tol / lengths[jj]
        inside = ok & (s > margin1) & (s < 1 - margin1) & (u > margin2) & (u < 1 - margin2)
        if not inside.any():
            continue
        p1 = starts[ii] + s[:, None] * d1
        p2 = starts[jj] + u[:, None] * d2
        close = inside & (np.linalg.norm(p1 - p2, axis=1) <= tol)
        points.extend(0.5 * (p1[close] + p2[close]))
    return points


def merge_points(points: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Cluster points closer than tol; returns (cluster centers, label per point)."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else \
        coo_matrix((n, n))
    n_clusters, labels = connected_components(graph, directed=False)
    centers = np.zeros((n_clusters, points.shape[1]))
    np.add.at(centers, labels, points)
    centers /= np.bincount(labels, minlength=n_clusters)[:, None]
    return centers, labels


def _unique_directions(dirs: Sequence[np.ndarray], tol: float) -> np.ndarray:
    out: List[np.ndarray] = []
    for u in dirs:
        if all(float(u @ w) < 1.0 - tol for w in out):
            out.append(u)
    return np.array(out)


def opposite_pairs(dirs: np.ndarray, tol: float = COLLINEAR_TOL) -> int:
    """Number of pairs among the directions with |1 - |<u1, -u2>|| below tol and <u1,u2> < 0."""
    count = 0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            dot = float(dirs[i] @ dirs[j])
            if dot < 0 and abs(1.0 - abs(dot)) < tol:
                count += 1
    return count


def classify(dirs: np.ndarray, tol: float = COLLINEAR_TOL) -> Optional[str]:
    pairs = opposite_pairs(dirs, tol)
    if pairs == 1:
        return T_VERTEX
    if pairs == 2:
        return X_VERTEX
    return None


# ============================================================================
# Complex construction
# ============================================================================

def build_complex(
    Y: NestedTessellation,
    merge_rel: float = VERTEX_MERGE_REL,
    collinear_tol: float = COLLINEAR_TOL,
    carriers: Optional[List[Carrier]] = None,
) -> VertexComplex:
    """
    Vertex-edge complex of the whole tessellation.

    Vertices are carrier endpoints and proper carrier crossings merged at
    merge_rel * diam(window); edges are the carrier pieces between
    consecutive vertices.
    """
    window = Y.window
    tol = merge_rel * window.diameter
    carriers = carriers_of(Y) if carriers is None else carriers
    dim = window.dim
    if not carriers:
        return VertexComplex(dim, window, tol, [], [], [], [])

    starts = np.array([c.start for c in carriers])
    ends = np.array([c.end for c in carriers])
    raw = [starts, ends]
    crossings = proper_crossings(starts, ends, tol)
    if crossings:
        raw.append(np.array(crossings))
    centers, _ = merge_points(np.vstack(raw), tol)
    tree = cKDTree(centers)

    edges: Dict[Tuple[int, int], None] = {}
    on_carrier: List[List[Tuple[float, int]]] = []
    for cr in carriers:
        seg = cr.end - cr.start
        length = float(np.linalg.norm(seg))
        mid = 0.5 * (cr.start + cr.end)
        cand = tree.query_ball_point(mid, 0.5 * length + 2 * tol)
        hits = []
        for vid in cand:
            rel = centers[vid] - cr.start
            s = float(rel @ seg) / (length * length)
            if -tol / length <= s <= 1 + tol / length and np.linalg.norm(rel - s * seg) <= 2 * tol:
                hits.append((s, vid))
        hits.sort()
        on_carrier.append(hits)
        for (_, a), (_, b) in zip(hits, hits[1:]):
            if a != b:
                edges[(a, b) if a < b else (b, a)] = None

    incident: List[List[np.ndarray]] = [[] for _ in range(len(centers))]
    for a, b in edges:
        v = centers[b] - centers[a]
        v = v / np.linalg.norm(v)
        incident[a].append(v)
        incident[b].append(-v)

    vertices = []
    for vid, p in enumerate(centers):
        dirs = _unique_directions(incident[vid], collinear_tol)
        if window.boundary_distance(p) <= 2 * tol:
            vclass = BOUNDARY_VERTEX
        else:
            vclass = classify(dirs, collinear_tol)
            if vclass is None:
                vclass = T_VERTEX
                logger.debug(f"Vertex at {p.tolist()} has {len(dirs)} edges and no collinear pair")
        vertices.append(VertexRecord(location=p, incident_edges=dirs.reshape(-1, dim), vclass=vclass))
    cx = VertexComplex(dim, window, tol, vertices, list(edges), carriers, on_carrier)
    logger.debug(f"Vertex complex: {len(vertices)} vertices, {len(cx.edges)} edges")
    return cx


def check_clearance(Y: NestedTessellation, inner: ConvexPolytope) -> int:
    """Count leaves that touch the window boundary and reach into `inner`; warn when positive."""
    tol = VERTEX_MERGE_REL * Y.window.diameter
    normals, offsets = inner.facet_hyperplanes()
    bad = 0
    for leaf in Y.leaves():
        verts = leaf.polytope.vertices
        touches = min(Y.window.boundary_distance(v) for v in verts) <= tol
        if not touches:
            continue
        inside = np.any(np.all(verts @ normals.T <= offsets, axis=1))
        inner_in_leaf = any(leaf.polytope.contains(v, tol=0.0) for v in inner.vertices)
        if inside or inner_in_leaf:
            bad += 1
    if bad:
        warnings.warn(f"{bad} boundary cells reach the inner window", ClearanceTooSmall)
        logger.warning(f"Clearance too small: {bad} boundary cells reach the inner window")
    return bad


def build_vertex_complex(
    Y: NestedTessellation,
    inner: ConvexPolytope,
    merge_rel: float = VERTEX_MERGE_REL,
    collinear_tol: float = COLLINEAR_TOL,
) -> List[VertexRecord]:
    """Vertex records of the tessellation located in `inner`."""
    check_clearance(Y, inner)
    cx = build_complex(Y, merge_rel, collinear_tol)
    return [v for v in cx.vertices if inner.contains(v.location, tol=0.0)]


def cell_sides_2d(cx: VertexComplex, collinear_tol: float = COLLINEAR_TOL) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Cell sides of a planar complex.

    A maximal segment carries one side per face between consecutive vertices
    whose third edge points into that face.
    """
    sides = []
    for cr, hits in zip(cx.carriers, cx.on_carrier):
        if len(hits) < 2:
            continue
        seg = cr.end - cr.start
        unit = seg / np.linalg.norm(seg)
        normal = np.array([-unit[1], unit[0]])
        first, last = hits[0][1], hits[-1][1]
        for sign in (1.0, -1.0):
            stops = [first]
            for _, vid in hits[1:-1]:
                dirs = cx.vertices[vid].incident_edges
                stems = [u for u in dirs if abs(float(u @ unit)) < 1.0 - collinear_tol]
                if any(sign * float(u @ normal) > 0 for u in stems):
                    stops.append(vid)
            stops.append(last)
            for a, b in zip(stops, stops[1:]):
                if a != b:
                    sides.append((cx.vertices[a].location, cx.vertices[b].location))
    return sides
