"""
Convex Geometry Core
Bounded convex polytopes in dimension 2 and 3: halfspace clipping, splitting,
support/width, volume, centers, erosion and the isotropic hit mass.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull

logger = logging.getLogger(__name__)

# ============================================================================
# Tolerances
# ============================================================================
EPS_GEOM = 1e-9  # absolute, relative to a body of diameter 1
EPS_VOL_REL = 1e-12


class GeometryError(ValueError):
    """Base class for geometric failures."""


class DegenerateCut(GeometryError):
    """A hyperplane hits the interior but leaves a piece below the volume floor."""


class NotSeparating(GeometryError):
    """The hyperplane misses the body or only grazes it."""


class EmptyPolytope(GeometryError):
    """A polytope with no interior was requested."""


# ============================================================================
# Constants
# ============================================================================

def kappa(j: int) -> float:
    """Volume of the j-dimensional unit ball."""
    return math.pi ** (j / 2.0) / math.gamma(j / 2.0 + 1.0)


def gamma1(d: int) -> float:
    """Crofton constant linking the isotropic hit mass to V_1: 2 kappa_{d-1} / (d kappa_d)."""
    return 2.0 * kappa(d - 1) / (d * kappa(d))


# ============================================================================
# Hyperplanes
# ============================================================================

@dataclass(frozen=True, eq=False)
class Hyperplane:
    """The hyperplane {x : <x, normal> = offset} with a canonical orientation."""
    normal: np.ndarray
    offset: float

    @classmethod
    def from_normal(cls, normal: Sequence[float], offset: float) -> "Hyperplane":
        u = np.asarray(normal, dtype=float)
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            raise GeometryError("Hyperplane normal must be nonzero")
        u = u / norm
        r = float(offset) / norm
        # lexicographically larger of (u, -u) is the stored orientation
        for coord in u:
            if abs(coord) > 1e-15:
                if coord < 0:
                    u, r = -u, -r
                break
        return cls(normal=u, offset=r)

    @property
    def dim(self) -> int:
        return int(self.normal.shape[0])

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def translated(self, shift: Sequence[float]) -> "Hyperplane":
        return Hyperplane.from_normal(self.normal, self.offset + float(np.dot(self.normal, shift)))

    def scaled(self, alpha: float) -> "Hyperplane":
        return Hyperplane.from_normal(self.normal, self.offset * alpha)

    def to_json(self) -> Dict:
        return {"normal": [float(x) for x in self.normal], "offset": float(self.offset)}

    @classmethod
    def from_json(cls, data: Dict) -> "Hyperplane":
        return cls.from_normal(data["normal"], data["offset"])

    def __repr__(self) -> str:
        return f"Hyperplane(normal={np.round(self.normal, 6).tolist()}, offset={self.offset:.6g})"


# ============================================================================
# Polytopes
# ============================================================================

def _newell_normal(points: np.ndarray) -> np.ndarray:
    nxt = np.roll(points, -1, axis=0)
    return 0.5 * np.cross(points, nxt).sum(axis=0)


def _plane_basis(normal: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal e1, e2 with e1 x e2 = normal."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def _order_planar(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Indices ordering coplanar points counterclockwise seen from +normal."""
    center = points.mean(axis=0)
    e1, e2 = _plane_basis(normal)
    rel = points - center
    return np.argsort(np.arctan2(rel @ e2, rel @ e1))


def _dedupe_cycle(points: List[np.ndarray], tol: float) -> List[np.ndarray]:
    out: List[np.ndarray] = []
    for p in points:
        if not out or np.linalg.norm(p - out[-1]) > tol:
            out.append(p)
    while len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= tol:
        out.pop()
    return out


class ConvexPolytope:
    """
    Bounded convex cell in dimension 2 or 3.

    In 2D the vertices are stored in counterclockwise boundary order. In 3D the
    vertices come with `faces`, one outward-oriented vertex-index cycle per 2-face.
    """

    __slots__ = ("dim", "vertices", "faces", "_volume", "_centroid", "_scale")

    def __init__(self, vertices: np.ndarray, faces: Optional[Sequence[Sequence[int]]] = None):
        self.vertices = np.asarray(vertices, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (2, 3):
            raise GeometryError(f"Unsupported vertex array shape {self.vertices.shape}")
        self.dim = int(self.vertices.shape[1])
        if self.dim == 3:
            if faces is None:
                raise GeometryError("3D polytopes need face cycles")
            self.faces = [tuple(int(i) for i in f) for f in faces]
        else:
            self.faces = None
        self._volume: Optional[float] = None
        self._centroid: Optional[np.ndarray] = None
        self._scale: Optional[float] = None

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------
    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "ConvexPolytope":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape[0] == 2:
            return cls(np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]]))
        verts = np.array([[x, y, z] for z in (lo[2], hi[2]) for y in (lo[1], hi[1]) for x in (lo[0], hi[0])])
        faces = [
            (0, 2, 3, 1),  # z = lo
            (4, 5, 7, 6),  # z = hi
            (0, 1, 5, 4),  # y = lo
            (2, 6, 7, 3),  # y = hi
            (0, 4, 6, 2),  # x = lo
            (1, 3, 7, 5),  # x = hi
        ]
        return cls(verts, faces)

    @classmethod
    def cube(cls, side: float = 1.0, dim: int = 3) -> "ConvexPolytope":
        return cls.box([0.0] * dim, [side] * dim)

    @classmethod
    def centered_box(cls, half_side: float, dim: int) -> "ConvexPolytope":
        return cls.box([-half_side] * dim, [half_side] * dim)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "ConvexPolytope":
        """Convex hull of a point set, with coplanar hull triangles merged into faces."""
        pts = np.asarray(points, dtype=float)
        hull = ConvexHull(pts)
        if pts.shape[1] == 2:
            return cls(pts[hull.vertices])

        groups: List[Tuple[np.ndarray, float, set]] = []
        for simplex, eq in zip(hull.simplices, hull.equations):
            n, b = eq[:3], eq[3]
            for gn, gb, members in groups:
                if np.linalg.norm(gn - n) < 1e-9 and abs(gb - b) < 1e-9 * (1.0 + abs(b)):
                    members.update(int(i) for i in simplex)
                    break
            else:
                groups.append((n, b, set(int(i) for i in simplex)))

        used = sorted(int(i) for i in hull.vertices)
        remap = {old: new for new, old in enumerate(used)}
        faces = []
        for n, _, members in groups:
            idx = np.array(sorted(members))
            order = _order_planar(pts[idx], n)
            faces.append([remap[int(i)] for i in idx[order]])
        return cls(pts[used], faces)

    @classmethod
    def regular_polygon(cls, n: int, radius: float = 1.0, center: Sequence[float] = (0.0, 0.0)) -> "ConvexPolytope":
        angles = 2.0 * np.pi * np.arange(n) / n
        pts = np.column_stack([np.cos(angles), np.sin(angles)]) * radius + np.asarray(center, dtype=float)
        return cls(pts)

    # ------------------------------------------------------------------
    # Basic measures
    # ------------------------------------------------------------------
    @property
    def volume(self) -> float:
        if self._volume is None:
            self._volume, self._centroid = self._volume_and_centroid()
        return self._volume

    @property
    def barycenter(self) -> np.ndarray:
        if self._centroid is None:
            self._volume, self._centroid = self._volume_and_centroid()
        return self._centroid

    def _volume_and_centroid(self) -> Tuple[float, np.ndarray]:
        v = self.vertices
        ref = v.mean(axis=0)
        if self.dim == 2:
            p = v - ref
            q = np.roll(p, -1, axis=0)
            cross = p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]
            area = 0.5 * cross.sum()
            if abs(area) < 1e-300:
                return 0.0, ref
            cen = ((p + q) * cross[:, None]).sum(axis=0) / (6.0 * area)
            return float(area), cen + ref
        total = 0.0
        moment = np.zeros(3)
        for face in self.faces:
            pts = v[list(face)] - ref
            a = pts[0]
            b = pts[1:-1]
            c = pts[2:]
            dets = np.einsum("ij,ij->i", np.broadcast_to(a, b.shape), np.cross(b, c)) / 6.0
            total += dets.sum()
            moment += ((a + b + c) / 4.0 * dets[:, None]).sum(axis=0)
        if abs(total) < 1e-300:
            return 0.0, ref
        return float(total), moment / total + ref

    @property
    def scale(self) -> float:
        """Bounding-box diagonal, the length scale for tolerances."""
        if self._scale is None:
            span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
            self._scale = float(np.linalg.norm(span))
        return self._scale

    def tolerance(self, eps: Optional[float] = None) -> float:
        return (EPS_GEOM if eps is None else eps) * max(self.scale, 1e-300)

    def support(self, u: np.ndarray) -> float:
        return float(np.max(self.vertices @ u))

    def width(self, u: np.ndarray) -> float:
        proj = self.vertices @ np.asarray(u, dtype=float)
        return float(proj.max() - proj.min())

    def widths(self, directions: np.ndarray) -> np.ndarray:
        proj = self.vertices @ np.asarray(directions, dtype=float).T
        return proj.max(axis=0) - proj.min(axis=0)

    @property
    def diameter(self) -> float:
        v = self.vertices
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff ** 2).sum(axis=-1)).max())

    @property
    def vertex_count(self) -> int:
        return int(self.vertices.shape[0])

    def edges(self) -> List[Tuple[int, int]]:
        """Vertex index pairs of the 1-skeleton."""
        if self.dim == 2:
            n = len(self.vertices)
            return [(i, (i + 1) % n) for i in range(n)]
        seen = set()
        out = []
        for face in self.faces:
            for k in range(len(face)):
                a, b = face[k], face[(k + 1) % len(face)]
                key = (a, b) if a < b else (b, a)
                if key not in seen:
                    seen.add(key)
                    out.append(key)
        return out

    def face_normals(self) -> np.ndarray:
        """Unit outward normals of the facets."""
        v = self.vertices
        if self.dim == 2:
            d = np.roll(v, -1, axis=0) - v
            n = np.column_stack([d[:, 1], -d[:, 0]])
        else:
            n = np.array([_newell_normal(v[list(f)]) for f in self.faces])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def facet_hyperplanes(self) -> Tuple[np.ndarray, np.ndarray]:
        """(normals, offsets) with the body = {x : normals @ x <= offsets}."""
        normals = self.face_normals()
        if self.dim == 2:
            anchors = self.vertices
        else:
            anchors = np.array([self.vertices[list(f)].mean(axis=0) for f in self.faces])
        return normals, np.einsum("ij,ij->i", normals, anchors)

    def facet_measures(self) -> np.ndarray:
        """Edge lengths (2D) or face areas (3D)."""
        v = self.vertices
        if self.dim == 2:
            return np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        return np.array([np.linalg.norm(_newell_normal(v[list(f)])) for f in self.faces])

    @property
    def surface_measure(self) -> float:
        """Perimeter (2D) or surface area (3D)."""
        return float(self.facet_measures().sum())

    def contains(self, point: Sequence[float], tol: Optional[float] = None) -> bool:
        normals, offsets = self.facet_hyperplanes()
        slack = self.tolerance() if tol is None else tol
        return bool(np.all(normals @ np.asarray(point, dtype=float) <= offsets + slack))

    def boundary_distance(self, point: Sequence[float]) -> float:
        """Signed distance from an interior point to the boundary (negative outside)."""
        normals, offsets = self.facet_hyperplanes()
        return float(np.min(offsets - normals @ np.asarray(point, dtype=float)))

    # ------------------------------------------------------------------
    # Transformations
    # ------------------------------------------------------------------
    def translated(self, shift: Sequence[float]) -> "ConvexPolytope":
        return ConvexPolytope(self.vertices + np.asarray(shift, dtype=float), self.faces)

    def scaled(self, alpha: float, center: Optional[Sequence[float]] = None) -> "ConvexPolytope":
        c = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        return ConvexPolytope((self.vertices - c) * alpha + c, self.faces)

    def transformed(self, rotation: np.ndarray) -> "ConvexPolytope":
        """Apply an orthogonal map; reflections reverse the stored orientation."""
        verts = self.vertices @ np.asarray(rotation, dtype=float).T
        det = float(np.linalg.det(rotation))
        if det > 0:
            return ConvexPolytope(verts, self.faces)
        if self.dim == 2:
            return ConvexPolytope(verts[::-1])
        return ConvexPolytope(verts, [tuple(reversed(f)) for f in self.faces])

    # ------------------------------------------------------------------
    # Validation and serialization
    # ------------------------------------------------------------------
    def validate(self, min_volume: float = 0.0) -> None:
        """Raise GeometryError when a ConvexPolytope invariant fails."""
        if self.volume <= min_volume:
            raise EmptyPolytope(f"Polytope volume {self.volume:.3e} below {min_volume:.3e}")
        normals, offsets = self.facet_hyperplanes()
        slack = 1e3 * self.tolerance()
        if np.any(self.vertices @ normals.T > offsets + slack):
            raise GeometryError("Vertex set is not in convex position")
        if self.dim == 3:
            directed = {}
            for face in self.faces:
                for k in range(len(face)):
                    a, b = face[k], face[(k + 1) % len(face)]
                    directed[(a, b)] = directed.get((a, b), 0) + 1
            for (a, b), count in directed.items():
                if count != 1 or directed.get((b, a), 0) != 1:
                    raise GeometryError(f"Face cycles do not close up at edge ({a}, {b})")

    def to_json(self) -> Dict:
        data = {"dim": self.dim, "vertices": self.vertices.tolist()}
        if self.dim == 3:
            data["faces"] = [list(f) for f in self.faces]
        return data

    @classmethod
    def from_json(cls, data: Dict) -> "ConvexPolytope":
        dim = int(data["dim"])
        verts = np.asarray(data["vertices"], dtype=float)
        if verts.shape[1] != dim:
            raise GeometryError(f"Vertex coordinates do not match dim={dim}")
        return cls(verts, data.get("faces") if dim == 3 else None)

    def __repr__(self) -> str:
        return f"ConvexPolytope(dim={self.dim}, n_vertices={self.vertex_count}, volume={self.volume:.6g})"


@dataclass(frozen=True, eq=False)
class FacetPolytope:
    """A (d-1)-dimensional convex polytope inside a hyperplane: a segment in 2D, a polygon in 3D."""
    points: np.ndarray
    plane: Hyperplane

    @property
    def dim(self) -> int:
        return self.plane.dim - 1

    @property
    def measure(self) -> float:
        if self.plane.dim == 2:
            return float(np.linalg.norm(self.points[1] - self.points[0]))
        return float(np.linalg.norm(_newell_normal(self.points)))

    @property
    def centroid(self) -> np.ndarray:
        if self.plane.dim == 2 or len(self.points) < 3:
            return self.points.mean(axis=0)
        ref = self.points[0]
        a = self.points[1:-1] - ref
        b = self.points[2:] - ref
        areas = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
        cents = (ref + self.points[1:-1] + self.points[2:]) / 3.0
        return (cents * areas[:, None]).sum(axis=0) / areas.sum()

    def segments(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Boundary sides (3D) or the segment itself (2D)."""
        if self.plane.dim == 2:
            return [(self.points[0], self.points[1])]
        n = len(self.points)
        return [(self.points[k], self.points[(k + 1) % n]) for k in range(n)]

    def scaled(self, alpha: float) -> "FacetPolytope":
        return FacetPolytope(self.points * alpha, self.plane.scaled(alpha))

    def to_json(self) -> Dict:
        return {"dim": self.dim, "points": self.points.tolist(), "plane": self.plane.to_json()}

    @classmethod
    def from_json(cls, data: Dict) -> "FacetPolytope":
        return cls(np.asarray(data["points"], dtype=float), Hyperplane.from_json(data["plane"]))


@dataclass(frozen=True, eq=False)
class CenteredBody:
    """A polytope translated so that its center (the barycenter) is the origin."""
    body: ConvexPolytope
    center_rule: str = "barycenter"


# ============================================================================
# Clipping
# ============================================================================

def _clip_polygon(vertices: np.ndarray, dist: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """Keep {dist <= 0} of a counterclockwise polygon (Sutherland-Hodgman, one plane)."""
    out: List[np.ndarray] = []
    n = len(vertices)
    for i in range(n):
        j = (i + 1) % n
        di, dj = dist[i], dist[j]
        if di <= tol:
            out.append(vertices[i])
        if (di < -tol and dj > tol) or (di > tol and dj < -tol):
            s = di / (di - dj)
            out.append(vertices[i] + s * (vertices[j] - vertices[i]))
    out = _dedupe_cycle(out, tol)
    if len(out) < 3:
        return None
    return np.array(out)


def _clip_polyhedron(
    vertices: np.ndarray,
    faces: Sequence[Tuple[int, ...]],
    dist: np.ndarray,
    normal: np.ndarray,
    tol: float,
) -> Optional[Tuple[np.ndarray, List[List[int]]]]:
    """Keep {dist <= 0} of a polyhedron; the cap gets outward normal `normal`."""
    inside = dist < -tol
    outside = dist > tol
    points: List[np.ndarray] = []
    index: Dict[int, int] = {}
    for i in np.flatnonzero(~outside):
        index[int(i)] = len(points)
        points.append(vertices[i])
    cuts: Dict[Tuple[int, int], int] = {}

    def cut_point(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key not in cuts:
            s = dist[a] / (dist[a] - dist[b])
            cuts[key] = len(points)
            points.append(vertices[a] + s * (vertices[b] - vertices[a]))
        return cuts[key]

    new_faces: List[List[int]] = []
    for face in faces:
        if not inside[list(face)].any():
            continue
        cycle: List[int] = []
        m = len(face)
        for k in range(m):
            a, b = face[k], face[(k + 1) % m]
            if not outside[a]:
                cycle.append(index[a])
            if (inside[a] and outside[b]) or (outside[a] and inside[b]):
                cycle.append(cut_point(a, b))
        compact = [c for k, c in enumerate(cycle) if c != cycle[k - 1]] if len(cycle) > 1 else cycle
        if len(set(compact)) >= 3:
            new_faces.append(compact)

    on_plane = [index[int(i)] for i in np.flatnonzero(np.abs(dist) <= tol)]
    cap = on_plane + list(cuts.values())
    pts = np.array(points)
    if len(cap) >= 3:
        cap_pts = pts[cap]
        order = _order_planar(cap_pts, normal)
        ordered = [cap[i] for i in order]
        merged: List[int] = []
        for idx in ordered:
            if not merged or np.linalg.norm(pts[idx] - pts[merged[-1]]) > tol:
                merged.append(idx)
        if len(merged) > 1 and np.linalg.norm(pts[merged[0]] - pts[merged[-1]]) <= tol:
            merged.pop()
        if len(merged) >= 3:
            new_faces.append(merged)

    if len(new_faces) < 4:
        return None
    used = sorted({i for f in new_faces for i in f})
    remap = {old: new for new, old in enumerate(used)}
    return pts[used], [[remap[i] for i in f] for f in new_faces]


def _clip_with_distances(
    c: ConvexPolytope,
    dist: np.ndarray,
    normal: np.ndarray,
    min_volume: float,
) -> Optional[ConvexPolytope]:
    tol = c.tolerance()
    inside = dist < -tol
    outside = dist > tol
    if not inside.any():
        return None
    if not outside.any():
        return c
    if c.dim == 2:
        verts = _clip_polygon(c.vertices, dist, tol)
        piece = None if verts is None else ConvexPolytope(verts)
    else:
        result = _clip_polyhedron(c.vertices, c.faces, dist, normal, tol)
        piece = None if result is None else ConvexPolytope(*result)
    if piece is None or piece.volume < min_volume:
        raise DegenerateCut(
            f"Cut leaves a piece of volume {0.0 if piece is None else piece.volume:.3e} "
            f"(floor {min_volume:.3e})"
        )
    return piece


def _volume_floor(c: ConvexPolytope, min_volume: Optional[float]) -> float:
    return EPS_VOL_REL * c.volume if min_volume is None else min_volume


def clip_halfspace(
    c: ConvexPolytope,
    H: Hyperplane,
    side: str,
    min_volume: Optional[float] = None,
) -> Optional[ConvexPolytope]:
    """
    Intersect a polytope with one closed halfspace of H.

    Args:
        c: The polytope to clip
        H: Cutting hyperplane
        side: 'minus' keeps <x,u> <= r, 'plus' keeps <x,u> >= r
        min_volume: Volume floor (defaults to EPS_VOL_REL * vol(c))

    Returns:
        The clipped polytope, `c` itself when the halfspace contains it, or None
        when the halfspace misses the interior.

    Raises:
        DegenerateCut: the plane crosses the interior but a piece is too thin
    """
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    dist = H.signed_distance(c.vertices)
    normal = H.normal
    if side == "plus":
        dist, normal = -dist, -normal
    return _clip_with_distances(c, dist, normal, _volume_floor(c, min_volume))


def section(c: ConvexPolytope, H: Hyperplane) -> FacetPolytope:
    """The maximal polytope H ∩ c (assumes H crosses the interior)."""
    tol = c.tolerance()
    dist = H.signed_distance(c.vertices)
    pts: List[np.ndarray] = [c.vertices[i] for i in np.flatnonzero(np.abs(dist) <= tol)]
    for a, b in c.edges():
        da, db = dist[a], dist[b]
        if (da < -tol and db > tol) or (da > tol and db < -tol):
            s = da / (da - db)
            pts.append(c.vertices[a] + s * (c.vertices[b] - c.vertices[a]))
    arr = np.array(pts)
    if c.dim == 2:
        tangent = np.array([-H.normal[1], H.normal[0]])
        proj = arr @ tangent
        return FacetPolytope(np.array([arr[np.argmin(proj)], arr[np.argmax(proj)]]), H)
    arr = arr[_order_planar(arr, H.normal)]
    keep = _dedupe_cycle(list(arr), tol)
    return FacetPolytope(np.array(keep), H)


def split_polytope(
    c: ConvexPolytope,
    H: Hyperplane,
    min_volume: Optional[float] = None,
) -> Tuple[ConvexPolytope, ConvexPolytope, FacetPolytope]:
    """
    Split a polytope by a hyperplane into (plus, minus, facet).

    Raises:
        NotSeparating: H misses c or grazes it within tolerance
        DegenerateCut: one of the pieces falls below the volume floor
    """
    floor = _volume_floor(c, min_volume)
    tol = c.tolerance()
    dist = H.signed_distance(c.vertices)
    if not (np.any(dist < -tol) and np.any(dist > tol)):
        raise NotSeparating(f"{H!r} does not separate the cell interior")
    minus = _clip_with_distances(c, dist, H.normal, floor)
    plus = _clip_with_distances(c, -dist, -H.normal, floor)
    return plus, minus, section(c, H)


# ============================================================================
# Width, hit mass, erosion, centers
# ============================================================================

def width(c: ConvexPolytope, u: Sequence[float]) -> float:
    """Support-function width h_c(u) + h_c(-u)."""
    return c.width(np.asarray(u, dtype=float))


def isotropic_mean_width(c: ConvexPolytope) -> float:
    """
    Mean width over uniformly distributed directions in closed form.

    Perimeter / pi in the plane; sum over edges of length times exterior
    dihedral angle, divided by 4 pi, in space.
    """
    if c.dim == 2:
        return c.surface_measure / math.pi
    normals = c.face_normals()
    edge_faces: Dict[Tuple[int, int], List[int]] = {}
    for fi, face in enumerate(c.faces):
        for k in range(len(face)):
            a, b = face[k], face[(k + 1) % len(face)]
            edge_faces.setdefault((a, b) if a < b else (b, a), []).append(fi)
    total = 0.0
    for (a, b), owners in edge_faces.items():
        if len(owners) != 2:
            continue
        cosang = float(np.clip(normals[owners[0]] @ normals[owners[1]], -1.0, 1.0))
        total += np.linalg.norm(c.vertices[a] - c.vertices[b]) * math.acos(cosang)
    return total / (4.0 * math.pi)


def lambda_hit_mass(L, c: ConvexPolytope) -> float:
    """Λ([c]) = rho * E_{u~R}[w_c(u)] for a driving measure L."""
    return L.hit_mass(c)


def erosion(c: ConvexPolytope, r: float) -> Optional[ConvexPolytope]:
    """
    Points of c at distance at least r from its boundary.

    Every facet hyperplane is shifted inward by r and the halfspaces are
    intersected with c. Returns None when the inradius is below r.
    """
    if r < 0:
        raise ValueError("erosion radius must be nonnegative")
    if r == 0:
        return c
    normals, offsets = c.facet_hyperplanes()
    body: Optional[ConvexPolytope] = c
    floor = EPS_VOL_REL * c.volume
    for n, h in zip(normals, offsets):
        dist = body.vertices @ n - (h - r)
        try:
            body = _clip_with_distances(body, dist, n, floor)
        except DegenerateCut:
            return None
        if body is None:
            return None
    return body


def barycenter(c: ConvexPolytope) -> np.ndarray:
    """Volume centroid."""
    return c.barycenter


def recenter(c: ConvexPolytope) -> CenteredBody:
    """Translate c so that its barycenter is the origin."""
    return CenteredBody(body=c.translated(-c.barycenter))


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (determinant +1)."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
