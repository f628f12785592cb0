"""
Tessellation Service
Event-driven split dynamics in a compact window, the nested tessellation
data structure with time marks, time restriction and iteration.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.services.geometry import (
    EPS_VOL_REL,
    ConvexPolytope,
    FacetPolytope,
    GeometryError,
    Hyperplane,
    split_polytope,
)
from app.services.hyperplane_measure import DrivingMeasure, RejectionOverflow
from app.services.replication_service import mix_seed
from app.services.split_kernels import (
    BisectionFailure,
    SplitKernel,
    SplitKernelSpec,
    UnsplittableCell,
)

logger = logging.getLogger(__name__)

RESAMPLE_LIMIT = 100


class OriginOutsideWindow(ValueError):
    """A query point is not interior to the simulation window."""


# ============================================================================
# Data structures
# ============================================================================

@dataclass
class CellNode:
    """One cell of the split tree. Leaves carry death = inf."""
    id: int
    polytope: ConvexPolytope
    birth: float
    death: float = math.inf
    parent: Optional[int] = None
    children: Optional[Tuple[int, int]] = None  # (plus, minus)
    split_plane: Optional[Hyperplane] = None
    frozen: bool = False
    frozen_at: Optional[float] = None
    facet: Optional[int] = None  # index of the maximal polytope created at death

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass
class MaximalPolytope:
    """The (d-1)-dimensional facet inserted by one split."""
    geometry: FacetPolytope
    birth_time: float
    owner_cell: int


@dataclass
class NestedTessellation:
    window: ConvexPolytope
    horizon: float
    nodes: Dict[int, CellNode]
    maximal_polytopes: List[MaximalPolytope] = field(default_factory=list)
    rng_seed: Optional[int] = None
    kernel: Optional[SplitKernelSpec] = None
    measure: Optional[DrivingMeasure] = None
    root_id: int = 0

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def root(self) -> CellNode:
        return self.nodes[self.root_id]

    def leaves(self) -> List[CellNode]:
        return [n for n in self.nodes.values() if n.is_leaf]

    def split_count(self) -> int:
        return len(self.maximal_polytopes)

    def __repr__(self) -> str:
        return (f"NestedTessellation(dim={self.dim}, horizon={self.horizon:g}, "
                f"nodes={len(self.nodes)}, maximal_polytopes={len(self.maximal_polytopes)})")


# ============================================================================
# Simulation
# ============================================================================

class TessellationService:
    """
    Runs the recursive split dynamics.

    Every live cell carries an exponential clock with the kernel rate. The
    earliest clock fires, the kernel supplies the hyperplane, and both
    children get fresh clocks. One generator per run is consumed in event
    order: the lifetime of a cell at its birth, the hyperplane at its death.
    """

    def __init__(self, resample_limit: int = None, eps_vol_rel: float = None):
        self.resample_limit = resample_limit or RESAMPLE_LIMIT
        self.eps_vol_rel = eps_vol_rel or EPS_VOL_REL

    def _lifetime(self, rate: float, rng: np.random.Generator) -> float:
        if rate <= 0.0:
            return math.inf
        return float(rng.exponential(1.0 / rate))

    def _split(
        self,
        kernel: SplitKernel,
        cell: CellNode,
        rng: np.random.Generator,
        min_volume: float,
    ) -> Optional[Tuple[Hyperplane, ConvexPolytope, ConvexPolytope, FacetPolytope]]:
        """
        Resample degenerate cuts; None means the cell is frozen.

        Raises:
            BisectionFailure: the resample budget ran out after an unresolved
                apportionment offset
        """
        unresolved: Optional[BisectionFailure] = None
        for attempt in range(self.resample_limit):
            try:
                H = kernel.sample(cell.polytope, rng)
                plus, minus, facet = split_polytope(cell.polytope, H, min_volume=min_volume)
                return H, plus, minus, facet
            except UnsplittableCell as e:
                logger.debug(f"Cell {cell.id} is unsplittable: {e}")
                return None
            except BisectionFailure as e:
                unresolved = e
                logger.warning(f"Cell {cell.id}: unresolved offset, resampling (attempt {attempt + 1}): {e}")
            except (GeometryError, RejectionOverflow) as e:
                logger.debug(f"Cell {cell.id}: resampling cut (attempt {attempt + 1}): {e}")
        if unresolved is not None:
            raise unresolved
        logger.warning(f"Cell {cell.id} frozen after {self.resample_limit} degenerate cuts")
        return None

    def simulate_window(
        self,
        W: ConvexPolytope,
        K: SplitKernelSpec,
        L: DrivingMeasure,
        t: float,
        seed=None,
    ) -> NestedTessellation:
        """
        Simulate the nested tessellation of W up to horizon t.

        Args:
            W: Window polytope
            K: Split kernel specification
            L: Driving measure
            t: Horizon (t >= 0)
            seed: Integer seed or SeedSequence of the run

        Returns:
            NestedTessellation with all splits at times <= t
        """
        if t < 0:
            raise ValueError(f"horizon must be nonnegative, got {t}")
        if L.rho <= 0:
            raise ValueError("driving measure must have rho > 0")
        rng = np.random.default_rng(seed)
        kernel = SplitKernel(K, L)
        min_volume = self.eps_vol_rel * W.volume

        root = CellNode(id=0, polytope=W, birth=0.0)
        nodes: Dict[int, CellNode] = {0: root}
        facets: List[MaximalPolytope] = []
        queue: List[Tuple[float, int]] = []

        def schedule(node: CellNode) -> None:
            rate = kernel.rate(node.polytope)
            if rate <= 0.0:
                node.frozen = True
                node.frozen_at = node.birth
                return
            when = node.birth + self._lifetime(rate, rng)
            heapq.heappush(queue, (when, node.id))

        schedule(root)
        while queue and queue[0][0] <= t:
            when, cid = heapq.heappop(queue)
            cell = nodes[cid]
            result = self._split(kernel, cell, rng, min_volume)
            if result is None:
                cell.frozen = True
                cell.frozen_at = when
                continue
            H, plus, minus, facet = result
            plus_id, minus_id = len(nodes), len(nodes) + 1
            cell.death = when
            cell.children = (plus_id, minus_id)
            cell.split_plane = H
            cell.facet = len(facets)
            facets.append(MaximalPolytope(geometry=facet, birth_time=when, owner_cell=cid))
            for child_id, body in ((plus_id, plus), (minus_id, minus)):
                child = CellNode(id=child_id, polytope=body, birth=when, parent=cid)
                nodes[child_id] = child
                schedule(child)

        seed_value = seed if isinstance(seed, (int, np.integer)) else None
        Y = NestedTessellation(window=W, horizon=float(t), nodes=nodes, maximal_polytopes=facets,
                               rng_seed=seed_value, kernel=K, measure=L)
        logger.debug(f"Simulated {Y!r} with kernel {K.label}")
        return Y

    def iterate(
        self,
        Y1: NestedTessellation,
        factory: Callable[[ConvexPolytope, int], NestedTessellation],
        index_offset: int = 0,
    ) -> NestedTessellation:
        """
        Iterate Y1 with independent copies grown inside its leaf cells.

        `factory(cell, index_offset + k)` returns the copy simulated in the
        k-th leaf `cell`, leaves taken in id order.
        Copy time marks are shifted by the horizon of Y1.
        """
        t1 = Y1.horizon
        nodes = {nid: replace(n) for nid, n in Y1.nodes.items()}
        facets = list(Y1.maximal_polytopes)
        next_id = max(nodes) + 1
        horizon = t1
        for k, leaf in enumerate(sorted(Y1.leaves(), key=lambda n: n.id)):
            copy = factory(leaf.polytope, index_offset + k)
            horizon = max(horizon, t1 + copy.horizon)
            if not copy.root.children:
                continue
            remap = {copy.root_id: leaf.id}
            for cid in sorted(copy.nodes):
                if cid != copy.root_id:
                    remap[cid] = next_id
                    next_id += 1
            facet_base = len(facets)
            for mp in copy.maximal_polytopes:
                facets.append(MaximalPolytope(geometry=mp.geometry, birth_time=t1 + mp.birth_time,
                                              owner_cell=remap[mp.owner_cell]))
            for cid, node in copy.nodes.items():
                target = CellNode(
                    id=remap[cid],
                    polytope=node.polytope,
                    birth=leaf.birth if cid == copy.root_id else t1 + node.birth,
                    death=t1 + node.death,
                    parent=leaf.parent if cid == copy.root_id else remap[node.parent],
                    children=None if node.children is None else (remap[node.children[0]], remap[node.children[1]]),
                    split_plane=node.split_plane,
                    frozen=node.frozen,
                    frozen_at=None if node.frozen_at is None else t1 + node.frozen_at,
                    facet=None if node.facet is None else facet_base + node.facet,
                )
                nodes[target.id] = target
        return NestedTessellation(window=Y1.window, horizon=horizon, nodes=nodes,
                                  maximal_polytopes=facets, rng_seed=Y1.rng_seed,
                                  kernel=Y1.kernel, measure=Y1.measure, root_id=Y1.root_id)


# ============================================================================
# Structural operations
# ============================================================================

def time_restrict(Y: NestedTessellation, s: float) -> NestedTessellation:
    """Drop everything born after s; cells dying after s become leaves."""
    if not 0.0 <= s <= Y.horizon:
        raise ValueError(f"restriction time {s} outside [0, {Y.horizon}]")
    kept: Dict[int, CellNode] = {}
    facet_map: Dict[int, int] = {}
    facets: List[MaximalPolytope] = []
    for i, mp in enumerate(Y.maximal_polytopes):
        if mp.birth_time <= s:
            facet_map[i] = len(facets)
            facets.append(mp)
    for nid, node in Y.nodes.items():
        if node.birth > s and nid != Y.root_id:
            continue
        if node.death <= s:
            kept[nid] = replace(node, facet=facet_map.get(node.facet))
        else:
            frozen = node.frozen and node.frozen_at is not None and node.frozen_at <= s
            kept[nid] = replace(node, death=math.inf, children=None, split_plane=None, facet=None,
                                frozen=frozen, frozen_at=node.frozen_at if frozen else None)
    return NestedTessellation(window=Y.window, horizon=float(s), nodes=kept, maximal_polytopes=facets,
                              rng_seed=Y.rng_seed, kernel=Y.kernel, measure=Y.measure, root_id=Y.root_id)


def rescale_tessellation(Y: NestedTessellation, alpha: float) -> NestedTessellation:
    """Multiply all geometry by alpha and divide all time marks by alpha."""
    if alpha <= 0:
        raise ValueError("scale factor must be positive")
    nodes = {
        nid: replace(
            n,
            polytope=n.polytope.scaled(alpha),
            birth=n.birth / alpha,
            death=n.death / alpha,
            split_plane=None if n.split_plane is None else n.split_plane.scaled(alpha),
            frozen_at=None if n.frozen_at is None else n.frozen_at / alpha,
        )
        for nid, n in Y.nodes.items()
    }
    facets = [MaximalPolytope(mp.geometry.scaled(alpha), mp.birth_time / alpha, mp.owner_cell)
              for mp in Y.maximal_polytopes]
    kernel = Y.kernel.scaled(alpha) if Y.kernel is not None else None
    return NestedTessellation(window=Y.window.scaled(alpha), horizon=Y.horizon / alpha, nodes=nodes,
                              maximal_polytopes=facets, rng_seed=Y.rng_seed, kernel=kernel,
                              measure=Y.measure, root_id=Y.root_id)


def iterate_power(
    Y: NestedTessellation,
    m: int,
    factory: Callable[[ConvexPolytope, int], NestedTessellation],
) -> NestedTessellation:
    """
    m-fold iteration Y ⊞ Y' ⊞ ... with i.i.d. copies from `factory`.

    Copy indices keep counting across rounds, so no two copies share an index.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    result, offset = Y, 0
    for _ in range(m - 1):
        leaves = len(result.leaves())
        result = get_tessellation_service().iterate(result, factory, offset)
        offset += leaves
    return result


def leaf_cells(Y: NestedTessellation) -> List[CellNode]:
    return Y.leaves()


def locate_leaf(Y: NestedTessellation, point) -> CellNode:
    """
    Leaf containing `point`; points on a split plane go to the minus side.

    Raises:
        OriginOutsideWindow: point not interior to the window
    """
    x = np.asarray(point, dtype=float)
    if Y.window.boundary_distance(x) <= 0.0:
        raise OriginOutsideWindow(f"Point {x.tolist()} is not interior to the window")
    node = Y.root
    while node.children is not None:
        plus_id, minus_id = node.children
        node = Y.nodes[minus_id if node.split_plane.signed_distance(x) <= 0.0 else plus_id]
    return node


def zero_cell(Y: NestedTessellation) -> CellNode:
    """The leaf containing the origin."""
    return locate_leaf(Y, np.zeros(Y.dim))


def ancestor_path(Y: NestedTessellation, leaf: CellNode) -> List[CellNode]:
    """Leaf first, root last."""
    path = [leaf]
    while path[-1].parent is not None:
        path.append(Y.nodes[path[-1].parent])
    return path


def check_tessellation(Y: NestedTessellation, rel_tol: float = 1e-8) -> List[str]:
    """Return the list of violated structural properties (empty when valid)."""
    problems: List[str] = []
    root = Y.root
    if root.birth != 0.0:
        problems.append("root birth is not 0")
    if any(mp.birth_time <= 0.0 for mp in Y.maximal_polytopes):
        problems.append("maximal polytope born at time <= 0")
    leaf_volume = sum(n.polytope.volume for n in Y.leaves())
    if abs(leaf_volume - Y.window.volume) > rel_tol * Y.window.volume:
        problems.append(f"leaf volumes sum to {leaf_volume:.12g}, window has {Y.window.volume:.12g}")
    for node in Y.nodes.values():
        if node.children is None:
            continue
        a, b = (Y.nodes[c] for c in node.children)
        if abs(a.polytope.volume + b.polytope.volume - node.polytope.volume) > 1e-9 * node.polytope.volume:
            problems.append(f"children of cell {node.id} do not partition it")
        if not (node.birth < node.death <= Y.horizon) or a.birth != node.death or b.birth != node.death:
            problems.append(f"time marks of cell {node.id} are inconsistent")
    if len(Y.maximal_polytopes) != sum(1 for n in Y.nodes.values() if n.children is not None):
        problems.append("maximal polytopes and splits are not in one-to-one correspondence")
    return problems


# ============================================================================
# Singleton accessor
# ============================================================================

_tessellation_service_instance: Optional[TessellationService] = None


def get_tessellation_service() -> TessellationService:
    """Get or create tessellation service singleton."""
    global _tessellation_service_instance
    if _tessellation_service_instance is None:
        from config import get_config
        cfg = get_config()
        _tessellation_service_instance = TessellationService(
            resample_limit=cfg.RESAMPLE_LIMIT,
            eps_vol_rel=cfg.EPS_VOL_REL,
        )
    return _tessellation_service_instance


def simulate_window(W: ConvexPolytope, K: SplitKernelSpec, L: DrivingMeasure, t: float,
                    seed=None) -> NestedTessellation:
    return get_tessellation_service().simulate_window(W, K, L, t, seed)


def iterate(Y1: NestedTessellation, factory: Callable[[ConvexPolytope, int], NestedTessellation],
            index_offset: int = 0) -> NestedTessellation:
    return get_tessellation_service().iterate(Y1, factory, index_offset)


def copy_factory(K: SplitKernelSpec, L: DrivingMeasure, s: float, seed: int
                 ) -> Callable[[ConvexPolytope, int], NestedTessellation]:
    """Factory of independent copies with horizon s, one seed stream per host cell."""
    def factory(cell: ConvexPolytope, k: int) -> NestedTessellation:
        return simulate_window(cell, K, L, s, seed=mix_seed(seed, k))
    return factory


def simulate_replica(W: ConvexPolytope, K: SplitKernelSpec, L: DrivingMeasure, t: float,
                     seed: int) -> NestedTessellation:
    """One replication; module-level so process pools can pickle it."""
    return simulate_window(W, K, L, t, seed=seed)
