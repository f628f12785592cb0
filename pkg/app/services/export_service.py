"""
Export Service
JSON-lines writers and readers for tessellations and typical-cell ensembles,
CSV reports and the SVG rendering of planar tessellations.
"""

import json
import logging
import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np
import pandas as pd

from app.services.geometry import (
    EPS_VOL_REL,
    CenteredBody,
    ConvexPolytope,
    FacetPolytope,
    Hyperplane,
    split_polytope,
)
from app.services.hyperplane_measure import DrivingMeasure
from app.services.shrink_service import TypicalCellEnsemble
from app.services.split_kernels import kernel_from_json
from app.services.tessellation_service import CellNode, MaximalPolytope, NestedTessellation

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SVG_SIZE = 800
SVG_NS = "http://www.w3.org/2000/svg"

PathLike = Union[str, Path]


class ExportError(ValueError):
    """A file does not follow the documented record schema."""


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.bool_,)):
        return bool(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _dumps(record: Dict) -> str:
    return json.dumps(record, default=_json_default, separators=(",", ":"))


def _read_lines(path: PathLike) -> List[Dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ExportError(f"{path}:{lineno}: {e.msg}") from e
    if not records or records[0].get("type") != "header":
        raise ExportError(f"{path}: first record must be a header")
    if records[0].get("schema") != SCHEMA_VERSION:
        raise ExportError(f"{path}: unsupported schema {records[0].get('schema')!r}")
    return records


def polytope_from_json(data: Dict) -> ConvexPolytope:
    """Polytope record {"dim", "vertices", "faces" (3D)} to a validated ConvexPolytope."""
    body = ConvexPolytope.from_json(data)
    body.validate()
    return body


# ============================================================================
# Tessellations
# ============================================================================

def tessellation_records(Y: NestedTessellation) -> Iterator[Dict]:
    """Header followed by one record per maximal polytope in replayable order."""
    frozen = sorted((n.id, n.frozen_at) for n in Y.nodes.values() if n.frozen)
    yield {
        "type": "header",
        "schema": SCHEMA_VERSION,
        "dim": Y.dim,
        "window": Y.window.to_json(),
        "horizon": Y.horizon,
        "seed": Y.rng_seed,
        "kernel": None if Y.kernel is None else Y.kernel.to_json(),
        "measure": None if Y.measure is None else Y.measure.to_json(),
        "root": Y.root_id,
        "n_polytopes": len(Y.maximal_polytopes),
        "frozen": [[nid, at] for nid, at in frozen],
    }
    for mp in Y.maximal_polytopes:
        owner = Y.nodes[mp.owner_cell]
        yield {
            "type": "polytope",
            "birth": mp.birth_time,
            "geometry": mp.geometry.to_json(),
            "cell": mp.owner_cell,
            "plane": owner.split_plane.to_json(),
            "children": list(owner.children),
        }


def write_tessellation_jsonl(Y: NestedTessellation, path: PathLike) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for record in tessellation_records(Y):
            fh.write(_dumps(record) + "\n")
    logger.info(f"Wrote {len(Y.maximal_polytopes)} maximal polytopes to {path}")
    return path


def read_tessellation_jsonl(path: PathLike) -> NestedTessellation:
    """
    Rebuild a tessellation by replaying the recorded splits.

    Split planes are taken verbatim from the records, so every cell
    polytope is recomputed with the arithmetic of the original run.
    """
    records = _read_lines(path)
    header = records[0]
    window = polytope_from_json(header["window"])
    dim = int(header["dim"])
    root_id = int(header.get("root", 0))
    nodes: Dict[int, CellNode] = {root_id: CellNode(id=root_id, polytope=window, birth=0.0)}
    facets: List[MaximalPolytope] = []
    min_volume = EPS_VOL_REL * window.volume
    for k, rec in enumerate(records[1:], start=1):
        try:
            cid = int(rec["cell"])
            plus_id, minus_id = (int(i) for i in rec["children"])
            plane = Hyperplane(normal=np.asarray(rec["plane"]["normal"], dtype=float),
                               offset=float(rec["plane"]["offset"]))
            birth = float(rec["birth"])
        except (KeyError, TypeError, ValueError) as e:
            raise ExportError(f"{path}: record {k} is malformed: {e}") from e
        cell = nodes.get(cid)
        if cell is None:
            raise ExportError(f"{path}: record {k} splits unknown cell {cid}")
        plus, minus, _ = split_polytope(cell.polytope, plane, min_volume=min_volume)
        cell.death = birth
        cell.children = (plus_id, minus_id)
        cell.split_plane = plane
        cell.facet = len(facets)
        facets.append(MaximalPolytope(geometry=FacetPolytope.from_json(rec["geometry"]),
                                      birth_time=birth, owner_cell=cid))
        for child_id, body in ((plus_id, plus), (minus_id, minus)):
            nodes[child_id] = CellNode(id=child_id, polytope=body, birth=birth, parent=cid)
    for nid, at in header.get("frozen", []):
        nodes[int(nid)].frozen = True
        nodes[int(nid)].frozen_at = None if at is None else float(at)
    kernel = None if header.get("kernel") is None else kernel_from_json(header["kernel"])
    measure = None if header.get("measure") is None else DrivingMeasure.from_json(header["measure"], dim)
    return NestedTessellation(window=window, horizon=float(header["horizon"]), nodes=nodes,
                              maximal_polytopes=facets, rng_seed=header.get("seed"),
                              kernel=kernel, measure=measure, root_id=root_id)


# ============================================================================
# Typical-cell ensembles
# ============================================================================

def write_ensemble_jsonl(ens: TypicalCellEnsemble, path: PathLike,
                         L: Optional[DrivingMeasure] = None) -> Path:
    path = Path(path)
    dim = ens.samples[0].body.dim if ens.samples else None
    L = L or (DrivingMeasure.isotropic(dim) if dim else None)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps({
            "type": "header",
            "schema": SCHEMA_VERSION,
            "provenance": ens.provenance,
            "horizon": ens.horizon,
            "n_samples": len(ens),
            "measure": None if L is None else L.to_json(),
            "diagnostics": ens.diagnostics,
        }) + "\n")
        for i, (sample, weight) in enumerate(zip(ens.samples, ens.weights)):
            fh.write(_dumps({
                "type": "sample",
                "index": i,
                "weight": float(weight),
                "hit_mass": L.hit_mass(sample.body),
                "center_rule": sample.center_rule,
                "provenance": ens.provenance,
                "geometry": sample.body.to_json(),
            }) + "\n")
    logger.info(f"Wrote {len(ens)} {ens.provenance} samples to {path}")
    return path


def read_ensemble_jsonl(path: PathLike) -> TypicalCellEnsemble:
    records = _read_lines(path)
    header = records[0]
    samples, weights = [], []
    for rec in records[1:]:
        samples.append(CenteredBody(polytope_from_json(rec["geometry"]), rec.get("center_rule", "barycenter")))
        weights.append(float(rec["weight"]))
    if len(samples) != int(header.get("n_samples", len(samples))):
        raise ExportError(f"{path}: header announces {header['n_samples']} samples, found {len(samples)}")
    return TypicalCellEnsemble(samples, np.array(weights), header["provenance"],
                               float(header.get("horizon", 1.0)), header.get("diagnostics") or {})


# ============================================================================
# Tables
# ============================================================================

def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    """CSV with a fixed float format so identical runs give identical bytes."""
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.12g")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


# ============================================================================
# SVG
# ============================================================================

def _ramp(fraction: float) -> str:
    """Dark blue for early births through orange for late ones."""
    f = min(max(fraction, 0.0), 1.0)
    r = int(round(20 + 220 * f))
    g = int(round(60 + 80 * math.sin(math.pi * f)))
    b = int(round(160 * (1.0 - f) + 20))
    return f"#{r:02x}{g:02x}{b:02x}"


def write_svg(Y: NestedTessellation, path: PathLike, size: int = SVG_SIZE) -> Path:
    """Planar tessellation drawn in the window frame, segments colored by birth time."""
    if Y.dim != 2:
        raise ValueError("SVG export is only available for planar tessellations")
    path = Path(path)
    lo = Y.window.vertices.min(axis=0)
    hi = Y.window.vertices.max(axis=0)
    span = float(max(hi - lo))
    stroke = span / size

    svg = ET.Element("svg")
    svg.set("xmlns", SVG_NS)
    svg.set("width", str(size))
    svg.set("height", str(size))
    svg.set("viewBox", f"{lo[0]:.6g} {-hi[1]:.6g} {hi[0] - lo[0]:.6g} {hi[1] - lo[1]:.6g}")
    group = ET.SubElement(svg, "g")
    group.set("transform", "scale(1,-1)")

    outline = ET.SubElement(group, "polygon")
    outline.set("points", " ".join(f"{x:.6g},{y:.6g}" for x, y in Y.window.vertices))
    outline.set("fill", "none")
    outline.set("stroke", "#000000")
    outline.set("stroke-width", f"{2 * stroke:.6g}")

    horizon = Y.horizon if Y.horizon > 0 else 1.0
    for mp in sorted(Y.maximal_polytopes, key=lambda m: m.birth_time):
        (x1, y1), (x2, y2) = mp.geometry.points[:2]
        line = ET.SubElement(group, "line")
        line.set("x1", f"{x1:.8g}")
        line.set("y1", f"{y1:.8g}")
        line.set("x2", f"{x2:.8g}")
        line.set("y2", f"{y2:.8g}")
        line.set("stroke", _ramp(mp.birth_time / horizon))
        line.set("stroke-width", f"{stroke:.6g}")

    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    logger.info(f"Wrote SVG with {len(Y.maximal_polytopes)} segments to {path}")
    return path
