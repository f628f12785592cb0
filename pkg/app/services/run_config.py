"""
Run Configuration
Versioned JSON run configuration with line/column and field-path diagnostics.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from app.services.geometry import ConvexPolytope, GeometryError
from app.services.hyperplane_measure import REJECTION_LIMIT, DrivingMeasure
from app.services.split_kernels import SplitKernelSpec, kernel_from_json

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEED_LIMIT = 1 << 64
DEFAULT_WINDOW_SIDE = {2: 30.0, 3: 8.0}
TYPICAL_CELL_METHODS = ("csd", "census")

KNOWN_FIELDS = {
    "schema", "dim", "window", "horizon", "kernel", "measure", "replications", "seed",
    "clearance", "samples", "method", "burn_in", "thin", "zeta_samples", "workers", "outputs",
}


class ConfigError(ValueError):
    """Invalid run configuration; `where` is a dotted field path or 'line:column'."""

    def __init__(self, message: str, where: Optional[str] = None, source: Optional[str] = None):
        self.message = message
        self.where = where
        self.source = source
        prefix = ":".join(p for p in (source, where) if p)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass
class OutputPaths:
    out: Optional[str] = None
    svg: Optional[str] = None
    csv: Optional[str] = None


@dataclass
class RunConfig:
    """One pipeline run: window, dynamics, replications and output paths."""
    dim: int = 2
    window: Optional[ConvexPolytope] = None
    horizon: float = 1.0
    kernel: SplitKernelSpec = field(default_factory=SplitKernelSpec.stit)
    measure: Optional[DrivingMeasure] = None
    replications: Optional[int] = None
    seed: int = 0
    clearance: Optional[float] = None
    samples: int = 2000
    method: str = "csd"
    burn_in: Optional[int] = None
    thin: Optional[int] = None
    zeta_samples: int = 10 ** 6
    workers: Optional[int] = None
    outputs: OutputPaths = field(default_factory=OutputPaths)
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.window is None:
            self.window = default_window(self.dim)
        if self.measure is None:
            self.measure = DrivingMeasure.isotropic(self.dim)

    def to_json(self) -> Dict:
        return {
            "schema": self.schema,
            "dim": self.dim,
            "window": self.window.to_json(),
            "horizon": self.horizon,
            "kernel": self.kernel.to_json(),
            "measure": self.measure.to_json(),
            "replications": self.replications,
            "seed": self.seed,
            "clearance": self.clearance,
            "samples": self.samples,
            "method": self.method,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "zeta_samples": self.zeta_samples,
            "workers": self.workers,
            "outputs": {"out": self.outputs.out, "svg": self.outputs.svg, "csv": self.outputs.csv},
        }


def default_window(dim: int) -> ConvexPolytope:
    return ConvexPolytope.cube(DEFAULT_WINDOW_SIDE[dim], dim)


# ============================================================================
# Field parsers
# ============================================================================

def _require(cond: bool, message: str, where: str) -> None:
    if not cond:
        raise ConfigError(message, where)


def _int_field(data: Dict, key: str, default, minimum: int = None):
    value = data.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, int) and not isinstance(value, bool), f"expected an integer, got {value!r}", key)
    if minimum is not None:
        _require(value >= minimum, f"must be >= {minimum}", key)
    return value


def _float_field(data: Dict, key: str, default):
    value = data.get(key, default)
    if value is None:
        return None
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"expected a number, got {value!r}", key)
    return float(value)


def parse_window(data: Any, dim: int, where: str = "window") -> ConvexPolytope:
    """{"type": "box", "lower", "upper"} | {"type": "cube", "side"} | {"type": "hull", "points"} | polytope JSON."""
    _require(isinstance(data, dict), "expected an object", where)
    kind = data.get("type", "polytope")
    try:
        if kind == "box":
            lower, upper = data["lower"], data["upper"]
            _require(len(lower) == dim and len(upper) == dim, f"box corners need {dim} coordinates", where)
            _require(all(a < b for a, b in zip(lower, upper)), "lower corner must be below upper corner", where)
            body = ConvexPolytope.box(lower, upper)
        elif kind == "cube":
            side = float(data.get("side", DEFAULT_WINDOW_SIDE[dim]))
            _require(side > 0, "side must be positive", f"{where}.side")
            body = ConvexPolytope.cube(side, dim)
        elif kind == "hull":
            body = ConvexPolytope.from_points(np.asarray(data["points"], dtype=float))
        elif kind == "polytope":
            body = ConvexPolytope.from_json({"dim": dim, **data})
        else:
            raise ConfigError(f"unknown window type {kind!r}", f"{where}.type")
    except KeyError as e:
        raise ConfigError(f"missing field {e.args[0]!r}", where) from e
    except (GeometryError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e), where) from e
    _require(body.dim == dim, f"window has dimension {body.dim}, run has {dim}", where)
    try:
        body.validate()
    except GeometryError as e:
        raise ConfigError(str(e), where) from e
    return body


def parse_kernel(data: Any, where: str = "kernel") -> SplitKernelSpec:
    _require(isinstance(data, dict), "expected an object", where)
    try:
        return kernel_from_json(data)
    except KeyError as e:
        raise ConfigError(f"missing field {e.args[0]!r}", where) from e
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), where) from e


def parse_measure(data: Any, dim: int, default_sampler: str = "rejection",
                  rejection_limit: int = REJECTION_LIMIT, where: str = "measure") -> DrivingMeasure:
    _require(isinstance(data, dict), "expected an object", where)
    try:
        measure = DrivingMeasure.from_json({"sampler": default_sampler, **data}, dim)
        measure.rejection_limit = rejection_limit
        return measure
    except KeyError as e:
        raise ConfigError(f"missing field {e.args[0]!r}", f"{where}.directions") from e
    except (GeometryError, TypeError, ValueError) as e:
        raise ConfigError(str(e), where) from e


def parse_run_config(data: Any, default_sampler: str = "rejection",
                     rejection_limit: int = REJECTION_LIMIT) -> RunConfig:
    """
    Validate a decoded run configuration.

    Raises:
        ConfigError: with the dotted path of the offending field
    """
    _require(isinstance(data, dict), "top level must be an object", None)
    schema = data.get("schema", SCHEMA_VERSION)
    _require(schema == SCHEMA_VERSION, f"unsupported schema {schema!r} (expected {SCHEMA_VERSION})", "schema")
    unknown = sorted(set(data) - KNOWN_FIELDS)
    if unknown:
        raise ConfigError(f"unknown field {unknown[0]!r}", unknown[0])

    dim = _int_field(data, "dim", 2)
    _require(dim in (2, 3), "dimension must be 2 or 3", "dim")
    window = parse_window(data["window"], dim) if "window" in data else default_window(dim)
    horizon = _float_field(data, "horizon", 1.0)
    _require(horizon >= 0, "horizon must be nonnegative", "horizon")
    kernel = parse_kernel(data["kernel"]) if "kernel" in data else SplitKernelSpec.stit()
    measure = parse_measure(data.get("measure", {}), dim, default_sampler, rejection_limit)

    seed = _int_field(data, "seed", 0, minimum=0)
    _require(seed < SEED_LIMIT, "seed must fit in 64 bits", "seed")
    clearance = _float_field(data, "clearance", None)
    _require(clearance is None or clearance >= 0, "clearance must be nonnegative", "clearance")
    method = data.get("method", "csd")
    _require(method in TYPICAL_CELL_METHODS, f"method must be one of {TYPICAL_CELL_METHODS}", "method")

    outputs = data.get("outputs", {})
    _require(isinstance(outputs, dict), "expected an object", "outputs")
    for key, value in outputs.items():
        _require(key in ("out", "svg", "csv"), f"unknown output {key!r}", f"outputs.{key}")
        _require(value is None or isinstance(value, str), "expected a path string", f"outputs.{key}")

    return RunConfig(
        dim=dim,
        window=window,
        horizon=horizon,
        kernel=kernel,
        measure=measure,
        replications=_int_field(data, "replications", None, minimum=1),
        seed=seed,
        clearance=clearance,
        samples=_int_field(data, "samples", 2000, minimum=1),
        method=method,
        burn_in=_int_field(data, "burn_in", None, minimum=0),
        thin=_int_field(data, "thin", None, minimum=1),
        zeta_samples=_int_field(data, "zeta_samples", 10 ** 6, minimum=1),
        workers=_int_field(data, "workers", None, minimum=1),
        outputs=OutputPaths(**outputs),
        schema=schema,
    )


def load_run_config(path, default_sampler: str = "rejection", rejection_limit: int = REJECTION_LIMIT) -> RunConfig:
    """Read and validate a run configuration file."""
    source = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read configuration: {e.strerror}", source=source) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, f"{e.lineno}:{e.colno}", source) from e
    try:
        cfg = parse_run_config(data, default_sampler, rejection_limit)
    except ConfigError as e:
        raise ConfigError(e.message, e.where, source) from e
    logger.debug(f"Loaded run configuration from {source}")
    return cfg


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Command-line values replace file values; None means 'not given'."""
    given = {k: v for k, v in overrides.items() if v is not None}
    outputs = {k: given.pop(k) for k in ("out", "svg", "csv") if k in given}
    if "seed" in given:
        _require(0 <= given["seed"] < SEED_LIMIT, "seed must fit in 64 bits", "seed")
    if "replications" in given:
        _require(given["replications"] >= 1, "must be >= 1", "replications")
    if "horizon" in given:
        _require(given["horizon"] >= 0, "horizon must be nonnegative", "horizon")
    if "dim" in given and given["dim"] != cfg.dim:
        _require(given["dim"] in (2, 3), "dimension must be 2 or 3", "dim")
        cfg = replace(cfg, dim=given.pop("dim"), window=None, measure=None)
    else:
        given.pop("dim", None)
    if outputs:
        given["outputs"] = replace(cfg.outputs, **outputs)
    return replace(cfg, **given)
