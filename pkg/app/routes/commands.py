"""
Command Handlers for tessellate
Each handler takes a validated RunConfig, writes its outputs and returns the
standardized report together with the process exit code.
"""

import json
import logging
import warnings
from datetime import datetime
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from app.services.export_service import (
    write_ensemble_jsonl,
    write_frame,
    write_svg,
    write_tessellation_jsonl,
)
from app.services.hyperplane_measure import REJECTION_LIMIT, DrivingMeasure
from app.services.replication_service import get_replication_service, mix_seed
from app.services.run_config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    load_run_config,
    parse_kernel,
)
from app.services.shrink_service import (
    NonErgodicitySuspected,
    csd_run,
    default_initial_body,
    merge_ensembles,
    window_census,
)
from app.services.stats_service import get_stats_service, zeta_constants
from app.services.tessellation_service import simulate_replica
from app.services.validation_service import SUITES, failed_checks, get_validation_service, suite_passed

# Configure logging
logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2

CENSUS_BATCH = 8

Report = Tuple[Dict, int]


def create_response(status: str, data=None, error: str = None):
    """Create standardized command report."""
    response = {
        "status": status,
        "timestamp": datetime.now().isoformat(),
    }
    if data is not None:
        response["data"] = data
    if error:
        response["error"] = error
    return response


def _indexed(path: Path, i: int, n: int) -> Path:
    """`path` itself for a single replication, `stem_i.suffix` otherwise."""
    if n == 1:
        return path
    return path.with_name(f"{path.stem}_{i}{path.suffix}")


def _cleanup(paths: List[Path]) -> None:
    for p in paths:
        try:
            Path(p).unlink(missing_ok=True)
        except OSError as e:
            logger.warning(f"Could not remove partial output {p}: {e}")


def _require_positive_horizon(cfg: RunConfig) -> None:
    if cfg.horizon <= 0:
        raise ConfigError("horizon must be positive for this command", "horizon")


def _simulate(cfg: RunConfig, n: int):
    return get_replication_service().run(
        partial(simulate_replica, cfg.window, cfg.kernel, cfg.measure, cfg.horizon), n, cfg.seed, cfg.workers)


def _inner_window(cfg: RunConfig):
    stats = get_stats_service()
    clearance = cfg.clearance if cfg.clearance is not None else \
        stats.pilot_clearance(cfg.window, cfg.kernel, cfg.measure, cfg.horizon, seed=cfg.seed)
    return stats.inner_window(cfg.window, clearance)


# ============================================================================
# Commands
# ============================================================================

def cmd_simulate(cfg: RunConfig) -> Report:
    """
    Simulate replications and write one JSON-lines file (and SVG) per replication.

    Returns:
        Report with the written files and split counts
    """
    written: List[Path] = []
    try:
        n = cfg.replications or 1
        out = Path(cfg.outputs.out or "tessellation.jsonl")
        runs = _simulate(cfg, n)
        summary = []
        for i, Y in enumerate(runs):
            path = write_tessellation_jsonl(Y, _indexed(out, i, n))
            written.append(path)
            entry = {"file": str(path), "maximal_polytopes": Y.split_count(), "leaves": len(Y.leaves())}
            if cfg.outputs.svg:
                if Y.dim == 2:
                    svg = write_svg(Y, _indexed(Path(cfg.outputs.svg), i, n))
                    written.append(svg)
                    entry["svg"] = str(svg)
                elif i == 0:
                    logger.warning("SVG output requested for a 3D run; writing geometry only")
            summary.append(entry)
        return create_response("success", data={
            "replications": n,
            "kernel": cfg.kernel.label,
            "horizon": cfg.horizon,
            "runs": summary,
        }), EXIT_PASS
    except Exception as e:
        logger.error(f"Error in simulate: {e}", exc_info=True)
        _cleanup(written)
        return create_response("error", error=str(e)), EXIT_FAIL


def cmd_stats(cfg: RunConfig) -> Report:
    """Minus-sampled statistics over replications, written as a CSV table."""
    written: List[Path] = []
    try:
        _require_positive_horizon(cfg)
        n = cfg.replications or 1
        runs = _simulate(cfg, n)
        inner = _inner_window(cfg)
        stats = get_stats_service()
        st = stats.planar_stats(runs, inner) if cfg.dim == 2 else stats.spatial_stats(runs, inner)
        path = write_frame(st.to_frame(), cfg.outputs.csv or cfg.outputs.out or "stats.csv")
        written.append(path)
        return create_response("success", data={
            "csv": str(path),
            "replications": n,
            "inner_volume": inner.volume,
            "all_passed": st.all_passed,
            "notes": st.notes,
        }), EXIT_PASS
    except ConfigError:
        raise
    except Exception as e:
        logger.error(f"Error in stats: {e}", exc_info=True)
        _cleanup(written)
        return create_response("error", error=str(e)), EXIT_FAIL


def cmd_typical_cell(cfg: RunConfig) -> Report:
    """Typical-cell ensemble from the continuous shrink dynamics or a window census."""
    written: List[Path] = []
    try:
        _require_positive_horizon(cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonErgodicitySuspected)
            if cfg.method == "csd":
                K0 = default_initial_body(cfg.dim, cfg.measure)
                ens = csd_run(cfg.kernel, cfg.measure, K0, cfg.samples, cfg.burn_in, cfg.thin, seed=cfg.seed)
            else:
                inner = _inner_window(cfg)
                parts, total, batch = [], 0, 0
                while total < cfg.samples:
                    batch_cfg = apply_overrides(cfg, seed=mix_seed(cfg.seed, batch))
                    for Y in _simulate(batch_cfg, CENSUS_BATCH):
                        part = window_census(Y, inner)
                        parts.append(part)
                        total += len(part)
                    batch += 1
                ens = merge_ensembles(parts)
        path = write_ensemble_jsonl(ens, cfg.outputs.out or "typical_cells.jsonl", cfg.measure)
        written.append(path)
        return create_response("success", data={
            "file": str(path),
            "samples": len(ens),
            "provenance": ens.provenance,
            "diagnostics": ens.diagnostics,
            "non_ergodicity_suspected": any(issubclass(w.category, NonErgodicitySuspected) for w in caught),
        }), EXIT_PASS
    except ConfigError:
        raise
    except Exception as e:
        logger.error(f"Error in typical-cell: {e}", exc_info=True)
        _cleanup(written)
        return create_response("error", error=str(e)), EXIT_FAIL


def cmd_validate(cfg: RunConfig, suite: str) -> Report:
    """Run an acceptance suite; exit 0 iff every asserted check passes."""
    written: List[Path] = []
    try:
        if suite not in SUITES:
            raise ConfigError(f"unknown suite {suite!r}; expected one of {', '.join(SUITES)}", "suite")
        frame = get_validation_service().run_suite(suite, cfg)
        path = write_frame(frame, cfg.outputs.csv or cfg.outputs.out or f"validation_{suite}.csv")
        written.append(path)
        passed = suite_passed(frame)
        failed = failed_checks(frame)
        return create_response("success" if passed else "failed", data={
            "suite": suite,
            "csv": str(path),
            "checks": len(frame),
            "failed": failed,
        }), EXIT_PASS if passed else EXIT_FAIL
    except ConfigError:
        raise
    except Exception as e:
        logger.error(f"Error in validate: {e}", exc_info=True)
        _cleanup(written)
        return create_response("error", error=str(e)), EXIT_FAIL


def cmd_zeta(cfg: RunConfig) -> Report:
    """Monte Carlo zeta constants of the configured directional distribution."""
    written: List[Path] = []
    try:
        zetas = zeta_constants(cfg.measure.R, cfg.zeta_samples, seed=cfg.seed)
        rows = []
        for name, z in zetas.items():
            target = z["target"]
            rows.append({
                "quantity": name,
                "estimate": z["estimate"],
                "se": z["se"],
                "target": target,
                "within_3se": None if target is None else abs(z["estimate"] - target) <= 3.0 * z["se"],
            })
        path = write_frame(pd.DataFrame(rows), cfg.outputs.csv or cfg.outputs.out or "zeta.csv")
        written.append(path)
        return create_response("success", data={"csv": str(path), "zeta": zetas}), EXIT_PASS
    except ValueError as e:
        raise ConfigError(str(e), "zeta_samples") from e
    except Exception as e:
        logger.error(f"Error in zeta: {e}", exc_info=True)
        _cleanup(written)
        return create_response("error", error=str(e)), EXIT_FAIL


# ============================================================================
# Dispatch
# ============================================================================

def _kernel_flag(value: Optional[str]):
    if value is None:
        return None
    text = value.strip()
    if text.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, f"--kernel:{e.lineno}:{e.colno}") from e
    else:
        data = {"kernel": text}
    return parse_kernel(data, "--kernel")


def build_run_config(args, default_sampler: str, rejection_limit: int) -> RunConfig:
    """File configuration (if any) with command-line flags on top."""
    if getattr(args, "config", None):
        cfg = load_run_config(args.config, default_sampler, rejection_limit)
    else:
        cfg = RunConfig(dim=args.dim or 2)
    cfg = apply_overrides(
        cfg,
        dim=args.dim,
        seed=args.seed,
        replications=args.reps,
        horizon=getattr(args, "t", None),
        samples=getattr(args, "samples", None),
        method=getattr(args, "method", None),
        zeta_samples=getattr(args, "n", None),
        workers=args.workers,
        kernel=_kernel_flag(getattr(args, "kernel", None)),
        out=args.out,
        svg=getattr(args, "svg", None),
        csv=getattr(args, "csv", None),
    )
    if getattr(args, "isotropic", False):
        cfg = apply_overrides(cfg, measure=DrivingMeasure.isotropic(cfg.dim, cfg.measure.rho))
    return cfg


def run_command(args, default_sampler: str = "rejection", rejection_limit: int = REJECTION_LIMIT) -> int:
    """Build the run configuration, run the selected handler and print its report."""
    try:
        cfg = build_run_config(args, default_sampler, rejection_limit)
        extra = [getattr(args, name) for name in getattr(args, "handler_args", ())]
        report, code = args.handler(cfg, *extra)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        report, code = create_response("error", error=str(e)), EXIT_CONFIG
    print(json.dumps(report, indent=2, default=str))
    return code
