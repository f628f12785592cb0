"""
Replication Service
Seed fan-out and an executor pool for independent Monte Carlo replications.
"""

import logging
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")

SEED_MASK = (1 << 64) - 1


def mix_seed(seed: int, i: int) -> int:
    """
    Seed of replication i: the first 64-bit word of SeedSequence([seed, i]).

    Depends only on (seed, i), so the number of workers never changes a result.
    """
    state = np.random.SeedSequence([int(seed) & SEED_MASK, int(i)]).generate_state(1, dtype=np.uint64)
    return int(state[0])


class ReplicationService:
    """Runs `fn(seed_i)` with seed_i = mix_seed(seed, i) for i = 0..n-1, results in index order."""

    def __init__(self, workers: int = None, executor: str = None):
        self.workers = max(1, workers or 1)
        self.executor = executor or "thread"

    def run(self, fn: Callable[[int], T], n: int, seed: int,
            workers: Optional[int] = None) -> List[T]:
        workers = max(1, workers or self.workers)
        seeds = [mix_seed(seed, i) for i in range(n)]
        if workers == 1 or n <= 1:
            results = [fn(s) for s in seeds]
        else:
            pool_cls = ProcessPoolExecutor if self.executor == "process" else ThreadPoolExecutor
            with pool_cls(max_workers=workers) as pool:
                results = list(pool.map(fn, seeds))
        logger.info(f"Finished {n} replications (seed={seed}, workers={workers})")
        return results


# ============================================================================
# Singleton accessor
# ============================================================================

_replication_service_instance: Optional[ReplicationService] = None


def get_replication_service() -> ReplicationService:
    """Get or create replication service singleton."""
    global _replication_service_instance
    if _replication_service_instance is None:
        from config import get_config
        cfg = get_config()
        _replication_service_instance = ReplicationService(workers=cfg.WORKERS, executor=cfg.EXECUTOR)
    return _replication_service_instance
