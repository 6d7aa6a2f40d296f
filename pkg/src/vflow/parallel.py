"""Process-wide worker pool for independent exact solves; results keep input order."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

log = logging.getLogger(__name__)

_threads = 1
_pool: ThreadPoolExecutor | None = None


def default_threads() -> int:
    env = os.environ.get("VFLOW_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring VFLOW_THREADS=%r; using the CPU count", env)
    return os.cpu_count() or 1


def set_threads(n: int | None) -> int:
    """Resize the pool; ``None`` or 0 picks VFLOW_THREADS or the CPU count."""
    global _threads, _pool
    n = int(n) if n else default_threads()
    if n != _threads and _pool is not None:
        _pool.shutdown()
        _pool = None
    _threads = max(1, n)
    return _threads


def pmap(fn, items) -> list:
    items = list(items)
    global _pool
    if _threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    return list(_pool.map(fn, items))
