"""Ordered parallel map capped by ``TAVLAB_THREADS``.

Work items run on a thread pool (the compiled kernels release the GIL);
results always come back in input order so any reduction over them stays
deterministic.
"""
import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    raw = os.environ.get("TAVLAB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"TAVLAB_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def ordered_map(fn, items):
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
