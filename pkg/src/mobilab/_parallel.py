"""Bounded parallel map used by the resampling drivers.

MOBILAB_THREADS is intentionally conservative: the default of 1 keeps every
driver single-process, and any value > 1 fans work out to a process pool.
Results are always reduced in submission order, so the parallel and serial
paths produce identical output.
"""

import os
from concurrent.futures import ProcessPoolExecutor


def thread_cap() -> int:
    """Parallelism cap from MOBILAB_THREADS (default 1, floor 1)."""
    try:
        return max(1, int(os.environ.get("MOBILAB_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """Map `fn` over `items`, preserving order; parallel when the cap allows."""
    items = list(items)
    cap = thread_cap()
    if cap <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(cap, len(items))) as pool:
        return list(pool.map(fn, items))
