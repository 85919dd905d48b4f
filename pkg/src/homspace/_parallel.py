"""Thread-pool helper honouring the HOMSPACE_THREADS cap."""
import os
from concurrent.futures import ThreadPoolExecutor


def max_workers():
    raw = os.environ.get("HOMSPACE_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"HOMSPACE_THREADS must be an integer, got {raw!r}")
    return min(8, os.cpu_count() or 1)


def pmap(fn, items):
    """Order-preserving map; falls back to a plain loop for one worker."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
