"""Worker-count control; results are always reduced in submission order."""
import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    """``HAMS_THREADS`` caps workers; 0 or unset means one per CPU."""
    raw = os.environ.get("HAMS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def ordered_map(fn, items):
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
