import os
from concurrent.futures import ThreadPoolExecutor


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("MLFDM_THREADS", "1")))
    except ValueError:
        return 1


def pmap(func, items):
    """Order-preserving map; threaded when ``MLFDM_THREADS`` > 1."""
    items = list(items)
    k = n_threads()
    if k == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(func, items))
