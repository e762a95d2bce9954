"""Optional row-block parallelism for the per-pixel kernels.

``SEMDIFF_THREADS`` caps the worker count; unset or 0 runs serially. Each
output row is computed by the same sequence of array operations whatever the
block split, so results are bitwise independent of the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "SEMDIFF_THREADS"


def thread_count():
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    return max(n, 0)


def for_row_blocks(kernel, n_rows, threads=None):
    """Call ``kernel(r0, r1)`` over disjoint row ranges covering ``[0, n_rows)``.

    The kernel must write only rows ``r0:r1`` of its output.
    """
    threads = thread_count() if threads is None else threads
    if threads <= 1 or n_rows < 2:
        kernel(0, n_rows)
        return
    n_blocks = min(threads, n_rows)
    bounds = [n_rows * i // n_blocks for i in range(n_blocks + 1)]
    with ThreadPoolExecutor(max_workers=n_blocks) as pool:
        futures = [pool.submit(kernel, bounds[i], bounds[i + 1]) for i in range(n_blocks)]
        for f in futures:
            f.result()
