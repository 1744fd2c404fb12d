from concurrent.futures import ThreadPoolExecutor


def run_blocks(fn, n_items, block_size, n_jobs=1):
    """Call ``fn(start, stop)`` over fixed-size blocks of ``range(n_items)``.

    Block boundaries depend only on ``block_size``, never on ``n_jobs``, so
    each block does identical arithmetic at any parallelism degree.
    """
    block_size = max(1, int(block_size))
    bounds = [(i, min(i + block_size, n_items)) for i in range(0, n_items, block_size)]
    n_jobs = resolve_n_jobs(n_jobs)
    if n_jobs == 1 or len(bounds) <= 1:
        for start, stop in bounds:
            fn(start, stop)
        return
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        for future in [pool.submit(fn, start, stop) for start, stop in bounds]:
            future.result()


def resolve_n_jobs(n_jobs):
    if n_jobs is None:
        return 1
    n_jobs = int(n_jobs)
    if n_jobs < 1:
        raise ValueError(f"n_jobs must be >= 1, got {n_jobs}")
    return n_jobs
