"""Per-trajectory reproducible random streams.

Trajectories are grouped in fixed blocks of ``BLOCK_SIZE`` lanes.  Block ``b``
owns two PCG64 generators seeded from ``SeedSequence(master_seed,
spawn_key=(b, 0))`` (initial states, including rejection rounds) and
``spawn_key=(b, 1)`` (dynamics).  The path generator is consumed time-major,
one uniform per lane per step, so trajectory ``i`` is a fixed function of
``(master_seed, i)``: it does not depend on the batch size, the worker count,
or the requested length (longer runs extend shorter ones).
"""

from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np

BLOCK_SIZE = 256
INIT_STREAM = 0
PATH_STREAM = 1


def block_generator(master_seed: int, block: int, purpose: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(block), int(purpose)))
    return np.random.Generator(np.random.PCG64(seq))


def block_ranges(count: int):
    """Yield (block index, first trajectory, number of live lanes)."""
    for b, start in enumerate(range(0, count, BLOCK_SIZE)):
        yield b, start, min(BLOCK_SIZE, count - start)


def default_workers() -> int:
    return os.cpu_count() or 1


def run_blocks(task, count: int, workers: int | None = None) -> None:
    """Run ``task(block, start, live)`` over all blocks.

    Tasks write disjoint output rows, so the assembled result is independent
    of scheduling and of the worker count.
    """
    blocks = list(block_ranges(count))
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(blocks) == 1:
        for args in blocks:
            task(*args)
        return
    # run the first block inline so numba compilation happens once, up front
    task(*blocks[0])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(task, *args) for args in blocks[1:]]:
            fut.result()
