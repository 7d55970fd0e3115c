"""
Independent replications on a thread pool.

Replication `i` always receives the `i`-th child of
`SeedSequence(seed)`, so results do not depend on `threads`.
"""

import numpy as np
from concurrent.futures import ThreadPoolExecutor
from log.log import get_logger
from reboot.decay.errors import ConfigError
from typing import Callable, TypeVar

logger = get_logger(__name__)

T = TypeVar("T")


def replication_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def run_replications(
    replicate: Callable[[np.random.SeedSequence], T],
    seed: int,
    count: int,
    threads: int = 1,
) -> list[T]:
    """Runs `replicate` once per child seed; results in replication order."""
    if count < 1:
        raise ConfigError(f"Need at least one replication, got {count}")
    if threads < 1:
        raise ConfigError(f"Need at least one thread, got {threads}")

    seeds = replication_seeds(seed, count)

    if threads == 1:
        return [replicate(child) for child in seeds]

    logger.debug(f"Running {count} replications on {threads} threads")

    with ThreadPoolExecutor(max_workers=threads) as executor:
        # `map()` yields in submission order.
        return list(executor.map(replicate, seeds))
