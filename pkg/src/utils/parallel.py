"""
Seeding and worker-pool helpers shared by the estimators.
Random starts, restarts and replications draw child generators from one
SeedSequence so that results do not depend on the number of workers.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar, Union

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]


def seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        # copy, so repeated calls spawn the same children
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def spawn_generators(seed: SeedLike, count: int) -> List[np.random.Generator]:
    """One independent generator per start; child i always feeds start i."""
    return [np.random.default_rng(child) for child in seed_sequence(seed).spawn(count)]


def map_ordered(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Apply ``func`` to every item, concurrently when threads > 1, keeping input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
