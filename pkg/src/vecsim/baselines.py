"""Comparison caching policies: random, count-greedy, Thompson sampling,
and popularity prediction without the DQN placement step.

Every policy fills both the local and the neighboring cache with c disjoint
contents so delay comparisons across schemes are like for like.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from vecsim.drl import CacheState

log = logging.getLogger(__name__)


@dataclass
class SchemeState:
    """Cross-round memory for the history-driven baselines."""

    catalog_size: int
    request_counts: np.ndarray = field(init=False)  # cumulative, per content
    beta_hits: np.ndarray = field(init=False)
    beta_misses: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.request_counts = np.zeros(self.catalog_size, dtype=np.int64)
        self.beta_hits = np.zeros(self.catalog_size, dtype=np.int64)
        self.beta_misses = np.zeros(self.catalog_size, dtype=np.int64)

    def note_requests(self, content_ids: np.ndarray) -> None:
        np.add.at(self.request_counts, content_ids, 1)

    def note_outcomes(self, content_ids: np.ndarray, local_hit: np.ndarray) -> None:
        np.add.at(self.beta_hits, content_ids[local_hit], 1)
        np.add.at(self.beta_misses, content_ids[~local_hit], 1)


def _two_disjoint_draws(pool: np.ndarray, c: int, rng: np.random.Generator) -> CacheState:
    local = rng.choice(pool, size=c, replace=False)
    rest = np.setdiff1d(pool, local)
    neighbor = rng.choice(rest, size=min(c, len(rest)), replace=False)
    return CacheState(
        local=tuple(int(x) for x in np.sort(local)),
        neighbor=frozenset(int(x) for x in neighbor),
    )


def random_policy(catalog_size: int, c: int, rng: np.random.Generator) -> CacheState:
    """Uniform placement over the whole catalog."""
    if catalog_size < 2 * c:
        raise ValueError(f"catalog of {catalog_size} cannot fill two caches of {c}")
    return _two_disjoint_draws(np.arange(catalog_size, dtype=np.int64), c, rng)


def c_eps_greedy(
    state: SchemeState, c: int, eps: float, rng: np.random.Generator
) -> CacheState:
    """Top-c contents by cumulative requests, exploring with probability eps."""
    ids = np.arange(state.catalog_size, dtype=np.int64)
    if rng.random() < eps:
        local = rng.choice(ids, size=c, replace=False)
    else:
        order = np.lexsort((ids, -state.request_counts))
        local = ids[order[:c]]
    rest = np.setdiff1d(ids, local)
    neighbor = rng.choice(rest, size=min(c, len(rest)), replace=False)
    return CacheState(
        local=tuple(int(x) for x in np.sort(local)),
        neighbor=frozenset(int(x) for x in neighbor),
    )


def thompson_sampling(state: SchemeState, c: int, rng: np.random.Generator) -> CacheState:
    """Cache the c largest draws from per-content Beta(hits+1, misses+1)."""
    ids = np.arange(state.catalog_size, dtype=np.int64)
    theta = rng.beta(state.beta_hits + 1.0, state.beta_misses + 1.0)
    order = np.lexsort((ids, -theta))
    local = ids[order[:c]]
    rest = np.setdiff1d(ids, local)
    neighbor = rng.choice(rest, size=min(c, len(rest)), replace=False)
    return CacheState(
        local=tuple(int(x) for x in np.sort(local)),
        neighbor=frozenset(int(x) for x in neighbor),
    )


def cafr_no_drl(
    popular_ids: np.ndarray, c: int, rng: np.random.Generator, catalog_size: int
) -> CacheState:
    """Random placement restricted to the predicted popular contents."""
    pool = np.asarray(popular_ids, dtype=np.int64)
    if len(pool) < 2 * c:
        log.warning(
            "only %d popular contents for two caches of %d; padding with random contents",
            len(pool),
            c,
        )
        others = np.setdiff1d(np.arange(catalog_size, dtype=np.int64), pool)
        extra = rng.choice(others, size=2 * c - len(pool), replace=False)
        pool = np.concatenate([pool, extra])
    return _two_disjoint_draws(pool, c, rng)
