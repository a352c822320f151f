"""Popular-content prediction from reconstructed ratings.

Per vehicle: reconstruct its rating matrix with the shared autoencoder,
pick the most active VUs, find their most similar peers over the combined
reconstruction + personal-info matrix, and count which contents those peers
rated. The roadside unit then merges all vehicles' counts and keeps the top
contents.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from vecsim.autoencoder import AEModel, forward

log = logging.getLogger(__name__)


@dataclass
class PopularityConfig:
    m: int = 3  # top 1/m of VUs by rating count are active
    k: int = 10  # neighbors per active VU
    f_c: int | None = None  # popular-set size; defaults to twice the cache capacity


@dataclass
class InterestSet:
    """Per-vehicle predicted contents with their neighbor counts."""

    vehicle_id: int
    counts: dict[int, int]  # content id -> number of neighbor rows rating it


@dataclass
class PopularContents:
    """Content ids in non-increasing count order; ties by ascending id."""

    ids: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def ranks(self) -> dict[int, int]:
        return {int(c): r for r, c in enumerate(self.ids)}


def reconstruct(model: AEModel, rating_matrix: np.ndarray) -> np.ndarray:
    """Row-wise autoencoder pass; output has the input's shape."""
    _, x_hat = forward(model, np.atleast_2d(rating_matrix))
    return x_hat


def select_active_vus(rating_matrix: np.ndarray, m: int) -> np.ndarray:
    """Row indices of the ceil(n/m) VUs with the most nonzero ratings."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = rating_matrix.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    counts = np.count_nonzero(rating_matrix, axis=1)
    k = -(-n // m)  # ceil
    order = np.lexsort((np.arange(n), -counts))
    return np.sort(order[:k])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.warning("cosine similarity of a zero vector; treating as 0")
        return 0.0
    return float(a @ b / (na * nb))


def _similarities_to_row(combined: np.ndarray, row: int) -> np.ndarray:
    norms = np.linalg.norm(combined, axis=1)
    ref = combined[row]
    ref_norm = norms[row]
    sims = np.zeros(combined.shape[0])
    if ref_norm == 0.0:
        return sims
    ok = norms > 0
    sims[ok] = combined[ok] @ ref / (norms[ok] * ref_norm)
    return sims


def k_neighbors(active_row: int, combined: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k most similar VUs to active_row, excluding itself.

    Ties break toward the lower row index; fewer than k candidates returns
    them all.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = combined.shape[0]
    sims = _similarities_to_row(combined, active_row)
    candidates = np.array([i for i in range(n) if i != active_row], dtype=np.int64)
    if len(candidates) == 0:
        return candidates
    order = np.lexsort((candidates, -sims[candidates]))
    return candidates[order[:k]]


def predict_interested(
    vehicle_id: int,
    rating_matrix: np.ndarray,
    reconstructed: np.ndarray,
    info_matrix: np.ndarray,
    m: int,
    k: int,
    f_c: int,
) -> InterestSet:
    """Count contents rated by the neighbors of this vehicle's active VUs.

    Similarity runs over the reconstructed ratings joined with the personal
    info columns; the counting itself uses the raw rating rows. Returns the
    f_c contents with the largest counts.
    """
    active = select_active_vus(rating_matrix, m)
    if len(active) == 0:
        return InterestSet(vehicle_id, {})
    combined = np.hstack([reconstructed, info_matrix])
    neighbor_rows = []
    for row in active:
        neighbor_rows.extend(k_neighbors(int(row), combined, k))
    if not neighbor_rows:
        return InterestSet(vehicle_id, {})
    stacked = rating_matrix[np.asarray(neighbor_rows, dtype=np.int64)]
    counts = np.count_nonzero(stacked, axis=0)
    return InterestSet(vehicle_id, _top_counts(counts, f_c))


def _top_counts(counts: np.ndarray, f_c: int) -> dict[int, int]:
    ids = np.flatnonzero(counts)
    if len(ids) == 0:
        return {}
    order = np.lexsort((ids, -counts[ids]))
    kept = ids[order[:f_c]]
    return {int(c): int(counts[c]) for c in kept}


def aggregate_popular(interest_sets: list[InterestSet], f_c: int) -> PopularContents:
    """Merge per-vehicle counts and keep the f_c most popular contents."""
    totals: dict[int, int] = {}
    for s in interest_sets:
        for cid, n in s.counts.items():
            totals[cid] = totals.get(cid, 0) + n
    if not totals:
        log.warning("no interested contents predicted by any vehicle")
        return PopularContents(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    items = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))[:f_c]
    ids = np.array([c for c, _ in items], dtype=np.int64)
    counts = np.array([n for _, n in items], dtype=np.int64)
    return PopularContents(ids, counts)
