"""MovieLens-1M ingestion, per-vehicle partitions, matrices, and requests.

Input files follow the GroupLens format: `ratings.dat` lines are
UserID::MovieID::Rating::Timestamp and `users.dat` lines are
UserID::Gender::Age::Occupation::Zip-code. Raw 1..5 star ratings are
normalized to [0, 1] by /5; unrated entries stay 0. A seeded synthetic
generator emits the same schema for desk-scale runs.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

AGE_BRACKETS = (1, 18, 25, 35, 45, 50, 56)
N_OCCUPATIONS = 21  # MovieLens codes 0..20
STAR_SCALE = 5.0


def normalize_rating(stars):
    return np.asarray(stars, dtype=float) / STAR_SCALE


def denormalize_rating(values):
    return np.rint(np.asarray(values, dtype=float) * STAR_SCALE).astype(int)


@dataclass
class DataConfig:
    """Workload source and shard layout."""

    source: str = "synthetic"  # or "movielens"
    path: Optional[str] = None  # directory with ratings.dat / users.dat
    train_frac: float = 0.998
    requests_per_vehicle: int = 10
    catalog_cap: Optional[int] = None
    partitions: int = 60  # private-data shards handed to vehicles
    synthetic_users: int = 1200
    synthetic_contents: int = 800
    synthetic_zipf: float = 0.8
    synthetic_min_ratings: int = 20
    synthetic_mean_extra_ratings: float = 40.0
    synthetic_ratings_sigma: float = 1.0


@dataclass
class Records:
    """Parsed global data: rating triples plus the VU attribute table."""

    user_ids: np.ndarray  # per rating record
    movie_ids: np.ndarray  # raw movie ids
    stars: np.ndarray  # 1..5
    timestamps: np.ndarray
    users: np.ndarray  # distinct VU ids, ascending
    gender: np.ndarray  # 'F'/'M' per VU
    age: np.ndarray  # bracket values per VU
    occupation: np.ndarray
    zipcode: np.ndarray  # strings per VU

    @property
    def n_ratings(self) -> int:
        return len(self.stars)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_movies(self) -> int:
        return len(np.unique(self.movie_ids))


def encode_user_info(records: Records) -> np.ndarray:
    """Numeric VU feature rows: gender, age ordinal, occupation, zip digit.

    Each column is scaled to [0, 1]; row order matches records.users.
    """
    gender = (records.gender == "M").astype(float)
    bracket_index = {a: i for i, a in enumerate(AGE_BRACKETS)}
    age = np.array([bracket_index.get(int(a), 0) for a in records.age], dtype=float)
    age /= len(AGE_BRACKETS) - 1
    occupation = records.occupation.astype(float) / (N_OCCUPATIONS - 1)
    zip_digit = np.array([int(str(z)[0]) if str(z)[:1].isdigit() else 0 for z in records.zipcode])
    return np.column_stack([gender, age, occupation, zip_digit / 9.0])


def _parse_int(text: str, path: str, lineno: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: malformed {what} field {text!r}") from None


def load_movielens(ratings_path: str, users_path: str) -> Records:
    """Read the two .dat files; raises on malformed lines with line numbers."""
    u_ids, genders, ages, occs, zips = [], [], [], [], []
    with open(users_path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 5:
                raise ValueError(f"{users_path}:{lineno}: expected 5 fields, got {len(parts)}")
            u_ids.append(_parse_int(parts[0], users_path, lineno, "user id"))
            genders.append(parts[1])
            ages.append(_parse_int(parts[2], users_path, lineno, "age"))
            occs.append(_parse_int(parts[3], users_path, lineno, "occupation"))
            zips.append(parts[4])

    r_users, r_movies, r_stars, r_ts = [], [], [], []
    with open(ratings_path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise ValueError(f"{ratings_path}:{lineno}: expected 4 fields, got {len(parts)}")
            r_users.append(_parse_int(parts[0], ratings_path, lineno, "user id"))
            r_movies.append(_parse_int(parts[1], ratings_path, lineno, "movie id"))
            stars = _parse_int(parts[2], ratings_path, lineno, "rating")
            if not 1 <= stars <= 5:
                raise ValueError(f"{ratings_path}:{lineno}: rating {stars} outside 1..5")
            r_stars.append(stars)
            r_ts.append(_parse_int(parts[3], ratings_path, lineno, "timestamp"))

    order = np.argsort(np.asarray(u_ids, dtype=np.int64), kind="stable")
    return Records(
        user_ids=np.asarray(r_users, dtype=np.int64),
        movie_ids=np.asarray(r_movies, dtype=np.int64),
        stars=np.asarray(r_stars, dtype=np.int64),
        timestamps=np.asarray(r_ts, dtype=np.int64),
        users=np.asarray(u_ids, dtype=np.int64)[order],
        gender=np.asarray(genders, dtype=object)[order],
        age=np.asarray(ages, dtype=np.int64)[order],
        occupation=np.asarray(occs, dtype=np.int64)[order],
        zipcode=np.asarray(zips, dtype=object)[order],
    )


def write_movielens(records: Records, dirpath: str) -> tuple[str, str]:
    """Emit ratings.dat / users.dat in the GroupLens format."""
    os.makedirs(dirpath, exist_ok=True)
    ratings_path = os.path.join(dirpath, "ratings.dat")
    users_path = os.path.join(dirpath, "users.dat")
    with open(ratings_path, "w", encoding="latin-1") as fh:
        for u, m, s, t in zip(records.user_ids, records.movie_ids, records.stars, records.timestamps):
            fh.write(f"{u}::{m}::{s}::{t}\n")
    with open(users_path, "w", encoding="latin-1") as fh:
        for u, g, a, o, z in zip(records.users, records.gender, records.age, records.occupation, records.zipcode):
            fh.write(f"{u}::{g}::{a}::{o}::{z}\n")
    return ratings_path, users_path


@dataclass
class Catalog:
    """Bijection between raw movie ids and dense content indices 0..C-1."""

    raw_ids: np.ndarray  # sorted kept movie ids

    @property
    def size(self) -> int:
        return len(self.raw_ids)

    def to_dense(self, raw) -> np.ndarray:
        idx = np.searchsorted(self.raw_ids, raw)
        ok = (idx < self.size) & (self.raw_ids[np.minimum(idx, self.size - 1)] == raw)
        if not np.all(ok):
            missing = np.asarray(raw)[~ok]
            raise KeyError(f"movie ids not in catalog: {missing[:5]}")
        return idx

    def to_raw(self, dense) -> np.ndarray:
        return self.raw_ids[np.asarray(dense)]


def build_catalog(records: Records, cap: Optional[int] = None) -> Catalog:
    """All distinct movies, or the cap most-rated ones (ties by ascending id)."""
    ids, counts = np.unique(records.movie_ids, return_counts=True)
    if cap is not None and cap < len(ids):
        order = np.lexsort((ids, -counts))
        ids = np.sort(ids[order[:cap]])
    return Catalog(raw_ids=ids)


@dataclass
class ContentDataset:
    """Catalog-indexed rating records shared read-only by all vehicles."""

    catalog: Catalog
    rec_user: np.ndarray  # VU id per record
    rec_content: np.ndarray  # dense content index per record
    rec_rating: np.ndarray  # normalized rating per record
    users: np.ndarray  # ascending VU ids
    user_info: np.ndarray  # encoded rows aligned with users

    @property
    def n_contents(self) -> int:
        return self.catalog.size


def make_dataset(records: Records, catalog_cap: Optional[int] = None) -> ContentDataset:
    catalog = build_catalog(records, catalog_cap)
    keep = np.isin(records.movie_ids, catalog.raw_ids)
    return ContentDataset(
        catalog=catalog,
        rec_user=records.user_ids[keep],
        rec_content=catalog.to_dense(records.movie_ids[keep]),
        rec_rating=normalize_rating(records.stars[keep]),
        users=records.users,
        user_info=encode_user_info(records),
    )


@dataclass
class LocalData:
    """One vehicle's private shard: its VUs' records plus the train/test split."""

    vu_ids: np.ndarray  # ascending
    rec_user: np.ndarray
    rec_content: np.ndarray
    rec_rating: np.ndarray
    user_info: np.ndarray  # rows aligned with vu_ids
    n_contents: int
    train_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None
    _train_matrix: Optional[np.ndarray] = field(default=None, repr=False)
    _test_matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_records(self) -> int:
        return len(self.rec_rating)

    @property
    def n_train(self) -> int:
        return 0 if self.train_idx is None else len(self.train_idx)

    def _matrix(self, idx: np.ndarray) -> np.ndarray:
        mat = np.zeros((len(self.vu_ids), self.n_contents))
        rows = np.searchsorted(self.vu_ids, self.rec_user[idx])
        mat[rows, self.rec_content[idx]] = self.rec_rating[idx]
        return mat

    def train_matrix(self) -> np.ndarray:
        if self._train_matrix is None:
            self._train_matrix = self._matrix(self.train_idx)
        return self._train_matrix

    def test_matrix(self) -> np.ndarray:
        if self._test_matrix is None:
            self._test_matrix = self._matrix(self.test_idx)
        return self._test_matrix

    def test_contents(self) -> np.ndarray:
        """Distinct dense content ids present in the test split."""
        return np.unique(self.rec_content[self.test_idx])


def partition(ds: ContentDataset, n_vehicles: int, rng: np.random.Generator) -> list[LocalData]:
    """Randomly split VUs into n_vehicles balanced disjoint groups."""
    if n_vehicles < 1:
        raise ValueError("n_vehicles must be >= 1")
    if n_vehicles > len(ds.users):
        raise ValueError(f"cannot partition {len(ds.users)} VUs into {n_vehicles} groups")
    shuffled = rng.permutation(ds.users)
    groups = np.array_split(shuffled, n_vehicles)
    user_row = {int(u): i for i, u in enumerate(ds.users)}
    out = []
    for group in groups:
        vu = np.sort(group)
        keep = np.isin(ds.rec_user, vu)
        out.append(
            LocalData(
                vu_ids=vu,
                rec_user=ds.rec_user[keep],
                rec_content=ds.rec_content[keep],
                rec_rating=ds.rec_rating[keep],
                user_info=ds.user_info[[user_row[int(u)] for u in vu]],
                n_contents=ds.n_contents,
            )
        )
    return out


def split_train_test(local: LocalData, train_frac: float, rng: np.random.Generator) -> LocalData:
    """Exact split: floor(train_frac * n) records to train, rest to test."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = local.n_records
    if n < 2:
        raise ValueError(f"cannot split {n} records into train and test")
    k = math.floor(train_frac * n)
    perm = rng.permutation(n)
    local.train_idx = np.sort(perm[:k])
    local.test_idx = np.sort(perm[k:])
    local._train_matrix = None
    local._test_matrix = None
    return local


def generate_requests(local: LocalData, rng: np.random.Generator, f_per_vehicle: int) -> np.ndarray:
    """Distinct contents drawn uniformly from the vehicle's test-set pool."""
    pool = local.test_contents()
    if len(pool) == 0:
        log.warning("vehicle has an empty test set; no requests generated")
        return np.empty(0, dtype=np.int64)
    k = min(f_per_vehicle, len(pool))
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(pool, size=k, replace=False))


def load_records(cfg: DataConfig, rng: np.random.Generator) -> Records:
    """Materialize the configured workload source."""
    if cfg.source == "movielens":
        if cfg.path is None:
            raise ValueError("data.path is required for the movielens source")
        return load_movielens(
            os.path.join(cfg.path, "ratings.dat"), os.path.join(cfg.path, "users.dat")
        )
    if cfg.source == "synthetic":
        return synthetic_movielens(
            rng,
            n_users=cfg.synthetic_users,
            n_movies=cfg.synthetic_contents,
            zipf_exponent=cfg.synthetic_zipf,
            min_ratings=cfg.synthetic_min_ratings,
            mean_extra_ratings=cfg.synthetic_mean_extra_ratings,
            ratings_sigma=cfg.synthetic_ratings_sigma,
        )
    raise ValueError(f"unknown data source {cfg.source!r}")


def synthetic_movielens(
    rng: np.random.Generator,
    n_users: int = 1200,
    n_movies: int = 800,
    zipf_exponent: float = 0.8,
    min_ratings: int = 20,
    mean_extra_ratings: float = 40.0,
    ratings_sigma: float = 1.0,
) -> Records:
    """Seeded stand-in with the MovieLens-1M schema.

    Movie popularity is Zipf-like with the given exponent and a shuffled
    rank-to-id assignment; per-VU rating counts are heavy tailed
    (min_ratings + lognormal). Raw movie ids are odd numbers so the
    catalog mapping is exercised.
    """
    raw_movie_ids = np.arange(n_movies, dtype=np.int64) * 2 + 1
    ranks = rng.permutation(n_movies) + 1
    weights = 1.0 / ranks.astype(float) ** zipf_exponent
    log_w = np.log(weights)

    mu = math.log(max(mean_extra_ratings, 1.0)) - ratings_sigma**2 / 2.0
    users = np.arange(1, n_users + 1, dtype=np.int64)
    rec_u, rec_m, rec_s = [], [], []
    star_p = np.array([0.05, 0.10, 0.25, 0.35, 0.25])
    for u in users:
        n_i = min(n_movies, min_ratings + int(rng.lognormal(mu, ratings_sigma)))
        # Gumbel top-k gives exact weighted sampling without replacement.
        keys = log_w + rng.gumbel(size=n_movies)
        chosen = np.argpartition(-keys, n_i - 1)[:n_i]
        rec_u.append(np.full(n_i, u, dtype=np.int64))
        rec_m.append(raw_movie_ids[np.sort(chosen)])
        rec_s.append(rng.choice(np.arange(1, 6), size=n_i, p=star_p))

    user_ids = np.concatenate(rec_u)
    n_total = len(user_ids)
    return Records(
        user_ids=user_ids,
        movie_ids=np.concatenate(rec_m),
        stars=np.concatenate(rec_s).astype(np.int64),
        timestamps=np.arange(n_total, dtype=np.int64) + 956_700_000,
        users=users,
        gender=np.asarray(rng.choice(["F", "M"], size=n_users, p=[0.3, 0.7]), dtype=object),
        age=np.asarray(rng.choice(AGE_BRACKETS, size=n_users), dtype=np.int64),
        occupation=rng.integers(0, N_OCCUPATIONS, size=n_users),
        zipcode=np.asarray([f"{z:05d}" for z in rng.integers(10000, 100000, size=n_users)], dtype=object),
    )
