"""Experiment orchestration: rounds x schemes x seeds, metrics, CSV output.

Each round: update the vehicle population, draw per-vehicle link rates,
collect content requests, run the scheme's placement step, then serve every
request through the local RSU / neighboring RSU / macro-cell tier logic and
record fetch events. Random streams are named per purpose so mobility,
data, channel and request draws are identical across schemes under the same
seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from vecsim import rngs
from vecsim.autoencoder import init_model
from vecsim.baselines import SchemeState, c_eps_greedy, cafr_no_drl, random_policy, thompson_sampling
from vecsim.channel import ChannelParams, draw_round_links
from vecsim.dataset import (
    ContentDataset,
    DataConfig,
    generate_requests,
    load_records,
    make_dataset,
    partition,
    split_train_test,
)
from vecsim.drl import (
    CacheState,
    DqnConfig,
    RewardParams,
    RoundRequests,
    build_round_requests,
    run_optimization,
    transmission_delay,
    TIER_LOCAL,
)
from vecsim.federation import FlConfig, run_fl_round
from vecsim.mobility import MobilityParams, PopulationModel
from vecsim.popularity import (
    PopularContents,
    PopularityConfig,
    aggregate_popular,
    predict_interested,
    reconstruct,
)

log = logging.getLogger(__name__)

SCHEMES = ("cafr", "fedavg_cafr", "cafr_nodrl", "random", "ceps", "thompson")

CSV_COLUMNS = (
    "seed",
    "round",
    "scheme",
    "capacity",
    "density",
    "hit_ratio_pct",
    "avg_delay_s",
    "fl_round_time_s",
    "episodes_to_converge",
    "avg_delay_per_request_s",
)


@dataclass
class FetchEvent:
    round: int
    vehicle_id: int
    content_id: int
    tier: str
    delay_s: float


@dataclass
class ExperimentConfig:
    seed: int = 1
    n_seeds: int = 1
    seeds: Optional[list[int]] = None  # explicit list overrides seed/n_seeds
    rounds: int = 10
    scheme: str = "cafr"
    capacity: int = 100
    coverage_m: float = 1000.0
    round_duration_s: float = 10.0
    content_size_bytes: float = 100.0
    scheme_eps: float = 0.1  # exploration probability of the count-greedy baseline
    mobility: MobilityParams = field(default_factory=MobilityParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    data: DataConfig = field(default_factory=DataConfig)
    fl: FlConfig = field(default_factory=FlConfig)
    drl: DqnConfig = field(default_factory=DqnConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    popularity: PopularityConfig = field(default_factory=PopularityConfig)
    drl_curves_csv: Optional[str] = None  # optional per-episode dump
    popular_csv: Optional[str] = None  # optional per-round popular-content dump

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + i for i in range(self.n_seeds)]

    def validate(self) -> None:
        if self.rounds < 1 or self.capacity < 1:
            raise ValueError("rounds and capacity must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        self.mobility.validate()
        self.channel.validate()
        self.fl.validate()
        self.reward.validate()
        # reward and serving share the content size
        self.reward.content_bits = self.content_size_bytes * 8.0


def cache_hit_ratio(events: list[FetchEvent]) -> float:
    """Percentage of requests served straight from the local RSU."""
    if not events:
        return 0.0
    hits = sum(1 for e in events if e.tier == TIER_LOCAL)
    return 100.0 * hits / len(events)


def avg_transmission_delay(events: list[FetchEvent], n_vehicles: int) -> float:
    """Total fetch delay divided by the number of vehicles (not requests)."""
    if n_vehicles < 1:
        raise ValueError("n_vehicles must be >= 1")
    return sum(e.delay_s for e in events) / n_vehicles


def serve_requests(
    round_r: int,
    requests: list[tuple[int, int]],
    cs: CacheState,
    rates: dict[int, tuple[float, float]],
    wired_rate_bps: float,
    content_bits: float,
) -> list[FetchEvent]:
    """Resolve each request through the local / neighbor / macro-cell tiers."""
    events = []
    for vid, cid in requests:
        r_v2r, r_v2b = rates[vid]
        delay, tier = transmission_delay(cid, cs, r_v2r, r_v2b, wired_rate_bps, content_bits)
        events.append(FetchEvent(round_r, vid, cid, tier, delay))
    return events


class Simulation:
    """One seed's full simulation; owns all mutable state."""

    def __init__(self, config: ExperimentConfig, seed: int):
        config.validate()
        self.cfg = config
        self.seed = seed
        data_rng = rngs.stream(seed, rngs.DATA)
        records = load_records(config.data, data_rng)
        self.ds: ContentDataset = make_dataset(records, config.data.catalog_cap)
        if self.ds.n_contents < 2 * config.capacity:
            raise ValueError(
                f"catalog of {self.ds.n_contents} contents cannot fill two caches of {config.capacity}"
            )
        self.partitions = [
            split_train_test(p, config.data.train_frac, data_rng)
            for p in partition(self.ds, config.data.partitions, data_rng)
        ]
        self.free_partitions = list(range(len(self.partitions)))
        self.partition_of: dict[int, int] = {}
        self.population = PopulationModel(config.mobility, config.coverage_m, config.round_duration_s)
        self.vehicles = []
        self.global_model = init_model(
            rngs.stream(seed, rngs.AGGREGATION), self.ds.n_contents, config.fl.hidden_dim
        )
        self.scheme_state = SchemeState(self.ds.n_contents)
        self.mob_rng = rngs.stream(seed, rngs.MOBILITY)
        self.chan_rng = rngs.stream(seed, rngs.CHANNEL)
        self.req_rng = rngs.stream(seed, rngs.REQUESTS)
        self.scheme_rng = rngs.stream(seed, rngs.SCHEME)

    def _assign_datasets(self) -> None:
        departed = set(self.partition_of) - {v.id for v in self.vehicles}
        for vid in sorted(departed):
            self.free_partitions.append(self.partition_of.pop(vid))
        for v in sorted(self.vehicles, key=lambda v: v.id):
            if v.id in self.partition_of:
                continue
            if self.free_partitions:
                idx = self.free_partitions.pop(0)
            else:
                # more concurrent vehicles than shards; reuse round-robin
                idx = v.id % len(self.partitions)
                log.warning("no free data shard; vehicle %d reuses shard %d", v.id, idx)
            self.partition_of[v.id] = idx
            v.dataset = self.partitions[idx]

    def _collect_requests(self) -> list[tuple[int, int]]:
        out = []
        for v in sorted(self.vehicles, key=lambda v: v.id):
            for cid in generate_requests(v.dataset, self.req_rng, self.cfg.data.requests_per_vehicle):
                out.append((v.id, int(cid)))
        return out

    def _predict_popular(self, f_c: int) -> PopularContents:
        interest_sets = []
        for v in sorted(self.vehicles, key=lambda v: v.id):
            if v.dataset is None or v.dataset.test_idx is None:
                continue
            rating = v.dataset.test_matrix()
            interest_sets.append(
                predict_interested(
                    v.id,
                    rating,
                    reconstruct(self.global_model, rating),
                    v.dataset.user_info,
                    self.cfg.popularity.m,
                    self.cfg.popularity.k,
                    f_c,
                )
            )
        return aggregate_popular(interest_sets, f_c)

    def _pad_popular(self, popular: PopularContents, needed: int, rng: np.random.Generator) -> PopularContents:
        if len(popular) >= needed:
            return popular
        log.warning("popular set has %d contents, padding to %d", len(popular), needed)
        others = np.setdiff1d(np.arange(self.ds.n_contents, dtype=np.int64), popular.ids)
        extra = rng.choice(others, size=needed - len(popular), replace=False)
        return PopularContents(
            ids=np.concatenate([popular.ids, np.sort(extra)]),
            counts=np.concatenate([popular.counts, np.zeros(len(extra), dtype=np.int64)]),
        )

    def _cafr_placement(self, round_r, requests, with_drl: bool, fl_mode: str):
        cfg = self.cfg
        fl_cfg = cfg.fl if cfg.fl.mode == fl_mode else replace(cfg.fl, mode=fl_mode)
        outcome = run_fl_round(
            self.global_model, self.vehicles, cfg.coverage_m, fl_cfg, round_r, self.seed
        )
        self.global_model = outcome.new_global
        f_c = cfg.popularity.f_c or 2 * cfg.capacity
        popular = self._predict_popular(f_c)
        self._dump_popular(round_r, popular)

        drl_rng = rngs.stream(self.seed, rngs.DRL, round_r)
        episodes_to_converge = 0
        if len(popular) == 0:
            log.warning("no popular contents predicted; falling back to random placement")
            cs = random_policy(self.ds.n_contents, cfg.capacity, self.scheme_rng)
            return cs, outcome.round_time_s, episodes_to_converge
        popular = self._pad_popular(popular, 2 * cfg.capacity, drl_rng)
        if not with_drl:
            cs = cafr_no_drl(popular.ids, cfg.capacity, self.scheme_rng, self.ds.n_contents)
            return cs, outcome.round_time_s, episodes_to_converge
        rr = self._round_requests(requests)
        result = run_optimization(popular, rr, cfg.capacity, cfg.drl, drl_rng)
        episodes_to_converge = result.curves.episodes_to_converge()
        self._dump_curves(round_r, result.curves)
        return result.best_state, outcome.round_time_s, episodes_to_converge

    def _round_requests(self, requests) -> RoundRequests:
        rates = {v.id: (v.rate_v2r, v.rate_v2b) for v in self.vehicles}
        return build_round_requests(requests, rates, self.cfg.channel.wired_rate_bps, self.cfg.reward)

    def _place(self, round_r: int, requests) -> tuple[CacheState, float, int]:
        cfg = self.cfg
        if cfg.scheme == "random":
            return random_policy(self.ds.n_contents, cfg.capacity, self.scheme_rng), 0.0, 0
        if cfg.scheme == "ceps":
            return c_eps_greedy(self.scheme_state, cfg.capacity, cfg.scheme_eps, self.scheme_rng), 0.0, 0
        if cfg.scheme == "thompson":
            return thompson_sampling(self.scheme_state, cfg.capacity, self.scheme_rng), 0.0, 0
        if cfg.scheme == "cafr_nodrl":
            return self._cafr_placement(round_r, requests, with_drl=False, fl_mode="async")
        mode = "fedavg" if cfg.scheme == "fedavg_cafr" else cfg.fl.mode
        return self._cafr_placement(round_r, requests, with_drl=True, fl_mode=mode)

    def _serve(self, round_r: int, requests, cs: CacheState) -> list[FetchEvent]:
        rates = {v.id: (v.rate_v2r, v.rate_v2b) for v in self.vehicles}
        return serve_requests(
            round_r, requests, cs, rates, self.cfg.channel.wired_rate_bps, self.cfg.reward.content_bits
        )

    def _dump_popular(self, round_r: int, popular: PopularContents) -> None:
        if self.cfg.popular_csv is None:
            return
        with open(self.cfg.popular_csv, "a") as fh:
            for cid, cnt in zip(popular.ids, popular.counts):
                fh.write(f"{self.seed},{round_r},{cid},{cnt}\n")

    def _dump_curves(self, round_r: int, curves) -> None:
        if self.cfg.drl_curves_csv is None:
            return
        with open(self.cfg.drl_curves_csv, "a") as fh:
            for ep, (rw, hr, ls) in enumerate(
                zip(curves.mean_reward, curves.hit_rate, curves.mean_loss), start=1
            ):
                fh.write(f"{self.seed},{round_r},{ep},{rw:.9g},{hr:.9g},{ls:.9g}\n")

    def run(self) -> list[dict]:
        cfg = self.cfg
        rows = []
        for round_r in range(1, cfg.rounds + 1):
            self.vehicles = self.population.spawn_round(self.mob_rng, self.vehicles)
            self._assign_datasets()
            draw_round_links(self.chan_rng, self.vehicles, cfg.channel, cfg.coverage_m)
            requests = self._collect_requests()
            cs, fl_time, episodes = self._place(round_r, requests)
            events = self._serve(round_r, requests, cs)
            cids = np.array([cid for _, cid in requests], dtype=np.int64)
            if len(cids):
                hit_mask = np.array([e.tier == TIER_LOCAL for e in events], dtype=bool)
                self.scheme_state.note_requests(cids)
                self.scheme_state.note_outcomes(cids, hit_mask)
            n_veh = len(self.vehicles)
            rows.append(
                {
                    "seed": self.seed,
                    "round": round_r,
                    "scheme": cfg.scheme,
                    "capacity": cfg.capacity,
                    "density": cfg.mobility.density if cfg.mobility.density is not None else 0.0,
                    "hit_ratio_pct": cache_hit_ratio(events),
                    "avg_delay_s": avg_transmission_delay(events, n_veh) if n_veh else 0.0,
                    "fl_round_time_s": fl_time,
                    "episodes_to_converge": episodes,
                    "avg_delay_per_request_s": (
                        sum(e.delay_s for e in events) / len(events) if events else 0.0
                    ),
                    "_n_events": len(events),
                    "_n_hits": sum(1 for e in events if e.tier == TIER_LOCAL),
                }
            )
        return rows


def _seed_summary(rows: list[dict]) -> dict:
    total = sum(r["_n_events"] for r in rows)
    hits = sum(r["_n_hits"] for r in rows)
    return {
        "hit_ratio_pct": 100.0 * hits / total if total else 0.0,
        "avg_delay_s": float(np.mean([r["avg_delay_s"] for r in rows])),
        "fl_round_time_s": float(np.mean([r["fl_round_time_s"] for r in rows])),
        "episodes_to_converge": float(np.mean([r["episodes_to_converge"] for r in rows])),
        "avg_delay_per_request_s": float(np.mean([r["avg_delay_per_request_s"] for r in rows])),
    }


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """All seeds of one experiment; per-round rows plus a cross-seed mean row."""
    config.validate()
    rows: list[dict] = []
    summaries = []
    for seed in config.seed_list():
        seed_rows = Simulation(config, seed).run()
        rows.extend(seed_rows)
        summaries.append(_seed_summary(seed_rows))
    mean_row = {
        "seed": "mean",
        "round": "all",
        "scheme": config.scheme,
        "capacity": config.capacity,
        "density": config.mobility.density if config.mobility.density is not None else 0.0,
        "_n_events": sum(r["_n_events"] for r in rows),
        "_n_hits": sum(r["_n_hits"] for r in rows),
    }
    for key in ("hit_ratio_pct", "avg_delay_s", "fl_round_time_s", "episodes_to_converge", "avg_delay_per_request_s"):
        mean_row[key] = float(np.mean([s[key] for s in summaries]))
    rows.append(mean_row)
    return rows


def run_sweep(config: ExperimentConfig, param: str, values: list) -> list[dict]:
    """Repeat the experiment across one swept parameter."""
    rows = []
    for value in values:
        if param == "capacity":
            cfg = replace(config, capacity=int(value))
        elif param == "density":
            cfg = replace(config, mobility=replace(config.mobility, density=float(value), arrival_rate=None))
        elif param == "rounds":
            cfg = replace(config, rounds=int(value))
        else:
            raise ValueError(f"cannot sweep parameter {param!r}")
        rows.extend(run_experiment(cfg))
    return rows


def _format(value) -> str:
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def write_csv(rows: list[dict], path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format(row[c]) for c in CSV_COLUMNS) + "\n")
