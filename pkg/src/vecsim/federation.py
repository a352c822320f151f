"""One federated round: selection, local training, asynchronous aggregation.

Async mode aggregates only the first-arriving local model, weighted by data
share and a mobility/rate coefficient; everyone else becomes a straggler and
carries their last local gradient into the next round. FedAVG mode waits for
all participants and takes the data-weighted average.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vecsim import rngs
from vecsim.autoencoder import AEModel, TrainConfig, check_shapes, vehicle_update
from vecsim.mobility import VehicleState, select_participants

log = logging.getLogger(__name__)


@dataclass
class FlConfig:
    mode: str = "async"  # or "fedavg"
    mu1: float = 0.5  # remaining-distance weight
    mu2: float = 0.5  # channel-rate weight
    aggregation: str = "convex"  # or "literal": additive update exactly as printed
    hidden_dim: int = 16
    t_training_s: float = 2.0
    t_inference_s: float = 0.5
    model_bits_per_param: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> None:
        if self.mode not in ("async", "fedavg"):
            raise ValueError(f"unknown FL mode {self.mode!r}")
        if self.aggregation not in ("convex", "literal"):
            raise ValueError(f"unknown aggregation mode {self.aggregation!r}")
        if abs(self.mu1 + self.mu2 - 1.0) > 1e-9:
            raise ValueError("mu1 + mu2 must equal 1")
        self.train.validate()


@dataclass
class RoundOutcome:
    new_global: AEModel
    mode: str
    participant_ids: list[int]
    winner_id: Optional[int] = None
    straggler_ids: list[int] = field(default_factory=list)
    chi: Optional[float] = None
    d_winner: int = 0
    d_total: int = 0
    round_time_s: float = 0.0
    completion_times: dict[int, float] = field(default_factory=dict)


def aggregation_weight(
    v: VehicleState,
    rates: Sequence[float],
    coverage_m: float,
    mu1: float,
    mu2: float,
) -> float:
    """Blend of normalized remaining distance and normalized V2R rate, in [0, 1]."""
    if abs(mu1 + mu2 - 1.0) > 1e-9:
        raise ValueError("mu1 + mu2 must equal 1")
    if len(rates) == 0:
        raise ValueError("rates must be nonempty")
    max_rate = max(rates)
    if max_rate <= 0:
        raise ValueError("max V2R rate is zero; cannot normalize")
    return mu1 * (coverage_m - v.position) / coverage_m + mu2 * v.rate_v2r / max_rate


def async_aggregate(
    global_prev: AEModel,
    local: AEModel,
    d_i: float,
    d: float,
    chi: float,
    mode: str = "convex",
) -> AEModel:
    """Fold one local model into the global one with weight (d_i/d) * chi.

    Convex mode interpolates, so parameters stay bounded; literal mode adds
    the weighted local model onto the previous global.
    """
    check_shapes(global_prev, local)
    if not 0 < d_i <= d:
        raise ValueError(f"need 0 < d_i <= d, got d_i={d_i}, d={d}")
    if not 0.0 <= chi <= 1.0:
        raise ValueError(f"chi must be in [0, 1], got {chi}")
    gamma = (d_i / d) * chi
    if mode == "convex":
        return AEModel(*((1.0 - gamma) * g + gamma * l for g, l in zip(global_prev.blocks(), local.blocks())))
    if mode == "literal":
        return AEModel(*(g + gamma * l for g, l in zip(global_prev.blocks(), local.blocks())))
    raise ValueError(f"unknown aggregation mode {mode!r}")


def fedavg_aggregate(locals_: Sequence[tuple[AEModel, float]]) -> AEModel:
    """Data-size-weighted average of local models."""
    if len(locals_) == 0:
        raise ValueError("no local models to aggregate")
    d = sum(w for _, w in locals_)
    if d <= 0:
        raise ValueError("total data size must be positive")
    first = locals_[0][0]
    acc = [np.zeros_like(b) for b in first.blocks()]
    for model, w in locals_:
        check_shapes(first, model)
        for a, b in zip(acc, model.blocks()):
            a += (w / d) * b
    return AEModel(*acc)


def completion_time(
    d_i: float,
    mean_d: float,
    rate_v2r: float,
    model_bits: float,
    t_training_s: float,
    rng: np.random.Generator,
) -> float:
    """Training time proportional to data share, plus jitter and model upload."""
    jitter = rng.uniform(0.0, 0.1 * t_training_s)
    upload = model_bits / rate_v2r if rate_v2r > 0 else float("inf")
    return t_training_s * (d_i / mean_d) + jitter + upload


def run_fl_round(
    global_model: AEModel,
    vehicles: list[VehicleState],
    coverage_m: float,
    cfg: FlConfig,
    round_r: int,
    seed: int,
) -> RoundOutcome:
    """Train all eligible vehicles and aggregate per the configured mode.

    Vehicle trainings and their completion clocks depend only on
    (seed, round, vehicle id), not on the mode, so async and fedavg runs of
    the same experiment see identical per-vehicle times.
    """
    cfg.validate()
    eligible = select_participants(vehicles, coverage_m, cfg.t_training_s, cfg.t_inference_s)
    participants = []
    for v in sorted(eligible, key=lambda v: v.id):
        if v.dataset is None or v.dataset.n_train == 0:
            log.warning("vehicle %d selected but has no training data; skipped", v.id)
            continue
        participants.append(v)
    if not participants:
        log.info("round %d: no eligible vehicles; global model unchanged", round_r)
        return RoundOutcome(new_global=global_model, mode=cfg.mode, participant_ids=[])

    sizes = {v.id: v.dataset.n_train for v in participants}
    d_total = sum(sizes.values())
    mean_d = d_total / len(participants)
    model_bits = global_model.n_params * cfg.model_bits_per_param

    trained: dict[int, AEModel] = {}
    last_grads = {}
    times = {}
    for v in participants:
        rng_v = rngs.stream(seed, rngs.TRAINING, round_r, v.id)
        trained[v.id], last_grads[v.id] = vehicle_update(
            global_model, v.dataset.train_matrix(), cfg.train, round_r, rng_v, v.delayed_gradient
        )
        times[v.id] = completion_time(
            sizes[v.id], mean_d, v.rate_v2r, model_bits, cfg.t_training_s, rng_v
        )

    ids = [v.id for v in participants]
    if cfg.mode == "fedavg":
        new_global = fedavg_aggregate([(trained[i], sizes[i]) for i in ids])
        return RoundOutcome(
            new_global=new_global,
            mode="fedavg",
            participant_ids=ids,
            d_total=d_total,
            round_time_s=max(times.values()),
            completion_times=times,
        )

    winner = min(participants, key=lambda v: (times[v.id], v.id))
    rates = [v.rate_v2r for v in participants]
    chi = aggregation_weight(winner, rates, coverage_m, cfg.mu1, cfg.mu2)
    new_global = async_aggregate(
        global_model, trained[winner.id], sizes[winner.id], d_total, chi, cfg.aggregation
    )
    stragglers = []
    for v in participants:
        if v.id == winner.id:
            v.delayed_gradient = None  # upload succeeded
        else:
            v.delayed_gradient = last_grads[v.id]
            stragglers.append(v.id)
    return RoundOutcome(
        new_global=new_global,
        mode="async",
        participant_ids=ids,
        winner_id=winner.id,
        straggler_ids=stragglers,
        chi=chi,
        d_winner=sizes[winner.id],
        d_total=d_total,
        round_time_s=times[winner.id],
        completion_times=times,
    )
