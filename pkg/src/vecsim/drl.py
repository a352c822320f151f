"""Dueling deep-Q cache placement over the predicted popular contents.

State is the local cache ordered by predicted popularity; the binary action
swaps the least popular cached contents for random uncached popular ones.
Rewards score every recorded request by an exponentially weighted fetch
delay (local / neighbor / macro-cell tiers). The small dueling network and
its training step are plain numpy.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vecsim.popularity import PopularContents

log = logging.getLogger(__name__)

TIER_LOCAL = "local"
TIER_NEIGHBOR = "neighbor"
TIER_MBS = "mbs"


@dataclass
class RewardParams:
    """Delay weights per fetch tier plus the content size on the wire."""

    lambda1: float = 0.0001  # local tier
    lambda2: float = 0.4  # neighbor tier
    lambda3: float = 0.5999  # macro-cell tier
    content_bits: float = 800.0  # 100-byte contents

    def validate(self) -> None:
        if abs(self.lambda1 + self.lambda2 + self.lambda3 - 1.0) > 1e-9:
            raise ValueError("tier weights must sum to 1")
        if self.content_bits <= 0:
            raise ValueError("content size must be positive")


@dataclass(frozen=True)
class CacheState:
    """Local cache as a popularity-ordered tuple plus the neighbor's set."""

    local: tuple[int, ...]
    neighbor: frozenset[int]

    def tier_of(self, content_id: int) -> str:
        if content_id in self.local:
            return TIER_LOCAL
        if content_id in self.neighbor:
            return TIER_NEIGHBOR
        return TIER_MBS


@dataclass
class ReplayTuple:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray


class ReplayBuffer:
    """FIFO transition store with bounded capacity."""

    def __init__(self, capacity: int):
        self._buf: deque[ReplayTuple] = deque(maxlen=capacity)

    def add(self, t: ReplayTuple) -> None:
        self._buf.append(t)

    def sample(self, rng: np.random.Generator, k: int) -> list[ReplayTuple]:
        idx = rng.choice(len(self._buf), size=k, replace=False)
        return [self._buf[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self._buf)


@dataclass
class DuelingNet:
    """Shared feature layer with separate state-value and advantage heads."""

    w1: np.ndarray  # hidden x input
    b1: np.ndarray
    w_v: np.ndarray  # hidden -> scalar state value
    b_v: float
    w_a: np.ndarray  # 2 x hidden advantage head
    b_a: np.ndarray

    def copy(self) -> "DuelingNet":
        return DuelingNet(
            self.w1.copy(), self.b1.copy(), self.w_v.copy(), float(self.b_v), self.w_a.copy(), self.b_a.copy()
        )

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w_v, self.w_a, self.b_a)


def init_net(rng: np.random.Generator, input_dim: int, hidden_dim: int = 64) -> DuelingNet:
    b_in = 1.0 / math.sqrt(input_dim)
    b_hid = 1.0 / math.sqrt(hidden_dim)
    return DuelingNet(
        w1=rng.uniform(-b_in, b_in, size=(hidden_dim, input_dim)),
        b1=rng.uniform(-b_in, b_in, size=hidden_dim),
        w_v=rng.uniform(-b_hid, b_hid, size=hidden_dim),
        b_v=float(rng.uniform(-b_hid, b_hid)),
        w_a=rng.uniform(-b_hid, b_hid, size=(2, hidden_dim)),
        b_a=rng.uniform(-b_hid, b_hid, size=2),
    )


@dataclass
class DqnConfig:
    replay_capacity: int = 10000
    minibatch: int = 32
    gamma: float = 0.99
    lr: float = 0.01
    target_sync: int = 20  # slots between target-network copies
    episodes: int = 20
    slots: int = 100
    swap_n: Optional[int] = None  # default max(1, c // 10)
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5  # fraction of total slots spent decaying
    hidden_dim: int = 64
    # Bellman targets are divided by this before the squared loss; None picks
    # the round's request count so targets stay O(1) at any workload size.
    # Pure scaling of Q, so greedy actions are unchanged.
    reward_scale: Optional[float] = None

    def validate(self, capacity: int) -> None:
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("discount must be in [0, 1)")
        n = self.effective_swap(capacity)
        if not 1 <= n < capacity:
            raise ValueError(f"swap size must satisfy 1 <= n < c, got n={n}, c={capacity}")

    def effective_swap(self, capacity: int) -> int:
        return self.swap_n if self.swap_n is not None else max(1, capacity // 10)


@dataclass
class RoundRequests:
    """The round's recorded requests with per-tier delays and reward terms."""

    vehicle_ids: np.ndarray
    content_ids: np.ndarray
    delay_local: np.ndarray
    delay_neighbor: np.ndarray
    delay_mbs: np.ndarray
    reward_local: np.ndarray
    reward_neighbor: np.ndarray
    reward_mbs: np.ndarray

    @property
    def n(self) -> int:
        return len(self.content_ids)


def tier_delays(rate_v2r: float, rate_v2b: float, wired_rate_bps: float, content_bits: float):
    """Fetch delay of one content for each tier; zero rates give inf."""
    d_local = content_bits / rate_v2r if rate_v2r > 0 else float("inf")
    d_wired = content_bits / wired_rate_bps if wired_rate_bps > 0 else float("inf")
    d_mbs = content_bits / rate_v2b if rate_v2b > 0 else float("inf")
    if not all(map(math.isfinite, (d_local, d_wired, d_mbs))):
        log.warning("zero link rate; treating the fetch as infinitely slow")
    return d_local, d_local + d_wired, d_mbs


def transmission_delay(
    content_id: int,
    cs: CacheState,
    rate_v2r: float,
    rate_v2b: float,
    wired_rate_bps: float,
    content_bits: float,
) -> tuple[float, str]:
    """Delay and tier for fetching one content under the given placement."""
    d_local, d_neighbor, d_mbs = tier_delays(rate_v2r, rate_v2b, wired_rate_bps, content_bits)
    tier = cs.tier_of(content_id)
    if tier == TIER_LOCAL:
        return d_local, TIER_LOCAL
    if tier == TIER_NEIGHBOR:
        return d_neighbor, TIER_NEIGHBOR
    return d_mbs, TIER_MBS


def request_reward(d_local: float, d_neighbor: float, d_mbs: float, tier: str, p: RewardParams) -> float:
    """Exponential delay score of a single request at its fetch tier."""
    if tier == TIER_LOCAL:
        return math.exp(-p.lambda1 * d_local)
    if tier == TIER_NEIGHBOR:
        return math.exp(-(p.lambda1 * d_local + p.lambda2 * d_neighbor))
    return math.exp(-p.lambda3 * d_mbs)


def build_round_requests(
    requests: Sequence[tuple[int, int]],
    rates: dict[int, tuple[float, float]],
    wired_rate_bps: float,
    params: RewardParams,
) -> RoundRequests:
    """Precompute per-request tier delays and reward terms for the round."""
    params.validate()
    vids = np.array([v for v, _ in requests], dtype=np.int64)
    cids = np.array([c for _, c in requests], dtype=np.int64)
    d_l = np.empty(len(requests))
    d_n = np.empty(len(requests))
    d_m = np.empty(len(requests))
    for i, vid in enumerate(vids):
        r_v2r, r_v2b = rates[int(vid)]
        d_l[i], d_n[i], d_m[i] = tier_delays(r_v2r, r_v2b, wired_rate_bps, params.content_bits)
    return RoundRequests(
        vehicle_ids=vids,
        content_ids=cids,
        delay_local=d_l,
        delay_neighbor=d_n,
        delay_mbs=d_m,
        reward_local=np.exp(-params.lambda1 * d_l),
        reward_neighbor=np.exp(-(params.lambda1 * d_l + params.lambda2 * d_n)),
        reward_mbs=np.exp(-params.lambda3 * d_m),
    )


def slot_reward(cs: CacheState, rr: RoundRequests) -> float:
    """Sum of per-request rewards under the placement cs."""
    in_local = np.isin(rr.content_ids, np.fromiter(cs.local, dtype=np.int64, count=len(cs.local)))
    in_neighbor = np.isin(rr.content_ids, np.fromiter(cs.neighbor, dtype=np.int64, count=len(cs.neighbor)))
    terms = np.where(in_local, rr.reward_local, np.where(in_neighbor, rr.reward_neighbor, rr.reward_mbs))
    return float(terms.sum())


def hit_fraction(cs: CacheState, rr: RoundRequests) -> float:
    if rr.n == 0:
        return 0.0
    in_local = np.isin(rr.content_ids, np.fromiter(cs.local, dtype=np.int64, count=len(cs.local)))
    return float(in_local.mean())


def encode_state(cs: CacheState, popular: PopularContents) -> np.ndarray:
    """Normalized popularity ranks of the cached contents, in slot order."""
    ranks = popular.ranks()
    denom = max(len(popular) - 1, 1)
    return np.array([ranks[c] / denom for c in cs.local], dtype=float)


def _net_forward(net: DuelingNet, s: np.ndarray):
    s2 = np.atleast_2d(np.asarray(s, dtype=float))
    if s2.shape[1] != net.w1.shape[1]:
        raise ValueError(f"state dim {s2.shape[1]} != network input dim {net.w1.shape[1]}")
    h = np.tanh(s2 @ net.w1.T + net.b1)
    v = h @ net.w_v + net.b_v
    adv = h @ net.w_a.T + net.b_a
    q = v[:, None] + adv - adv.mean(axis=1, keepdims=True)
    return h, v, adv, q


def q_values(net: DuelingNet, s_enc: np.ndarray) -> np.ndarray:
    """Dueling combination V + (A - mean A) for both actions."""
    _, _, _, q = _net_forward(net, s_enc)
    return q[0]


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator, slot_t: int) -> int:
    """Epsilon-greedy over two actions; slot 1 of an episode always swaps."""
    if slot_t == 1:
        return 1
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(0, 2))
    return 1 if q[1] >= q[0] else 0


def apply_action(
    cs: CacheState,
    action: int,
    popular: PopularContents,
    n: int,
    rng: np.random.Generator,
) -> CacheState:
    """Swap the n least popular local contents (action 1) and redraw the neighbor."""
    ranks = popular.ranks()
    local = list(cs.local)
    if action == 1:
        pool = np.array([c for c in popular.ids if c not in set(local)], dtype=np.int64)
        n_swap = min(n, len(pool))
        if n_swap < n:
            log.warning("only %d uncached popular contents available; swapping %d", len(pool), n_swap)
        if n_swap > 0:
            incoming = rng.choice(pool, size=n_swap, replace=False)
            local = local[: len(local) - n_swap] + [int(c) for c in incoming]
            local.sort(key=lambda c: ranks[c])
    local_set = set(local)
    rest = np.array([c for c in popular.ids if c not in local_set], dtype=np.int64)
    neighbor = rng.choice(rest, size=min(len(local), len(rest)), replace=False)
    return CacheState(local=tuple(local), neighbor=frozenset(int(c) for c in neighbor))


def target_q(target_net: DuelingNet, s_next_enc: np.ndarray, r: float, gamma: float) -> float:
    return float(r + gamma * np.max(q_values(target_net, s_next_enc)))


def train_step(
    net: DuelingNet,
    target_net: DuelingNet,
    batch: list[ReplayTuple],
    cfg: DqnConfig,
    reward_scale: float = 1.0,
) -> float:
    """One SGD step on the squared target error; returns the pre-update loss."""
    n = len(batch)
    if n != cfg.minibatch:
        raise ValueError(f"batch size {n} != configured minibatch {cfg.minibatch}")
    s = np.stack([t.s for t in batch])
    s_next = np.stack([t.s_next for t in batch])
    actions = np.array([t.a for t in batch], dtype=np.int64)
    rewards = np.array([t.r for t in batch]) / reward_scale

    _, _, _, q_next = _net_forward(target_net, s_next)
    y = rewards + cfg.gamma * q_next.max(axis=1)

    h, _, _, q = _net_forward(net, s)
    q_sel = q[np.arange(n), actions]
    diff = y - q_sel
    loss = float(np.mean(diff**2))

    d_qsel = -2.0 * diff / n  # dL/dQ(s_i, a_i)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), actions] = 1.0
    d_adv = d_qsel[:, None] * (onehot - 0.5)
    d_v = d_qsel
    g_w_a = d_adv.T @ h
    g_b_a = d_adv.sum(axis=0)
    g_w_v = h.T @ d_v
    g_b_v = d_v.sum()
    d_h = d_v[:, None] * net.w_v[None, :] + d_adv @ net.w_a
    d_pre = d_h * (1.0 - h**2)
    g_w1 = d_pre.T @ s
    g_b1 = d_pre.sum(axis=0)

    net.w1 -= cfg.lr * g_w1
    net.b1 -= cfg.lr * g_b1
    net.w_v -= cfg.lr * g_w_v
    net.b_v -= cfg.lr * g_b_v
    net.w_a -= cfg.lr * g_w_a
    net.b_a -= cfg.lr * g_b_a
    return loss


@dataclass
class EpisodeCurves:
    """Per-episode training diagnostics from one optimization run."""

    mean_reward: np.ndarray
    hit_rate: np.ndarray
    mean_loss: np.ndarray

    def smoothed_reward(self, window: int = 3) -> np.ndarray:
        out = np.empty_like(self.mean_reward)
        for i in range(len(out)):
            lo = max(0, i - window + 1)
            out[i] = self.mean_reward[lo : i + 1].mean()
        return out

    def episodes_to_converge(self, window: int = 3, frac: float = 0.95) -> int:
        """First episode whose smoothed reward reaches frac of the final value."""
        if len(self.mean_reward) == 0:
            return 0
        sm = self.smoothed_reward(window)
        threshold = frac * sm[-1]
        hits = np.flatnonzero(sm >= threshold)
        return int(hits[0]) + 1 if len(hits) else len(sm)


@dataclass
class OptimizationResult:
    best_state: CacheState
    best_reward: float
    curves: EpisodeCurves


def _random_cache(popular: PopularContents, c: int, rng: np.random.Generator) -> CacheState:
    ranks = popular.ranks()
    local = sorted((int(x) for x in rng.choice(popular.ids, size=c, replace=False)), key=ranks.get)
    rest = np.array([x for x in popular.ids if x not in set(local)], dtype=np.int64)
    neighbor = rng.choice(rest, size=c, replace=False)
    return CacheState(local=tuple(local), neighbor=frozenset(int(x) for x in neighbor))


def run_optimization(
    popular: PopularContents,
    rr: RoundRequests,
    capacity: int,
    cfg: DqnConfig,
    rng: np.random.Generator,
) -> OptimizationResult:
    """Episode/slot training loop; returns the best-reward placement seen.

    Each episode restarts from a random placement. Per slot: act
    epsilon-greedily, swap caches, score the round's recorded requests,
    store the transition, and train on a replay minibatch once the buffer
    holds more than minibatch tuples. The target network is refreshed every
    target_sync slots (cumulative count).
    """
    if len(popular) < 2 * capacity:
        raise ValueError(f"need at least 2c={2 * capacity} popular contents, got {len(popular)}")
    cfg.validate(capacity)
    swap = cfg.effective_swap(capacity)

    net = init_net(rng, input_dim=capacity, hidden_dim=cfg.hidden_dim)
    target = net.copy()
    buffer = ReplayBuffer(cfg.replay_capacity)
    total_slots = cfg.episodes * cfg.slots
    decay_slots = max(1, int(cfg.eps_decay_frac * total_slots))
    scale = cfg.reward_scale if cfg.reward_scale is not None else max(1.0, float(rr.n))

    best_reward = -math.inf
    best_state: Optional[CacheState] = None
    ep_rewards, ep_hits, ep_losses = [], [], []
    global_slot = 0

    for _ in range(cfg.episodes):
        cs = _random_cache(popular, capacity, rng)
        rewards, hits, losses = [], [], []
        for t in range(1, cfg.slots + 1):
            eps = max(
                cfg.eps_end,
                cfg.eps_start - (cfg.eps_start - cfg.eps_end) * global_slot / decay_slots,
            )
            s_enc = encode_state(cs, popular)
            a = select_action(q_values(net, s_enc), eps, rng, t)
            cs_next = apply_action(cs, a, popular, swap, rng)
            r = slot_reward(cs_next, rr)
            buffer.add(ReplayTuple(s_enc, a, r, encode_state(cs_next, popular)))
            if r > best_reward:
                best_reward = r
                best_state = cs_next
            if len(buffer) > cfg.minibatch:
                losses.append(train_step(net, target, buffer.sample(rng, cfg.minibatch), cfg, scale))
            global_slot += 1
            if global_slot % cfg.target_sync == 0:
                target = net.copy()
            rewards.append(r)
            hits.append(hit_fraction(cs_next, rr))
            cs = cs_next
        ep_rewards.append(float(np.mean(rewards)))
        ep_hits.append(float(np.mean(hits)))
        ep_losses.append(float(np.mean(losses)) if losses else 0.0)

    curves = EpisodeCurves(np.array(ep_rewards), np.array(ep_hits), np.array(ep_losses))
    return OptimizationResult(best_state=best_state, best_reward=best_reward, curves=curves)
