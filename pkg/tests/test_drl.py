import itertools
import math

import numpy as np
import pytest

from vecsim.drl import (
    CacheState,
    DqnConfig,
    DuelingNet,
    ReplayBuffer,
    ReplayTuple,
    RewardParams,
    apply_action,
    build_round_requests,
    encode_state,
    hit_fraction,
    init_net,
    q_values,
    run_optimization,
    select_action,
    slot_reward,
    target_q,
    train_step,
    transmission_delay,
)
from vecsim.popularity import PopularContents


def popular6():
    return PopularContents(ids=np.arange(6, dtype=np.int64), counts=np.array([10, 9, 8, 7, 6, 5]))


def toy_requests():
    """Four vehicles on slow links; requests pile onto contents 0 and 1."""
    contents = [0] * 6 + [1] * 5 + [2, 3]
    requests = [(i % 4, c) for i, c in enumerate(contents)]
    rates = {v: (800.0, 400.0) for v in range(4)}  # 1 s local, 2 s macro-cell
    return build_round_requests(requests, rates, 15e6, RewardParams())


def flat_net(b_v=0.0, b_a=(0.0, 0.0), input_dim=2, hidden=4):
    """Zero feature layer: V and A come straight from the head biases."""
    return DuelingNet(
        w1=np.zeros((hidden, input_dim)),
        b1=np.zeros(hidden),
        w_v=np.zeros(hidden),
        b_v=float(b_v),
        w_a=np.zeros((2, hidden)),
        b_a=np.asarray(b_a, dtype=float),
    )


def test_encode_state_identity_placement():
    pop = popular6()
    cs = CacheState(local=(0, 1), neighbor=frozenset({2, 3}))
    np.testing.assert_allclose(encode_state(cs, pop), [0.0, 1.0 / 5.0])
    cs2 = CacheState(local=(0, 1), neighbor=frozenset({4, 5}))
    np.testing.assert_array_equal(encode_state(cs, pop), encode_state(cs2, pop))
    assert len(encode_state(cs, pop)) == 2


def test_q_values_dueling_combination():
    q = q_values(flat_net(b_v=2.0, b_a=(1.0, 3.0)), np.zeros(2))
    np.testing.assert_allclose(q, [1.0, 3.0])  # V + A - mean(A)


def test_q_values_equal_advantages_collapse_to_v():
    q = q_values(flat_net(b_v=0.7, b_a=(0.3, 0.3)), np.zeros(2))
    np.testing.assert_allclose(q, [0.7, 0.7])


def test_q_values_invariant_to_advantage_shift(rng):
    net = init_net(rng, 3, 8)
    s = rng.normal(size=3)
    before = q_values(net, s)
    net.b_a += 5.0
    np.testing.assert_allclose(q_values(net, s), before, atol=1e-12)


def test_select_action_greedy_and_forced(rng):
    assert select_action(np.array([0.2, 0.9]), 0.0, rng, slot_t=5) == 1
    assert select_action(np.array([0.9, 0.2]), 0.0, rng, slot_t=5) == 0
    assert select_action(np.array([0.5, 0.5]), 0.0, rng, slot_t=5) == 1  # tie -> swap
    assert select_action(np.array([9.0, 0.0]), 0.0, rng, slot_t=1) == 1  # forced at slot 1


def test_select_action_uniform_when_exploring():
    rng = np.random.default_rng(0)
    draws = [select_action(np.array([1.0, 0.0]), 1.0, rng, slot_t=5) for _ in range(10_000)]
    assert abs(np.mean(draws) - 0.5) < 0.02


def test_apply_action_keep():
    rng = np.random.default_rng(0)
    cs = CacheState(local=(0, 1, 2), neighbor=frozenset({3, 4}))
    out = apply_action(cs, 0, popular6(), 1, rng)
    assert out.local == cs.local
    assert out.neighbor.isdisjoint(set(out.local))


def test_apply_action_swaps_lowest_ranked():
    pop = popular6()
    rng = np.random.default_rng(0)
    cs = CacheState(local=(0, 1, 2), neighbor=frozenset({3, 4, 5}))
    for _ in range(20):
        out = apply_action(cs, 1, pop, 1, rng)
        assert out.local[:2] == (0, 1)  # keeps the two most popular
        assert out.local[2] in {3, 4, 5}
        assert len(out.local) == 3
        assert len(out.neighbor) == 3
        assert out.neighbor.isdisjoint(set(out.local))
        ranks = pop.ranks()
        assert [ranks[c] for c in out.local] == sorted(ranks[c] for c in out.local)


def test_apply_action_swap_capped_by_pool(caplog):
    pop = PopularContents(ids=np.arange(4, dtype=np.int64), counts=np.array([4, 3, 2, 1]))
    cs = CacheState(local=(0, 1, 2), neighbor=frozenset({3}))
    with caplog.at_level("WARNING"):
        out = apply_action(cs, 1, pop, 2, np.random.default_rng(0))
    assert "swapping" in caplog.text
    assert len(out.local) == 3


def test_transmission_delay_tiers():
    cs = CacheState(local=(1,), neighbor=frozenset({2}))
    # 800 bits at 800 bit/s -> exactly 1 s on the local tier
    d, tier = transmission_delay(1, cs, 800.0, 400.0, 15e6, 800.0)
    assert (d, tier) == (1.0, "local")
    d_n, tier = transmission_delay(2, cs, 800.0, 400.0, 15e6, 800.0)
    assert tier == "neighbor"
    assert d_n - 1.0 == pytest.approx(800.0 / 15e6)  # wired hop: 5.333e-5 s
    assert d_n > 1.0  # neighbor strictly slower than local
    d_m, tier = transmission_delay(3, cs, 800.0, 400.0, 15e6, 800.0)
    assert (d_m, tier) == (2.0, "mbs")


def test_transmission_delay_zero_rate_sentinel(caplog):
    cs = CacheState(local=(1,), neighbor=frozenset())
    with caplog.at_level("WARNING"):
        d, _ = transmission_delay(1, cs, 0.0, 400.0, 15e6, 800.0)
    assert math.isinf(d)
    assert "zero link rate" in caplog.text


def test_slot_reward_zero_delays_counts_requests():
    requests = [(0, 1), (0, 2), (1, 3)]
    rates = {0: (float("inf"), float("inf")), 1: (float("inf"), float("inf"))}
    rr = build_round_requests(requests, rates, float("inf"), RewardParams())
    cs = CacheState(local=(1,), neighbor=frozenset({2}))
    assert slot_reward(cs, rr) == pytest.approx(3.0)


def test_slot_reward_single_mbs_request():
    rr = build_round_requests([(0, 7)], {0: (800.0, 800.0)}, 15e6, RewardParams())
    cs = CacheState(local=(1,), neighbor=frozenset({2}))
    assert slot_reward(cs, rr) == pytest.approx(math.exp(-0.5999))


def test_slot_reward_local_beats_mbs(rng):
    # promoting a requested content to the local cache never lowers the reward
    for _ in range(50):
        r_v2r = rng.uniform(500, 5000)
        r_v2b = rng.uniform(100, r_v2r)  # macro-cell no faster than the local link
        rr = build_round_requests([(0, 9)], {0: (r_v2r, r_v2b)}, 15e6, RewardParams())
        without = slot_reward(CacheState(local=(1,), neighbor=frozenset()), rr)
        with_local = slot_reward(CacheState(local=(9,), neighbor=frozenset()), rr)
        assert with_local >= without


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(lambda1=0.5, lambda2=0.5, lambda3=0.5).validate()
    with pytest.raises(ValueError):
        RewardParams(content_bits=0.0).validate()


def test_target_q_arithmetic():
    tnet = flat_net(b_v=1.0)
    assert target_q(tnet, np.zeros(2), 0.5, 0.99) == pytest.approx(1.49)
    assert target_q(tnet, np.zeros(2), 0.5, 0.0) == pytest.approx(0.5)


def test_train_step_fixed_point(rng):
    net = init_net(rng, 2, 4)
    frozen = net.copy()
    cfg = DqnConfig(minibatch=3, gamma=0.0, lr=0.1)
    batch = []
    for _ in range(3):
        s = rng.normal(size=2)
        a = int(rng.integers(0, 2))
        r = float(q_values(net, s)[a])  # y == Q exactly when gamma == 0
        batch.append(ReplayTuple(s, a, r, rng.normal(size=2)))
    loss = train_step(net, net.copy(), batch, cfg)
    assert loss == pytest.approx(0.0, abs=1e-24)
    for a, b in zip(net.params(), frozen.params()):
        np.testing.assert_allclose(a, b, atol=1e-15)


def test_train_step_single_tuple_loss():
    net = flat_net(b_v=1.0, b_a=(0.0, 0.0))
    cfg = DqnConfig(minibatch=1, gamma=0.0, lr=0.0)
    batch = [ReplayTuple(np.zeros(2), 0, 1.49, np.zeros(2))]
    assert train_step(net, net.copy(), batch, cfg) == pytest.approx(0.2401)


def test_train_step_gradient_matches_finite_differences():
    for trial in range(20):
        rng = np.random.default_rng(300 + trial)
        dim, hidden, batch_n = int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(1, 5))
        net = init_net(rng, dim, hidden)
        tnet = init_net(rng, dim, hidden)
        cfg = DqnConfig(minibatch=batch_n, gamma=0.9, lr=1.0)
        batch = [
            ReplayTuple(rng.normal(size=dim), int(rng.integers(0, 2)), float(rng.normal()), rng.normal(size=dim))
            for _ in range(batch_n)
        ]
        s = np.stack([t.s for t in batch])
        acts = np.array([t.a for t in batch])
        y = np.array([target_q(tnet, t.s_next, t.r, cfg.gamma) for t in batch])

        def loss_fn():
            q = np.array([q_values(net, row) for row in s])
            return float(np.mean((y - q[np.arange(batch_n), acts]) ** 2))

        before = [p.copy() for p in (net.w1, net.b1, net.w_v, np.array([net.b_v]), net.w_a, net.b_a)]
        train_step(net, tnet, batch, cfg)
        after = [net.w1, net.b1, net.w_v, np.array([net.b_v]), net.w_a, net.b_a]
        analytic = [(b - a) / cfg.lr for b, a in zip(before, after)]  # lr=1: grad = old - new

        # finite differences on every parameter block
        net.w1, net.b1, net.w_v, net.w_a, net.b_a = (b.copy() for b in (before[0], before[1], before[2], before[4], before[5]))
        net.b_v = float(before[3][0])
        arrays = [net.w1, net.b1, net.w_v, net.w_a, net.b_a]
        h = 1e-6
        for arr, ana in zip(arrays, [analytic[0], analytic[1], analytic[2], analytic[4], analytic[5]]):
            flat = arr.ravel()
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn()
                flat[i] = orig - h
                fm = loss_fn()
                flat[i] = orig
                fd[i] = (fp - fm) / (2 * h)
            denom = max(np.linalg.norm(ana.ravel()), np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(ana.ravel() - fd) / denom < 1e-4
        # scalar bias of the value head
        orig = net.b_v
        net.b_v = orig + h
        fp = loss_fn()
        net.b_v = orig - h
        fm = loss_fn()
        net.b_v = orig
        fd_bv = (fp - fm) / (2 * h)
        assert abs(analytic[3][0] - fd_bv) / max(abs(fd_bv), 1e-12) < 1e-4


def test_replay_buffer_fifo_and_capacity():
    buf = ReplayBuffer(5)
    for i in range(8):
        buf.add(ReplayTuple(np.array([i]), 0, float(i), np.array([i])))
    assert len(buf) == 5
    sampled = buf.sample(np.random.default_rng(0), 5)
    assert sorted(t.r for t in sampled) == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_target_sync_mechanics(rng):
    net = init_net(rng, 2, 4)
    target = net.copy()
    for a, b in zip(net.params(), target.params()):
        np.testing.assert_array_equal(a, b)
    batch = [ReplayTuple(rng.normal(size=2), 1, 1.0, rng.normal(size=2))]
    train_step(net, target, batch, DqnConfig(minibatch=1, gamma=0.9, lr=0.1))
    assert any(not np.array_equal(a, b) for a, b in zip(net.params(), target.params()))
    target = net.copy()
    for a, b in zip(net.params(), target.params()):
        np.testing.assert_array_equal(a, b)


def brute_force_optimum(rr, popular, c):
    """Enumerate every (local, neighbor) placement and score it."""
    best = -math.inf
    for local in itertools.combinations(popular.ids.tolist(), c):
        rest = [x for x in popular.ids.tolist() if x not in local]
        for neighbor in itertools.combinations(rest, c):
            r = slot_reward(CacheState(local=tuple(local), neighbor=frozenset(neighbor)), rr)
            best = max(best, r)
    return best


def test_run_optimization_reaches_toy_optimum():
    rr = toy_requests()
    pop = popular6()
    optimum = brute_force_optimum(rr, pop, 2)
    cfg = DqnConfig(episodes=20, slots=50, minibatch=16, target_sync=20, hidden_dim=16)
    result = run_optimization(pop, rr, 2, cfg, np.random.default_rng(7))
    assert result.best_reward >= 0.95 * optimum
    assert set(result.best_state.local) == {0, 1}  # the two heavily requested contents
    assert result.best_reward <= rr.n  # rewards bounded by the request count
    assert np.all(result.curves.mean_reward > 0)


def test_run_optimization_without_training_phase():
    # slots never exceed the minibatch, so the buffer stays too small to train
    rr = toy_requests()
    cfg = DqnConfig(episodes=1, slots=10, minibatch=32)
    result = run_optimization(popular6(), rr, 2, cfg, np.random.default_rng(0))
    assert result.curves.mean_loss[0] == 0.0
    assert result.best_state is not None


def test_run_optimization_requires_enough_popular():
    rr = toy_requests()
    with pytest.raises(ValueError):
        run_optimization(popular6(), rr, 4, DqnConfig(), np.random.default_rng(0))


def test_run_optimization_deterministic():
    rr = toy_requests()
    cfg = DqnConfig(episodes=3, slots=20, minibatch=8)
    a = run_optimization(popular6(), rr, 2, cfg, np.random.default_rng(3))
    b = run_optimization(popular6(), rr, 2, cfg, np.random.default_rng(3))
    assert a.best_state == b.best_state
    np.testing.assert_array_equal(a.curves.mean_reward, b.curves.mean_reward)


def test_curves_convergence_index():
    from vecsim.drl import EpisodeCurves

    curves = EpisodeCurves(
        mean_reward=np.array([1.0, 2.0, 6.0, 10.0, 10.0, 10.0]),
        hit_rate=np.zeros(6),
        mean_loss=np.zeros(6),
    )
    # smoothed: 1, 1.5, 3, 6, 8.67, 10 -> first >= 9.5 is episode 6
    assert curves.episodes_to_converge() == 6


def test_hit_fraction():
    rr = toy_requests()
    cs = CacheState(local=(0, 1), neighbor=frozenset({2, 3}))
    assert hit_fraction(cs, rr) == pytest.approx(11.0 / 13.0)
