import math

import numpy as np
import pytest

from vecsim.autoencoder import (
    AEGradient,
    AEModel,
    TrainConfig,
    batch_loss,
    forward,
    gradient,
    init_model,
    local_learning_rate,
    regularized_loss,
    sample_loss,
    vehicle_update,
)


def finite_difference_grads(loss_fn, arrays, h=1e-5):
    """Central-difference oracle, perturbing every entry of every block."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn()
            flat[i] = orig - h
            fm = loss_fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def constant_model(value, input_dim=3, hidden_dim=2):
    return AEModel(
        w_enc=np.full((hidden_dim, input_dim), value),
        b_enc=np.full(hidden_dim, value),
        w_dec=np.full((input_dim, hidden_dim), value),
        b_dec=np.full(input_dim, value),
    )


def test_zero_model_outputs_half():
    model = constant_model(0.0)
    _, x_hat = forward(model, np.array([1.0, 0.0, 0.3]))
    np.testing.assert_allclose(x_hat, 0.5)


def test_outputs_always_in_unit_interval(rng):
    model = init_model(rng, 6, 3)
    for _ in range(20):
        _, x_hat = forward(model, rng.uniform(-2, 2, size=6))
        assert np.all(x_hat > 0) and np.all(x_hat < 1)


def test_forward_matches_hand_calculation():
    # H=2, C=3, every weight and bias 0.1, x = (1, 0, 0), done with scalar math
    model = constant_model(0.1)
    x = np.array([1.0, 0.0, 0.0])
    z, x_hat = forward(model, x)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    z_hand = [sig(0.1 * 1.0 + 0.1) for _ in range(2)]
    x_hat_hand = [sig(0.1 * z_hand[0] + 0.1 * z_hand[1] + 0.1) for _ in range(3)]
    np.testing.assert_allclose(z, z_hand, rtol=1e-12)
    np.testing.assert_allclose(x_hat, x_hat_hand, rtol=1e-12)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(constant_model(0.0), np.zeros(5))


def test_sample_loss_examples(rng):
    # all-ones target against the 0.5 reconstruction of the zero model
    assert sample_loss(constant_model(0.0), np.ones(3)) == pytest.approx(0.25)
    # agrees with the direct formula, and is nonnegative
    model = init_model(rng, 4, 2)
    x = rng.uniform(0, 1, size=4)
    _, x_hat = forward(model, x)
    direct = float(np.mean((x - x_hat) ** 2))
    assert sample_loss(model, x) == pytest.approx(direct)
    assert sample_loss(model, x) >= 0.0


def test_batch_loss_is_mean_of_sample_losses(rng):
    model = init_model(rng, 4, 2)
    batch = rng.uniform(0, 1, size=(5, 4))
    expected = np.mean([sample_loss(model, row) for row in batch])
    assert batch_loss(model, batch) == pytest.approx(expected)
    assert batch_loss(model, batch[:1]) == pytest.approx(sample_loss(model, batch[0]))
    shuffled = batch[rng.permutation(5)]
    assert batch_loss(model, shuffled) == pytest.approx(batch_loss(model, batch))


def test_batch_loss_rejects_empty():
    with pytest.raises(ValueError):
        batch_loss(constant_model(0.0), np.zeros((0, 3)))


def test_regularized_loss_reductions(rng):
    model = init_model(rng, 4, 2)
    batch = rng.uniform(0, 1, size=(3, 4))
    assert regularized_loss(model, model.copy(), batch, 0.0001) == pytest.approx(
        batch_loss(model, batch)
    )
    other = init_model(rng, 4, 2)
    assert regularized_loss(model, other, batch, 0.0) == pytest.approx(batch_loss(model, batch))


def test_regularized_loss_single_entry_penalty(rng):
    model = init_model(rng, 4, 2)
    global_model = model.copy()
    model.w_enc[0, 0] += 1.0
    penalty = regularized_loss(model, global_model, np.ones((1, 4)), 0.0001) - batch_loss(
        model, np.ones((1, 4))
    )
    assert penalty == pytest.approx(0.0001 / 2.0)


def test_gradient_matches_finite_differences():
    # keystone: 20 random tiny instances, all four blocks
    for trial in range(20):
        rng = np.random.default_rng(1000 + trial)
        c, h = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        model = init_model(rng, c, h)
        global_model = init_model(rng, c, h)
        batch = rng.uniform(0, 1, size=(int(rng.integers(1, 4)), c))
        rho = float(rng.choice([0.0, 0.0001, 0.01]))
        analytic = gradient(model, global_model, batch, rho)
        oracle = finite_difference_grads(
            lambda: regularized_loss(model, global_model, batch, rho), list(model.blocks())
        )
        for a, fd in zip(analytic.blocks(), oracle):
            assert rel_err(a, fd) < 1e-4


def test_gradient_zero_at_stationary_point():
    # zero model reconstructs 0.5 exactly; x = 0.5 and local == global
    model = constant_model(0.0)
    grad = gradient(model, model.copy(), np.full((2, 3), 0.5), 0.0001)
    for block in grad.blocks():
        np.testing.assert_allclose(block, 0.0, atol=1e-15)


def test_regularization_contributes_linearly(rng):
    model = init_model(rng, 4, 3)
    global_model = init_model(rng, 4, 3)
    batch = rng.uniform(0, 1, size=(3, 4))
    rho = 0.0001
    with_reg = gradient(model, global_model, batch, rho)
    without = gradient(model, global_model, batch, 0.0)
    for g1, g0, local, glob in zip(
        with_reg.blocks(), without.blocks(), model.blocks(), global_model.blocks()
    ):
        np.testing.assert_allclose(g1 - g0, rho * (local - glob), atol=1e-12)


def test_local_learning_rate_schedule():
    assert local_learning_rate(0.01, 1) == pytest.approx(0.01)
    assert local_learning_rate(0.01, 2) == pytest.approx(0.01)  # ln 2 < 1
    assert local_learning_rate(0.01, 8) == pytest.approx(0.01 * math.log(8))
    with pytest.raises(ValueError):
        local_learning_rate(0.01, 0)


def test_vehicle_update_single_step_is_sgd(rng):
    # epochs=1, beta irrelevant, rho=0: exactly one gradient step on the full batch
    c, h = 5, 3
    global_model = init_model(rng, c, h)
    data = rng.uniform(0, 1, size=(4, c))  # fewer rows than batch_size -> full batch
    cfg = TrainConfig(eta_l=0.05, rho=0.0, beta=0.0, epochs=1, batch_size=32)
    updated, last_grad = vehicle_update(global_model, data, cfg, 1, np.random.default_rng(0))
    manual_grad = gradient(global_model, global_model, data, 0.0)
    for new, old, g in zip(updated.blocks(), global_model.blocks(), manual_grad.blocks()):
        np.testing.assert_allclose(new, old - 0.05 * g, atol=1e-12)
    for a, b in zip(last_grad.blocks(), manual_grad.blocks()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_vehicle_update_delayed_gradient_direction(rng):
    c, h = 4, 2
    global_model = init_model(rng, c, h)
    data = rng.uniform(0, 1, size=(3, c))
    delayed = AEGradient(*(np.full_like(b, 0.5) for b in global_model.blocks()))
    cfg = TrainConfig(eta_l=0.05, rho=0.0, beta=0.001, epochs=1, batch_size=32)
    plain, _ = vehicle_update(global_model, data, cfg, 1, np.random.default_rng(0))
    carried, _ = vehicle_update(
        global_model, data, cfg, 1, np.random.default_rng(0), delayed_grad=delayed
    )
    for a, b, d in zip(carried.blocks(), plain.blocks(), delayed.blocks()):
        np.testing.assert_allclose(a - b, -0.05 * 0.001 * d, atol=1e-12)


def test_training_descends_on_fixed_batch(rng):
    c, h = 6, 3
    global_model = init_model(rng, c, h)
    data = rng.uniform(0, 1, size=(8, c))
    rho = 0.0001
    local = global_model.copy()
    losses = [regularized_loss(local, global_model, data, rho)]
    for _ in range(10):
        g = gradient(local, global_model, data, rho)
        local = AEModel(*(p - 0.1 * s for p, s in zip(local.blocks(), g.blocks())))
        losses.append(regularized_loss(local, global_model, data, rho))
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    # the packaged loop reaches a lower loss too
    cfg = TrainConfig(eta_l=0.1, rho=rho, beta=0.0, epochs=10, batch_size=32)
    updated, _ = vehicle_update(global_model, data, cfg, 1, np.random.default_rng(0))
    assert regularized_loss(updated, global_model, data, rho) < losses[0]


def test_vehicle_update_literal_anchor(rng):
    # literal mode restarts every step from the global model
    c, h = 4, 2
    global_model = init_model(rng, c, h)
    data = rng.uniform(0, 1, size=(3, c))
    cfg = TrainConfig(eta_l=0.05, rho=0.0, beta=0.0, epochs=2, batch_size=32, anchor="literal")
    updated, _ = vehicle_update(global_model, data, cfg, 1, np.random.default_rng(0))
    g1 = gradient(global_model, global_model, data, 0.0)
    step1 = AEModel(*(p - 0.05 * s for p, s in zip(global_model.blocks(), g1.blocks())))
    g2 = gradient(step1, global_model, data, 0.0)
    expected = AEModel(*(p - 0.05 * s for p, s in zip(global_model.blocks(), g2.blocks())))
    for a, b in zip(updated.blocks(), expected.blocks()):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_vehicle_update_rejects_empty_training_set(rng):
    with pytest.raises(ValueError):
        vehicle_update(init_model(rng, 3, 2), np.zeros((0, 3)), TrainConfig(), 1, rng)


def test_checkpoint_round_trip(tmp_path, rng):
    model = init_model(rng, 7, 4)
    path = str(tmp_path / "model.npz")
    model.save(path)
    loaded = AEModel.load(path)
    for a, b in zip(model.blocks(), loaded.blocks()):
        np.testing.assert_array_equal(a, b)  # bit exact


def test_shapes_preserved_across_updates(rng):
    global_model = init_model(rng, 5, 3)
    data = rng.uniform(0, 1, size=(6, 5))
    updated, grad = vehicle_update(global_model, data, TrainConfig(epochs=3), 2, rng)
    for a, b in zip(updated.blocks(), global_model.blocks()):
        assert a.shape == b.shape
    for a, b in zip(grad.blocks(), global_model.blocks()):
        assert a.shape == b.shape


def test_gradient_shape_mismatch(rng):
    with pytest.raises(ValueError):
        gradient(init_model(rng, 3, 2), init_model(rng, 4, 2), np.ones((1, 3)), 0.0)
