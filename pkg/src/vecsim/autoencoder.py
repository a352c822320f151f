"""Rating autoencoder trained per vehicle, written directly in numpy.

One sigmoid encoder layer and one sigmoid decoder layer over dense rating
vectors. Losses, exact reverse-mode gradients, and the per-round local
training loop with delayed-gradient compensation live here; aggregation is
the federation module's job.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
BLOCK_NAMES = ("w_enc", "b_enc", "w_dec", "b_dec")


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AEModel:
    """Encoder/decoder weights: w_enc (H x C), b_enc (H), w_dec (C x H), b_dec (C)."""

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def blocks(self) -> Iterator[np.ndarray]:
        return iter((self.w_enc, self.b_enc, self.w_dec, self.b_dec))

    @property
    def hidden_dim(self) -> int:
        return self.w_enc.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_enc.shape[1]

    @property
    def n_params(self) -> int:
        return sum(b.size for b in self.blocks())

    def copy(self) -> "AEModel":
        return AEModel(*(b.copy() for b in self.blocks()))

    def save(self, path: str) -> None:
        np.savez(path, version=CHECKPOINT_VERSION, **dict(zip(BLOCK_NAMES, self.blocks())))

    @staticmethod
    def load(path: str) -> "AEModel":
        with np.load(path) as data:
            version = int(data["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            model = AEModel(*(data[name] for name in BLOCK_NAMES))
        check_shapes(model, model)
        return model


@dataclass
class AEGradient:
    """Gradient mirror of AEModel, block for block."""

    w_enc: np.ndarray
    b_enc: np.ndarray
    w_dec: np.ndarray
    b_dec: np.ndarray

    def blocks(self) -> Iterator[np.ndarray]:
        return iter((self.w_enc, self.b_enc, self.w_dec, self.b_dec))


@dataclass
class TrainConfig:
    eta_l: float = 0.01  # initial local learning rate
    rho: float = 0.0001  # pull toward the global model
    beta: float = 0.001  # delayed-gradient decay
    epochs: int = 5  # iterations per round
    batch_size: int = 32
    anchor: str = "cumulative"  # or "literal": restart each step from the global model

    def validate(self) -> None:
        if min(self.eta_l, self.rho, self.beta) < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("training hyperparameters must be positive")
        if self.anchor not in ("cumulative", "literal"):
            raise ValueError(f"unknown anchor mode {self.anchor!r}")


def init_model(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> AEModel:
    """Uniform +-1/sqrt(fan_in) init for weights and biases of each layer."""
    b_in = 1.0 / math.sqrt(input_dim)
    b_hid = 1.0 / math.sqrt(hidden_dim)
    return AEModel(
        w_enc=rng.uniform(-b_in, b_in, size=(hidden_dim, input_dim)),
        b_enc=rng.uniform(-b_in, b_in, size=hidden_dim),
        w_dec=rng.uniform(-b_hid, b_hid, size=(input_dim, hidden_dim)),
        b_dec=rng.uniform(-b_hid, b_hid, size=input_dim),
    )


def check_shapes(model: AEModel, other: AEModel | AEGradient) -> None:
    for a, b in zip(model.blocks(), other.blocks()):
        if a.shape != b.shape:
            raise ValueError(f"parameter shape mismatch: {a.shape} vs {b.shape}")


def forward(model: AEModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hidden code and reconstruction for one rating vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input dim {x.shape[-1]} != model input dim {model.input_dim}")
    z = sigmoid(x @ model.w_enc.T + model.b_enc)
    x_hat = sigmoid(z @ model.w_dec.T + model.b_dec)
    return z, x_hat


def sample_loss(model: AEModel, x: np.ndarray) -> float:
    """Squared reconstruction error, averaged over the content dimension."""
    _, x_hat = forward(model, x)
    return float(np.mean((np.asarray(x, dtype=float) - x_hat) ** 2))


def batch_loss(model: AEModel, batch: np.ndarray) -> float:
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    _, x_hat = forward(model, batch)
    return float(np.mean((batch - x_hat) ** 2))


def proximity_penalty(model: AEModel, global_model: AEModel, rho: float) -> float:
    check_shapes(model, global_model)
    sq = sum(float(np.sum((g - l) ** 2)) for g, l in zip(global_model.blocks(), model.blocks()))
    return rho / 2.0 * sq


def regularized_loss(model: AEModel, global_model: AEModel, batch: np.ndarray, rho: float) -> float:
    return batch_loss(model, batch) + proximity_penalty(model, global_model, rho)


def gradient(model: AEModel, global_model: AEModel, batch: np.ndarray, rho: float) -> AEGradient:
    """Exact gradient of regularized_loss w.r.t. every parameter block."""
    check_shapes(model, global_model)
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    n, c = x.shape
    z = sigmoid(x @ model.w_enc.T + model.b_enc)
    x_hat = sigmoid(z @ model.w_dec.T + model.b_dec)

    d_out = 2.0 / (n * c) * (x_hat - x) * x_hat * (1.0 - x_hat)
    g_w_dec = d_out.T @ z
    g_b_dec = d_out.sum(axis=0)
    d_hidden = (d_out @ model.w_dec) * z * (1.0 - z)
    g_w_enc = d_hidden.T @ x
    g_b_enc = d_hidden.sum(axis=0)

    grad = AEGradient(g_w_enc, g_b_enc, g_w_dec, g_b_dec)
    if rho != 0.0:
        for g, local, glob in zip(grad.blocks(), model.blocks(), global_model.blocks()):
            g += rho * (local - glob)
    return grad


def local_learning_rate(eta_l: float, round_r: int) -> float:
    """Schedule eta_l * max(1, ln r); grows only once ln r exceeds 1."""
    if round_r < 1:
        raise ValueError(f"round must be >= 1, got {round_r}")
    return eta_l * max(1.0, math.log(round_r))


def vehicle_update(
    global_model: AEModel,
    train_matrix: np.ndarray,
    cfg: TrainConfig,
    round_r: int,
    rng: np.random.Generator,
    delayed_grad: Optional[AEGradient] = None,
) -> tuple[AEModel, AEGradient]:
    """Local training for one selected vehicle.

    Runs cfg.epochs iterations of: sample a batch, take the regularized
    gradient, add beta times the delayed gradient carried from a failed
    upload, and descend. Returns the trained model and the final local
    gradient (without the delayed term) for straggler bookkeeping.
    """
    cfg.validate()
    n_rows = train_matrix.shape[0]
    if n_rows == 0:
        raise ValueError("vehicle has no training data")
    eta = local_learning_rate(cfg.eta_l, round_r)
    local = global_model.copy()
    last_grad = None
    for _ in range(cfg.epochs):
        rows = rng.choice(n_rows, size=min(cfg.batch_size, n_rows), replace=False)
        grad = gradient(local, global_model, train_matrix[rows], cfg.rho)
        last_grad = grad
        step = grad
        if delayed_grad is not None and cfg.beta != 0.0:
            step = AEGradient(
                *(g + cfg.beta * d for g, d in zip(grad.blocks(), delayed_grad.blocks()))
            )
        base = global_model if cfg.anchor == "literal" else local
        local = AEModel(*(p - eta * s for p, s in zip(base.blocks(), step.blocks())))
    return local, last_grad
