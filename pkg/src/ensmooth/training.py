"""Network training: standardization, Adam, minibatch fitting, prediction.

Everything is seeded and single-threaded numpy, so a fit with the same data
and config reproduces the same parameters bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, RngStream
from .network import Network, NetworkSpec


@dataclass(frozen=True)
class Scaler:
    """Per-dimension standardization fitted on the training split only."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, y: np.ndarray, floor: float = 1e-8) -> "Scaler":
        def stats(a: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
            mean = a.mean(axis=0)
            std = a.std(axis=0)
            flat = std < floor
            if np.any(flat):
                warnings.warn(
                    f"{int(flat.sum())} constant {what} dimension(s); "
                    f"standard deviation floored at {floor}",
                    stacklevel=3,
                )
                std = np.where(flat, floor, std)
            return mean, std

        in_mean, in_std = stats(np.asarray(x, dtype=float), "input")
        out_mean, out_std = stats(np.asarray(y, dtype=float), "output")
        return cls(in_mean, in_std, out_mean, out_std)

    def transform_in(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean) / self.in_std

    def transform_out(self, y: np.ndarray) -> np.ndarray:
        return (y - self.out_mean) / self.out_std

    def inverse_out(self, y: np.ndarray) -> np.ndarray:
        return y * self.out_std + self.out_mean


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 100
    validation_fraction: float = 0.1
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0.0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise InvalidInputError("beta1 and beta2 must be in (0, 1)")
        if self.batch_size < 2:
            raise InvalidInputError("batch_size must be >= 2 (batchnorm statistics)")
        if self.max_epochs < 1:
            raise InvalidInputError("max_epochs must be >= 1")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise InvalidInputError("validation_fraction must be in [0, 1)")
        if self.patience < 1:
            raise InvalidInputError("patience must be >= 1")


class AdamState:
    """First/second moment accumulators plus the bias-correction step count."""

    def __init__(self, params: list[np.ndarray]) -> None:
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over batch and output dims, with its gradient."""
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    return loss, 2.0 * diff / diff.size


def loss_and_gradients(net: Network, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """One training-mode forward/backward pass; returns fresh gradient arrays."""
    net.zero_grads()
    pred = net.forward(x, train=True)
    loss, dpred = mse_loss(pred, y)
    net.backward(dpred)
    return loss, [g.copy() for g in net.gradients()]


def adam_step(net: Network, grads: list[np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """In-place bias-corrected Adam update of the network parameters."""
    params = net.parameters()
    if len(params) != len(grads):
        raise InvalidInputError(f"{len(grads)} gradients for {len(params)} parameters")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)


def fit(
    spec: NetworkSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[Network, Scaler, dict[str, list[float]]]:
    """Train a fresh network on (samples x dims) data.

    Splits off ``validation_fraction`` of the samples, standardizes with
    training-split statistics, runs minibatch Adam with early stopping, and
    returns the parameters from the best validation epoch (the last epoch
    when there is no validation split).
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InvalidInputError(f"bad training shapes {x.shape}, {y.shape}")
    if x.shape[1] != spec.input_dim or y.shape[1] != spec.output_dim:
        raise InvalidInputError("data dims do not match the network spec")
    n = x.shape[0]
    if n < 4:
        raise InvalidInputError("need at least 4 samples")

    gen = np.random.default_rng(cfg.seed)
    perm = gen.permutation(n)
    n_val = int(round(cfg.validation_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size < 2:
        raise InvalidInputError("validation split leaves too few training samples")

    scaler = Scaler.fit(x[train_idx], y[train_idx])
    xs = scaler.transform_in(x)
    ys = scaler.transform_out(y)

    net = Network(spec, RngStream(cfg.seed, stream=1))
    state = AdamState(net.parameters())
    history: dict[str, list[float]] = {"train_loss": [], "val_loss": []}
    best_loss = np.inf
    best_snap = None
    stall = 0

    for _epoch in range(cfg.max_epochs):
        order = gen.permutation(train_idx)
        losses = []
        for lo in range(0, order.size, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            if batch.size < 2:
                continue  # batchnorm cannot normalize a single sample
            loss, grads = loss_and_gradients(net, xs[batch], ys[batch])
            adam_step(net, grads, state, cfg)
            losses.append(loss)
        history["train_loss"].append(float(np.mean(losses)))
        if n_val:
            val_pred = net.forward(xs[val_idx], train=False)
            val_loss, _ = mse_loss(val_pred, ys[val_idx])
            history["val_loss"].append(val_loss)
            if val_loss < best_loss:
                best_loss = val_loss
                best_snap = net.snapshot()
                stall = 0
            else:
                stall += 1
                if stall >= cfg.patience:
                    break

    if best_snap is not None:
        net.restore(best_snap)
    return net, scaler, history


def predict_update(net: Network, scaler: Scaler, innovation: np.ndarray) -> np.ndarray:
    """Map innovation vector(s) to parameter update(s) in physical units.

    Accepts a single (n_data,) vector or an (n_data, k) column stack and
    returns the matching (n_params,) or (n_params, k) array. Inference mode:
    a vector mapped alone matches its column in a batched call to within
    floating-point roundoff.
    """
    inn = np.asarray(innovation, dtype=float)
    single = inn.ndim == 1
    cols = inn[:, None] if single else inn
    pred = net.forward(scaler.transform_in(cols.T), train=False)
    update = scaler.inverse_out(pred).T
    return update[:, 0] if single else update
