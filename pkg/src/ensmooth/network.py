"""Residual dense network in plain numpy with exact backpropagation.

Blocks map width w_in -> w_out through affine/batchnorm/ReLU twice; the skip
path is the identity when widths match and a projection affine otherwise, and
the sum passes through a final ReLU. Batchnorm normalizes with batch
statistics in training mode (gradients flow through the statistics) and with
running statistics in inference mode, so inference is deterministic and
independent of batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, RngStream


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: block widths between ``input_dim`` and ``output_dim``."""

    input_dim: int
    output_dim: int
    widths: tuple[int, ...]
    output_activation: str = "linear"
    batchnorm: bool = True

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.output_dim < 1:
            raise InvalidInputError("input_dim and output_dim must be >= 1")
        if not self.widths or any(w < 1 for w in self.widths):
            raise InvalidInputError("widths must be a nonempty tuple of positive ints")
        if self.output_activation not in ("linear", "tanh"):
            raise InvalidInputError(f"unknown output activation {self.output_activation!r}")

    @staticmethod
    def default_widths(input_dim: int, output_dim: int, n_blocks: int = 5) -> tuple[int, ...]:
        """Widths interpolated linearly from input to output dimension."""
        pts = np.linspace(input_dim, output_dim, n_blocks + 1)[1:]
        return tuple(max(1, int(round(w))) for w in pts)


class Affine:
    """y = x @ W.T + b with He-scaled initialization."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator) -> None:
        self.w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        self.b = np.zeros(n_out)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.gw += grad.T @ self._x
        self.gb += grad.sum(axis=0)
        return grad @ self.w

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.gw, self.gb]

    def state(self):
        return []


class BatchNorm:
    """Per-feature normalization with learned scale/shift.

    Training mode uses the batch mean and (biased) variance and updates the
    running statistics with momentum 0.1; inference mode uses the running
    statistics only.
    """

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        self.gamma = np.ones(n)
        self.beta = np.zeros(n)
        self.run_mean = np.zeros(n)
        self.run_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self._cache: tuple | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            m = x.shape[0]
            if m < 2:
                raise InvalidInputError("batchnorm needs batches of at least 2 in training")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mu) * inv_std
            self.run_mean = (1 - self.momentum) * self.run_mean + self.momentum * mu
            self.run_var = (1 - self.momentum) * self.run_var + self.momentum * var * m / (m - 1)
            self._cache = (xhat, inv_std)
            return self.gamma * xhat + self.beta
        return self.gamma * (x - self.run_mean) / np.sqrt(self.run_var + self.eps) + self.beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._cache
        self.ggamma += (grad * xhat).sum(axis=0)
        self.gbeta += grad.sum(axis=0)
        # gradient through the batch statistics
        m = grad.shape[0]
        gx_hat = grad * self.gamma
        return inv_std * (
            gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0)
        )

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.ggamma, self.gbeta]

    def state(self):
        return [self.run_mean, self.run_var]


class Relu:
    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            self._mask = x > 0.0
            return np.where(self._mask, x, 0.0)
        return np.maximum(x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, 0.0)

    def params(self):
        return []

    def grads(self):
        return []

    def state(self):
        return []


class ResidualBlock:
    """Affine-BN-ReLU-Affine-BN main path plus (projected) skip, then ReLU."""

    def __init__(self, n_in: int, n_out: int, batchnorm: bool, rng: np.random.Generator) -> None:
        self.main: list = [Affine(n_in, n_out, rng)]
        if batchnorm:
            self.main.append(BatchNorm(n_out))
        self.main.append(Relu())
        self.main.append(Affine(n_out, n_out, rng))
        if batchnorm:
            self.main.append(BatchNorm(n_out))
        self.skip = None if n_in == n_out else Affine(n_in, n_out, rng)
        self.out_relu = Relu()

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        h = x
        for layer in self.main:
            h = layer.forward(h, train)
        s = x if self.skip is None else self.skip.forward(x, train)
        return self.out_relu.forward(h + s, train)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = self.out_relu.backward(grad)
        gx = grad if self.skip is None else self.skip.backward(grad)
        g = grad
        for layer in reversed(self.main):
            g = layer.backward(g)
        return g + gx

    def layers(self):
        return self.main + ([] if self.skip is None else [self.skip])


class Network:
    """Stack of residual blocks with a final affine map to the output."""

    def __init__(self, spec: NetworkSpec, rng: RngStream) -> None:
        gen = rng.generator
        self.spec = spec
        self.blocks: list[ResidualBlock] = []
        w_prev = spec.input_dim
        for w in spec.widths:
            self.blocks.append(ResidualBlock(w_prev, w, spec.batchnorm, gen))
            w_prev = w
        self.final = Affine(w_prev, spec.output_dim, gen)
        self._tanh_out: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.spec.input_dim:
            raise InvalidInputError(f"input has {x.shape[1]} features, expected {self.spec.input_dim}")
        h = x
        for block in self.blocks:
            h = block.forward(h, train)
        h = self.final.forward(h, train)
        if self.spec.output_activation == "tanh":
            h = np.tanh(h)
            if train:
                self._tanh_out = h
        return h[0] if squeeze else h

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self.spec.output_activation == "tanh":
            grad = grad * (1.0 - self._tanh_out ** 2)
        g = self.final.backward(grad)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return g

    def _layers(self):
        out = []
        for block in self.blocks:
            out.extend(block.layers())
        out.append(self.final)
        return out

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self._layers() for p in layer.params()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self._layers() for g in layer.grads()]

    def zero_grads(self) -> None:
        for g in self.gradients():
            g[...] = 0.0

    def state_arrays(self) -> list[np.ndarray]:
        """Parameters plus batchnorm running statistics, in a stable order."""
        out = list(self.parameters())
        for layer in self._layers():
            out.extend(layer.state())
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [a.copy() for a in self.state_arrays()]

    def restore(self, snap: list[np.ndarray]) -> None:
        for a, s in zip(self.state_arrays(), snap, strict=True):
            a[...] = s

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Stable name -> array mapping for persistence."""
        out: dict[str, np.ndarray] = {}
        for i, arr in enumerate(self.state_arrays()):
            out[f"a{i:04d}"] = arr
        return out

    def load_named_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        target = self.state_arrays()
        if len(arrays) != len(target):
            raise InvalidInputError(
                f"network has {len(target)} arrays, payload has {len(arrays)}"
            )
        for i, arr in enumerate(target):
            src = arrays[f"a{i:04d}"]
            if src.shape != arr.shape:
                raise InvalidInputError(f"array {i} shape {src.shape} != {arr.shape}")
            arr[...] = src
