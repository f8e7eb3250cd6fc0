"""Grids, fields, ensembles, observations, seeded random streams and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(RuntimeError):
    """A numerical procedure failed (non-convergence, ill-conditioning)."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular grid of ``nx * ny`` nodes spanning [0, lx] x [0, ly].

    Nodes sit on the domain boundary: spacing is ``dx = lx / (nx - 1)``.
    Flat ordering is row-major with y-major rows, i.e. node (ix, iy) has flat
    index ``iy * nx + ix`` and coordinates ``(ix * dx, iy * dy)``.
    """

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise InvalidInputError(f"grid needs at least 2x2 nodes, got {self.nx}x{self.ny}")
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise InvalidInputError(f"grid extents must be positive, got ({self.lx}, {self.ly})")

    @property
    def dx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    def node_index(self, ix: int, iy: int) -> int:
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise InvalidInputError(f"node ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat arrays of node x and y coordinates."""
        ix = np.arange(self.nx) * self.dx
        iy = np.arange(self.ny) * self.dy
        xs, ys = np.meshgrid(ix, iy)
        return xs.ravel(), ys.ravel()

    def nearest_node(self, x: float, y: float) -> int:
        """Flat index of the node whose cell contains (x, y)."""
        if not (0.0 <= x <= self.lx and 0.0 <= y <= self.ly):
            raise InvalidInputError(f"point ({x}, {y}) outside domain")
        ix = int(round(x / self.dx))
        iy = int(round(y / self.dy))
        return self.node_index(min(ix, self.nx - 1), min(iy, self.ny - 1))

    def cell_widths_x(self) -> np.ndarray:
        """Control-volume widths per column; boundary nodes own half cells."""
        w = np.full(self.nx, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def cell_widths_y(self) -> np.ndarray:
        w = np.full(self.ny, self.dy)
        w[0] = w[-1] = 0.5 * self.dy
        return w

    def cell_areas(self) -> np.ndarray:
        """Flat per-node control-volume areas; they sum to lx * ly exactly."""
        return np.outer(self.cell_widths_y(), self.cell_widths_x()).ravel()


@dataclass(frozen=True)
class ScalarField:
    """One value per grid node, stored flat in the grid's node order."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_nodes,):
            raise InvalidInputError(
                f"field has {v.shape} values, grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.n_nodes, float(value)))

    @classmethod
    def from_matrix(cls, grid: Grid2D, m: np.ndarray) -> "ScalarField":
        m = np.asarray(m, dtype=float)
        if m.shape != (grid.ny, grid.nx):
            raise InvalidInputError(f"expected ({grid.ny}, {grid.nx}) matrix, got {m.shape}")
        return cls(grid, m.ravel())

    def as_matrix(self) -> np.ndarray:
        """(ny, nx) view, rows indexed by iy."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


@dataclass(frozen=True)
class Ensemble:
    """Parameter ensemble with members as columns, plus optional model outputs.

    ``params`` is (n_params, n_members); ``outputs``, when present, is
    (n_data, n_members) with column i produced from parameter column i.
    ``iteration`` counts completed assimilation updates (0 = prior).
    """

    params: np.ndarray
    outputs: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self) -> None:
        p = np.asarray(self.params, dtype=float)
        if p.ndim != 2:
            raise InvalidInputError(f"params must be 2-D, got shape {p.shape}")
        if p.shape[1] < 2:
            raise InvalidInputError(f"need at least 2 members, got {p.shape[1]}")
        if not np.all(np.isfinite(p)):
            raise InvalidInputError("params contain non-finite values")
        object.__setattr__(self, "params", p)
        if self.outputs is not None:
            y = np.asarray(self.outputs, dtype=float)
            if y.ndim != 2 or y.shape[1] != p.shape[1]:
                raise InvalidInputError(
                    f"outputs shape {y.shape} inconsistent with {p.shape[1]} members"
                )
            if not np.all(np.isfinite(y)):
                raise InvalidInputError("outputs contain non-finite values")
            object.__setattr__(self, "outputs", y)
        if self.iteration < 0:
            raise InvalidInputError("iteration must be >= 0")

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def n_members(self) -> int:
        return self.params.shape[1]

    @property
    def n_data(self) -> int | None:
        return None if self.outputs is None else self.outputs.shape[0]

    def with_params(self, params: np.ndarray, iteration: int) -> "Ensemble":
        """New ensemble after an update; outputs are dropped as stale."""
        return Ensemble(params, outputs=None, iteration=iteration)

    def with_outputs(self, outputs: np.ndarray) -> "Ensemble":
        return Ensemble(self.params, outputs=outputs, iteration=self.iteration)


@dataclass(frozen=True)
class ObsLabel:
    """What an observed datum is: kind plus space/time coordinates."""

    kind: str
    x: float
    y: float
    time: float | None = None


@dataclass(frozen=True)
class ObservationSet:
    """Observed values with per-datum noise standard deviations and labels."""

    values: np.ndarray
    noise_std: np.ndarray
    labels: tuple[ObsLabel, ...] = ()

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).ravel()
        s = np.asarray(self.noise_std, dtype=float).ravel()
        if s.shape == () or s.size == 1:
            s = np.full(v.size, s.item())
        if s.shape != v.shape:
            raise InvalidInputError(f"noise_std shape {s.shape} != values shape {v.shape}")
        if not np.all(s > 0.0):
            raise InvalidInputError("noise_std entries must be positive")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
            raise InvalidInputError("observations must be finite")
        if self.labels and len(self.labels) != v.size:
            raise InvalidInputError(f"{len(self.labels)} labels for {v.size} values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "noise_std", s)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_data(self) -> int:
        return self.values.size


class RngStream:
    """Deterministic random stream keyed by (seed, stream id).

    Two streams built with the same key produce identical draws. Streams are
    the only stateful objects in the package; derive independent children with
    :meth:`child` instead of sharing one stream across tasks.
    """

    def __init__(self, seed: int, stream: int = 0) -> None:
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream: int) -> "RngStream":
        """Independent stream; deterministic in (seed, parent stream, stream)."""
        if stream < 0:
            raise InvalidInputError("child stream id must be >= 0")
        return RngStream(self.seed, self.stream * 1_000_003 + stream + 1)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def ensemble_stats(e: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Per-parameter mean and standard deviation (ddof=1) across members."""
    return e.params.mean(axis=1), e.params.std(axis=1, ddof=1)


def perturb_observations(
    obs: ObservationSet, alpha: float, n: int, rng: RngStream
) -> np.ndarray:
    """Columns of ``values + alpha * eps`` with eps ~ N(0, noise_std^2).

    ``alpha`` inflates the noise standard deviation; the matching update
    solves against ``alpha^2 * R``. ``alpha = 1`` gives plain perturbed
    observations. A fresh ``eps`` is drawn for every column.
    """
    if alpha <= 0.0:
        raise InvalidInputError(f"alpha must be positive, got {alpha}")
    if n < 1:
        raise InvalidInputError("need at least one column")
    eps = rng.generator.standard_normal((obs.n_data, n))
    return obs.values[:, None] + alpha * obs.noise_std[:, None] * eps


def rmse(a: ScalarField | np.ndarray, b: ScalarField | np.ndarray) -> float:
    """Root-mean-square error between two fields or vectors."""
    av = a.values if isinstance(a, ScalarField) else np.asarray(a, dtype=float).ravel()
    bv = b.values if isinstance(b, ScalarField) else np.asarray(b, dtype=float).ravel()
    if av.shape != bv.shape:
        raise InvalidInputError(f"shape mismatch {av.shape} vs {bv.shape}")
    return float(np.sqrt(np.mean((av - bv) ** 2)))


def rmsre(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Root-mean-square *relative* error; truth entries must be nonzero."""
    est = np.asarray(estimate, dtype=float).ravel()
    tru = np.asarray(truth, dtype=float).ravel()
    if est.shape != tru.shape:
        raise InvalidInputError(f"shape mismatch {est.shape} vs {tru.shape}")
    if np.any(tru == 0.0):
        raise InvalidInputError("truth contains zeros; relative error undefined")
    return float(np.sqrt(np.mean(((est - tru) / tru) ** 2)))
