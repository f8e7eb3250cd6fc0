"""Two-facies channelized fields: a procedural training image and a
pattern-based direct sampler that simulates nodes along a random path by
scanning the training image for matching neighbor patterns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import Grid2D, InvalidInputError, RngStream, ScalarField


@dataclass(frozen=True)
class TrainingImage:
    """Categorical field over a two-value palette (background, channel)."""

    grid: Grid2D
    values: np.ndarray
    palette: tuple[float, float]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.ny, self.grid.nx):
            raise InvalidInputError(f"values shape {v.shape} != ({self.grid.ny}, {self.grid.nx})")
        if not np.isin(v, self.palette).all():
            raise InvalidInputError("training image contains values outside the palette")
        object.__setattr__(self, "values", v)

    def channel_fraction(self) -> float:
        return float(np.mean(self.values == self.palette[1]))


@dataclass(frozen=True)
class DsParams:
    """Direct-sampling controls.

    ``n_neighbors`` informed nodes form the conditioning pattern,
    ``distance_threshold`` is the accepted fractional mismatch, and
    ``scan_fraction`` bounds how much of the training image is scanned per
    node before falling back to the best candidate seen.
    """

    n_neighbors: int = 30
    distance_threshold: float = 0.1
    scan_fraction: float = 0.3
    path_seed: int | None = None

    def __post_init__(self) -> None:
        if self.n_neighbors < 1:
            raise InvalidInputError("n_neighbors must be >= 1")
        if not (0.0 <= self.distance_threshold <= 1.0):
            raise InvalidInputError("distance_threshold must be in [0, 1]")
        if not (0.0 < self.scan_fraction <= 1.0):
            raise InvalidInputError("scan_fraction must be in (0, 1]")


def generate_channel_ti(
    grid: Grid2D,
    n_channels: int,
    rng: RngStream,
    amplitude_range: tuple[float, float] = (0.03, 0.09),
    wavelength_range: tuple[float, float] = (0.5, 1.1),
    width_range: tuple[float, float] = (0.026, 0.033),
    palette: tuple[float, float] = (0.5, 2.3),
) -> TrainingImage:
    """Sinusoidal high-conductivity bands over a uniform background.

    Band centers sit on a jittered lattice in y and wrap around the top/bottom
    edge (torus in y), so every channel contributes its full width and the
    facies proportion stays stable across seeds. Ranges are fractions of the
    domain extents (amplitude/width of ly, wavelength of lx).
    """
    if n_channels < 0:
        raise InvalidInputError("n_channels must be >= 0")
    for lo, hi in (amplitude_range, wavelength_range, width_range):
        if not (0.0 < lo <= hi):
            raise InvalidInputError("ranges must be positive and ordered")
    gen = rng.generator
    x = np.arange(grid.nx) * grid.dx
    y = np.arange(grid.ny) * grid.dy
    mask = np.zeros((grid.ny, grid.nx), dtype=bool)
    for k in range(n_channels):
        slot = (k + 0.5) / max(n_channels, 1)
        y0 = (slot + gen.uniform(-0.3, 0.3) / max(n_channels, 1)) * grid.ly
        amp = gen.uniform(*amplitude_range) * grid.ly
        wav = gen.uniform(*wavelength_range) * grid.lx
        width = gen.uniform(*width_range) * grid.ly
        phase = gen.uniform(0.0, 2.0 * np.pi)
        center = y0 + amp * np.sin(2.0 * np.pi * x / wav + phase)
        dist = np.abs(y[:, None] - center[None, :])
        dist = np.minimum(dist, grid.ly - dist)  # torus wrap in y
        mask |= dist < 0.5 * width
    values = np.where(mask, palette[1], palette[0])
    return TrainingImage(grid, values, palette)


@njit(cache=True)
def _ds_kernel(ti, sim, informed, path, scan_order, scan_starts,
               lag_dy, lag_dx, n_neighbors, threshold, n_scan):
    ny, nx = sim.shape
    ny_ti, nx_ti = ti.shape
    n_ti = ny_ti * nx_ti
    n_lags = lag_dy.shape[0]
    nb_dy = np.empty(n_neighbors, dtype=np.int64)
    nb_dx = np.empty(n_neighbors, dtype=np.int64)
    nb_val = np.empty(n_neighbors)
    for idx in range(path.shape[0]):
        node = path[idx]
        iy = node // nx
        ix = node % nx
        # nearest informed nodes, walking lags in distance order
        cnt = 0
        for l in range(n_lags):
            jy = iy + lag_dy[l]
            jx = ix + lag_dx[l]
            if 0 <= jy < ny and 0 <= jx < nx and informed[jy, jx]:
                nb_dy[cnt] = lag_dy[l]
                nb_dx[cnt] = lag_dx[l]
                nb_val[cnt] = sim[jy, jx]
                cnt += 1
                if cnt == n_neighbors:
                    break
        start = scan_starts[idx]
        if cnt == 0:
            pos = scan_order[start % n_ti]
            sim[iy, ix] = ti[pos // nx_ti, pos % nx_ti]
            informed[iy, ix] = 1
            continue
        first = scan_order[start % n_ti]
        best_val = ti[first // nx_ti, first % nx_ti]
        best_d = 2.0
        checked = 0
        c = 0
        while checked < n_scan and c < n_ti:
            pos = scan_order[(start + c) % n_ti]
            c += 1
            ty = pos // nx_ti
            tx = pos % nx_ti
            mism = 0
            valid = True
            for k in range(cnt):
                qy = ty + nb_dy[k]
                qx = tx + nb_dx[k]
                if qy < 0 or qy >= ny_ti or qx < 0 or qx >= nx_ti:
                    valid = False
                    break
                if ti[qy, qx] != nb_val[k]:
                    mism += 1
            if not valid:
                continue
            checked += 1
            d = mism / cnt
            if d < best_d:
                best_d = d
                best_val = ti[ty, tx]
            if d <= threshold:
                break
        sim[iy, ix] = best_val
        informed[iy, ix] = 1


def direct_sampling(
    ti: TrainingImage,
    grid: Grid2D,
    rng: RngStream,
    conditioning: list[tuple[int, float]] | None = None,
    ds: DsParams = DsParams(),
) -> ScalarField:
    """Simulate one realization on ``grid`` from the training image.

    Nodes are visited in a random order. Each gets the training-image value at
    the first scanned location whose pattern (the node's nearest informed
    neighbors) mismatches at most ``distance_threshold`` of the neighbors;
    if the scan budget runs out, the best-matching scanned location wins.
    Conditioning pairs (node index, value) are honored verbatim.
    """
    gen = rng.generator if ds.path_seed is None else RngStream(ds.path_seed).generator
    sim = np.full((grid.ny, grid.nx), np.nan)
    informed = np.zeros((grid.ny, grid.nx), dtype=np.uint8)
    if conditioning:
        for node, value in conditioning:
            if not (0 <= node < grid.n_nodes):
                raise InvalidInputError(f"conditioning node {node} outside grid")
            sim[node // grid.nx, node % grid.nx] = value
            informed[node // grid.nx, node % grid.nx] = 1

    free = np.flatnonzero(informed.ravel() == 0)
    if free.size == 0:
        return ScalarField(grid, sim.ravel())
    path = gen.permutation(free)
    n_ti = ti.grid.n_nodes
    scan_order = gen.permutation(n_ti).astype(np.int64)
    scan_starts = gen.integers(0, n_ti, size=free.size).astype(np.int64)

    # candidate neighbor offsets sorted by physical distance
    dy, dx = np.mgrid[-(grid.ny - 1) : grid.ny, -(grid.nx - 1) : grid.nx]
    dy = dy.ravel()
    dx = dx.ravel()
    keep = (dy != 0) | (dx != 0)
    dy, dx = dy[keep], dx[keep]
    order = np.argsort((dy * grid.dy) ** 2 + (dx * grid.dx) ** 2, kind="stable")

    n_scan = max(1, int(round(ds.scan_fraction * n_ti)))
    _ds_kernel(
        ti.values, sim, informed, path.astype(np.int64), scan_order, scan_starts,
        dy[order].astype(np.int64), dx[order].astype(np.int64),
        ds.n_neighbors, ds.distance_threshold, n_scan,
    )
    return ScalarField(grid, sim.ravel())


def sample_realizations(
    ti: TrainingImage,
    grid: Grid2D,
    n: int,
    rng: RngStream,
    conditioning: list[tuple[int, float]] | None = None,
    ds: DsParams = DsParams(),
) -> list[ScalarField]:
    """``n`` independent realizations, one child stream each."""
    if n < 1:
        raise InvalidInputError("need at least one realization")
    return [
        direct_sampling(ti, grid, rng.child(i), conditioning=conditioning, ds=ds)
        for i in range(n)
    ]


def training_image_from_field(f: ScalarField, palette: tuple[float, float]) -> TrainingImage:
    """Adopt an externally supplied field (e.g. a loaded file) as a training image."""
    return TrainingImage(f.grid, f.as_matrix().copy(), palette)
