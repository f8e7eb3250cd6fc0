"""Advection-dispersion solute transport driven by a static velocity field.

Operator-split implicit stepping on the flow grid's control volumes: a
first-order upwind advection solve, then a central-difference dispersion
solve (full tensor, including cross terms), then source injection. Dissolved
mass is ``porosity * sum(V_i * C_i)`` (unit thickness); every step's budget
closes to solver roundoff. Boundaries: advective outflow through the listed
open sides, zero dispersive flux everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid2D, InvalidInputError, NumericError, ScalarField


@dataclass(frozen=True)
class DispersionTensorField:
    """Symmetric 2x2 dispersion tensor per node (d11, d22, off-diagonal d12)."""

    d11: ScalarField
    d22: ScalarField
    d12: ScalarField

    def __post_init__(self) -> None:
        g = self.d11.grid
        if self.d22.grid != g or self.d12.grid != g:
            raise InvalidInputError("tensor components on mismatched grids")
        det = self.d11.values * self.d22.values - self.d12.values ** 2
        scale = max(float(np.max(self.d11.values * self.d22.values)), 1.0)
        if np.any(self.d11.values < 0) or np.any(self.d22.values < 0) or np.any(det < -1e-12 * scale):
            raise InvalidInputError("dispersion tensor must be positive semi-definite")


def dispersion_tensor(
    vx: ScalarField, vy: ScalarField, alpha_l: float, alpha_t: float
) -> DispersionTensorField:
    """Velocity-dependent tensor; exactly zero wherever the speed is zero.

    d11 = (aL*vx^2 + aT*vy^2)/|v|, d22 = (aL*vy^2 + aT*vx^2)/|v|,
    d12 = (aL - aT)*vx*vy/|v|.
    """
    if alpha_l < 0.0 or alpha_t < 0.0:
        raise InvalidInputError("dispersivities must be nonnegative")
    if vx.grid != vy.grid:
        raise InvalidInputError("velocity components on mismatched grids")
    u, v = vx.values, vy.values
    speed = np.hypot(u, v)
    safe = np.where(speed > 0.0, speed, 1.0)
    d11 = np.where(speed > 0.0, (alpha_l * u * u + alpha_t * v * v) / safe, 0.0)
    d22 = np.where(speed > 0.0, (alpha_l * v * v + alpha_t * u * u) / safe, 0.0)
    d12 = np.where(speed > 0.0, (alpha_l - alpha_t) * u * v / safe, 0.0)
    g = vx.grid
    return DispersionTensorField(ScalarField(g, d11), ScalarField(g, d22), ScalarField(g, d12))


@dataclass(frozen=True)
class TransportProblem:
    """Transport scenario: velocities, dispersivities, source schedule, outputs.

    The source deposits ``loading_rates[k]`` (mass/time) into the node cell
    containing ``source_location`` while ``rate_edges[k] <= t < rate_edges[k+1]``.
    ``open_sides`` lists boundaries with advective outflow (the fixed-head
    sides of the flow problem); the rest are closed to advection too.
    """

    grid: Grid2D
    porosity: float
    alpha_l: float
    alpha_t: float
    vx: ScalarField
    vy: ScalarField
    output_times: tuple[float, ...]
    source_location: tuple[float, float] | None = None
    loading_rates: tuple[float, ...] = ()
    rate_edges: tuple[float, ...] = ()
    initial: ScalarField | None = None
    dt: float = 0.05
    open_sides: tuple[str, ...] = ("left", "right")

    def __post_init__(self) -> None:
        if not (0.0 < self.porosity < 1.0):
            raise InvalidInputError(f"porosity must be in (0, 1), got {self.porosity}")
        if self.alpha_l < 0.0 or self.alpha_t < 0.0:
            raise InvalidInputError("dispersivities must be nonnegative")
        if self.vx.grid != self.grid or self.vy.grid != self.grid:
            raise InvalidInputError("velocities defined on a different grid")
        if self.dt <= 0.0:
            raise InvalidInputError("dt must be positive")
        times = tuple(float(t) for t in self.output_times)
        if not times or any(t < 0.0 for t in times) or any(
            b <= a for a, b in zip(times, times[1:])
        ):
            raise InvalidInputError("output_times must be increasing and nonnegative")
        object.__setattr__(self, "output_times", times)
        if self.source_location is not None:
            rates = tuple(float(r) for r in self.loading_rates)
            edges = tuple(float(e) for e in self.rate_edges)
            if len(edges) != len(rates) + 1 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise InvalidInputError("rate_edges must be increasing with len(rates)+1 entries")
            if any(r < 0.0 for r in rates):
                raise InvalidInputError("loading rates must be nonnegative")
            x, y = self.source_location
            self.grid.nearest_node(x, y)  # validates the location is inside
            object.__setattr__(self, "loading_rates", rates)
            object.__setattr__(self, "rate_edges", edges)
        if self.initial is not None:
            if self.initial.grid != self.grid:
                raise InvalidInputError("initial concentration on a different grid")
            if np.any(self.initial.values < 0.0):
                raise InvalidInputError("initial concentration must be nonnegative")
        for side in self.open_sides:
            if side not in ("left", "right", "bottom", "top"):
                raise InvalidInputError(f"unknown side {side!r}")


class _Accumulator:
    """COO triplet collector for operators in dC/dt = -A C form."""

    def __init__(self) -> None:
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        keep = vals != 0.0
        self.rows.append(np.asarray(rows)[keep])
        self.cols.append(np.asarray(cols)[keep])
        self.vals.append(np.asarray(vals)[keep])

    def matrix(self, n: int) -> sp.csc_matrix:
        if not self.rows:
            return sp.csc_matrix((n, n))
        return sp.csc_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(n, n),
        )


def _face_flux(acc: _Accumulator, i: np.ndarray, j: np.ndarray, coefs, vol: np.ndarray) -> None:
    """Register face flux F = sum(coef_k * C_k) leaving cell i toward cell j."""
    for node, coef in coefs:
        acc.add(i, node, coef / vol[i])
        acc.add(j, node, -coef / vol[j])


def _advection_matrix(p: TransportProblem) -> tuple[sp.csc_matrix, np.ndarray]:
    """Upwind divergence operator and the boundary-outflow weight vector."""
    g = p.grid
    n = g.n_nodes
    vol = g.cell_areas()
    wx, wy = g.cell_widths_x(), g.cell_widths_y()
    u = p.vx.values
    v = p.vy.values
    node = np.arange(n).reshape(g.ny, g.nx)
    acc = _Accumulator()

    # interior x-faces
    i = node[:, :-1].ravel()
    j = node[:, 1:].ravel()
    uf = 0.5 * (u[i] + u[j])
    w = np.repeat(wy, g.nx - 1)
    up = np.where(uf >= 0.0, i, j)
    _face_flux(acc, i, j, [(up, uf * w)], vol)

    # interior y-faces
    i = node[:-1, :].ravel()
    j = node[1:, :].ravel()
    vf = 0.5 * (v[i] + v[j])
    w = np.tile(wx, g.ny - 1)
    up = np.where(vf >= 0.0, i, j)
    _face_flux(acc, i, j, [(up, vf * w)], vol)

    # open-boundary faces: outflow only (inflow carries zero concentration)
    outflow = np.zeros(n)
    sides = {
        "left": (node[:, 0], -u[node[:, 0]], wy),
        "right": (node[:, -1], u[node[:, -1]], wy),
        "bottom": (node[0, :], -v[node[0, :]], wx),
        "top": (node[-1, :], v[node[-1, :]], wx),
    }
    for name in p.open_sides:
        idx, u_n, w = sides[name]
        out = np.maximum(u_n, 0.0) * w
        acc.add(idx, idx, out / vol[idx])
        outflow[idx] += out
    return acc.matrix(n), outflow


def _cross_slots(i, j, trans, n_trans, step, inv_h):
    """Stencil (node, gamma) pairs for the transverse derivative at a face.

    ``trans`` is each face's transverse index; one-sided differences are used
    on the first/last transverse rows, centered elsewhere.
    """
    at_low = trans == 0
    at_high = trans == n_trans - 1
    mid = ~(at_low | at_high)
    g_half = 0.5 * inv_h
    g_quart = 0.25 * inv_h
    slots = []
    for base in (i, j):
        upn = np.where(at_high, base, base + step)
        gup = np.where(mid, g_quart, g_half)
        slots.append((upn, gup))
        dnn = np.where(at_low, base, base - step)
        gdn = np.where(mid, -g_quart, -g_half)
        slots.append((dnn, gdn))
    return slots


def _dispersion_matrix(p: TransportProblem) -> sp.csc_matrix:
    g = p.grid
    n = g.n_nodes
    vol = g.cell_areas()
    wx, wy = g.cell_widths_x(), g.cell_widths_y()
    tensor = dispersion_tensor(p.vx, p.vy, p.alpha_l, p.alpha_t)
    d11, d22, d12 = tensor.d11.values, tensor.d22.values, tensor.d12.values
    node = np.arange(n).reshape(g.ny, g.nx)
    acc = _Accumulator()

    # x-faces: normal flux -w*(D11 dC/dx + D12 dC/dy)
    i = node[:, :-1].ravel()
    j = node[:, 1:].ravel()
    w = np.repeat(wy, g.nx - 1)
    d11f = 0.5 * (d11[i] + d11[j]) * w / g.dx
    coefs = [(i, d11f), (j, -d11f)]
    d12f = 0.5 * (d12[i] + d12[j]) * w
    if np.any(d12f != 0.0):
        trans = np.repeat(np.arange(g.ny), g.nx - 1)
        for nodes, gamma in _cross_slots(i, j, trans, g.ny, g.nx, 1.0 / g.dy):
            coefs.append((nodes, -d12f * gamma))
    _face_flux(acc, i, j, coefs, vol)

    # y-faces: normal flux -w*(D22 dC/dy + D12 dC/dx)
    i = node[:-1, :].ravel()
    j = node[1:, :].ravel()
    w = np.tile(wx, g.ny - 1)
    d22f = 0.5 * (d22[i] + d22[j]) * w / g.dy
    coefs = [(i, d22f), (j, -d22f)]
    d12f = 0.5 * (d12[i] + d12[j]) * w
    if np.any(d12f != 0.0):
        trans = np.tile(np.arange(g.nx), g.ny - 1)
        for nodes, gamma in _cross_slots(i, j, trans, g.nx, 1, 1.0 / g.dx):
            coefs.append((nodes, -d12f * gamma))
    _face_flux(acc, i, j, coefs, vol)
    return acc.matrix(n)


def _rate_at(p: TransportProblem, t: float) -> float:
    if p.source_location is None:
        return 0.0
    edges = p.rate_edges
    if t < edges[0] or t >= edges[-1]:
        return 0.0
    k = int(np.searchsorted(edges, t, side="right")) - 1
    return p.loading_rates[min(k, len(p.loading_rates) - 1)]


@dataclass(frozen=True)
class BudgetRow:
    """Per-substep accounting; ``residual`` is the relative closure error."""

    time: float
    mass: float
    injected: float
    outflow: float
    snapped: float
    residual: float


def solve_transport(
    p: TransportProblem, return_budget: bool = False
) -> list[ScalarField] | tuple[list[ScalarField], list[BudgetRow]]:
    """Concentration fields at ``p.output_times`` (optionally with budget rows).

    Substeps never straddle a loading-rate edge or an output time; each
    segment is subdivided into near-``p.dt`` implicit steps.
    """
    g = p.grid
    n = g.n_nodes
    vol = g.cell_areas()
    theta = p.porosity
    a_adv, outflow_w = _advection_matrix(p)
    a_disp = _dispersion_matrix(p)
    eye = sp.identity(n, format="csc")

    lu_cache: dict[tuple[str, float], spla.SuperLU] = {}

    def step_ops(h: float) -> tuple[spla.SuperLU, spla.SuperLU]:
        key = round(h, 12)
        if ("adv", key) not in lu_cache:
            lu_cache[("adv", key)] = spla.splu((eye + h * a_adv).tocsc())
            lu_cache[("disp", key)] = spla.splu((eye + h * a_disp).tocsc())
        return lu_cache[("adv", key)], lu_cache[("disp", key)]

    src_node = None
    if p.source_location is not None:
        src_node = g.nearest_node(*p.source_location)

    c = np.zeros(n) if p.initial is None else p.initial.values.copy()
    mass = theta * float(vol @ c)
    injected = outflowed = snapped = 0.0
    t = 0.0
    budget: list[BudgetRow] = []

    events = {round(float(ot), 12) for ot in p.output_times if ot > 0.0}
    t_last = max(p.output_times)
    if p.source_location is not None:
        events |= {round(float(e), 12) for e in p.rate_edges if 0.0 < e < t_last}
    schedule = sorted(events)

    results: dict[float, ScalarField] = {}
    if p.output_times[0] == 0.0:
        results[0.0] = ScalarField(g, c.copy())

    out_keys = {round(float(ot), 12) for ot in p.output_times}
    for t_next in schedule:
        seg = t_next - t
        n_sub = max(1, int(round(seg / p.dt)))
        if abs(n_sub * p.dt - seg) > 1e-9:
            n_sub = max(1, int(np.ceil(seg / p.dt - 1e-12)))
        h = seg / n_sub
        lu_adv, lu_disp = step_ops(h)
        rate = _rate_at(p, t + 0.5 * h)
        for _ in range(n_sub):
            mass_prev = mass
            c = lu_adv.solve(c)
            out_step = theta * h * float(outflow_w @ c)
            c = lu_disp.solve(c)
            neg = c < 0.0
            snap_step = 0.0
            if np.any(neg):
                worst = float(c[neg].min())
                scale_c = max(1.0, float(np.max(np.abs(c))))
                # cross-term stencil is not monotone; tolerate small
                # undershoot, snap to zero, and track the added mass
                if worst < -5e-2 * scale_c:
                    raise NumericError(
                        f"concentration fell to {worst:.3e}; scheme lost monotonicity"
                    )
                snap_step = -theta * float(vol[neg] @ c[neg])
                c[neg] = 0.0
            inj_step = 0.0
            if src_node is not None and rate > 0.0:
                c[src_node] += rate * h / (theta * vol[src_node])
                inj_step = rate * h
            mass = theta * float(vol @ c)
            injected += inj_step
            outflowed += out_step
            snapped += snap_step
            t = round(t + h, 12)
            scale = max(abs(mass), abs(mass_prev), injected, 1e-12)
            resid = abs(mass - mass_prev - inj_step + out_step - snap_step) / scale
            budget.append(BudgetRow(t, mass, injected, outflowed, snapped, resid))
        t = t_next
        if round(t, 12) in out_keys:
            results[round(t, 12)] = ScalarField(g, c.copy())

    fields = [results[round(float(ot), 12)] for ot in p.output_times]
    if return_budget:
        return fields, budget
    return fields
