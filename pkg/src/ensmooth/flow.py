"""Confined 2-D groundwater flow on a node-centered finite-volume grid.

Heads are fixed on the left/right columns (either may be opened to no-flux by
passing ``None``); top and bottom rows are no-flux. Inter-node conductances
use the harmonic mean of the two node conductivities, so sharp conductivity
contrasts behave like resistors in series. Wells are point sources assigned
wholly to their containing node. Unit aquifer thickness throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import Grid2D, InvalidInputError, NumericError, ScalarField


@dataclass(frozen=True)
class Well:
    """Point source at a node; rate > 0 injects, rate < 0 pumps."""

    node: int
    rate: float


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-10
    maxiter_factor: int = 10

    def maxiter(self, n_nodes: int) -> int:
        return self.maxiter_factor * n_nodes


@dataclass(frozen=True)
class FlowProblem:
    """Geometry, conductivity, boundary heads, wells and storage.

    ``head_left`` / ``head_right`` fix the head on the respective boundary
    column; ``None`` turns that side into a no-flux boundary. For transient
    runs set ``specific_storage`` and ``initial_head``.
    """

    grid: Grid2D
    conductivity: ScalarField
    head_left: float | None
    head_right: float | None
    wells: tuple[Well, ...] = ()
    specific_storage: float | None = None
    initial_head: ScalarField | None = None

    def __post_init__(self) -> None:
        if self.conductivity.grid != self.grid:
            raise InvalidInputError("conductivity defined on a different grid")
        if np.any(self.conductivity.values <= 0.0):
            raise InvalidInputError("conductivity must be positive everywhere")
        for w in self.wells:
            if not (0 <= w.node < self.grid.n_nodes):
                raise InvalidInputError(f"well node {w.node} outside grid")
        if self.specific_storage is not None and self.specific_storage <= 0.0:
            raise InvalidInputError("specific_storage must be positive")
        if self.initial_head is not None and self.initial_head.grid != self.grid:
            raise InvalidInputError("initial head defined on a different grid")


@dataclass(frozen=True)
class HeadSolution:
    """Steady solution (no times, one field) or transient (stamped fields)."""

    fields: tuple[ScalarField, ...]
    times: tuple[float, ...] | None = None

    @property
    def steady(self) -> ScalarField:
        if self.times is not None:
            raise InvalidInputError("transient solution has no single steady field")
        return self.fields[0]

    def at_time(self, t: float, tol: float = 1e-9) -> ScalarField:
        if self.times is None:
            return self.fields[0]
        for stamp, f in zip(self.times, self.fields):
            if abs(stamp - t) <= tol:
                return f
        raise InvalidInputError(f"time {t} not recorded (have {self.times})")


def _conductances(p: FlowProblem) -> tuple[np.ndarray, np.ndarray]:
    """Face conductances: cx (ny, nx-1) across x-faces, cy (ny-1, nx)."""
    g = p.grid
    k = p.conductivity.as_matrix()
    wx = g.cell_widths_x()
    wy = g.cell_widths_y()
    kh_x = 2.0 * k[:, :-1] * k[:, 1:] / (k[:, :-1] + k[:, 1:])
    kh_y = 2.0 * k[:-1, :] * k[1:, :] / (k[:-1, :] + k[1:, :])
    cx = kh_x * wy[:, None] / g.dx
    cy = kh_y * wx[None, :] / g.dy
    return cx, cy


def _fixed_heads(p: FlowProblem) -> tuple[np.ndarray, np.ndarray]:
    g = p.grid
    fixed = np.zeros(g.n_nodes, dtype=bool)
    hfix = np.zeros(g.n_nodes)
    left = np.arange(g.ny) * g.nx
    right = left + g.nx - 1
    if p.head_left is not None:
        fixed[left] = True
        hfix[left] = p.head_left
    if p.head_right is not None:
        fixed[right] = True
        hfix[right] = p.head_right
    return fixed, hfix


def _face_index_arrays(g: Grid2D) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flat node indices (i, j) for x-faces and y-faces."""
    node = np.arange(g.n_nodes).reshape(g.ny, g.nx)
    ix_i = node[:, :-1].ravel()
    ix_j = node[:, 1:].ravel()
    iy_i = node[:-1, :].ravel()
    iy_j = node[1:, :].ravel()
    return ix_i, ix_j, iy_i, iy_j


def _assemble(p: FlowProblem) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray, np.ndarray]:
    """Dirichlet-eliminated SPD system: A h_free = b (wells included in b)."""
    g = p.grid
    fixed, hfix = _fixed_heads(p)
    if not fixed.any():
        raise InvalidInputError("all boundaries are no-flux; the system is singular")
    free_of = np.full(g.n_nodes, -1, dtype=np.int64)
    free_of[~fixed] = np.arange((~fixed).sum())
    n_free = int((~fixed).sum())

    cx, cy = _conductances(p)
    fi_x, fj_x, fi_y, fj_y = _face_index_arrays(g)
    face_i = np.concatenate([fi_x, fi_y])
    face_j = np.concatenate([fj_x, fj_y])
    c = np.concatenate([cx.ravel(), cy.ravel()])

    b = np.zeros(n_free)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    i_free = ~fixed[face_i]
    j_free = ~fixed[face_j]

    # diagonal contributions: every face adds its conductance to both ends
    for end, endfree in ((face_i, i_free), (face_j, j_free)):
        rows.append(free_of[end[endfree]])
        cols.append(free_of[end[endfree]])
        vals.append(c[endfree])
    # off-diagonal where both ends are free
    both = i_free & j_free
    rows.append(free_of[face_i[both]])
    cols.append(free_of[face_j[both]])
    vals.append(-c[both])
    rows.append(free_of[face_j[both]])
    cols.append(free_of[face_i[both]])
    vals.append(-c[both])
    # fixed neighbors move to the right-hand side
    fi_only = i_free & ~j_free
    np.add.at(b, free_of[face_i[fi_only]], c[fi_only] * hfix[face_j[fi_only]])
    fj_only = j_free & ~i_free
    np.add.at(b, free_of[face_j[fj_only]], c[fj_only] * hfix[face_i[fj_only]])

    for w in p.wells:
        if not fixed[w.node]:
            b[free_of[w.node]] += w.rate

    a = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_free, n_free),
    )
    return a, b, fixed, hfix


def _cg_solve(a: sp.csr_matrix, b: np.ndarray, x0: np.ndarray,
              options: SolverOptions, n_nodes: int) -> np.ndarray:
    precond = sp.diags(1.0 / a.diagonal())
    x, info = spla.cg(a, b, x0=x0, rtol=options.rtol, atol=0.0,
                      maxiter=options.maxiter(n_nodes), M=precond)
    if info != 0:
        resid = float(np.linalg.norm(b - a @ x) / max(np.linalg.norm(b), 1e-300))
        raise NumericError(
            f"flow solver did not converge (info={info}, relative residual {resid:.3e})"
        )
    return x


def _full_head(fixed: np.ndarray, hfix: np.ndarray, h_free: np.ndarray) -> np.ndarray:
    h = hfix.copy()
    h[~fixed] = h_free
    return h


def solve_steady_flow(p: FlowProblem, options: SolverOptions = SolverOptions()) -> HeadSolution:
    """Steady head field; discrete mass is conserved to the solver tolerance."""
    a, b, fixed, hfix = _assemble(p)
    x0 = np.full(b.size, hfix[fixed].mean())
    h_free = _cg_solve(a, b, x0, options, p.grid.n_nodes)
    return HeadSolution(fields=(ScalarField(p.grid, _full_head(fixed, hfix, h_free)),))


def solve_transient_flow(
    p: FlowProblem,
    t_end: float,
    dt: float = 0.1,
    options: SolverOptions = SolverOptions(),
    record_times: tuple[float, ...] | None = None,
) -> HeadSolution:
    """Backward-Euler transient heads from ``initial_head`` to ``t_end``.

    Records every step unless ``record_times`` lists specific stamps (each
    must land on a step boundary within 1e-9). Storage term uses the node
    control-volume area times ``specific_storage`` (unit thickness).
    """
    if p.specific_storage is None or p.initial_head is None:
        raise InvalidInputError("transient run needs specific_storage and initial_head")
    if dt <= 0.0 or t_end <= 0.0:
        raise InvalidInputError("dt and t_end must be positive")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise InvalidInputError(f"t_end {t_end} is not a multiple of dt {dt}")

    a, b, fixed, hfix = _assemble(p)
    areas = p.grid.cell_areas()[~fixed]
    m_over_dt = p.specific_storage * areas / dt
    a_step = (a + sp.diags(m_over_dt)).tocsr()

    stamps = [round(k * dt, 12) for k in range(1, n_steps + 1)]
    if record_times is not None:
        wanted = []
        for t in record_times:
            k = int(round(t / dt))
            if not (1 <= k <= n_steps) or abs(k * dt - t) > 1e-9 * max(1.0, t):
                raise InvalidInputError(f"record time {t} not on the step grid (dt={dt})")
            wanted.append(k)
        record_set = set(wanted)
    else:
        record_set = set(range(1, n_steps + 1))

    h_free = p.initial_head.values[~fixed].copy()
    fields: list[ScalarField] = []
    times: list[float] = []
    for k in range(1, n_steps + 1):
        rhs = b + m_over_dt * h_free
        h_free = _cg_solve(a_step, rhs, h_free, options, p.grid.n_nodes)
        if k in record_set:
            fields.append(ScalarField(p.grid, _full_head(fixed, hfix, h_free)))
            times.append(stamps[k - 1])
    return HeadSolution(fields=tuple(fields), times=tuple(times))


def darcy_velocity(
    h: HeadSolution, p: FlowProblem, porosity: float
) -> tuple[ScalarField, ScalarField] | list[tuple[ScalarField, ScalarField]]:
    """Node velocities ``v = -(K / porosity) * grad(h)``.

    Gradients are central differences in the interior and one-sided on the
    boundary rows/columns. Steady solutions return one (vx, vy) pair;
    transient solutions return one pair per recorded time.
    """
    if porosity <= 0.0 or porosity >= 1.0:
        raise InvalidInputError(f"porosity must be in (0, 1), got {porosity}")
    g = p.grid
    k = p.conductivity.as_matrix()

    def one(fld: ScalarField) -> tuple[ScalarField, ScalarField]:
        hm = fld.as_matrix()
        dh_dy, dh_dx = np.gradient(hm, g.dy, g.dx)
        vx = -(k / porosity) * dh_dx
        vy = -(k / porosity) * dh_dy
        return ScalarField.from_matrix(g, vx), ScalarField.from_matrix(g, vy)

    if h.times is None:
        return one(h.fields[0])
    return [one(f) for f in h.fields]


def steady_mass_balance(p: FlowProblem, h: ScalarField) -> float:
    """Net boundary + well flow normalized by total well/boundary throughput.

    Zero (to solver tolerance) for a converged steady solution.
    """
    cx, cy = _conductances(p)
    fixed, _ = _fixed_heads(p)
    hm = h.as_matrix()
    fixm = fixed.reshape(p.grid.ny, p.grid.nx)

    # flow from fixed nodes into free neighbors, summed over boundary faces
    flux_x = cx * (hm[:, :-1] - hm[:, 1:])      # positive = i -> j
    flux_y = cy * (hm[:-1, :] - hm[1:, :])
    into_domain = 0.0
    scale = 0.0
    for flux, fi, fj in (
        (flux_x, fixm[:, :-1], fixm[:, 1:]),
        (flux_y, fixm[:-1, :], fixm[1:, :]),
    ):
        boundary_i = fi & ~fj
        boundary_j = fj & ~fi
        into_domain += flux[boundary_i].sum() - flux[boundary_j].sum()
        scale += np.abs(flux[boundary_i]).sum() + np.abs(flux[boundary_j]).sum()
    well_total = sum(w.rate for w in p.wells if not fixed[w.node])
    scale += sum(abs(w.rate) for w in p.wells)
    return float((into_domain + well_total) / max(scale, 1e-300))
