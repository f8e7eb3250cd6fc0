"""Reference scenarios: truth generation, priors, and forward models.

Each builder turns a resolved config into a reproducible inverse problem:
a reference parameter field, synthetic noisy observations of its response,
a prior ensemble, a picklable forward model, and the bound constraints the
updates clamp to. Seeds are split by role (truth / prior / noise) so one
randomness source can vary while the others stay fixed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channels import DsParams, direct_sampling, generate_channel_ti, sample_realizations
from .config import Case1Settings, Case2Settings, ExperimentConfig
from .core import (
    Ensemble,
    Grid2D,
    InvalidInputError,
    ObsLabel,
    ObservationSet,
    RngStream,
    ScalarField,
)
from .flow import (
    FlowProblem,
    SolverOptions,
    Well,
    darcy_velocity,
    solve_steady_flow,
    solve_transient_flow,
)
from .kl import CovarianceSpec, KLBasis, build_kl_basis, kl_realize
from .network import NetworkSpec
from .smoother import ParamConstraints
from .transport import TransportProblem, solve_transport


@dataclass(frozen=True)
class CaseTruth:
    """Reference scenario: the field to recover plus its noisy response.

    ``field`` is log-conductivity for the Gaussian case and conductivity for
    the channelized case; ``source`` holds the true release parameters when
    the case has them. ``clean_outputs`` is the noise-free forward response.
    """

    field: ScalarField
    params: np.ndarray
    source: tuple[float, ...] | None
    observations: ObservationSet
    clean_outputs: np.ndarray


@dataclass(frozen=True)
class BuiltCase:
    """Everything run_assimilation needs, plus the truth for metrics."""

    grid: Grid2D
    truth: CaseTruth
    prior: Ensemble
    forward: Callable[[np.ndarray], np.ndarray]
    constraints: ParamConstraints
    network_spec: NetworkSpec


@dataclass(frozen=True)
class Case1Forward:
    """Steady flow plus transient source transport, sampled at wells.

    Parameter vector: ``n_kl`` field coefficients, then source x, source y,
    then one loading rate per release interval. Output vector: steady heads
    at the wells, then concentrations per output time (wells within time).
    """

    grid: Grid2D
    basis: KLBasis
    settings: Case1Settings
    well_nodes: tuple[int, ...]
    solver: SolverOptions
    transport_dt: float

    @property
    def n_params(self) -> int:
        return self.basis.n_modes + self.settings.n_source_params

    @property
    def n_data(self) -> int:
        return len(self.well_nodes) * (1 + len(self.settings.conc_times))

    def __call__(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float).ravel()
        if m.size != self.n_params:
            raise InvalidInputError(f"expected {self.n_params} parameters, got {m.size}")
        s = self.settings
        n_kl = self.basis.n_modes
        log_k = kl_realize(self.basis, m[:n_kl])
        k = ScalarField(self.grid, np.exp(log_k.values))
        problem = FlowProblem(self.grid, k, s.head_left, s.head_right)
        heads = solve_steady_flow(problem, self.solver)
        vx, vy = darcy_velocity(heads, problem, s.porosity)
        transport = TransportProblem(
            grid=self.grid,
            porosity=s.porosity,
            alpha_l=s.alpha_l,
            alpha_t=s.alpha_t,
            vx=vx,
            vy=vy,
            output_times=s.conc_times,
            source_location=(m[n_kl], m[n_kl + 1]),
            loading_rates=tuple(m[n_kl + 2 :]),
            rate_edges=s.release_edges,
            dt=self.transport_dt,
            open_sides=("left", "right"),
        )
        concs = solve_transport(transport)
        idx = np.asarray(self.well_nodes)
        parts = [heads.steady.values[idx]]
        parts.extend(c.values[idx] for c in concs)
        return np.concatenate(parts)


@dataclass(frozen=True)
class Case2Forward:
    """Transient flow with an injection/pumping well pair, heads at wells.

    Parameter vector: one conductivity per grid node. Output vector: heads at
    the observation wells per output time (wells within time).
    """

    grid: Grid2D
    settings: Case2Settings
    obs_nodes: tuple[int, ...]
    obs_times: tuple[float, ...]
    solver: SolverOptions
    dt: float

    @property
    def n_params(self) -> int:
        return self.grid.n_nodes

    @property
    def n_data(self) -> int:
        return len(self.obs_nodes) * len(self.obs_times)

    def __call__(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=float).ravel()
        if m.size != self.n_params:
            raise InvalidInputError(f"expected {self.n_params} parameters, got {m.size}")
        s = self.settings
        g = self.grid
        wells = (
            Well(g.nearest_node(*s.injection_xy), s.injection_rate),
            Well(g.nearest_node(*s.pumping_xy), s.pumping_rate),
        )
        problem = FlowProblem(
            grid=g,
            conductivity=ScalarField(g, m),
            head_left=s.head_left,
            head_right=s.head_right,
            wells=wells,
            specific_storage=s.specific_storage,
            initial_head=ScalarField.constant(g, s.initial_head),
        )
        sol = solve_transient_flow(
            problem, t_end=self.obs_times[-1], dt=self.dt,
            options=self.solver, record_times=self.obs_times,
        )
        idx = np.asarray(self.obs_nodes)
        return np.concatenate([sol.at_time(t).values[idx] for t in self.obs_times])


def _well_nodes(grid: Grid2D, xs: tuple[float, ...], ys: tuple[float, ...]) -> tuple[int, ...]:
    return tuple(grid.nearest_node(x, y) for y in ys for x in xs)


def _observe(
    clean: np.ndarray, noise_std: float, labels: list[ObsLabel], seed: int
) -> ObservationSet:
    noise = RngStream(seed).generator.standard_normal(clean.size)
    return ObservationSet(clean + noise_std * noise, np.full(clean.size, noise_std), tuple(labels))


def make_case1_forward(cfg: ExperimentConfig) -> Case1Forward:
    cfg = cfg.resolved()
    s = cfg.case1
    grid = Grid2D(cfg.nx, cfg.ny, s.lx, s.ly)
    basis = build_kl_basis(
        CovarianceSpec(s.variance, s.corr_x, s.corr_y, s.log_k_mean), grid, s.n_kl
    )
    return Case1Forward(
        grid=grid,
        basis=basis,
        settings=s,
        well_nodes=_well_nodes(grid, s.well_x, s.well_y),
        solver=SolverOptions(cfg.flow.rtol, cfg.flow.maxiter_factor),
        transport_dt=cfg.transport.dt,
    )


def make_case2_forward(cfg: ExperimentConfig) -> Case2Forward:
    cfg = cfg.resolved()
    s = cfg.case2
    grid = Grid2D(cfg.nx, cfg.ny, s.lx, s.ly)
    return Case2Forward(
        grid=grid,
        settings=s,
        obs_nodes=_well_nodes(grid, s.obs_x, s.obs_y),
        obs_times=s.obs_times(),
        solver=SolverOptions(cfg.flow.rtol, cfg.flow.maxiter_factor),
        dt=cfg.flow.dt,
    )


def make_forward(cfg: ExperimentConfig) -> Case1Forward | Case2Forward:
    """The forward model alone (no truth or prior generation)."""
    cfg = cfg.resolved()
    if cfg.preset == "channel_case2":
        return make_case2_forward(cfg)
    return make_case1_forward(cfg)


def build_case1(cfg: ExperimentConfig) -> BuiltCase:
    """Gaussian-field scenario (also used by the ``custom`` preset)."""
    cfg = cfg.runnable()
    s = cfg.case1
    forward = make_case1_forward(cfg)
    grid = forward.grid
    basis = forward.basis
    well_nodes = forward.well_nodes

    truth_coeffs = RngStream(cfg.seeds.truth).generator.standard_normal(s.n_kl)
    truth_params = np.concatenate([truth_coeffs, np.asarray(s.true_source)])
    truth_field = kl_realize(basis, truth_coeffs)
    clean = forward(truth_params)

    xs, ys = grid.node_coords()
    labels = [ObsLabel("head", float(xs[n]), float(ys[n]), None) for n in well_nodes]
    for t in s.conc_times:
        labels.extend(
            ObsLabel("concentration", float(xs[n]), float(ys[n]), float(t))
            for n in well_nodes
        )
    obs = _observe(clean, s.noise_std, labels, cfg.seeds.noise)

    gen = RngStream(cfg.seeds.prior).generator
    coeffs = gen.standard_normal((s.n_kl, cfg.n_members))
    src_x = gen.uniform(*s.source_x_range, cfg.n_members)
    src_y = gen.uniform(*s.source_y_range, cfg.n_members)
    n_rates = s.n_source_params - 2
    rates = gen.uniform(*s.rate_range, (n_rates, cfg.n_members))
    prior = Ensemble(np.vstack([coeffs, src_x[None, :], src_y[None, :], rates]))

    n_params = s.n_kl + s.n_source_params
    bound_pairs = [(s.n_kl, *s.source_x_range), (s.n_kl + 1, *s.source_y_range)]
    bound_pairs += [(s.n_kl + 2 + k, *s.rate_range) for k in range(n_rates)]
    constraints = ParamConstraints.from_pairs(n_params, bound_pairs)

    widths = cfg.network.widths
    if widths is None:
        widths = NetworkSpec.default_widths(forward.n_data, n_params)
    spec = NetworkSpec(
        input_dim=forward.n_data,
        output_dim=n_params,
        widths=widths,
        output_activation=cfg.network.output_activation,
        batchnorm=cfg.network.batchnorm,
    )
    truth = CaseTruth(truth_field, truth_params, s.true_source, obs, clean)
    return BuiltCase(grid, truth, prior, forward, constraints, spec)


def build_case2(cfg: ExperimentConfig) -> BuiltCase:
    """Channelized-aquifer scenario with a pattern-sampled facies prior."""
    cfg = cfg.runnable()
    s = cfg.case2
    forward = make_case2_forward(cfg)
    grid = forward.grid
    ti_grid = Grid2D(s.ti_nx, s.ti_ny, (s.ti_nx - 1) * grid.dx, (s.ti_ny - 1) * grid.dy)
    ti = generate_channel_ti(ti_grid, s.ti_channels, RngStream(s.ti_seed), palette=s.palette)
    ds = DsParams(cfg.ds.n_neighbors, cfg.ds.distance_threshold, cfg.ds.scan_fraction)

    truth_field = direct_sampling(ti, grid, RngStream(cfg.seeds.truth), ds=ds)
    clean = forward(truth_field.values)

    xs, ys = grid.node_coords()
    labels = [
        ObsLabel("head", float(xs[n]), float(ys[n]), float(t))
        for t in forward.obs_times
        for n in forward.obs_nodes
    ]
    obs = _observe(clean, s.noise_std, labels, cfg.seeds.noise)

    fields = sample_realizations(ti, grid, cfg.n_members, RngStream(cfg.seeds.prior), ds=ds)
    prior = Ensemble(np.column_stack([f.values for f in fields]))

    n = grid.n_nodes
    constraints = ParamConstraints(np.full(n, s.k_bounds[0]), np.full(n, s.k_bounds[1]))
    widths = cfg.network.widths if cfg.network.widths is not None else (512, 512)
    spec = NetworkSpec(
        input_dim=forward.n_data,
        output_dim=n,
        widths=widths,
        output_activation=cfg.network.output_activation,
        batchnorm=cfg.network.batchnorm,
    )
    truth = CaseTruth(truth_field, truth_field.values.copy(), None, obs, clean)
    return BuiltCase(grid, truth, prior, forward, constraints, spec)


def build_case(cfg: ExperimentConfig) -> BuiltCase:
    """Dispatch on the preset; ``custom`` uses the Gaussian-field physics."""
    cfg = cfg.runnable()
    if cfg.preset == "channel_case2":
        return build_case2(cfg)
    return build_case1(cfg)


def make_field_mapper(cfg: ExperimentConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Parameter columns -> node-field columns, matching the case's truth field.

    Gaussian case: realize log-conductivity from the leading coefficients
    (source parameters are not part of the field). Channelized case: the
    parameters are the field.
    """
    cfg = cfg.resolved()
    if cfg.preset == "channel_case2":
        return lambda params: np.array(params, dtype=float)
    s = cfg.case1
    grid = Grid2D(cfg.nx, cfg.ny, s.lx, s.ly)
    basis = build_kl_basis(
        CovarianceSpec(s.variance, s.corr_x, s.corr_y, s.log_k_mean), grid, s.n_kl
    )
    weights = np.sqrt(basis.eigenvalues)

    def mapper(params: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(params, dtype=float)[: s.n_kl]
        return s.log_k_mean + basis.eigenfields @ (weights[:, None] * coeffs)

    return mapper
