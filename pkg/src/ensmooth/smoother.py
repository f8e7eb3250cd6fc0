"""Iterative ensemble smoothers with inflated-noise multiple data assimilation.

Two update rules share the same schedule and perturbation convention:

* Kalman: ``m_i += C_MY (C_YY + a^2 R)^{-1} (y_obs + a e_i - f(m_i))`` with
  ensemble cross-covariances (denominator ``n_members - 1``).
* Learned mapping: a network trained on all unordered member pairs
  (inputs ``f(m_i) - f(m_j) + a e_ij``, outputs ``m_i - m_j``) replaces the
  Kalman gain; the update applies the network to the innovation vectors.

A schedule of ``n_iter`` inflation factors ``a_t`` with ``sum(1/a_t^2) = 1``
makes the repeated updates consistent with a single full-weight update in the
linear-Gaussian limit. Observation perturbations are redrawn for every member
at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .core import (
    Ensemble,
    InvalidInputError,
    NumericError,
    ObservationSet,
    RngStream,
    perturb_observations,
)
from .network import Network, NetworkSpec
from .storage import save_ensemble, write_csv
from .training import Scaler, TrainConfig, fit, predict_update

CONDITION_LIMIT = 1e14


@dataclass(frozen=True)
class MdaSchedule:
    """Noise-inflation factors; ``sum(1/alpha^2)`` must equal 1 (within 1e-12)."""

    alphas: tuple[float, ...]

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas or any(a <= 0.0 for a in alphas):
            raise InvalidInputError("alphas must be positive and nonempty")
        total = sum(1.0 / a**2 for a in alphas)
        if abs(total - 1.0) > 1e-12:
            raise InvalidInputError(
                f"sum of 1/alpha^2 is {total!r}, must be 1 (got alphas={alphas})"
            )
        object.__setattr__(self, "alphas", alphas)

    @property
    def n_iter(self) -> int:
        return len(self.alphas)


def mda_schedule(n_iter: int) -> MdaSchedule:
    """Uniform schedule: ``n_iter`` passes with ``alpha = sqrt(n_iter)``."""
    if n_iter < 1:
        raise InvalidInputError("n_iter must be >= 1")
    return MdaSchedule(tuple([float(np.sqrt(n_iter))] * n_iter))


@dataclass(frozen=True)
class ParamConstraints:
    """Per-parameter bounds applied by clamping after each update."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise InvalidInputError("lower/upper shapes differ")
        if np.any(lo >= hi):
            raise InvalidInputError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, n_params: int) -> "ParamConstraints":
        return cls(np.full(n_params, -np.inf), np.full(n_params, np.inf))

    @classmethod
    def from_pairs(cls, n_params: int, pairs: list[tuple[int, float, float]]) -> "ParamConstraints":
        lo = np.full(n_params, -np.inf)
        hi = np.full(n_params, np.inf)
        for idx, low, high in pairs:
            lo[idx], hi[idx] = low, high
        return cls(lo, hi)

    def clamp(self, params: np.ndarray) -> np.ndarray:
        return np.clip(params, self.lower[:, None], self.upper[:, None])


@dataclass(frozen=True)
class KalmanContext:
    """Cross-covariances and the diagonal noise covariance for one update."""

    c_my: np.ndarray
    c_yy: np.ndarray
    r_diag: np.ndarray


def kalman_context(e: Ensemble, obs: ObservationSet) -> KalmanContext:
    """Ensemble covariances against outputs (denominator ``n_members - 1``)."""
    if e.outputs is None:
        raise InvalidInputError("ensemble has no outputs; run the forward model first")
    if e.outputs.shape[0] != obs.n_data:
        raise InvalidInputError(
            f"outputs have {e.outputs.shape[0]} rows, observations {obs.n_data}"
        )
    dm = e.params - e.params.mean(axis=1, keepdims=True)
    dy = e.outputs - e.outputs.mean(axis=1, keepdims=True)
    denom = e.n_members - 1
    return KalmanContext(dm @ dy.T / denom, dy @ dy.T / denom, obs.noise_std**2)


def _innovations(e: Ensemble, obs: ObservationSet, alpha: float, rng: RngStream) -> np.ndarray:
    perturbed = perturb_observations(obs, alpha, e.n_members, rng)
    return perturbed - e.outputs


def es_kalman_update(
    e: Ensemble,
    obs: ObservationSet,
    alpha: float,
    rng: RngStream,
    constraints: ParamConstraints | None = None,
) -> np.ndarray:
    """One Kalman-type update; returns the new parameter matrix.

    Solves the SPD system ``(C_YY + alpha^2 R) X = innovations`` by Cholesky
    factorization and rejects condition estimates above 1e14.
    """
    ctx = kalman_context(e, obs)
    a = ctx.c_yy + alpha**2 * np.diag(ctx.r_diag)
    eigs = scipy.linalg.eigvalsh(a)
    if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > CONDITION_LIMIT:
        cond = np.inf if eigs[0] <= 0.0 else eigs[-1] / eigs[0]
        raise NumericError(f"update system ill-conditioned (estimate {cond:.3e})")
    cho = scipy.linalg.cho_factor(a, lower=True)
    x = scipy.linalg.cho_solve(cho, _innovations(e, obs, alpha, rng))
    params = e.params + ctx.c_my @ x
    return constraints.clamp(params) if constraints is not None else params


@dataclass(frozen=True)
class TrainingPairs:
    """Member-pair differences: one column per unordered pair (i < j).

    ``inputs[:, c] = f(m_i) - f(m_j) + alpha * eps_c`` and
    ``outputs[:, c] = m_i - m_j``, columns in lexicographic (i, j) order.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    n_members: int

    def __post_init__(self) -> None:
        expected = self.n_members * (self.n_members - 1) // 2
        if self.inputs.ndim != 2 or self.outputs.ndim != 2:
            raise InvalidInputError("pair matrices must be 2-D")
        if self.inputs.shape[1] != expected or self.outputs.shape[1] != expected:
            raise InvalidInputError(
                f"{self.n_members} members imply {expected} pairs, got "
                f"{self.inputs.shape[1]}/{self.outputs.shape[1]}"
            )

    @property
    def n_pairs(self) -> int:
        return self.inputs.shape[1]


def generate_training_pairs(
    e: Ensemble, obs: ObservationSet, alpha: float, rng: RngStream
) -> TrainingPairs:
    """All unordered member pairs with fresh inflated noise per pair."""
    if e.outputs is None:
        raise InvalidInputError("ensemble has no outputs; run the forward model first")
    if alpha <= 0.0:
        raise InvalidInputError("alpha must be positive")
    ii, jj = np.triu_indices(e.n_members, k=1)
    eps = rng.generator.standard_normal((obs.n_data, ii.size))
    inputs = e.outputs[:, ii] - e.outputs[:, jj] + alpha * obs.noise_std[:, None] * eps
    outputs = e.params[:, ii] - e.params[:, jj]
    return TrainingPairs(inputs, outputs, e.n_members)


def es_dl_update(
    e: Ensemble,
    net: Network,
    scaler: Scaler,
    obs: ObservationSet,
    alpha: float,
    rng: RngStream,
    constraints: ParamConstraints | None = None,
) -> np.ndarray:
    """Apply a trained innovation-to-update mapping to every member."""
    if e.outputs is None:
        raise InvalidInputError("ensemble has no outputs; run the forward model first")
    updates = predict_update(net, scaler, _innovations(e, obs, alpha, rng))
    params = e.params + updates
    return constraints.clamp(params) if constraints is not None else params


class ForwardModelError(NumericError):
    """One or more members failed in the forward model."""

    def __init__(self, failures: list[tuple[int, str]]) -> None:
        self.failures = failures
        preview = "; ".join(f"member {i}: {msg}" for i, msg in failures[:5])
        more = "" if len(failures) <= 5 else f" (+{len(failures) - 5} more)"
        super().__init__(f"forward model failed for {len(failures)} member(s): {preview}{more}")


@dataclass(frozen=True)
class _Guarded:
    """Picklable wrapper so member failures come back as data, not exceptions."""

    forward: object

    def __call__(self, m: np.ndarray):
        try:
            y = np.asarray(self.forward(m), dtype=float).ravel()
        except Exception as exc:  # noqa: BLE001 - reported per member
            return None, f"{type(exc).__name__}: {exc}"
        if not np.all(np.isfinite(y)):
            return None, "non-finite outputs"
        return y, None


def evaluate_ensemble(forward, params: np.ndarray, map_fn=None) -> np.ndarray:
    """Run the forward model on every column; returns (n_data, n_members).

    ``map_fn`` may be a parallel map (e.g. ``pool.map``); results keep member
    order. Any member failure aborts with a ForwardModelError naming the
    members and reasons.
    """
    columns = [params[:, i] for i in range(params.shape[1])]
    results = list((map_fn or map)(_Guarded(forward), columns))
    failures = [(i, msg) for i, (y, msg) in enumerate(results) if y is None]
    if failures:
        raise ForwardModelError(failures)
    lengths = {y.size for y, _ in results}
    if len(lengths) != 1:
        raise ForwardModelError([(0, f"inconsistent output lengths {sorted(lengths)}")])
    return np.column_stack([y for y, _ in results])


def mean_data_misfit(e: Ensemble, obs: ObservationSet) -> float:
    """Mean over members of the RMSE between outputs and observed values."""
    if e.outputs is None:
        raise InvalidInputError("ensemble has no outputs")
    diff = e.outputs - obs.values[:, None]
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=0))))


@dataclass
class AssimilationResult:
    """Ensemble trajectory (prior first), trained nets per iteration, misfits."""

    history: list[Ensemble]
    networks: list[tuple[Network, Scaler]]
    misfit: list[tuple[int, float]]

    @property
    def posterior(self) -> Ensemble:
        return self.history[-1]


def run_assimilation(
    prior: Ensemble,
    obs: ObservationSet,
    forward,
    method: str,
    schedule: MdaSchedule,
    rng: RngStream,
    constraints: ParamConstraints | None = None,
    network_spec: NetworkSpec | None = None,
    train_config: TrainConfig | None = None,
    out_dir: str | Path | None = None,
    map_fn=None,
) -> AssimilationResult:
    """Full multiple-data-assimilation loop for either update rule.

    Outputs are refreshed whenever parameters change (including a final
    forward sweep on the posterior). With ``out_dir`` set, every iteration's
    ensemble is persisted as ``ens_t{t}`` and the per-iteration mean data
    misfit is written to ``misfit.csv``. For ``method="dl"`` a fresh network
    is trained each iteration on the current pair set.
    """
    if method not in ("kalman", "dl"):
        raise InvalidInputError(f"unknown method {method!r}")
    out = Path(out_dir) if out_dir is not None else None

    e = prior
    if e.outputs is None:
        e = e.with_outputs(evaluate_ensemble(forward, e.params, map_fn))
    history = [e]
    networks: list[tuple[Network, Scaler]] = []
    misfit = [(0, mean_data_misfit(e, obs))]
    if out is not None:
        save_ensemble(e, out / "ens_t0")

    cfg = train_config if train_config is not None else TrainConfig()
    for t, alpha in enumerate(schedule.alphas, start=1):
        member_rng = rng.child(2 * t)
        if method == "kalman":
            new_params = es_kalman_update(e, obs, alpha, member_rng, constraints)
        else:
            pairs = generate_training_pairs(e, obs, alpha, rng.child(2 * t + 1))
            spec = network_spec
            if spec is None:
                spec = NetworkSpec(
                    input_dim=obs.n_data,
                    output_dim=e.n_params,
                    widths=NetworkSpec.default_widths(obs.n_data, e.n_params),
                )
            net, scaler, _hist = fit(
                spec, pairs.inputs.T, pairs.outputs.T, replace(cfg, seed=cfg.seed + t)
            )
            networks.append((net, scaler))
            new_params = es_dl_update(e, net, scaler, obs, alpha, member_rng, constraints)
        e = e.with_params(new_params, iteration=t)
        e = e.with_outputs(evaluate_ensemble(forward, e.params, map_fn))
        history.append(e)
        misfit.append((t, mean_data_misfit(e, obs)))
        if out is not None:
            save_ensemble(e, out / f"ens_t{t}")

    if out is not None:
        write_csv(out / "misfit.csv", ["iteration", "mean_rmse"],
                  [[t, v] for t, v in misfit])
    return AssimilationResult(history, networks, misfit)
