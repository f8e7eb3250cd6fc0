"""End-to-end acceptance checks, one verdict line per criterion.

Criteria 8 and 9 execute full comparative experiments through the CLI entry
points. Finished run directories are cached under ``acceptance_runs/`` and
reused when their stored manifest still matches the current configuration
(runs are pure functions of config + seeds; criterion 10 checks exactly
that), so only a fresh checkout pays the full runtime.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ensmooth.cli import run
from ensmooth.config import ExperimentConfig, SeedBundle, desk_config
from ensmooth.core import Ensemble, Grid2D, ObservationSet, RngStream, ScalarField
from ensmooth.flow import (
    FlowProblem,
    Well,
    darcy_velocity,
    solve_steady_flow,
    solve_transient_flow,
    steady_mass_balance,
)
from ensmooth.kl import CovarianceSpec, build_kl_basis, kl_realize
from ensmooth.network import Network, NetworkSpec
from ensmooth.smoother import es_kalman_update, generate_training_pairs, mda_schedule
from ensmooth.storage import read_csv
from ensmooth.transport import TransportProblem, solve_transport

ARTIFACTS = Path(__file__).resolve().parent / "acceptance_runs"
CASE1_BUNDLES = (2, 4, 11)
CASE2_BUNDLES = (0, 1, 2)
CASE1_BUDGET_S = 45 * 60
CASE2_BUDGET_S = 60 * 60


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {number}: {detail}"


def scalar_ensemble(n_members: int, seed: int) -> Ensemble:
    params = RngStream(seed).generator.standard_normal((1, n_members))
    return Ensemble(params, outputs=params.copy())


SCALAR_OBS = ObservationSet(np.array([1.0]), np.array([0.5]))


def test_criterion_01_pair_count(capsys):
    t0 = time.perf_counter()
    e = scalar_ensemble(200, seed=11)
    pairs = generate_training_pairs(e, SCALAR_OBS, 2.0, RngStream(12))
    big_ok = pairs.inputs.shape[1] == 19_900
    all_ok = True
    for n in range(2, 51):
        p = generate_training_pairs(scalar_ensemble(n, seed=n), SCALAR_OBS, 2.0, RngStream(13))
        all_ok = all_ok and p.inputs.shape[1] == n * (n - 1) // 2
    elapsed = time.perf_counter() - t0
    ok = big_ok and all_ok and elapsed < 1.0
    report(capsys, 1, ok,
           f"N_e=200 gives {pairs.inputs.shape[1]} pairs; counts exact for "
           f"N_e in 2..50 ({elapsed:.2f}s)")


def test_criterion_02_linear_gaussian_posterior(capsys):
    t0 = time.perf_counter()
    e = scalar_ensemble(100_000, seed=21)
    updated = es_kalman_update(e, SCALAR_OBS, 1.0, RngStream(22))
    mean, var = float(updated.mean()), float(updated.var(ddof=1))
    elapsed = time.perf_counter() - t0
    ok = abs(mean - 0.8) <= 0.03 * 0.8 and abs(var - 0.2) <= 0.05 * 0.2 and elapsed < 10.0
    report(capsys, 2, ok,
           f"posterior mean {mean:.4f} (target 0.8 +- 3%), variance {var:.4f} "
           f"(target 0.2 +- 5%) ({elapsed:.2f}s)")


def test_criterion_03_mda_matches_single_pass(capsys):
    n = 10_000
    schedule = mda_schedule(4)
    weight_err = abs(sum(1.0 / a**2 for a in schedule.alphas) - 1.0)

    single = es_kalman_update(scalar_ensemble(n, seed=31), SCALAR_OBS, 1.0, RngStream(32))
    e = scalar_ensemble(n, seed=33)
    rng = RngStream(34)
    for t, alpha in enumerate(schedule.alphas):
        new_params = es_kalman_update(e, SCALAR_OBS, alpha, rng.child(t))
        e = Ensemble(new_params, outputs=new_params.copy())
    m_single, m_mda = float(single.mean()), float(e.params.mean())
    se = np.sqrt(single.var(ddof=1) / n + e.params.var(ddof=1) / n)
    ok = weight_err < 1e-12 and abs(m_mda - m_single) < 3.0 * se
    report(capsys, 3, ok,
           f"|mda mean - single-pass mean| = {abs(m_mda - m_single):.5f} "
           f"(3 combined SE = {3 * se:.5f}); sum 1/alpha^2 off by {weight_err:.1e}")


def test_criterion_04_gradients_match_finite_differences(capsys):
    net = Network(NetworkSpec(input_dim=5, output_dim=4, widths=(8, 7, 6)), RngStream(41))
    x = RngStream(42).generator.standard_normal((20, 5))
    y = RngStream(43).generator.standard_normal((20, 4))

    def loss() -> float:
        return float(np.mean((net.forward(x, train=True) - y) ** 2))

    net.zero_grads()
    out = net.forward(x, train=True)
    net.backward(2.0 * (out - y) / out.size)
    grads = [g.copy() for g in net.gradients()]

    h = 1e-5
    worst = 0.0
    checked = 0
    for arr, grad in zip(net.parameters(), grads):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss()
            arr[idx] = orig - h
            lm = loss()
            arr[idx] = orig
            fd = (lp - lm) / (2.0 * h)
            bp = float(grad[idx])
            # a bias feeding batchnorm has exactly zero gradient; the floor
            # keeps finite-difference roundoff there from reading as error
            worst = max(worst, abs(fd - bp) / max(abs(fd), abs(bp), 1e-6))
            checked += 1
    ok = worst < 1e-4
    report(capsys, 4, ok,
           f"all {checked} parameters of a 3-block network: worst relative "
           f"gradient error {worst:.2e} (limit 1e-4)")


def test_criterion_05_flow_analytics(capsys):
    grid = Grid2D(41, 21, 20.0, 10.0)
    k = ScalarField.constant(grid, 2.0)
    p = FlowProblem(grid, k, head_left=12.0, head_right=11.0)
    h = solve_steady_flow(p).steady
    xs, _ = grid.node_coords()
    linear_dev = float(np.abs(h.values - (12.0 - xs / 20.0)).max())

    wells = (Well(grid.node_index(10, 10), 3.0), Well(grid.node_index(30, 5), -1.5))
    pw = FlowProblem(grid, k, head_left=12.0, head_right=11.0, wells=wells)
    balance = abs(steady_mass_balance(pw, solve_steady_flow(pw).steady))

    pt = FlowProblem(grid, k, head_left=12.0, head_right=11.0,
                     specific_storage=1e-4,
                     initial_head=ScalarField.constant(grid, 11.5))
    sol = solve_transient_flow(pt, t_end=2.0, dt=0.05)
    steady_gap = float(np.abs(sol.fields[-1].values - h.values).max())

    ok = linear_dev < 1e-8 and balance < 1e-8 and steady_gap < 1e-6
    report(capsys, 5, ok,
           f"linear-profile deviation {linear_dev:.1e}; two-well balance "
           f"{balance:.1e}; transient-to-steady gap {steady_gap:.1e}")


def test_criterion_06_transport_conservation(capsys):
    grid = Grid2D(41, 21, 20.0, 10.0)
    basis = build_kl_basis(CovarianceSpec(1.0, 10.0, 5.0, mean=2.0), grid, 50)
    log_k = kl_realize(basis, RngStream(61).generator.standard_normal(50))
    k = ScalarField(grid, np.exp(log_k.values))
    p = FlowProblem(grid, k, head_left=12.0, head_right=11.0)
    heads = solve_steady_flow(p)
    vx, vy = darcy_velocity(heads, p, porosity=0.25)
    transport = TransportProblem(
        grid=grid, porosity=0.25, alpha_l=0.3, alpha_t=0.03, vx=vx, vy=vy,
        output_times=(4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0),
        source_location=(3.52, 4.44),
        loading_rates=(5.69, 7.88, 6.31, 1.49, 6.87, 5.55),
        rate_edges=(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0),
        dt=0.05, open_sides=("left", "right"),
    )
    fields, budget = solve_transport(transport, return_budget=True)
    worst = max(abs(row.residual) for row in budget)
    c_min = min(float(f.values.min()) for f in fields)
    ok = len(budget) >= 100 and worst < 1e-6 and c_min >= 0.0
    report(capsys, 6, ok,
           f"{len(budget)} steps, worst per-step budget residual {worst:.1e} "
           f"(limit 1e-6), minimum concentration {c_min:.1e}")


def test_criterion_07_kl_variance_capture(capsys):
    grid = Grid2D(81, 41, 20.0, 10.0)
    basis = build_kl_basis(CovarianceSpec(1.0, 10.0, 5.0, mean=2.0), grid, 100)
    w = grid.cell_areas()
    gram_dev = float(np.abs(
        basis.eigenfields.T @ (w[:, None] * basis.eigenfields) - np.eye(100)
    ).max())
    ok = 0.93 <= basis.captured_fraction <= 0.97 and gram_dev < 1e-8
    report(capsys, 7, ok,
           f"100 modes on 81x41 capture {basis.captured_fraction:.3f} of the "
           f"variance (window 0.93..0.97); Gram deviation {gram_dev:.1e}")


def _comparative_run(preset: str, bundle: int, method: str) -> tuple[dict, float]:
    """Summary row for one cached experiment, running it first if needed."""
    out = ARTIFACTS / f"{preset}_b{bundle}_{method}"
    cfg = desk_config(preset, method, SeedBundle.from_index(bundle),
                      out_dir=str(out), workers=max(1, (os.cpu_count() or 1) - 1))

    def stripped(d: dict) -> dict:
        return {k: v for k, v in d.items() if k not in ("out_dir", "workers")}

    manifest = out / "run_manifest.json"
    cached = (out / "summary.csv").exists() and manifest.exists() and stripped(
        json.loads(manifest.read_text(encoding="utf-8"))["config"]
    ) == stripped(cfg.to_dict())
    elapsed = 0.0
    if not cached:
        t0 = time.perf_counter()
        run(cfg)
        elapsed = time.perf_counter() - t0
    header, rows = read_csv(out / "summary.csv")
    return dict(zip(header, rows[0])), elapsed


def _budget_note(fresh: float, budget: float) -> tuple[bool, str]:
    """Enforce the wall-clock budget only when the runs actually executed
    here on hardware at least as wide as the budget assumes (8 cores)."""
    if fresh == 0.0:
        return True, "cached artifacts"
    note = f"ran in {fresh / 60:.1f} min on {os.cpu_count()} core(s)"
    if (os.cpu_count() or 1) >= 8:
        return fresh < budget, note + f" (budget {budget / 60:.0f} min)"
    return True, note + " (budget assumes 8 cores; not enforced)"


def test_criterion_08_gaussian_case_comparative(capsys):
    rows: dict[tuple[int, str], dict] = {}
    fresh = 0.0
    for b in CASE1_BUNDLES:
        for method in ("kalman", "dl"):
            rows[(b, method)], dt = _comparative_run("gaussian_case1", b, method)
            fresh += dt

    def passes(row: dict) -> bool:
        src_ok = float(row["source_rmsre_posterior"]) < 0.5 * float(row["source_rmsre_prior"])
        field_ok = float(row["field_rmse_posterior"]) < float(row["field_rmse_prior"])
        return src_ok and field_ok

    wins = {m: sum(passes(rows[(b, m)]) for b in CASE1_BUNDLES) for m in ("kalman", "dl")}
    dl_src = np.mean([float(rows[(b, "dl")]["source_rmsre_posterior"]) for b in CASE1_BUNDLES])
    k_src = np.mean([float(rows[(b, "kalman")]["source_rmsre_posterior"]) for b in CASE1_BUNDLES])
    ratio = dl_src / k_src
    time_ok, note = _budget_note(fresh, CASE1_BUDGET_S)
    ok = wins["kalman"] >= 2 and wins["dl"] >= 2 and ratio <= 3.0 and time_ok
    report(capsys, 8, ok,
           f"bundles {CASE1_BUNDLES}: kalman passes {wins['kalman']}/3, "
           f"dl passes {wins['dl']}/3; source-RMSRE ratio dl/kalman "
           f"{ratio:.2f} (limit 3); {note}")


def test_criterion_09_channel_case_comparative(capsys):
    rows: dict[tuple[int, str], dict] = {}
    fresh = 0.0
    for b in CASE2_BUNDLES:
        for method in ("kalman", "dl"):
            rows[(b, method)], dt = _comparative_run("channel_case2", b, method)
            fresh += dt

    def bundle_ok(b: int) -> bool:
        k, d = rows[(b, "kalman")], rows[(b, "dl")]
        field = float(d["field_rmse_posterior"]) <= float(k["field_rmse_posterior"])
        bimod = float(d["bimodality_posterior"]) > float(k["bimodality_posterior"])
        heads = float(d["head_misfit_median_posterior"]) < float(k["head_misfit_median_posterior"])
        return field and bimod and heads

    wins = sum(bundle_ok(b) for b in CASE2_BUNDLES)
    time_ok, note = _budget_note(fresh, CASE2_BUDGET_S)
    ok = wins >= 2 and time_ok
    report(capsys, 9, ok,
           f"bundles {CASE2_BUNDLES}: dl beats kalman on field RMSE, "
           f"bimodality and median head misfit in {wins}/3 bundles; {note}")


def test_criterion_10_reruns_are_byte_identical(capsys, tmp_path):
    base = {
        "preset": "custom", "method": "kalman", "nx": 11, "ny": 7,
        "n_members": 20, "n_iter": 2,
        "seeds": {"truth": 1, "prior": 2, "noise": 3, "training": 4},
        "case1": {"n_kl": 12},
    }
    blobs = []
    for name in ("first", "second"):
        cfg = ExperimentConfig.from_dict({**base, "out_dir": str(tmp_path / name)})
        out = run(cfg)
        blobs.append((out / "summary.csv").read_bytes())
    ok = blobs[0] == blobs[1]
    report(capsys, 10, ok,
           f"two runs from one config produced {'identical' if ok else 'DIFFERENT'} "
           f"summary bytes ({len(blobs[0])} bytes)")
