"""Config-driven experiment harness and command-line entry point.

``run`` builds a case, assimilates with the selected method, and leaves a
self-describing artifact directory: the resolved config (run manifest), the
reference field and observations, per-iteration ensemble snapshots, posterior
mean/std fields, plot-ready CSVs and a one-row summary. ``metrics`` recomputes
every derived artifact from the snapshots alone, so a finished run directory
can always be re-summarized. Runs are pure functions of (config, seeds): no
wall-clock state enters any artifact.
"""

from __future__ import annotations

import argparse
import functools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cases import build_case, make_field_mapper, make_forward
from .config import METHODS, PRESETS, ExperimentConfig, SeedBundle
from .core import (
    InvalidInputError,
    ObsLabel,
    ObservationSet,
    RngStream,
    ScalarField,
    rmse,
    rmsre,
)
from .smoother import evaluate_ensemble, mda_schedule, run_assimilation
from .storage import load_ensemble, load_field, read_csv, save_ensemble, save_field, write_csv
from .training import TrainConfig

MANIFEST_NAME = "run_manifest.json"


def _write_manifest(cfg: ExperimentConfig, out: Path) -> None:
    doc = {"schema_version": 1, "kind": "run", "config": cfg.to_dict()}
    (out / MANIFEST_NAME).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _read_manifest(run_dir: Path) -> ExperimentConfig:
    path = run_dir / MANIFEST_NAME
    if not path.exists():
        raise InvalidInputError(f"no {MANIFEST_NAME} in {run_dir}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return ExperimentConfig.from_dict(doc["config"])


def _write_observations(obs: ObservationSet, path: Path) -> None:
    rows = [
        [lab.kind, float(lab.x), float(lab.y),
         "" if lab.time is None else float(lab.time), float(v), float(s)]
        for lab, v, s in zip(obs.labels, obs.values, obs.noise_std)
    ]
    write_csv(path, ["kind", "x", "y", "time", "value", "noise_std"], rows)


def _read_observations(path: Path) -> ObservationSet:
    header, rows = read_csv(path)
    if header != ["kind", "x", "y", "time", "value", "noise_std"]:
        raise InvalidInputError(f"unexpected observation columns {header} in {path}")
    labels = [
        ObsLabel(r[0], float(r[1]), float(r[2]), None if r[3] == "" else float(r[3]))
        for r in rows
    ]
    values = np.array([float(r[4]) for r in rows])
    noise = np.array([float(r[5]) for r in rows])
    return ObservationSet(values, noise, tuple(labels))


def _write_truth_source(source: tuple[float, ...], path: Path) -> None:
    names = ["source_x", "source_y"] + [f"rate_{k + 1}" for k in range(len(source) - 2)]
    write_csv(path, ["name", "value"], [[n, float(v)] for n, v in zip(names, source)])


def _read_truth_source(path: Path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.array([float(r[1]) for r in rows])


@contextmanager
def _map_context(workers: int, n_tasks: int):
    """Yield a parallel map for forward sweeps, or None for the builtin."""
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield functools.partial(pool.map, chunksize=max(1, n_tasks // (4 * workers)))


def bimodality_index(values: np.ndarray, low: tuple[float, float],
                     high: tuple[float, float]) -> float:
    """Fraction of values inside either facies window."""
    v = np.asarray(values, dtype=float)
    in_low = (v >= low[0]) & (v <= low[1])
    in_high = (v >= high[0]) & (v <= high[1])
    return float(np.mean(in_low | in_high))


def run(cfg: ExperimentConfig) -> Path:
    """Execute a full experiment; on failure leave a FAILED marker and re-raise."""
    cfg = cfg.runnable()
    if cfg.out_dir is None:
        raise InvalidInputError("run needs an output directory (config out_dir or --out)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        _execute_run(cfg, out)
    except Exception as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    return out


def _execute_run(cfg: ExperimentConfig, out: Path) -> None:
    built = build_case(cfg)
    _write_manifest(cfg, out)
    save_field(built.truth.field, out / "truth_field")
    _write_observations(built.truth.observations, out / "observations.csv")
    if built.truth.source is not None:
        _write_truth_source(built.truth.source, out / "truth_source.csv")

    train_cfg = TrainConfig(
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        max_epochs=cfg.train.max_epochs,
        validation_fraction=cfg.train.validation_fraction,
        patience=cfg.train.patience,
        seed=cfg.seeds.training,
    )
    with _map_context(cfg.workers, cfg.n_members) as map_fn:
        run_assimilation(
            built.prior,
            built.truth.observations,
            built.forward,
            method=cfg.method,
            schedule=mda_schedule(cfg.n_iter),
            rng=RngStream(cfg.seeds.noise).child(0),
            constraints=built.constraints,
            network_spec=built.network_spec,
            train_config=train_cfg,
            out_dir=out,
            map_fn=map_fn,
        )
    metrics(out)


def metrics(run_dir: str | Path) -> Path:
    """Recompute all derived artifacts from the snapshots; returns summary path.

    Idempotent: running it on a finished directory rewrites byte-identical
    files, so the run-time summary and a later recomputation always agree.
    """
    run_dir = Path(run_dir)
    cfg = _read_manifest(run_dir).resolved()
    truth_field = load_field(run_dir / "truth_field")
    obs = _read_observations(run_dir / "observations.csv")
    prior = load_ensemble(run_dir / "ens_t0")
    posterior = load_ensemble(run_dir / f"ens_t{cfg.n_iter}")
    if prior.outputs is None or posterior.outputs is None:
        raise InvalidInputError("snapshots are missing forward-model outputs")

    mapper = make_field_mapper(cfg)
    prior_mean = mapper(prior.params).mean(axis=1)
    post_fields = mapper(posterior.params)
    post_mean = post_fields.mean(axis=1)
    post_std = post_fields.std(axis=1, ddof=1)
    grid = truth_field.grid
    save_field(ScalarField(grid, post_mean), run_dir / "posterior_mean")
    save_field(ScalarField(grid, post_std), run_dir / "posterior_std")

    counts, edges = np.histogram(post_mean, bins=30)
    write_csv(
        run_dir / "field_histogram.csv",
        ["bin_low", "bin_high", "count"],
        [[float(edges[i]), float(edges[i + 1]), int(c)] for i, c in enumerate(counts)],
    )

    head_rows = np.array([i for i, lab in enumerate(obs.labels) if lab.kind == "head"])
    head_vals = obs.values[head_rows]
    prior_head = np.sqrt(np.mean((prior.outputs[head_rows] - head_vals[:, None]) ** 2, axis=0))
    post_head = np.sqrt(np.mean((posterior.outputs[head_rows] - head_vals[:, None]) ** 2, axis=0))
    write_csv(
        run_dir / "head_misfit.csv",
        ["member", "prior_rmse", "posterior_rmse"],
        [[int(i), float(a), float(b)] for i, (a, b) in enumerate(zip(prior_head, post_head))],
    )

    source_rmsre_prior: float | str = ""
    source_rmsre_post: float | str = ""
    src_path = run_dir / "truth_source.csv"
    if src_path.exists():
        truth_src = _read_truth_source(src_path)
        n_lead = prior.n_params - truth_src.size
        source_rmsre_prior = rmsre(prior.params[n_lead:].mean(axis=1), truth_src)
        source_rmsre_post = rmsre(posterior.params[n_lead:].mean(axis=1), truth_src)
        names = ["source_x", "source_y"] + [f"rate_{k + 1}" for k in range(truth_src.size - 2)]
        write_csv(
            run_dir / "source_marginals.csv",
            ["member"] + names,
            [[int(i)] + [float(v) for v in posterior.params[n_lead:, i]]
             for i in range(posterior.n_members)],
        )

    bimod_prior: float | str = ""
    bimod_post: float | str = ""
    if cfg.preset == "channel_case2":
        s = cfg.case2
        bimod_prior = bimodality_index(prior_mean, s.bimodal_low, s.bimodal_high)
        bimod_post = bimodality_index(post_mean, s.bimodal_low, s.bimodal_high)

    diff = posterior.outputs - obs.values[:, None]
    final_misfit = float(np.mean(np.sqrt(np.mean(diff**2, axis=0))))

    summary = run_dir / "summary.csv"
    write_csv(
        summary,
        [
            "preset", "method", "n_members", "n_iter",
            "field_rmse_prior", "field_rmse_posterior",
            "source_rmsre_prior", "source_rmsre_posterior",
            "bimodality_prior", "bimodality_posterior",
            "head_misfit_median_prior", "head_misfit_median_posterior",
            "final_mean_data_rmse",
        ],
        [[
            cfg.preset, cfg.method, int(cfg.n_members), int(cfg.n_iter),
            rmse(prior_mean, truth_field.values), rmse(post_mean, truth_field.values),
            source_rmsre_prior, source_rmsre_post,
            bimod_prior, bimod_post,
            float(np.median(prior_head)), float(np.median(post_head)),
            final_misfit,
        ]],
    )
    return summary


def gen_prior(cfg: ExperimentConfig) -> Path:
    """Standalone stage: build the case and persist truth, observations, prior."""
    cfg = cfg.runnable()
    if cfg.out_dir is None:
        raise InvalidInputError("gen-prior needs an output directory")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    built = build_case(cfg)
    _write_manifest(cfg, out)
    save_field(built.truth.field, out / "truth_field")
    _write_observations(built.truth.observations, out / "observations.csv")
    if built.truth.source is not None:
        _write_truth_source(built.truth.source, out / "truth_source.csv")
    save_ensemble(built.prior, out / "ens_prior")
    return out


def forward_stage(cfg: ExperimentConfig, ensemble_stem: str | Path,
                  out_stem: str | Path) -> Path:
    """Standalone stage: evaluate the case's forward model on a saved ensemble.

    Relative stems resolve against ``cfg.out_dir`` when one is set.
    """
    cfg = cfg.resolved()
    if cfg.out_dir is not None:
        base = Path(cfg.out_dir)
        ensemble_stem = base / ensemble_stem
        out_stem = base / out_stem
    forward = make_forward(cfg)
    e = load_ensemble(ensemble_stem)
    if e.n_params != forward.n_params:
        raise InvalidInputError(
            f"ensemble has {e.n_params} parameters, forward model expects {forward.n_params}"
        )
    with _map_context(cfg.workers, e.n_members) as map_fn:
        outputs = evaluate_ensemble(forward, e.params, map_fn)
    save_ensemble(e.with_outputs(outputs), out_stem)
    return Path(out_stem)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidInputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidInputError("config root must be a JSON object")
    if getattr(args, "preset", None):
        data["preset"] = args.preset
    if getattr(args, "method", None):
        data["method"] = args.method
    if getattr(args, "out", None):
        data["out_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers
    if getattr(args, "seed_bundle", None) is not None:
        data["seeds"] = asdict(SeedBundle.from_index(args.seed_bundle))
    if "preset" not in data:
        raise InvalidInputError("a preset is required (--preset or config 'preset')")
    return ExperimentConfig.from_dict(data)


def _add_config_args(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("--preset", choices=PRESETS)
    if with_method:
        p.add_argument("--method", choices=METHODS)
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed-bundle", type=int, help="expand to the four named seeds")
    p.add_argument("--workers", type=int, help="forward-model worker processes")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensmooth",
        description="Ensemble-smoother experiments on groundwater inverse problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="build a case, assimilate, write artifacts")
    _add_config_args(p_run)

    p_metrics = sub.add_parser("metrics", help="recompute summary from a run directory")
    p_metrics.add_argument("run_dir")

    p_gen = sub.add_parser("gen-prior", help="generate truth, observations and prior only")
    _add_config_args(p_gen, with_method=False)

    p_fwd = sub.add_parser("forward", help="evaluate the forward model on a saved ensemble")
    _add_config_args(p_fwd, with_method=False)
    p_fwd.add_argument("--ensemble", required=True, help="input ensemble stem")
    p_fwd.add_argument("--out-stem", required=True, help="output ensemble stem")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            out = run(_config_from_args(args))
            print(f"run complete: {out / 'summary.csv'}")
        elif args.command == "metrics":
            print(f"metrics written: {metrics(args.run_dir)}")
        elif args.command == "gen-prior":
            print(f"prior written: {gen_prior(_config_from_args(args))}")
        elif args.command == "forward":
            stem = forward_stage(_config_from_args(args), args.ensemble, args.out_stem)
            print(f"outputs written: {stem}")
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
