"""Command-line experiment surface.

Subcommands: generate, train, infer, eval-mse, eval-order, scenario. Every
command takes --config/--seed/--out; configs validate fully before anything is
written, and all artifacts embed the config hash and seed. Exit codes: 0
success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, metrics
from .channel import SceneConfig, Snapshot, draw_paths, substream, synthesize_channel
from .config import ExperimentConfig
from .dataio import generate_records, read_dataset, write_dataset
from .encoding import CellGridSpec
from .errors import ConfigError, DataFormatError, DdestError, NumericalError, ValidationError
from .model import build_model
from .pipeline import Estimator, infer, load_estimator, save_estimator
from .refine import refine_path_estimates
from .scenario import los_delay, sphere_scenario
from .training import dataset_from_snapshots, train

# substream tags for the CLI's independent random uses
_TAG_INFER_NOISE, _TAG_MSE_SCENE, _TAG_ORDER = 5, 6, 7


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddest",
        description="Delay-Doppler path estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("generate", help="write a scene dataset")
    common(sp)
    sp.add_argument("--count", type=int, default=None,
                    help="override dataset.n_samples from the config")

    sp = sub.add_parser("train", help="train the detector on a dataset")
    common(sp)
    sp.add_argument("--dataset", required=True, help="dataset file from `generate`")

    sp = sub.add_parser("infer", help="run the detector over a dataset")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--refine", type=int, default=0, metavar="N",
                    help="Gauss-Newton steps after decoding (0 = raw estimates)")
    sp.add_argument("--delta", type=float, default=None,
                    help="detection threshold (default: refine.delta from config)")

    sp = sub.add_parser("eval-mse", help="MSE vs SNR sweep on a single-path scene")
    common(sp)
    sp.add_argument("--checkpoint", default=None,
                    help="include CNN estimators from this checkpoint")

    sp = sub.add_parser("eval-order", help="model-order error statistics")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--deltas", default=None,
                    help="comma-separated thresholds (default: evaluation.deltas)")

    sp = sub.add_parser("scenario", help="two-sphere trajectory ground truth")
    common(sp)
    return parser


def _artifact_meta(cfg: ExperimentConfig, seed: int) -> dict:
    return {"config_sha256": cfg.config_hash(), "seed": int(seed)}


def _cmd_generate(args, cfg: ExperimentConfig) -> int:
    n = cfg.dataset.n_samples if args.count is None else args.count
    if n < 0:
        raise ConfigError("--count must be non-negative")
    grid = cfg.sampling_grid()
    records = generate_records(cfg.scene.build(), grid, cfg.cell_spec(), n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "dataset.bin"
    write_dataset(target, records, grid,
                  meta={**_artifact_meta(cfg, args.seed), "scene": dataclasses.asdict(cfg.scene)})
    print(f"wrote {len(records)} scenes to {target}")
    return 0


def _cmd_train(args, cfg: ExperimentConfig) -> int:
    manifest, records = read_dataset(args.dataset)
    need = cfg.training.n_train + cfg.training.n_val
    if len(records) < need:
        raise ConfigError(
            f"dataset holds {len(records)} scenes, config needs n_train + n_val = {need}"
        )
    grid = cfg.sampling_grid()
    windows = cfg.preprocess.window_kinds()
    roi = cfg.roi()
    cells = cfg.cell_spec()
    snr = tuple(cfg.scene.snr_db)
    train_snaps = [r.clean_snapshot(grid) for r in records[:cfg.training.n_train]]
    val_snaps = [r.clean_snapshot(grid)
                 for r in records[cfg.training.n_train:need]]
    data = dataset_from_snapshots(train_snaps, windows, roi, cells, snr_range_db=snr)
    val = dataset_from_snapshots(val_snaps, windows, roi, cells, snr_range_db=snr) \
        if val_snaps else None
    model = build_model(cfg.model_config(seed=args.seed))
    result = train(model, data, cfg.training.build(seed=args.seed), val_data=val)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = Estimator(model=model, windows=windows, roi=roi, cells=cells)
    save_estimator(out / "checkpoint.bin", est,
                   meta={**_artifact_meta(cfg, args.seed), "experiment": cfg.to_dict()})
    header = metrics._meta_header(_artifact_meta(cfg, args.seed))
    (out / "loss_history.csv").write_text(header + result.history_csv())
    print(f"trained {result.epochs_run} epochs; loss {result.initial_loss:.4g} -> "
          f"{result.final_loss:.4g}; wrote {out / 'checkpoint.bin'}")
    return 0


def _cmd_infer(args, cfg: ExperimentConfig) -> int:
    est, _ = load_estimator(args.checkpoint)
    manifest, records = read_dataset(args.dataset)
    grid = cfg.sampling_grid()
    delta = cfg.refine.delta if args.delta is None else args.delta
    if not 0.0 < delta <= 1.0:
        raise ConfigError("--delta must lie in (0, 1]")
    if args.refine < 0:
        raise ConfigError("--refine must be non-negative")
    results = []
    for idx, rec in enumerate(records):
        snap = rec.noisy_snapshot(grid, substream(args.seed, _TAG_INFER_NOISE, idx))
        res = infer(est, snap, delta=delta, refine_steps=args.refine,
                    gn_cfg=cfg.refine.build())
        paths = []
        for p in range(len(res.paths)):
            entry = {"delay": float(res.paths.delays[p]),
                     "doppler": float(res.paths.dopplers[p]),
                     "score": float(res.scores[p]) if p < res.scores.size else None}
            if res.refined:
                entry["gain_re"] = float(res.paths.gains[p].real)
                entry["gain_im"] = float(res.paths.gains[p].imag)
            paths.append(entry)
        results.append({"index": idx, "order": res.order, "refined": res.refined,
                        "paths": paths})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": metrics.SCHEMA_VERSION, **_artifact_meta(cfg, args.seed),
           "delta": delta, "refine_steps": args.refine, "estimates": results}
    (out / "estimates.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(f"wrote estimates for {len(results)} snapshots to {out / 'estimates.json'}")
    return 0


def _make_estimators(cfg: ExperimentConfig, checkpoint):
    """Estimator callables for eval-mse, keyed by name."""
    roi = cfg.roi()
    gn_cfg = cfg.refine.build()
    steps = cfg.evaluation.refine_steps
    estimators = {}

    def peak_gn(snapshot):
        tau, alpha = baselines.residual_peak(snapshot.data, snapshot, roi)
        paths, _ = refine_path_estimates(snapshot, [tau], [alpha], steps=steps, cfg=gn_cfg)
        return paths

    def iter_ml(snapshot):
        return baselines.iterative_ml(snapshot, p_max=cfg.evaluation.edc_p_max,
                                      stop_rule="edc", region=roi, gn_cfg=gn_cfg)

    named = {"peak_gn": peak_gn, "iterative_ml": iter_ml}
    for name in cfg.evaluation.estimators:
        if name not in named:
            raise ConfigError(f"unknown estimator {name!r} in evaluation.estimators")
        estimators[name] = named[name]
    if checkpoint is not None:
        est, _ = load_estimator(checkpoint)
        delta = cfg.refine.delta

        def cnn_raw(snapshot):
            return infer(est, snapshot, delta=delta).paths

        def cnn_gn(snapshot):
            return infer(est, snapshot, delta=delta, refine_steps=steps,
                         gn_cfg=gn_cfg).paths

        estimators["cnn"] = cnn_raw
        estimators["cnn_gn"] = cnn_gn
    return estimators


def _cmd_eval_mse(args, cfg: ExperimentConfig) -> int:
    grid = cfg.sampling_grid()
    single = dataclasses.replace(cfg.scene.build(), path_count_range=(1, 1))
    truth = draw_paths(single, substream(args.seed, _TAG_MSE_SCENE))
    scene = Snapshot(synthesize_channel(truth, grid), grid, noise_sigma=0.0, truth=truth)
    estimators = _make_estimators(cfg, args.checkpoint)
    gates = metrics.default_gates(grid, cfg.evaluation.gate_bins)
    sweep = metrics.mse_sweep(estimators, scene, cfg.evaluation.snr_db,
                              cfg.evaluation.trials, args.seed, gates=gates)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mse_sweep.csv").write_text(sweep.to_csv(_artifact_meta(cfg, args.seed)))
    print(f"wrote {len(sweep.rows)} sweep rows to {out / 'mse_sweep.csv'}")
    return 0


def _cmd_eval_order(args, cfg: ExperimentConfig) -> int:
    grid = cfg.sampling_grid()
    roi = cfg.roi()
    cells = cfg.cell_spec()
    scene_cfg = cfg.scene.build()
    deltas = (tuple(float(d) for d in args.deltas.split(","))
              if args.deltas else tuple(cfg.evaluation.deltas))
    for d in deltas:
        if not 0.0 < d <= 1.0:
            raise ConfigError("--deltas entries must lie in (0, 1]")
    est = None
    if args.checkpoint is not None:
        est, _ = load_estimator(args.checkpoint)

    from .channel import add_noise, sigma_for_snr
    from .encoding import encodable

    runs: dict[tuple, list] = {}
    for trial in range(cfg.evaluation.trials):
        rng = substream(args.seed, _TAG_ORDER, trial)
        paths = draw_paths(scene_cfg, rng)
        while not encodable(paths, cells):
            paths = draw_paths(scene_cfg, rng)
        clean = synthesize_channel(paths, grid)
        for si, snr_db in enumerate(cfg.evaluation.snr_db):
            sigma = sigma_for_snr(clean, snr_db)
            noisy = Snapshot(add_noise(clean, sigma, substream(args.seed, _TAG_ORDER, trial, si)),
                             grid, noise_sigma=sigma, truth=paths)
            p_true = len(paths)
            p_hat = baselines.edc_model_order(noisy, cfg.evaluation.edc_p_max,
                                              region=roi, gn_cfg=cfg.refine.build())
            runs.setdefault(("edc", "", float(snr_db)), []).append((p_hat, p_true))
            if est is not None:
                for delta in deltas:
                    res = infer(est, noisy, delta=delta)
                    runs.setdefault(("cnn", f"{delta:g}", float(snr_db)), []).append(
                        (res.order, p_true))
    stats = {key: metrics.order_error_stats(pairs) for key, pairs in runs.items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = metrics.order_stats_csv(stats, ("estimator", "delta", "snr_db"),
                                   meta=_artifact_meta(cfg, args.seed))
    (out / "order_stats.csv").write_text(text)
    print(f"wrote order statistics for {len(stats)} groups to {out / 'order_stats.csv'}")
    return 0


def _cmd_scenario(args, cfg: ExperimentConfig) -> int:
    scn = cfg.scenario.build()
    n = max(2, int(round(cfg.scenario.duration_s * cfg.scenario.sample_rate_hz)))
    times = np.arange(n) / cfg.scenario.sample_rate_hz
    traj = sphere_scenario(scn, times)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {**_artifact_meta(cfg, args.seed), "los_ns": f"{los_delay(scn) * 1e9:.6f}"}
    lines = [metrics._meta_header(meta), "time,sphere,tau_ns,doppler_hz\n"]
    for s in range(2):
        for t in range(times.size):
            lines.append(f"{times[t]:.17g},{s},{traj.delays_s[s, t] * 1e9:.17g},"
                         f"{traj.dopplers_hz[s, t]:.17g}\n")
    (out / "trajectories.csv").write_text("".join(lines))
    print(f"wrote {2 * times.size} trajectory rows to {out / 'trajectories.csv'}")
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval-mse": _cmd_eval_mse,
    "eval-order": _cmd_eval_order,
    "scenario": _cmd_scenario,
}


def run_command(argv=None) -> int:
    """Parse argv, run one subcommand, and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints its own message
        return int(exc.code) if exc.code else 0
    try:
        cfg = ExperimentConfig.from_toml(args.config)
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        return _HANDLERS[args.command](args, cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except DdestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
