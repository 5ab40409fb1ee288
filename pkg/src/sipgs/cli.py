"""Command-line entry point: ``sipgs {synth,ingest,train,simulate,evaluate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ConfigError, MetricConfig, load_run_config
from .dataset import (DataError, Dataset, SynthConfig, ingest, read_sensor_csv, save_frame,
                      sensor_log_to_sequence, synth_generate)
from .genmodel import simulate_rollout
from .metrics import DEFAULT_DECAY, FeatureExtractor, evaluate_run, file_sha256, load_model, write_report
from .seq_encoder import NormStats, normalize
from .tensor import ContractError
from .training import TrainingDivergence, fit, new_model

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("sipgs")


class UsageError(Exception):
    pass


def _fail(msg: str, code: int = EXIT_USAGE) -> int:
    print(f"sipgs: error: {msg}", file=sys.stderr)
    return code


def _fresh_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise UsageError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    cfg = SynthConfig(n_cycles=args.cycles, frames_per_cycle=args.frames, interval_s=args.interval,
                      canvas=args.canvas, seed=args.seed)
    _fresh_dir(out, args.force)
    shutil.rmtree(out / "images", ignore_errors=True)
    _, paths, manifest = synth_generate(cfg, out)
    print(f"wrote {len(paths)} frames in {cfg.n_cycles} cycles (N={manifest.N}) to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    out = Path(args.out) if args.out else Path(args.images).parent
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        manifest = ingest(args.csv, args.images, args.cycles, root=out, test_fraction=args.test_fraction)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    manifest.save(out / "manifest.json")
    print(f"N={manifest.N} cycles={len(manifest.cycles)} excluded={manifest.excluded} -> {out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out or cfg.out_dir)
    if args.dry_run:
        store = new_model(cfg.train, np.random.default_rng(cfg.train.seed))
        print(f"config ok (hash {cfg.hash()}); parameters: {store.count()}")
        return EXIT_OK
    if not cfg.dataset:
        raise UsageError("config has no dataset manifest path")
    dataset = Dataset.load(cfg.dataset)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        result = fit(dataset, cfg.train, out_dir=out, run_config=cfg)
    except TrainingDivergence as exc:
        return _fail(f"training diverged: {exc}", EXIT_NUMERIC)
    print(f"best epoch {result.best_epoch} val_recon {result.best_val:.6g}; "
          f"best.ckpt sha256 {result.checkpoint_sha256}")
    return EXIT_OK


def _read_z(path: str, d_z: int) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        z = np.load(p)
    elif p.suffix == ".json":
        z = np.asarray(json.loads(p.read_text()), dtype=np.float64)
    else:
        z = np.loadtxt(p, delimiter=",", ndmin=1)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape != (d_z,):
        raise UsageError(f"z file {path} holds {z.size} values, model latent size is {d_z}")
    return z


def cmd_simulate(args) -> int:
    store, tcfg, header = load_model(args.checkpoint)
    stats = NormStats.from_dict(header["extra"]["normalization"])
    seq = normalize(sensor_log_to_sequence(read_sensor_csv(args.sequence)), stats)
    z_fixed = None
    if args.z_file:
        if args.mode != "controlled":
            raise UsageError("--z-file only applies to --mode controlled")
        z_fixed = _read_z(args.z_file, tcfg.model.d_z)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    roll = simulate_rollout(seq, store, tcfg.model, args.mode, z_fixed=z_fixed, seed=args.seed)
    names = []
    for i, frame in enumerate(roll.frames):
        name = f"frame_{i:05d}.png"
        save_frame(out / name, frame)
        names.append(name)
    manifest = {
        "checkpoint_sha256": file_sha256(args.checkpoint),
        "config_hash": header.get("config_hash", ""),
        "mode": roll.mode,
        "seed": args.seed,
        "z": roll.z[0].tolist() if args.mode == "controlled" else roll.z.tolist(),
        "z_source": "file" if z_fixed is not None else "seed",
        "elapsed_time": roll.elapsed_time,
        "frames": names,
    }
    (out / "rollout.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(names)} frames to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    for c in args.checkpoints:
        if not Path(c).is_file():
            raise UsageError(f"checkpoint not found: {c}")
    mcfg = MetricConfig(decay=args.decay, scale_255=args.scale_255, extractor=args.extractor,
                        extractor_seed=args.extractor_seed, split=args.split)
    dataset = Dataset.load(args.dataset)
    fx = FeatureExtractor(mcfg.extractor, mcfg.extractor_seed)
    rows = [evaluate_run(c, dataset, mcfg, seed=args.seed, fx=fx) for c in args.checkpoints]
    provenance = {
        "metrics": asdict(mcfg),
        "seed": args.seed,
        "dataset_manifest_sha256": file_sha256(args.dataset),
        "checkpoints": [{"path": str(c), "sha256": file_sha256(c)} for c in args.checkpoints],
    }
    write_report(args.out, rows, provenance)
    print(Path(args.out, "report.csv").read_text(), end="")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def _at_least(lo: int):
    def conv(text: str) -> int:
        v = int(text)
        if v < lo:
            raise argparse.ArgumentTypeError(f"must be at least {lo}, got {v}")
        return v

    return conv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sipgs", description="Sequence-conditioned plant growth frame synthesis.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--cycles", type=_at_least(1), default=2)
    s.add_argument("--frames", type=_at_least(2), default=200, help="frames per cycle (>= 2)")
    s.add_argument("--interval", type=float, default=600.0, help="seconds between frames")
    s.add_argument("--canvas", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="pair images with a sensor CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--cycles", help="optional CSV of cycle start timestamps")
    s.add_argument("--out", help="directory for manifest.json (default: parent of --images)")
    s.add_argument("--test-fraction", type=float, default=0.0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train one configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override the config's out_dir")
    s.add_argument("--dry-run", action="store_true", help="validate and build the model only")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="roll a checkpoint out over a sensor sequence")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sequence", required=True, help="sensor CSV")
    s.add_argument("--mode", choices=("stochastic", "controlled"), default="controlled")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--z-file", help="latent for controlled mode (.npy, .json or comma-separated text)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("evaluate", help="report metrics for checkpoints")
    s.add_argument("--checkpoints", nargs="+", required=True)
    s.add_argument("--dataset", required=True, help="dataset manifest.json")
    s.add_argument("--lambda", dest="decay", type=float, default=DEFAULT_DECAY, help="time-weight decay per second")
    s.add_argument("--scale-255", action="store_true", help="report MSE on the 0-255 scale")
    s.add_argument("--split", default="all")
    s.add_argument("--extractor", choices=("random_conv", "pixel_stats"), default="random_conv")
    s.add_argument("--extractor-seed", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, ContractError, FileNotFoundError) as exc:
        return _fail(str(exc))
    except TrainingDivergence as exc:
        return _fail(str(exc), EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
