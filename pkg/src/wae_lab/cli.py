"""``wae-lab`` command line: train, eval, sample, reconstruct, interpolate, verify.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort,
5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import grids, metrics, plots
from .checkpoint import load_checkpoint, restore_trainer, save_checkpoint
from .config import RunConfig, load_config
from .data import (Dataset, mnist_subset, make_synthetic, parse_synthetic_spec, rng_stream, sample_prior,
                   split)
from .errors import ConfigError, DataError, NumericError, TrainingAborted
from .models import PriorSpec, Trainer, interpolate, reconstruct, sample
from .ot import parse_instances, random_instance, verify_corollary1, verify_theorem1

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5
GAP_TOL = 1e-9


def resolve_dataset(spec: str, config: RunConfig) -> Dataset:
    kind, _, rest = spec.partition(":")
    if kind == "mnist":
        if not rest:
            raise DataError("mnist dataset needs a path: mnist:PATH")
        return mnist_subset(rest, config.mnist_train, config.mnist_test, config.seed)
    if kind in ("mixture", "swiss"):
        synth = parse_synthetic_spec("gaussian_mixture" if kind == "mixture" else "swiss_roll", rest)
        return split(make_synthetic(synth), config.test_fraction, config.seed)
    raise ConfigError(f"unknown dataset kind {kind!r}; use mnist:PATH, mixture:SPEC or swiss:SPEC")


def effective_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "dataset", None):
        overrides.append(f"dataset={args.dataset}")
    return config.with_overrides(overrides).validate()


def run_id_for(config: RunConfig) -> str:
    """Short config hash, ignoring the epoch budget so resumed runs keep their id."""
    return config.replace(epochs=0, checkpoint_every=0).content_hash()[:12]


def run_dir(args, run_id: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("WAE_LAB_OUT", "runs")) / run_id


def _is_image(dataset_or_shape) -> bool:
    shape = getattr(dataset_or_shape, "image_shape", dataset_or_shape)
    return shape is not None


def _image_shape(d_x: int):
    side = int(round(np.sqrt(d_x)))
    return (side, side) if side * side == d_x and d_x >= 9 else None


# --- train ---------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.checkpoint:
        return _resume(args)
    config = effective_config(args)
    run_id = run_id_for(config)
    out = run_dir(args, run_id)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    dataset = resolve_dataset(config.dataset, config)

    manifest = {
        "run_id": run_id,
        "config_hash": config.content_hash(),
        "config": config.to_dict(),
        "dataset": dataset.provenance,
        "train_size": int(len(dataset.train)),
        "test_size": int(len(dataset.test)),
        "layout": {"config": "config.ini", "metrics": "metrics.csv", "checkpoints": "checkpoints/",
                   "final_model": "model.ckpt", "figures": "*.png"},
        "notes": "fully connected networks, no batch normalization",
    }
    (out / "config.ini").write_text(config.to_text(), encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                                       encoding="utf-8")
    metrics_path = out / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()

    trainer = Trainer(dataset, config)
    save_checkpoint(out / "checkpoints" / "epoch_0000.ckpt", trainer)
    return _run_epochs(trainer, dataset, out, run_id, config.epochs)


def _resume(args) -> int:
    """Continue a run from a checkpoint up to the (possibly raised) epoch count."""
    ckpt = load_checkpoint(args.checkpoint)
    overrides = list(args.set or [])
    if args.seed is not None or args.dataset:
        raise ConfigError("seed and dataset are fixed by the checkpoint when resuming")
    # only the epoch budget and checkpoint cadence may change mid-run
    config = ckpt.config.with_overrides(overrides)
    changed = {k for k, v in config.to_dict().items() if v != ckpt.config.to_dict()[k]}
    if changed - {"epochs", "checkpoint_every"}:
        raise ConfigError(f"cannot change {sorted(changed - {'epochs', 'checkpoint_every'})} when resuming")
    ckpt.config = config
    run_id = run_id_for(config)
    out = _ckpt_run_dir(args)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    dataset = _dataset_for(ckpt, config)
    trainer = restore_trainer(ckpt, dataset)
    return _run_epochs(trainer, dataset, out, run_id, max(config.epochs - trainer.epoch, 0))


def _run_epochs(trainer: Trainer, dataset: Dataset, out: Path, run_id: str, epochs: int) -> int:
    config = trainer.config
    metrics_path = out / "metrics.csv"
    boundaries = {start for start, _ in config.lr_schedule}
    test_x = dataset.test_x

    def on_epoch(tr, record):
        recon_test = metrics.mean_squared_cost(test_x, reconstruct(tr.model, test_x)) if len(test_x) else None
        metrics.append_metrics(metrics_path, {
            "run_id": run_id, "epoch": record.epoch, "recon_train": record.recon,
            "recon_test": recon_test, "penalty": record.penalty,
            "wall_clock_s": round(record.wall_clock, 6)})
        every = config.checkpoint_every
        if record.epoch in boundaries or (every and record.epoch % every == 0):
            save_checkpoint(out / "checkpoints" / f"epoch_{record.epoch:04d}.ckpt", tr)
        print(f"epoch {record.epoch:4d}  recon {record.recon:.6f}  penalty {record.penalty:.6f}"
              f"  total {record.total:.6f}", file=sys.stderr)

    try:
        trainer.fit(epochs, on_epoch=on_epoch)
    except TrainingAborted as exc:
        if exc.last_good is not None:
            trainer.model.load_state(exc.last_good)
            save_checkpoint(out / "checkpoints" / "last_good.ckpt", trainer)
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    if trainer.epoch > 0:
        save_checkpoint(out / "model.ckpt", trainer)
        _training_figures(trainer, dataset, out)
    print(str(out))
    return EXIT_OK


def _training_figures(trainer: Trainer, dataset: Dataset, out: Path) -> None:
    plots.training_curves(trainer.trace, out / "training_curves.png", trainer.config.penalty_kind)
    rng = rng_stream(trainer.config.seed, "eval")
    prior = PriorSpec(trainer.config.d_z, trainer.config.sigma_z2)
    x = dataset.train_x[:1000]
    mu, _ = trainer.model.encode_stats(x)
    labels = dataset.labels[dataset.train[:1000]] if dataset.labels is not None else None
    plots.latent_scatter(mu.values, sample_prior(prior, len(x), rng), out / "latent.png", labels)
    gen = sample(trainer.model, prior, 64 if _is_image(dataset) else 1000, rng)
    if _is_image(dataset):
        plots.image_grid(grids.make_grid([gen[i:i + 8] for i in range(0, 64, 8)], dataset.image_shape),
                         out / "samples.png")
    elif dataset.d_x == 2:
        plots.data_vs_samples(dataset.train_x, gen, out / "samples.png")


# --- model-consuming commands ----------------------------------------------------

def _load(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.config.with_overrides(list(args.set or []))
    if getattr(args, "dataset", None):
        config = config.with_overrides([f"dataset={args.dataset}"])
    return ckpt, config


def _ckpt_run_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    path = Path(args.checkpoint).resolve()
    return path.parent.parent if path.parent.name == "checkpoints" else path.parent


def _dataset_for(ckpt, config) -> Dataset:
    dataset = resolve_dataset(config.dataset, config)
    if dataset.d_x != ckpt.model.d_x:
        raise DataError(f"checkpoint expects d_x={ckpt.model.d_x}, dataset has d_x={dataset.d_x}")
    return dataset


def cmd_eval(args) -> int:
    ckpt, config = _load(args)
    dataset = _dataset_for(ckpt, config)
    out = _ckpt_run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    model, prior = ckpt.model, PriorSpec(config.d_z, config.sigma_z2)
    rng = rng_stream(config.seed, "eval")
    start = time.perf_counter()

    test_x = dataset.test_x if len(dataset.test) else dataset.train_x
    train_x = dataset.train_x
    recon_test = metrics.mean_squared_cost(test_x, reconstruct(model, test_x))
    recon_train = metrics.mean_squared_cost(train_x, reconstruct(model, train_x))
    generated = sample(model, prior, args.samples, rng)
    image_shape = dataset.image_shape
    sharp = metrics.sharpness(generated, image_shape) if image_shape else None
    kind = "pooled_pixels" if image_shape else "raw_pixels"
    fd = metrics.fd_features(generated, test_x, kind, image_shape)
    penalty = ckpt.trace[-1].penalty if ckpt.trace else None

    metrics.append_metrics(out / "metrics.csv", {
        "run_id": run_id_for(config), "epoch": ckpt.epoch, "recon_train": recon_train,
        "recon_test": recon_test, "penalty": penalty, "sharpness_samples": sharp, "fd_features": fd,
        "wall_clock_s": round(time.perf_counter() - start, 6)})

    if image_shape:
        _write_grids(model, test_x, generated, image_shape, out, rng, args.steps)
    else:
        plots.data_vs_samples(test_x, generated, out / "eval_samples.png")
    print(f"recon_test {recon_test:.6f}  recon_train {recon_train:.6f}  fd_features {fd:.6f}"
          + (f"  sharpness {sharp:.6g}" if sharp is not None else ""))
    return EXIT_OK


def _write_grids(model, test_x, generated, image_shape, out, rng, steps, per_row=8):
    n = min(len(generated), 64) // per_row * per_row
    sample_rows = [generated[i:i + per_row] for i in range(0, n, per_row)]
    if sample_rows:
        grid = grids.make_grid(sample_rows, image_shape)
        grids.write_pgm(out / "samples.pgm", grid)
        plots.image_grid(grid, out / "samples_grid.png")

    k = min(len(test_x), 4 * per_row) // per_row * per_row
    if k:
        idx = rng.choice(len(test_x), size=k, replace=False)
        rows = grids.reconstruction_rows(test_x[idx], reconstruct(model, test_x[idx]), per_row)
        grid = grids.make_grid(rows, image_shape)
        grids.write_pgm(out / "reconstructions.pgm", grid)
        plots.image_grid(grid, out / "reconstructions_grid.png")

    if len(test_x) >= 2:
        pairs = min(8, len(test_x) // 2)
        idx = rng.choice(len(test_x), size=2 * pairs, replace=False)
        rows = [interpolate(model, test_x[idx[2 * p]], test_x[idx[2 * p + 1]], steps) for p in range(pairs)]
        grid = grids.make_grid(rows, image_shape)
        grids.write_pgm(out / "interpolations.pgm", grid)
        plots.image_grid(grid, out / "interpolations_grid.png")


def _write_points(path, points):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(points.shape[1])])
        writer.writerows([[repr(float(v)) for v in row] for row in points])


def cmd_sample(args) -> int:
    ckpt, config = _load(args)
    out = _ckpt_run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    generated = sample(ckpt.model, PriorSpec(config.d_z, config.sigma_z2), args.count,
                       rng_stream(config.seed, "eval"))
    shape = _image_shape(ckpt.model.d_x)
    if shape and args.count:
        per_row = min(8, args.count)
        rows = [generated[i:i + per_row] for i in range(0, args.count // per_row * per_row, per_row)]
        grids.write_pgm(out / "samples.pgm", grids.make_grid(rows, shape))
    _write_points(out / "samples.csv", generated)
    print(str(out))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    ckpt, config = _load(args)
    dataset = _dataset_for(ckpt, config)
    out = _ckpt_run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    x = (dataset.test_x if len(dataset.test) else dataset.train_x)[:args.count]
    x_hat = reconstruct(ckpt.model, x)
    if dataset.image_shape:
        per_row = min(8, len(x))
        rows = grids.reconstruction_rows(x, x_hat, per_row)
        grids.write_pgm(out / "reconstructions.pgm", grids.make_grid(rows, dataset.image_shape))
    _write_points(out / "reconstructions.csv", x_hat)
    print(f"recon {metrics.mean_squared_cost(x, x_hat):.6f}")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    ckpt, config = _load(args)
    dataset = _dataset_for(ckpt, config)
    out = _ckpt_run_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    pool = dataset.test_x if len(dataset.test) >= 2 else dataset.train_x
    rng = rng_stream(config.seed, "eval")
    idx = rng.choice(len(pool), size=2 * min(args.pairs, len(pool) // 2), replace=False)
    rows = [interpolate(ckpt.model, pool[idx[2 * p]], pool[idx[2 * p + 1]], args.steps)
            for p in range(len(idx) // 2)]
    if dataset.image_shape:
        grids.write_pgm(out / "interpolations.pgm", grids.make_grid(rows, dataset.image_shape))
    _write_points(out / "interpolations.csv", np.vstack(rows))
    print(str(out))
    return EXIT_OK


# --- verify ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    if args.random is not None:
        count, seed = args.random
        rng = np.random.default_rng(seed)
        instances = [random_instance(rng, with_variances=True) for _ in range(count)]
    elif args.instances:
        try:
            text = Path(args.instances).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {args.instances}: {exc}") from None
        instances = parse_instances(text)
    else:
        raise ConfigError("give an instance file or --random COUNT SEED")

    rows, failures = [], 0
    print(f"{'#':>4} {'m':>3} {'k':>3} {'d':>2}  {'theorem gap':>12}  {'corollary gap':>13}  status")
    for i, inst in enumerate(instances):
        th = verify_theorem1(inst.data, inst.prior, inst.decoder)
        co = verify_corollary1(inst.data, inst.prior, inst.decoder, inst.variances) \
            if inst.variances is not None else None
        ok = th.gap < GAP_TOL and (co is None or co.gap < GAP_TOL)
        failures += not ok
        rows.append((i, th.lhs, th.rhs, th.gap, None if co is None else co.gap))
        co_text = f"{co.gap:13.3e}" if co is not None else f"{'-':>13}"
        print(f"{i:4d} {len(inst.data):3d} {len(inst.prior):3d} {inst.data.dim:2d}  {th.gap:12.3e}  {co_text}  "
              f"{'pass' if ok else 'FAIL'}")
    print(f"{len(instances) - failures}/{len(instances)} pass")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["instance", "lhs", "rhs", "theorem_gap", "corollary_gap"])
            for r in rows:
                writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
        plots.gap_histogram([r[3] for r in rows] + [r[4] for r in rows if r[4] is not None],
                            out / "verify_gaps.png", GAP_TOL)
    return EXIT_OK if failures == 0 else EXIT_VERIFY


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="wae-lab", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, dataset=True):
        p.add_argument("--config", metavar="PATH", default=None, help="config file (sectioned key=value)")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override one config key (repeatable)")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default: $WAE_LAB_OUT/<run_id> or the checkpoint's run)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--checkpoint", metavar="PATH", default=None, required=checkpoint,
                       help="checkpoint file")
        if dataset:
            p.add_argument("--dataset", default=None,
                           help="mnist:PATH | mixture:SPEC | swiss:SPEC (default: from config)")

    p = sub.add_parser("train", help="train a model", formatter_class=fmt)
    common(p)
    p.set_defaults(func=cmd_train)
    p.epilog = "With --checkpoint, training resumes from that file; only epochs/checkpoint_every may be overridden."

    p = sub.add_parser("eval", help="evaluate a checkpoint and write image grids", formatter_class=fmt)
    common(p, checkpoint=True)
    p.add_argument("--samples", type=int, default=1000, help="generated samples for sharpness/FD")
    p.add_argument("--steps", type=int, default=8, help="interpolation steps per row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="decode prior draws", formatter_class=fmt)
    common(p, checkpoint=True, dataset=False)
    p.add_argument("--count", type=int, default=64, help="number of samples")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="auto-encode held-out points", formatter_class=fmt)
    common(p, checkpoint=True)
    p.add_argument("--count", type=int, default=32, help="number of test points")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate", help="decode latent interpolations", formatter_class=fmt)
    common(p, checkpoint=True)
    p.add_argument("--pairs", type=int, default=8, help="number of point pairs")
    p.add_argument("--steps", type=int, default=8, help="points per interpolation, endpoints included")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("verify", help="certify the OT identities on discrete instances", formatter_class=fmt)
    p.add_argument("instances", nargs="?", default=None, help="instance file")
    p.add_argument("--random", nargs=2, type=int, metavar=("COUNT", "SEED"), default=None,
                   help="generate COUNT random instances from SEED")
    p.add_argument("--out", metavar="DIR", default=None, help="write verify.csv and a gap histogram here")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
