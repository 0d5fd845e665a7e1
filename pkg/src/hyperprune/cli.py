"""Command-line entry point.

    hyperprune train --preset dcgan_toy --dataset blobs_unconditional --target 0.5 --epochs 40 --seed 7
    hyperprune count --preset resnet_cyclegan_256 --res 256
    hyperprune prune-demo --preset unet_toy
    hyperprune eval --checkpoint runs/x/checkpoints/generator_final.ckpt
    hyperprune gradcheck

Config precedence for ``train``: command-line flags, then ``--config``
(a flat key=value file), then built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import accounting
from . import numeric as nm
from .checkpoint import load as load_checkpoint
from .data import DATASET_KINDS, SyntheticDataset, gen_dataset, to_signed, to_unit
from .errors import HyperPruneError
from .gradcheck import run_suite
from .metrics import METRICS, EvalMetric, Evaluator
from .netspec import GENERATOR_PRESETS, apply_masks, build_preset, compact, forward
from .numeric import Tensor
from .trainer import TrainConfig, Trainer, TrainingAborted

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "preset": "preset",
    "dataset": "dataset",
    "target": "target_compression",
    "epochs": "total_epochs",
    "tol": "tol",
    "lr": "lr",
    "lambda": "lam",
    "tau": "tau",
    "embed_dim": "m",
    "batch": "batch_size",
    "dataset_size": "dataset_size",
    "res": "resolution",
    "seed": "seed",
    "mode": "mode",
    "compress_d": "compress_discriminator",
    "l1_weight": "l1_weight",
    "non_saturating": "non_saturating",
    "momentum": "momentum",
    "conditional_d": "conditional_d",
    "metric": "metric",
    "eval_samples": "eval_samples",
    "mask_cadence": "mask_cadence",
    "samples": "sample_grids",
}


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for num, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise HyperPruneError(f"{path}:{num}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(field_name: str, value):
    kind = {f.name: f.type for f in dataclasses.fields(TrainConfig)}[field_name]
    if kind in ("bool", bool):
        return value if isinstance(value, bool) else _bool(value)
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    return str(value)


def build_train_config(args: argparse.Namespace) -> TrainConfig:
    merged = {}
    if args.config:
        for key, value in read_config_file(args.config).items():
            field_name = TRAIN_FLAGS.get(key, key)
            if field_name not in {f.name for f in dataclasses.fields(TrainConfig)}:
                raise HyperPruneError(f"unknown config key {key!r}")
            merged[field_name] = _coerce(field_name, value)
    for flag, field_name in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field_name] = _coerce(field_name, value)
    return TrainConfig(**merged)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    config = build_train_config(args)
    out_dir = Path(args.out_dir)
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        try:
            artifacts = Trainer(config, out_dir=out_dir).run()
        except TrainingAborted as exc:
            print(f"training aborted: {exc}; see {out_dir / 'abort_dump.json'}", file=sys.stderr)
            return 3
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    st = artifacts.state
    print(f"epochs={st.epoch} target_met={artifacts.target_met} switch_epoch={st.switch_epoch}")
    if st.switch_removed is not None:
        print(f"removed_fraction={st.switch_removed:.4f} target={config.target_compression} tol={config.tol}")
    if artifacts.final_metric is not None:
        print(f"{config.metric}: switch={st.switch_metric} final={artifacts.final_metric:.6g}")
    print(f"wrote {out_dir} in {time.perf_counter() - start:.1f}s")
    return 0


def _fmt_count(x: int, unit: float, suffix: str) -> str:
    return f"{x / unit:.2f}{suffix}"


def cmd_count(args) -> int:
    names = [args.preset] if args.preset else list(GENERATOR_PRESETS)
    for name in names:
        spec = build_preset(name)
        hw = None
        if args.res is not None:
            if spec.input_shape[1:] == (1, 1):
                if spec.output_shape[1:] != (args.res, args.res):
                    raise HyperPruneError(f"{name} is a noise generator with fixed {spec.output_shape[1]}px output")
            else:
                hw = (args.res, args.res)
        rep = accounting.cost_report(spec, hw)
        if args.csv:
            print(rep.to_csv(), end="")
            continue
        print(f"{name}: params={rep.params} ({_fmt_count(rep.params, 1e6, 'M')}) "
              f"MACs={rep.macs} ({_fmt_count(rep.macs, 1e9, 'G')}) FLOPs={rep.flops}")
    return 0


def cmd_prune_demo(args) -> int:
    config = TrainConfig(preset=args.preset, dataset=args.dataset, total_epochs=1, target_compression=args.target,
                         lam=args.lam, dataset_size=args.dataset_size, seed=args.seed, batch_size=args.batch,
                         eval_samples=64)
    trainer = Trainer(config)
    if not trainer.searching_epoch():
        trainer.refresh_masks()
    spec, masks = trainer.g_spec, trainer.state.masks
    with nm.no_grad():
        full = trainer.g_hyper.bind()
    small_spec, small = compact(spec, full, masks)
    rng = np.random.default_rng(args.seed)
    x = Tensor(rng.standard_normal((4,) + spec.input_shape))
    with nm.no_grad():
        a = forward(spec, apply_masks(spec, full, masks), x).data
        b = forward(small_spec, small, x).data
    diff = float(np.max(np.abs(a - b)))
    for lid, m in masks.items():
        print(f"latent {lid}: kept {m.kept}/{len(m)}")
    before = accounting.cost_report(spec, None, masks)
    after = accounting.cost_report(small_spec)
    print(f"removed_fraction={1.0 - before.ratio_remaining:.4f} masked_macs={before.masked_macs} "
          f"compacted_macs={after.macs}")
    print(f"max |masked - compacted| = {diff:.3e}")
    ok = diff <= 1e-10 and before.masked_macs == after.macs
    print("equivalence", "ok" if ok else "FAILED")
    return 0 if ok else 1


def cmd_eval(args) -> int:
    spec, weights, meta = load_checkpoint(args.checkpoint)
    out_c, res = spec.output_shape[0], spec.output_shape[1]
    paired = spec.input_shape[1] != 1
    kind = args.dataset or ("blobs_to_edges_paired" if paired else "blobs_unconditional")
    data = gen_dataset(SyntheticDataset(kind, res, out_c, args.samples, args.seed))
    rng = np.random.default_rng(args.seed + 1)
    if paired:
        src, real = data
        inputs = to_signed(src)
    else:
        real = data
        inputs = rng.standard_normal((args.samples,) + spec.input_shape)
    with nm.no_grad():
        fake = to_unit(forward(spec, weights, Tensor(inputs)).data)
    ev = Evaluator(EvalMetric(args.metric, sample_count=args.samples), out_c)
    value = ev.score(fake, real)
    print(f"{args.metric}={value:.6g} samples={args.samples} epoch={meta.get('epoch', '?')}")
    return 0


def cmd_gradcheck(args) -> int:
    ok, results, elapsed = run_suite(args.count, args.seed, args.threshold, verbose=args.verbose)
    worst = max(results, key=lambda r: r.max_rel_err)
    families = sorted({r.family for r in results})
    print(f"{len(results)} configs ({', '.join(families)}) in {elapsed:.1f}s; "
          f"worst rel err {worst.max_rel_err:.3e} (config {worst.index}, {worst.family})")
    print("gradcheck", "passed" if ok else "FAILED")
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperprune", description="Latent-hypernetwork channel pruning for GANs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="two-stage search + fine-tune run")
    t.add_argument("--config", help="key=value file; flags given here take precedence")
    t.add_argument("--preset", choices=GENERATOR_PRESETS)
    t.add_argument("--dataset", choices=DATASET_KINDS)
    t.add_argument("--target", type=float, help="FLOP fraction to remove, in (0, 1)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--tol", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda", type=float, help="l1 weight on the latents")
    t.add_argument("--tau", type=float, help="mask threshold on |latent|")
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--dataset-size", dest="dataset_size", type=int)
    t.add_argument("--res", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=("auto", "unconditional", "paired"))
    t.add_argument("--compress-d", dest="compress_d", nargs="?", const=True, type=_bool)
    t.add_argument("--l1-weight", dest="l1_weight", type=float)
    t.add_argument("--non-saturating", dest="non_saturating", nargs="?", const=True, type=_bool)
    t.add_argument("--momentum", type=float)
    t.add_argument("--conditional-d", dest="conditional_d", type=_bool)
    t.add_argument("--metric", choices=METRICS)
    t.add_argument("--eval-samples", dest="eval_samples", type=int)
    t.add_argument("--mask-cadence", dest="mask_cadence", choices=("step", "epoch"))
    t.add_argument("--samples", type=_bool, help="write per-epoch sample grids (default true)")
    t.add_argument("--out-dir", dest="out_dir", default="runs/latest")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("count", help="parameter / MAC report for a preset")
    c.add_argument("--preset", choices=GENERATOR_PRESETS, help="default: every preset")
    c.add_argument("--res", type=int, help="input resolution for image-to-image presets")
    c.add_argument("--csv", action="store_true", help="per-layer CSV instead of the summary line")
    c.set_defaults(func=cmd_count)

    p = sub.add_parser("prune-demo", help="one searching epoch, then masked vs compacted check")
    p.add_argument("--preset", choices=GENERATOR_PRESETS, default="dcgan_toy")
    p.add_argument("--dataset", choices=DATASET_KINDS, default="blobs_unconditional")
    p.add_argument("--target", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0,
                   help="large default so a single short epoch already prunes")
    p.add_argument("--dataset-size", dest="dataset_size", type=int, default=1024)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prune_demo)

    e = sub.add_parser("eval", help="metric between checkpoint samples and fresh dataset samples")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", choices=DATASET_KINDS)
    e.add_argument("--metric", choices=METRICS, default="rf_frechet")
    e.add_argument("--samples", type=int, default=256)
    e.add_argument("--seed", type=int, default=99)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threshold", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (HyperPruneError, FileNotFoundError) as exc:
        print(f"hyperprune: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
