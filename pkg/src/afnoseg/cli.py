"""Command-line entry point.

Subcommands: ``print-config``, ``gen-data``, ``train``, ``eval``, ``stats``,
``bench``.  Exit codes: 0 success, 1 configuration/validation error,
2 runtime error or training divergence, 3 IO/format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data_io, model_stats, training
from .config import (RunConfig, load_run_config, run_config_to_dict,
                     save_run_config, validate_run_config)
from .errors import ConfigError, DivergenceError, FormatError, InputError
from .metrics import evaluate
from .model import SegModel
from .tensor import no_grad

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "precision", None) is not None:
        cfg = dataclasses.replace(cfg, precision=args.precision)
    validate_run_config(cfg)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, cfg: RunConfig, produced: list[str]):
    manifest = {
        "config": run_config_to_dict(cfg),
        "outputs": sorted(produced),
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _dataset_for(cfg: RunConfig) -> data_io.Dataset:
    if cfg.data.dataset_dir is not None:
        return data_io.load_dataset(cfg.data.dataset_dir)
    spec = dataclasses.replace(cfg.data.phantom, seed=cfg.seed)
    return data_io.generate_dataset(spec, cfg.data.n_samples)


def cmd_print_config(args) -> int:
    cfg = _load_config(args)
    text = json.dumps(run_config_to_dict(cfg), indent=1)
    if args.out:
        out = _out_dir(args)
        (out / "config.json").write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    spec = dataclasses.replace(cfg.data.phantom, seed=cfg.seed)
    ds = data_io.generate_dataset(spec, cfg.data.n_samples)
    data_io.write_dataset(ds, out, spec)
    _write_manifest(out, cfg, ["manifest.json"]
                    + [f"vol_{i:04d}" for i in range(len(ds))]
                    + [f"mask_{i:04d}" for i in range(len(ds))])
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.data:
        cfg = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, dataset_dir=args.data))
        validate_run_config(cfg)
    out = _out_dir(args)
    ds = _dataset_for(cfg)
    train_idx, test_idx = data_io.make_splits(len(ds), cfg.data.train_fraction,
                                              cfg.seed)
    (out / "splits.json").write_text(json.dumps(
        {"train": train_idx, "test": test_idx}) + "\n")
    model = SegModel.build(cfg.model, seed=cfg.seed, precision=cfg.precision)
    stats = model_stats.count_params(model)
    train_samples = [ds.samples[i] for i in train_idx]
    val_samples = [ds.samples[i] for i in test_idx]
    report = training.train(model, train_samples, val_samples, cfg.train)
    ckpt = data_io.save_checkpoint(out / "checkpoint_final.bin", model,
                                   extra={"steps": report.final["steps"]})
    with open(out / "report.jsonl", "w") as f:
        f.write(json.dumps({"record": "stats", "param_total": stats.total_params,
                            "mixing": cfg.model.mixing}) + "\n")
        for rec in report.epochs:
            f.write(json.dumps({"record": "epoch", **rec}) + "\n")
        f.write(json.dumps({"record": "final", **report.final}) + "\n")
    _write_manifest(out, cfg, ["splits.json", "report.jsonl", ckpt.name])
    print(f"trained {report.final['steps']} steps; "
          f"final loss {report.final['train_loss']:.4f}; "
          f"val DSC {report.final['val_dsc']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    model = data_io.load_model(args.checkpoint)
    ds = data_io.load_dataset(args.data)
    if not ds.samples:
        raise FormatError(f"no samples in {args.data}")
    rows = []
    for i, (vol, mask) in enumerate(ds.samples):
        pred = training.predicted_mask(model, vol)
        report = evaluate(pred, mask, model.config.num_classes, ds.spacing)
        rows.append({"sample": i, **report.to_dict()})
    mean_dsc = float(np.mean([r["mean_dsc"] for r in rows]))
    defined = [r["mean_hd95"] for r in rows if r["mean_hd95"] is not None]
    aggregate = {
        "n_samples": len(rows),
        "mean_dsc": mean_dsc,
        "mean_hd95": float(np.mean(defined)) if defined else None,
        "hd95_undefined": sum(r["hd95_undefined"] for r in rows),
    }
    with open(out / "metrics.jsonl", "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    (out / "aggregate.json").write_text(json.dumps(aggregate, indent=1) + "\n")
    lines = [f"{'sample':>6}  {'DSC':>8}  {'HD95':>8}"]
    for r in rows:
        hd = "undef" if r["mean_hd95"] is None else f"{r['mean_hd95']:.3f}"
        lines.append(f"{r['sample']:>6}  {r['mean_dsc']:>8.4f}  {hd:>8}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, cfg, ["metrics.jsonl", "aggregate.json", "metrics.txt"])
    print(f"evaluated {len(rows)} samples: mean DSC {mean_dsc:.4f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    shape = tuple(args.shape) if args.shape else cfg.data.phantom.grid
    model = SegModel.build(cfg.model, seed=cfg.seed, precision=cfg.precision)
    params = model_stats.count_params(model)
    formula = model_stats.count_params_formula(cfg.model)
    flops = model_stats.count_flops(cfg.model, shape)
    payload = {
        "input_shape": list(shape),
        "mixing": cfg.model.mixing,
        "param_total": params.total_params,
        "param_total_formula": formula.total_params,
        "mixing_params": params.filtered(".mixing.").total_params,
        "flops_total": flops.total_flops,
        "params": params.to_dict(),
        "flops": flops.to_dict(),
    }
    (out / "stats.json").write_text(json.dumps(payload, indent=1) + "\n")
    text = (f"input shape: {shape}\nmixing: {cfg.model.mixing}\n\n"
            + "parameters\n" + params.table()
            + "\n\nflops\n" + flops.table() + "\n")
    (out / "stats.txt").write_text(text)
    _write_manifest(out, cfg, ["stats.json", "stats.txt"])
    print(f"params {params.total_params}  flops {flops.total_flops}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    model = SegModel.build(cfg.model, seed=cfg.seed, precision=cfg.precision)
    rows = []
    failures = 0
    for side in args.shapes:
        shape = (side, side, side)
        try:
            x = np.random.default_rng(cfg.seed).standard_normal(
                (1,) + shape + (cfg.model.in_channels,)).astype(model.dtype)
            fwd_times, bwd_times = [], []
            mask = np.zeros((1,) + shape, dtype=np.uint8)
            for _ in range(max(5, args.repeats)):
                t0 = time.perf_counter()
                with no_grad():
                    model.forward(x)
                fwd_times.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                training.backward(model, x, mask)
                bwd_times.append(time.perf_counter() - t0)
            rows.append({"shape": list(shape),
                         "forward_s": float(np.median(fwd_times)),
                         "forward_backward_s": float(np.median(bwd_times))})
        except ConfigError as e:
            failures += 1
            print(f"warning: skipping shape {shape}: {e}", file=sys.stderr)
    if not rows:
        raise ConfigError("bench: every requested shape was illegal")
    (out / "bench.json").write_text(json.dumps(rows, indent=1) + "\n")
    lines = [f"{'shape':>12}  {'fwd (s)':>10}  {'fwd+bwd (s)':>12}"]
    for r in rows:
        lines.append(f"{str(tuple(r['shape'])):>12}  {r['forward_s']:>10.4f}  "
                     f"{r['forward_backward_s']:>12.4f}")
    (out / "bench.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, cfg, ["bench.json", "bench.txt"])
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="afnoseg",
        description="Spectral token-mixing 3D segmentation: data, training, "
                    "evaluation, and efficiency accounting.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=str, default=None,
                       help="JSON run config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--precision", type=int, choices=(32, 64), default=None)
        p.add_argument("--out", type=str, required=out_required,
                       help="output directory")

    p = sub.add_parser("print-config", help="emit the fully defaulted config")
    common(p, out_required=False)
    p.set_defaults(func=cmd_print_config)

    p = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", type=str, default=None,
                   help="dataset directory (overrides config data.dataset_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--data", type=str, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="parameter and FLOP accounting")
    common(p)
    p.add_argument("--shape", type=int, nargs=3, default=None,
                   help="input D H W for the FLOP count")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="forward/backward wall time over shapes")
    common(p)
    p.add_argument("--shapes", type=int, nargs="+", default=[8, 16],
                   help="cubic side lengths to time")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FormatError, InputError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
