"""Command-line entry point: ``rankloss {train-toy,calibrate,compress,probe,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import calibrator, io
from .errors import ConvergenceError, InvalidInputError, RanklossError, TrainingError
from .fixtures import FixtureSpec, splits
from .network import gradients, init_network, train_toy
from .optimizer import CompressionConfig, compress_network, load_config
from .report import emit_report, evaluate, format_drop_rate, rank_curve, write_curve_csv

log = logging.getLogger("rankloss")

EXIT_INPUT = 2
EXIT_NUMERIC = 3


@dataclass
class RunConfig:
    model: Path | None = None
    data: Path | None = None
    holdout: Path | None = None
    out: Path = Path(".")
    mode: str = "lossless"
    eps: str = "calibrate"
    tol: float = calibrator.DEFAULT_TOLERANCE
    seed: int | None = None
    report_format: str = "json"

    def validate(self):
        for name in ("model", "data", "holdout"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise InvalidInputError(f"--{name}: no such file: {p}")


def _run_config(args):
    cfg = RunConfig(
        model=Path(args.model) if getattr(args, "model", None) else None,
        data=Path(args.data) if getattr(args, "data", None) else None,
        holdout=Path(args.holdout) if getattr(args, "holdout", None) else None,
        out=Path(args.out),
        mode=getattr(args, "mode", None) or "lossless",
        eps=str(getattr(args, "eps", None) or "calibrate"),
        tol=getattr(args, "tol", None) or calibrator.DEFAULT_TOLERANCE,
        seed=getattr(args, "seed", None),
        report_format=getattr(args, "format", "json"),
    )
    cfg.validate()
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _layers_arg(text, n_layers):
    if text is None:
        return list(range(n_layers))
    try:
        layers = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInputError(f"--layers expects comma-separated indices, got {text!r}") from None
    bad = [i for i in layers if not 0 <= i < n_layers]
    if bad:
        raise InvalidInputError(f"--layers: indices {bad} outside [0, {n_layers - 1}]")
    return layers


def cmd_train_toy(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arch = tuple(int(a) for a in args.arch.split(","))
    if args.generate:
        k, n, d = io.parse_generator_spec(args.generate)
        spec = FixtureSpec(arch=arch, n_classes=k, n_features=d, n_train=args.train_samples,
                           n_calib=n, n_holdout=args.holdout_samples, seed=args.seed)
        train, calib, holdout = splits(spec)
        io.save_dataset(train, out / "train.csv")
        io.save_dataset(calib, out / "calib.csv")
        io.save_dataset(holdout, out / "holdout.csv")
    elif args.data:
        train = io.load_dataset(args.data)
    else:
        raise InvalidInputError("train-toy needs --generate or --data")
    if args.steps == 0:
        net = init_network(arch, args.seed, args.activation, args.loss_kind, args.init_scale)
        from .network import dataset_loss
        loss = dataset_loss(net, train)
    else:
        net, loss = train_toy(arch, train, args.steps, args.lr, args.seed,
                              activation=args.activation, loss_kind=args.loss_kind,
                              init_scale=args.init_scale)
    io.save_network(net, out / "model.json")
    meta = {"arch": list(arch), "seed": args.seed, "steps": args.steps, "lr": args.lr,
            "init_scale": args.init_scale, "activation": args.activation,
            "loss_kind": args.loss_kind, "generate": args.generate,
            "data": str(args.data) if args.data else None, "final_loss": loss}
    _dump(meta, out / "model.meta.json")
    print(f"trained {args.arch} for {args.steps} steps: final loss {loss:.6g} -> {out / 'model.json'}")
    return 0


def _compression_config(args):
    base = load_config(args.config) if args.config else CompressionConfig()
    overrides = {}
    if args.mode:
        overrides["mode"] = args.mode
    if args.eps:
        overrides["eps"] = args.eps
    if args.tol:
        overrides["tolerance"] = args.tol
    if args.refresh_grad:
        overrides["refresh_grad"] = args.refresh_grad
    if args.rank_by:
        overrides["rank_by"] = args.rank_by
    if args.refine:
        overrides["refine"] = True
    merged = {**base.to_dict(), **overrides}
    return CompressionConfig.from_mapping(merged)


def cmd_calibrate(args):
    cfg = _run_config(args)
    net, data = io.load_network(cfg.model), io.load_dataset(cfg.data)
    layers = _layers_arg(args.layers, len(net.layers))
    profile, _ = calibrator.calibrate(net, data, layers, tolerance=cfg.tol)
    result = {"tolerance": profile.tolerance, "probe_grid": list(profile.probe_grid),
              "eps": {str(k): v for k, v in profile.eps.items()},
              "source": {str(k): v for k, v in profile.source.items()}}
    _dump(result, cfg.out / "eps.json")
    for i in layers:
        print(f"layer {i}: eps {profile.eps[i]:g} ({profile.source[i]})")
    return 0


def cmd_compress(args):
    cfg = _run_config(args)
    config = _compression_config(args)
    net, data = io.load_network(cfg.model), io.load_dataset(cfg.data)
    holdout = io.load_dataset(cfg.holdout) if cfg.holdout else None
    compressed, report = compress_network(net, data, config, holdout=holdout)
    io.save_network(compressed, cfg.out / "compressed_model.json")
    emit_report(report, cfg.out / f"report.{cfg.report_format}", cfg.report_format)
    if cfg.report_format != "json":
        emit_report(report, cfg.out / "report.json", "json")
    _dump({k: round(v, 3) for k, v in report.timing.items()}, cfg.out / "timing.json")
    if args.curves:
        grads = gradients(net, data)
        for d in report.layers:
            if d.max_rank > 0 and d.eps is not None:
                points = rank_curve(net, data, d.layer, d.eps, grads)
                write_curve_csv(points, d.layer, cfg.out / f"curve_layer{d.layer}.csv")
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    for d in report.layers:
        what = f"rank {d.rank}" if d.rank is not None else f"skipped ({d.skip_reason})"
        print(f"layer {d.layer} [{d.rows}x{d.cols}]: {what}")
    before, after = report.calibration_before.loss, report.calibration_after.loss
    print(f"calibration loss {before:.9g} -> {after:.9g}; "
          f"params {report.original_params} -> {report.compressed_params} "
          f"({format_drop_rate(report.drop_rate)})")
    if holdout is not None:
        print(f"held-out loss {report.holdout_before.loss:.9g} -> {report.holdout_after.loss:.9g}")
    return 0


def cmd_probe(args):
    cfg = _run_config(args)
    net, data = io.load_network(cfg.model), io.load_dataset(cfg.data)
    layers = _layers_arg(args.layers, len(net.layers))
    grads = gradients(net, data)
    profile, records = calibrator.calibrate(net, data, layers, tolerance=cfg.tol, grads=grads)
    calibrator.write_probe_json(records, cfg.out / "probe.json")
    calibrator.write_probe_csv(records, cfg.out / "probe.csv")
    zero, below = calibrator.gradient_stats(grads)
    at_1e3 = [abs(r.first_order) / abs(r.residual) for r in records
              if r.eps_bound == 1e-3 and r.residual != 0]
    summary = {
        "gradient_stats": {"fraction_exact_zero": zero, "fraction_below_1e-3": below},
        "eps": {str(k): v for k, v in profile.eps.items()},
        "eps_source": {str(k): v for k, v in profile.source.items()},
        "second_order": {
            "bucket": 1e-3,
            "n": len(at_1e3),
            "median_first_to_residual": float(np.median(at_1e3)) if at_1e3 else None,
        },
    }
    _dump(summary, cfg.out / "probe_summary.json")
    for layer, bound, worst in calibrator.probe_table(records):
        print(f"layer {layer}  eps<={bound:g}  max|dLoss gap|={worst:.3e}")
    print(f"gradient entries exactly zero: {zero:.4f}; below 1e-3: {below:.4f}")
    return 0


def cmd_eval(args):
    for name in ("model", "data"):
        p = Path(getattr(args, name))
        if not p.is_file():
            raise InvalidInputError(f"--{name}: no such file: {p}")
    net, data = io.load_network(args.model), io.load_dataset(args.data)
    metrics = evaluate(net, data)
    if args.json:
        print(json.dumps(asdict(metrics), sort_keys=True))
    else:
        print(f"loss {metrics.loss:.9g}")
        if metrics.top1_accuracy is not None:
            print(f"top1 {metrics.top1_accuracy:.6f}")
        if metrics.top5_accuracy is not None:
            print(f"top5 {metrics.top5_accuracy:.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="rankloss", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train a seeded toy MLP")
    p.add_argument("--arch", default="8,64,64,3")
    p.add_argument("--generate", help="dataset generator, e.g. blobs:3classes:1000")
    p.add_argument("--data", help="training CSV (instead of --generate)")
    p.add_argument("--train-samples", type=int, default=FixtureSpec.n_train)
    p.add_argument("--holdout-samples", type=int, default=FixtureSpec.n_holdout)
    p.add_argument("--steps", type=int, default=FixtureSpec.steps)
    p.add_argument("--lr", type=float, default=FixtureSpec.learning_rate)
    p.add_argument("--init-scale", type=float, default=FixtureSpec.init_scale)
    p.add_argument("--activation", default="tanh", choices=["identity", "relu", "tanh"])
    p.add_argument("--loss-kind", default="softmax-cross-entropy",
                   choices=["softmax-cross-entropy", "mean-squared-error"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_train_toy)

    def common(p, mode=False):
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True, help="calibration CSV")
        p.add_argument("--tol", type=float, help="probe tolerance (default 1e-4)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default=".")
        if mode:
            p.add_argument("--holdout")
            p.add_argument("--mode", choices=["lossless", "compact"])
            p.add_argument("--eps", help="'calibrate' or a fixed positive float")
            p.add_argument("--refresh-grad", choices=["once", "per-layer"])
            p.add_argument("--rank-by", choices=["measured", "predicted"])
            p.add_argument("--refine", action="store_true")
            p.add_argument("--curves", action="store_true")
            p.add_argument("--config", help="TOML or JSON compression config")
            p.add_argument("--format", choices=["json", "csv"], default="json")
        else:
            p.add_argument("--layers", help="comma-separated layer indices (default: all)")

    p = sub.add_parser("calibrate", help="select a per-layer eps")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compress", help="factorize a model")
    common(p, mode=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("probe", help="first-order validity table")
    common(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval", help="loss and accuracy of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RanklossError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
