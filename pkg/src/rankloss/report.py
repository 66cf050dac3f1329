"""Metrics, parameter accounting, rank curves and run reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .constraints import check, max_compressive_rank
from .errors import InvalidInputError
from .linalg import svd, truncate
from .network import _check_data, _trace, apply_factorization, dataset_loss, gradients

SIG_DIGITS = 9


@dataclass(frozen=True)
class Metrics:
    loss: float
    top1_accuracy: float | None
    n_samples: int
    top5_accuracy: float | None = None


def evaluate(net, data):
    """Mean loss plus top-1 (and top-5 when there are more than 5 classes)."""
    if data.m < 1:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    y = _check_data(net, data)
    loss = dataset_loss(net, data)
    if net.loss_kind != "softmax-cross-entropy":
        return Metrics(loss, None, data.m)
    logits = _trace(net, data.inputs)[2]
    # argmax returns the first maximum: ties go to the lowest class index
    top1 = float(np.mean(np.argmax(logits, axis=1) == y))
    top5 = None
    if logits.shape[1] > 5:
        order = np.argsort(-logits, axis=1, kind="stable")[:, :5]
        top5 = float(np.mean(np.any(order == y[:, None], axis=1)))
    return Metrics(loss, top1, data.m, top5)


def drop_rate(original_params, compressed_params):
    """Fractional parameter reduction, positive when the model shrank."""
    if original_params <= 0:
        raise InvalidInputError("original parameter count must be positive")
    if not 0 <= compressed_params <= original_params:
        raise InvalidInputError(
            f"compressed count {compressed_params} outside [0, {original_params}]")
    return (original_params - compressed_params) / original_params


def format_drop_rate(rate):
    """Table rendering with the reduction shown as a negative percentage."""
    return f"−{rate * 100:.2f}%" if rate > 0 else "0.00%"


@dataclass(frozen=True)
class RankPoint:
    rank: int
    loss: float
    max_abs_noise: float
    admissible: bool
    predicted_delta: float


def rank_curve(net, data, layer_index, eps, grads=None):
    """Calibration loss with the layer truncated at each compressive rank."""
    layer = net.layers[layer_index]
    if grads is None:
        grads = gradients(net, data)
    n, m = layer.shape
    dec = svd(layer.weight)
    points = []
    for k in range(1, max_compressive_rank(n, m) + 1):
        f = truncate(dec, k)
        verdict = check(layer.weight, f, grads[layer_index], eps, n, m)
        loss = dataset_loss(apply_factorization(net, layer_index, f), data)
        points.append(RankPoint(k, loss, verdict.max_abs_noise, verdict.admissible,
                                verdict.predicted_delta))
    return points


CURVE_COLUMNS = ["layer", "rank", "loss", "max_abs_noise", "admissible"]


def write_curve_csv(points, layer_index, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for p in points:
            writer.writerow([layer_index, p.rank, _num(p.loss), _num(p.max_abs_noise),
                             int(p.admissible)])


def read_curve_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["layer"]), RankPoint(int(r["rank"]), float(r["loss"]),
                                        float(r["max_abs_noise"]), r["admissible"] == "1",
                                        float("nan")))
            for r in rows]


@dataclass
class LayerDecision:
    layer: int
    rows: int
    cols: int
    max_rank: int
    rank: int | None = None
    skip_reason: str | None = None
    eps: float | None = None
    eps_source: str | None = None
    predicted_delta: float | None = None
    max_abs_noise: float | None = None
    fro_noise: float | None = None
    loss_before: float | None = None
    loss_after: float | None = None
    params_before: int = 0
    params_after: int = 0
    admissible_ranks: int | None = None


@dataclass
class CompressionReport:
    mode: str
    layers: list
    original_params: int
    compressed_params: int
    drop_rate: float
    calibration_before: Metrics
    calibration_after: Metrics
    holdout_before: Metrics | None = None
    holdout_after: Metrics | None = None
    gradient_stats: dict | None = None
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    timing: dict | None = None

    @property
    def n_factorized(self):
        return sum(1 for d in self.layers if d.rank is not None)

    def to_dict(self, include_timing=False):
        out = asdict(self)
        if not include_timing:
            out.pop("timing")
        for key in ("calibration_before", "calibration_after", "holdout_before", "holdout_after"):
            if out[key] is not None and out[key]["top5_accuracy"] is None:
                del out[key]["top5_accuracy"]
        out["format_version"] = 1
        return _round_floats(out)


def _num(x):
    return format(float(x), f".{SIG_DIGITS}g")


def _round_floats(obj):
    if isinstance(obj, float):
        if not np.isfinite(obj):
            return None
        return float(format(obj, f".{SIG_DIGITS}g"))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round_floats(obj.item())
    return obj


def _metrics_from(d):
    return None if d is None else Metrics(**d)


def report_from_dict(d):
    names = {f.name for f in fields(CompressionReport)}
    kw = {k: v for k, v in d.items() if k in names}
    kw["layers"] = [LayerDecision(**x) for x in d["layers"]]
    for key in ("calibration_before", "calibration_after", "holdout_before", "holdout_after"):
        kw[key] = _metrics_from(d.get(key))
    return CompressionReport(**kw)


LAYER_COLUMNS = [f.name for f in fields(LayerDecision)]


def report_json_text(report, include_timing=False):
    return json.dumps(report.to_dict(include_timing), sort_keys=True, indent=2) + "\n"


def emit_report(report, path, fmt="json", include_timing=False):
    """Write a report as JSON or as a per-layer CSV table."""
    path = Path(path)
    if fmt not in ("json", "csv"):
        raise InvalidInputError(f"unknown report format {fmt!r}")
    try:
        if fmt == "json":
            path.write_text(report_json_text(report, include_timing))
            return
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LAYER_COLUMNS)
            for d in report.layers:
                row = []
                for name in LAYER_COLUMNS:
                    v = getattr(d, name)
                    row.append("" if v is None else (_num(v) if isinstance(v, float) else v))
                writer.writerow(row)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report to {path}: {exc.strerror}") from None


def load_report(path):
    return report_from_dict(json.loads(Path(path).read_text()))
