"""Empirical checks of the first-order loss model and per-layer eps selection.

The probe perturbs one layer by the noise an actual truncated SVD would
introduce, at every rank, and compares the measured loss change with the
gradient prediction. The largest noise bound whose worst disagreement stays
under a tolerance becomes that layer's eps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import predicted_loss_delta
from .errors import CalibrationUnavailableError, InvalidInputError
from .linalg import noise, svd, truncate
from .network import dataset_loss, gradients, perturb, sample_directional, sample_losses

DEFAULT_GRID = (1e-4, 5e-4, 1e-3, 1e-2, 1e-1)
DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-3


@dataclass(frozen=True)
class ProbeRecord:
    layer: int
    rank: int
    max_abs_noise: float
    eps_bound: float
    discrepancy: float
    first_order: float
    residual: float

    @property
    def measured_delta(self):
        return self.first_order + self.residual


@dataclass
class EpsilonProfile:
    eps: dict
    tolerance: float = DEFAULT_TOLERANCE
    probe_grid: tuple = DEFAULT_GRID
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        for layer, value in self.eps.items():
            if not value > 0:
                raise InvalidInputError(f"eps for layer {layer} must be positive")

    def __getitem__(self, layer):
        return self.eps[layer]


def _grad_for(net, data, layer_index, grads):
    if grads is None:
        grads = gradients(net, data)
    return grads[layer_index]


def neighborhood_discrepancy(net, data, layer_index, delta, grads=None, per_sample=False,
                             base_loss=None):
    """Worst of |loss(w +/- delta) - (loss(w) +/- <grad, delta>)|.

    With ``per_sample`` the comparison is made sample by sample and the
    largest per-sample gap is returned instead of the dataset-mean gap.
    """
    if per_sample:
        base = sample_losses(net, data)
        first = sample_directional(net, data, layer_index, delta)
        plus = sample_losses(perturb(net, layer_index, delta), data)
        minus = sample_losses(perturb(net, layer_index, -np.asarray(delta)), data)
        return float(max(np.max(np.abs(plus - base - first)),
                         np.max(np.abs(minus - base + first))))
    g = _grad_for(net, data, layer_index, grads)
    first = predicted_loss_delta(g, delta)
    base = dataset_loss(net, data) if base_loss is None else base_loss
    plus = dataset_loss(perturb(net, layer_index, delta), data)
    minus = dataset_loss(perturb(net, layer_index, -np.asarray(delta)), data)
    return max(abs(plus - (base + first)), abs(minus - (base - first)))


def second_order_diagnostic(net, data, layer_index, delta, grads=None, base_loss=None):
    """(first-order prediction, measured change minus prediction) for +delta."""
    g = _grad_for(net, data, layer_index, grads)
    first = predicted_loss_delta(g, delta)
    base = dataset_loss(net, data) if base_loss is None else base_loss
    measured = dataset_loss(perturb(net, layer_index, delta), data) - base
    return first, measured - first


def bucket(max_abs, grid=DEFAULT_GRID):
    """Smallest grid value bounding ``max_abs``; None when it exceeds the grid."""
    for g in sorted(grid):
        if max_abs <= g:
            return g
    return None


def probe_layer(net, data, layer_index, grads=None, grid=DEFAULT_GRID, base_loss=None):
    """Probe every truncation rank whose noise falls inside the grid."""
    if grads is None:
        grads = gradients(net, data)
    if base_loss is None:
        base_loss = dataset_loss(net, data)
    w = net.layers[layer_index].weight
    g = grads[layer_index]
    dec = svd(w)
    records = []
    for k in range(1, dec.full_rank):
        delta, max_abs, _ = noise(w, truncate(dec, k))
        bound = bucket(max_abs, grid)
        if bound is None:
            continue
        first = predicted_loss_delta(g, delta)
        plus = dataset_loss(perturb(net, layer_index, delta), data)
        minus = dataset_loss(perturb(net, layer_index, -delta), data)
        disc = max(abs(plus - (base_loss + first)), abs(minus - (base_loss - first)))
        records.append(ProbeRecord(layer_index, k, max_abs, bound, disc, first,
                                   (plus - base_loss) - first))
    return records


def select_from_records(records, tolerance=DEFAULT_TOLERANCE, grid=DEFAULT_GRID):
    """Largest grid eps such that every probed delta within it stays below ``tolerance``."""
    if not tolerance > 0:
        raise InvalidInputError("tolerance must be positive")
    if not records:
        raise CalibrationUnavailableError("no truncation rank yields noise inside the probe grid")
    chosen = None
    worst = 0.0
    for g in sorted(grid):
        in_bucket = [r.discrepancy for r in records if r.eps_bound == g]
        if in_bucket:
            worst = max(worst, max(in_bucket))
        if worst >= tolerance:
            break
        chosen = g
    if chosen is None:
        raise CalibrationUnavailableError(
            f"smallest probe bucket already exceeds tolerance {tolerance:g}")
    return chosen


def select_epsilon(net, data, layer_index, tolerance=DEFAULT_TOLERANCE, grid=DEFAULT_GRID,
                   enabled=True, grads=None):
    if not enabled:
        return DEFAULT_EPS
    records = probe_layer(net, data, layer_index, grads, grid)
    return select_from_records(records, tolerance, grid)


def calibrate(net, data, layers=None, tolerance=DEFAULT_TOLERANCE, grid=DEFAULT_GRID,
              grads=None, fallback=DEFAULT_EPS):
    """Per-layer eps; layers that cannot be calibrated get ``fallback``.

    Returns the profile and all probe records gathered on the way.
    """
    if grads is None:
        grads = gradients(net, data)
    base = dataset_loss(net, data)
    layers = range(len(net.layers)) if layers is None else layers
    eps, source, records = {}, {}, []
    for i in layers:
        recs = probe_layer(net, data, i, grads, grid, base)
        records.extend(recs)
        try:
            eps[i] = select_from_records(recs, tolerance, grid)
            source[i] = "calibrated"
        except CalibrationUnavailableError:
            eps[i] = fallback
            source[i] = "fallback"
    return EpsilonProfile(eps, tolerance, tuple(grid), source), records


def gradient_stats(snapshot, threshold=1e-3):
    """Fractions of gradient entries that are exactly zero and that are below ``threshold``."""
    flat = np.concatenate([np.abs(np.asarray(g)).reshape(-1) for g in snapshot])
    if flat.size == 0:
        raise InvalidInputError("empty gradient snapshot")
    return float(np.mean(flat == 0.0)), float(np.mean(flat < threshold))


def probe_table(records):
    """Worst discrepancy per (layer, eps bucket): the layer / eps / loss-change table."""
    rows = {}
    for r in records:
        key = (r.layer, r.eps_bound)
        rows[key] = max(rows.get(key, 0.0), r.discrepancy)
    return [(layer, bound, worst) for (layer, bound), worst in sorted(rows.items())]


def _fmt(x):
    return float(format(x, ".9g"))


def write_probe_json(records, path):
    rows = [{k: (_fmt(v) if isinstance(v, float) else v) for k, v in asdict(r).items()}
            for r in records]
    with open(path, "w") as fh:
        json.dump(rows, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_probe_csv(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "eps_bound", "delta_loss"])
        for layer, bound, worst in probe_table(records):
            writer.writerow([layer, format(bound, ".9g"), format(worst, ".9g")])
