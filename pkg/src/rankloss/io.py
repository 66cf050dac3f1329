"""Model JSON files, dataset CSV files and the synthetic blob generator."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .linalg import FactorPair
from .network import Dataset, Layer, Network

FORMAT_VERSION = 1


def network_to_dict(net):
    layers = []
    for layer in net.layers:
        rows, cols = layer.shape
        entry = {
            "rows": rows,
            "cols": cols,
            "activation": layer.activation,
            "weights": layer.weight.reshape(-1).tolist(),
            "bias": layer.bias.tolist(),
        }
        if layer.factors is not None:
            f = layer.factors
            entry["factors"] = {
                "rank": f.rank,
                "l": f.l.reshape(-1).tolist(),
                "r": f.r.reshape(-1).tolist(),
            }
        layers.append(entry)
    return {"format_version": FORMAT_VERSION, "loss_kind": net.loss_kind, "layers": layers}


def network_from_dict(obj):
    if obj.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported model format_version {obj.get('format_version')!r}")
    try:
        layers = []
        for i, entry in enumerate(obj["layers"]):
            rows, cols = int(entry["rows"]), int(entry["cols"])
            w = np.asarray(entry["weights"], dtype=np.float64)
            if w.size != rows * cols:
                raise InvalidInputError(f"layer {i}: {w.size} weights for a {rows}x{cols} matrix")
            w = w.reshape(rows, cols)
            factors = None
            if entry.get("factors") is not None:
                k = int(entry["factors"]["rank"])
                l = np.asarray(entry["factors"]["l"], dtype=np.float64)
                r = np.asarray(entry["factors"]["r"], dtype=np.float64)
                if l.size != rows * k or r.size != cols * k:
                    raise InvalidInputError(f"layer {i}: factor sizes do not match rank {k}")
                factors = FactorPair(l.reshape(rows, k), r.reshape(cols, k))
                prod = factors.product()
                if not np.allclose(prod, w, rtol=0.0, atol=1e-9 * max(1.0, np.abs(w).max())):
                    raise InvalidInputError(f"layer {i}: weights disagree with l @ r.T")
                w = prod
            layers.append(Layer(w, entry["bias"], entry.get("activation", "identity"), factors))
        return Network(tuple(layers), obj["loss_kind"])
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed model file: {exc!r}") from None


def save_network(net, path):
    path = Path(path)
    text = json.dumps(network_to_dict(net), sort_keys=True, separators=(",", ":"))
    path.write_text(text + "\n")


def load_network(path):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except OSError as exc:
        raise InvalidInputError(f"cannot read model file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"model file {path} is not valid JSON: {exc}") from None
    return network_from_dict(obj)


def save_dataset(data, path):
    """CSV, one sample per row: features then the label in the last column."""
    labels = np.asarray(data.labels)
    if labels.ndim != 1:
        raise InvalidInputError("CSV datasets carry a single label column")
    with open(path, "w", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        for x, y in zip(data.inputs, labels):
            writer.writerow([repr(float(v)) for v in x] + [_label_text(y)])


def _label_text(y):
    if isinstance(y, (np.integer, int)):
        return str(int(y))
    return repr(float(y))


def load_dataset(path):
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InvalidInputError(f"cannot read dataset {path}: {exc.strerror}") from None
    rows = []
    with fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise InvalidInputError(f"dataset {path} has no samples")
    width = len(rows[0])
    if width < 2 or any(len(r) != width for r in rows):
        raise InvalidInputError(f"dataset {path} has ragged or too-narrow rows")
    arr = np.asarray(rows)
    labels = arr[:, -1]
    if np.all(labels == np.round(labels)):
        labels = labels.astype(np.int64)
    return Dataset(arr[:, :-1], labels)


def make_blobs(n_classes, n_samples, n_features=8, seed=0, spread=2.0, std=1.0,
               sample_seed=None):
    """Gaussian blobs with balanced, interleaved class labels.

    Centres depend only on ``seed``; ``sample_seed`` (default ``seed``) draws
    the samples, so a held-out split shares centres but not points.
    """
    if n_classes < 1 or n_samples < 1 or n_features < 1:
        raise InvalidInputError("blob generator needs positive sizes")
    centres = np.random.default_rng(seed).standard_normal((n_classes, n_features)) * spread
    rng = np.random.default_rng(seed if sample_seed is None else sample_seed)
    labels = np.arange(n_samples, dtype=np.int64) % n_classes
    x = centres[labels] + std * rng.standard_normal((n_samples, n_features))
    return Dataset(x, labels)


_SPEC = re.compile(r"^blobs:(\d+)classes:(\d+)(?::(\d+)features)?$")


def parse_generator_spec(spec):
    """``blobs:<k>classes:<n>[:<d>features]`` -> (k, n, d)."""
    match = _SPEC.match(spec.strip())
    if not match:
        raise InvalidInputError(
            f"bad generator spec {spec!r}; expected blobs:<k>classes:<n>[:<d>features]")
    k, n, d = match.groups()
    return int(k), int(n), int(d) if d else 8
