"""Greedy per-layer rank search: lowest-loss (lossless) and lowest-rank (compact).

Both searches walk the truncated SVD of one layer at a time and admit a rank
only if it compresses, keeps every weight within ``eps`` of the original, and
has a negative first-order loss change (or introduces no noise at all).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .calibrator import DEFAULT_EPS, DEFAULT_GRID, DEFAULT_TOLERANCE, calibrate, gradient_stats
from .constraints import ConstraintVerdict, check, max_compressive_rank
from .errors import InvalidInputError, StateError
from .linalg import FactorPair, svd, tail_frobenius, truncate
from .network import _check_layer_index, apply_factorization, dataset_loss, gradients
from .report import CompressionReport, LayerDecision, drop_rate, evaluate

log = logging.getLogger(__name__)

MODES = ("lossless", "compact")
SKIP_REASONS = ("already-decomposed", "no-compressive-rank", "lossless-violated",
                "non-negative-inner-product", "measured-loss-increase")


@dataclass(frozen=True)
class CandidateEntry:
    layer: int
    rank: int
    factors: FactorPair
    predicted_delta: float
    measured_loss: float
    verdict: ConstraintVerdict


@dataclass
class CompressionConfig:
    mode: str = "lossless"
    eps: object = "calibrate"  # "calibrate" or a positive float
    tolerance: float = DEFAULT_TOLERANCE
    probe_grid: tuple = DEFAULT_GRID
    fallback_eps: float = DEFAULT_EPS
    refresh_grad: str = "once"
    rank_by: str = "measured"
    refine: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eps != "calibrate":
            try:
                self.eps = float(self.eps)
            except (TypeError, ValueError):
                raise InvalidInputError(f"eps must be 'calibrate' or a number, got {self.eps!r}") from None
            if not (np.isfinite(self.eps) and self.eps > 0):
                raise InvalidInputError("fixed eps must be positive")
        if self.refresh_grad not in ("once", "per-layer"):
            raise InvalidInputError("refresh_grad must be 'once' or 'per-layer'")
        if self.rank_by not in ("measured", "predicted"):
            raise InvalidInputError("rank_by must be 'measured' or 'predicted'")
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        self.probe_grid = tuple(float(g) for g in self.probe_grid)

    def to_dict(self):
        d = asdict(self)
        d["probe_grid"] = list(self.probe_grid)
        return d

    @classmethod
    def from_mapping(cls, mapping):
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k.replace("-", "_"): v for k, v in mapping.items()})


def load_config(path):
    """CompressionConfig from a .toml or .json file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc.strerror}") from None
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        mapping = tomllib.loads(raw.decode())
    else:
        mapping = json.loads(raw)
    mapping = mapping.get("compression", mapping)
    return CompressionConfig.from_mapping({k.replace("-", "_"): v for k, v in mapping.items()})


class _LayerProblem:
    """Truncation candidates of one layer, computed lazily and cached per rank."""

    def __init__(self, weight, grad, eps, refine=False):
        self.w = weight
        self.grad = np.asarray(grad, dtype=np.float64)
        self.eps = eps
        self.refine = refine
        self.n, self.m = weight.shape
        self.kmax = max_compressive_rank(self.n, self.m)
        self._dec = None
        self._cache = {}

    @property
    def dec(self):
        if self._dec is None:
            self._dec = svd(self.w)
        return self._dec

    def candidate(self, k):
        if k not in self._cache:
            f = truncate(self.dec, k)
            verdict = check(self.w, f, self.grad, self.eps, self.n, self.m)
            if self.refine and verdict.lossless:
                f, verdict = _refine(self.w, self.grad, self.eps, f, verdict)
            self._cache[k] = (f, verdict)
        return self._cache[k]

    def lossless_ok(self, k):
        return self.candidate(k)[1].lossless

    def admissible(self, k):
        return self.candidate(k)[1].admissible

    def certified_floor(self):
        """Smallest rank that can possibly meet the eps bound.

        Any rank-k matrix is at least tail_frobenius(k) away from ``w`` in
        Frobenius norm, and max-abs >= Frobenius / sqrt(N M).
        """
        limit = self.eps * np.sqrt(self.n * self.m)
        lo, hi = 1, self.kmax + 1
        while lo < hi:
            mid = (lo + hi) // 2
            if tail_frobenius(self.dec.s, mid) <= limit:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def skip_reason(self):
        if self.kmax == 0:
            return "no-compressive-rank"
        if not any(self.lossless_ok(k) for k in range(self.certified_floor(), self.kmax + 1)):
            return "lossless-violated"
        return "non-negative-inner-product"


def _refine(w, grad, eps, f, verdict):
    """One step along -grad inside the eps box, projected back to rank k.

    Kept only if it stays inside the box and lowers the predicted change.
    """
    step = min(eps - verdict.max_abs_noise, 0.1 * eps)
    gmax = float(np.max(np.abs(grad)))
    if step <= 0 or gmax == 0:
        return f, verdict
    moved = f.product() - step * grad / gmax
    g = truncate(svd(moved), f.rank)
    v = check(w, g, grad, eps)
    if v.lossless and v.predicted_delta < verdict.predicted_delta:
        return g, v
    return f, verdict


def _entry(net, data, i, k, f, verdict):
    loss = dataset_loss(apply_factorization(net, i, f), data)
    return CandidateEntry(i, k, f, verdict.predicted_delta, loss, verdict)


def _problem(net, grad, layer_index, eps, refine):
    i = _check_layer_index(net, layer_index)
    layer = net.layers[i]
    if layer.decomposed:
        raise StateError(f"layer {i} is already decomposed")
    if not (np.isfinite(eps) and eps > 0):
        raise InvalidInputError("eps must be positive")
    if np.shape(grad) != layer.shape:
        raise InvalidInputError(f"gradient shape {np.shape(grad)} != layer shape {layer.shape}")
    return i, _LayerProblem(layer.weight, grad, eps, refine)


def _lossless_search(net, data, i, prob, rank_by="measured"):
    admitted = []
    for k in range(1, prob.kmax + 1):
        f, verdict = prob.candidate(k)
        if verdict.admissible:
            admitted.append(_entry(net, data, i, k, f, verdict))
    if not admitted:
        return None, 0
    key = (lambda e: (e.measured_loss, e.rank)) if rank_by == "measured" else \
        (lambda e: (e.predicted_delta, e.rank))
    return min(admitted, key=key), len(admitted)


def lossless_layer_search(net, data, grad, layer_index, eps, rank_by="measured", refine=False):
    """Admissible rank with the lowest calibration loss (smaller rank wins ties), or None."""
    i, prob = _problem(net, grad, layer_index, eps, refine)
    return _lossless_search(net, data, i, prob, rank_by)[0]


def _compact_rank(prob):
    """Smallest admissible rank, or None.

    Binary search over the eps bound assuming it is monotone in rank, then
    an exhaustive check of the ranks between the certified floor and the
    binary-search boundary, so non-monotone noise cannot hide a smaller rank.
    """
    if prob.kmax == 0:
        return None
    floor = prob.certified_floor()
    if floor > prob.kmax:
        return None
    lo, hi = floor, prob.kmax + 1
    while lo < hi:
        mid = (lo + hi) // 2
        if prob.lossless_ok(mid):
            hi = mid
        else:
            lo = mid + 1
    boundary = lo
    start = next((k for k in range(floor, boundary) if prob.lossless_ok(k)), boundary)
    for k in range(start, prob.kmax + 1):
        if prob.admissible(k):
            return k
    return None


def compact_layer_search(net, data, grad, layer_index, eps, refine=False):
    """Admissible candidate with the smallest rank, or None."""
    i, prob = _problem(net, grad, layer_index, eps, refine)
    k = _compact_rank(prob)
    if k is None:
        return None
    f, verdict = prob.candidate(k)
    return _entry(net, data, i, k, f, verdict)


def compress_network(net, data, config=None, holdout=None, eps_profile=None):
    """Factorize layers input-to-output under ``config``; returns (network, report).

    Layers with no admissible rank stay intact. In lossless mode a layer is
    also left intact when its best candidate would raise the calibration loss.
    """
    config = config or CompressionConfig()
    t0 = time.perf_counter()
    grads = gradients(net, data)
    stats = gradient_stats(grads)
    if eps_profile is None and config.eps == "calibrate":
        eps_profile, _ = calibrate(net, data, tolerance=config.tolerance,
                                   grid=config.probe_grid, grads=grads,
                                   fallback=config.fallback_eps)
    t_cal = time.perf_counter()

    work = net
    current = dataset_loss(net, data)
    decisions, warnings = [], []
    for i, layer in enumerate(net.layers):
        n, m = layer.shape
        dec = LayerDecision(layer=i, rows=n, cols=m, max_rank=max_compressive_rank(n, m),
                            loss_before=current, loss_after=current,
                            params_before=layer.param_count, params_after=layer.param_count)
        decisions.append(dec)
        if layer.decomposed:
            dec.skip_reason = "already-decomposed"
            continue
        if eps_profile is not None:
            eps = eps_profile.eps.get(i, config.fallback_eps)
            dec.eps_source = eps_profile.source.get(i, "fallback")
        else:
            eps = config.eps
            dec.eps_source = "fixed"
        dec.eps = eps
        prob = _LayerProblem(work.layers[i].weight, grads[i], eps, config.refine)
        if config.mode == "lossless":
            entry, dec.admissible_ranks = _lossless_search(work, data, i, prob, config.rank_by)
        else:
            k = _compact_rank(prob)
            entry = None if k is None else _entry(work, data, i, k, *prob.candidate(k))
        if entry is None:
            dec.skip_reason = prob.skip_reason()
            continue
        dec.predicted_delta = entry.predicted_delta
        dec.max_abs_noise = entry.verdict.max_abs_noise
        dec.fro_noise = entry.verdict.fro_noise
        if config.mode == "lossless" and entry.measured_loss > current:
            dec.skip_reason = "measured-loss-increase"
            continue
        work = apply_factorization(work, i, entry.factors)
        dec.rank = entry.rank
        dec.loss_after = entry.measured_loss
        dec.params_after = work.layers[i].param_count
        current = entry.measured_loss
        log.info("layer %d: rank %d, loss %.6g", i, entry.rank, current)
        if config.refresh_grad == "per-layer":
            grads = gradients(work, data)

    if not any(d.rank is not None for d in decisions):
        warnings.append("no layer could be factorized under the current constraints")
    original, compressed = net.param_count, work.param_count
    report = CompressionReport(
        mode=config.mode,
        layers=decisions,
        original_params=original,
        compressed_params=compressed,
        drop_rate=drop_rate(original, compressed),
        calibration_before=evaluate(net, data),
        calibration_after=evaluate(work, data),
        holdout_before=None if holdout is None else evaluate(net, holdout),
        holdout_after=None if holdout is None else evaluate(work, holdout),
        gradient_stats={"fraction_exact_zero": stats[0], "fraction_below_1e-3": stats[1]},
        config=config.to_dict(),
        warnings=warnings,
        timing={"calibration_s": t_cal - t0, "total_s": time.perf_counter() - t0},
    )
    return work, report
