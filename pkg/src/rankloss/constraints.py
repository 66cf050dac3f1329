"""Admission tests for a candidate factorization.

Two inequality constraints gate every candidate: the compression condition
``0 < k < NM / (N + M)`` and the elementwise noise bound
``max_ij |w_ij - (L R^T)_ij| <= eps``. The first-order loss change
``<grad, delta>`` is the quantity the optimizer drives negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .linalg import as_matrix, noise


@dataclass(frozen=True)
class ConstraintVerdict:
    rank: int
    compressive: bool
    lossless: bool
    max_abs_noise: float
    fro_noise: float
    predicted_delta: float
    eps: float

    @property
    def admissible(self):
        """Both constraints hold and the first-order change is negative or the noise is nil."""
        return (self.compressive and self.lossless
                and (self.predicted_delta < 0.0 or self.max_abs_noise == 0.0))


def max_compressive_rank(n_rows, m_cols):
    """Largest k with k * (n + m) < n * m; 0 when no rank compresses."""
    if n_rows < 1 or m_cols < 1:
        raise InvalidInputError("matrix dimensions must be positive")
    return (n_rows * m_cols - 1) // (n_rows + m_cols)


def _check_eps(eps):
    if not (isinstance(eps, (int, float, np.floating)) and np.isfinite(eps) and eps > 0):
        raise InvalidInputError(f"eps must be a positive finite number, got {eps!r}")


def lossless_condition(w, f, eps):
    _check_eps(eps)
    return noise(w, f)[1] <= eps


def predicted_loss_delta(grad, delta):
    """First-order loss change sum_ij grad_ij * delta_ij."""
    g = as_matrix(grad, "gradient")
    d = as_matrix(delta, "delta")
    if g.shape != d.shape:
        raise InvalidInputError(f"gradient shape {g.shape} != delta shape {d.shape}")
    return float(np.sum(g * d))


def check(w, f, grad, eps, n=None, m=None):
    """Evaluate both constraints and the first-order change for one candidate."""
    _check_eps(eps)
    w = as_matrix(w, "weight")
    n = w.shape[0] if n is None else n
    m = w.shape[1] if m is None else m
    delta, max_abs, fro = noise(w, f)
    return ConstraintVerdict(
        rank=f.rank,
        compressive=1 <= f.rank <= max_compressive_rank(n, m),
        lossless=max_abs <= eps,
        max_abs_noise=max_abs,
        fro_noise=fro,
        predicted_delta=predicted_loss_delta(grad, delta),
        eps=float(eps),
    )
