"""Dense matrix helpers and a one-sided Jacobi SVD.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the gate
that every public entry point uses to reject ragged, empty or non-finite input.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConvergenceError, InvalidInputError, InvalidRankError

SVD_TOL = 1e-12
# relative to a unit-norm column; entries below this count as zero for the sign rule
_SIGN_ZERO = 1e-10


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array or raise InvalidInputError."""
    try:
        m = np.asarray(a, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name}: not a real-valued array ({exc})") from None
    if m.ndim != 2:
        raise InvalidInputError(f"{name}: expected 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError(f"{name}: empty shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError(f"{name}: contains NaN or Inf")
    return m


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # N x r
    s: np.ndarray  # r, non-increasing
    v: np.ndarray  # M x r

    @property
    def shape(self):
        return (self.u.shape[0], self.v.shape[0])

    @property
    def full_rank(self):
        return len(self.s)

    def reconstruct(self):
        return (self.u * self.s) @ self.v.T


@dataclass(frozen=True)
class FactorPair:
    """Rank-k factors with ``l @ r.T`` approximating an N x M weight."""

    l: np.ndarray  # N x k
    r: np.ndarray  # M x k

    def __post_init__(self):
        if self.l.ndim != 2 or self.r.ndim != 2 or self.l.shape[1] != self.r.shape[1]:
            raise InvalidInputError(
                f"factor shapes disagree: l{self.l.shape} r{self.r.shape}")
        if self.l.shape[1] < 1:
            raise InvalidRankError("factor rank must be positive")

    @property
    def rank(self):
        return self.l.shape[1]

    @property
    def shape(self):
        return (self.l.shape[0], self.r.shape[0])

    @property
    def param_count(self):
        n, m = self.shape
        return n * self.rank + m * self.rank

    def product(self):
        return self.l @ self.r.T


@lru_cache(maxsize=64)
def _round_robin(n):
    """Pairings covering every column pair once per sweep, n/2 disjoint pairs per round.

    Odd ``n`` gets a phantom index that is dropped from the emitted pairs.
    """
    players = list(range(n)) + ([-1] if n % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        p, q = [], []
        for i in range(size // 2):
            a, b = players[i], players[size - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_tall(a, tol, max_sweeps):
    """One-sided (Hestenes) Jacobi on a tall matrix; returns G = A V and V."""
    g = a.copy()
    n = a.shape[1]
    v = np.eye(n)
    rounds = _round_robin(n)
    worst = 0.0
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in rounds:
            gp, gq = g[:, p], g[:, q]
            alpha = np.einsum("ij,ij->j", gp, gp)
            beta = np.einsum("ij,ij->j", gq, gq)
            gamma = np.einsum("ij,ij->j", gp, gq)
            denom = np.sqrt(alpha * beta)
            live = denom > 0.0
            ratio = np.zeros_like(gamma)
            ratio[live] = np.abs(gamma[live]) / denom[live]
            if ratio.size:
                worst = max(worst, float(ratio.max()))
            rot = ratio > tol
            if not rot.any():
                continue
            zeta = (beta[rot] - alpha[rot]) / (2.0 * gamma[rot])
            sign = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = np.ones_like(gamma)
            s = np.zeros_like(gamma)
            c[rot] = 1.0 / np.sqrt(1.0 + t * t)
            s[rot] = c[rot] * t
            g[:, p], g[:, q] = c * gp - s * gq, s * gp + c * gq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if worst <= tol:
            return g, v
    raise ConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps", worst)


def _complete_columns(u, dead):
    """Replace the columns flagged in ``dead`` with an orthonormal completion."""
    keep = [j for j in range(u.shape[1]) if not dead[j]]
    basis = [u[:, j] for j in keep]
    fill = []
    for e in np.eye(u.shape[0]):
        if len(fill) == int(dead.sum()):
            break
        x = e.copy()
        for _ in range(2):
            for b in basis + fill:
                x -= (b @ x) * b
        nrm = np.linalg.norm(x)
        if nrm > 0.5:
            fill.append(x / nrm)
    out = u.copy()
    for j, col in zip(np.flatnonzero(dead), fill):
        out[:, j] = col
    return out


def svd(a, tol=SVD_TOL, max_sweeps=None):
    """Thin SVD ``a = u @ diag(s) @ v.T`` with r = min(N, M).

    Deterministic: fixed round-robin rotation order, stable descending sort,
    and each u-column's first entry above 1e-10 in magnitude made positive
    (the paired v-column flips with it).
    """
    a = as_matrix(a, "svd input")
    transposed = a.shape[0] < a.shape[1]
    work = a.T if transposed else a
    n_rows, n_cols = work.shape
    if max_sweeps is None:
        max_sweeps = 100 * n_cols
    g, v = _jacobi_tall(work, tol, max_sweeps)

    s = np.sqrt(np.einsum("ij,ij->j", g, g))
    order = np.argsort(-s, kind="stable")
    s, g, v = s[order], g[:, order], v[:, order]

    floor = s[0] * max(n_rows, n_cols) * np.finfo(np.float64).eps if s[0] > 0 else 0.0
    dead = s <= floor
    u = np.zeros_like(g)
    u[:, ~dead] = g[:, ~dead] / s[~dead]
    if dead.any():
        u = _complete_columns(u, dead)

    for j in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, j]) > _SIGN_ZERO)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    if transposed:
        # a.T = u s v.T  =>  a = v s u.T, sign rule re-applied on the new u
        u, v = v, u
        for j in range(u.shape[1]):
            nz = np.flatnonzero(np.abs(u[:, j]) > _SIGN_ZERO)
            if nz.size and u[nz[0], j] < 0:
                u[:, j] = -u[:, j]
                v[:, j] = -v[:, j]
    return SvdResult(u=u, s=s, v=v)


def truncate(dec, k):
    """Keep the leading ``k`` singular triplets; singular values go into ``l``."""
    r = dec.full_rank
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or not 1 <= k <= r:
        raise InvalidRankError(f"rank {k!r} outside [1, {r}]")
    k = int(k)
    return FactorPair(l=dec.u[:, :k] * dec.s[:k], r=dec.v[:, :k].copy())


def noise(w, f):
    """Factorization noise ``delta = l r^T - w`` with its max-abs and Frobenius norms."""
    w = as_matrix(w, "weight")
    if f.shape != w.shape:
        raise InvalidInputError(f"factor product shape {f.shape} != weight shape {w.shape}")
    delta = f.product() - w
    return delta, float(np.max(np.abs(delta))), float(np.linalg.norm(delta))


def tail_frobenius(s, k):
    """Eckart-Young residual sqrt(sum_{i>k} s_i^2) of a rank-k truncation."""
    s = np.asarray(s, dtype=np.float64)
    return float(np.sqrt(np.sum(s[k:] ** 2)))
