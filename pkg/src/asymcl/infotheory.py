"""Exact information-theoretic quantities for finite discrete distributions.

All results are in bits. Zero-probability outcomes are skipped explicitly,
which realises the convention ``0 * log 0 = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceUndefinedError, ValidationError

SUM_TOL = 1e-9


def _check_probs(arr: np.ndarray, what: str) -> np.ndarray:
    if arr.size == 0:
        raise ValidationError(f"{what} must have at least one outcome")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite entries")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValidationError(f"{what} entries must lie in [0, 1]")
    total = math.fsum(arr.ravel())
    if abs(total - 1.0) > SUM_TOL:
        raise ValidationError(f"{what} sums to {total!r}, not 1")
    if total != 1.0:
        arr = arr / total
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Pmf:
    """Probability mass function over outcomes ``0..n-1``."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64)
        if arr.ndim != 1:
            raise ValidationError("Pmf probabilities must be a vector")
        object.__setattr__(self, "probs", _check_probs(arr, "Pmf"))

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class JointPmf:
    """Joint distribution; rows index X, columns index Y."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.probs, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError("JointPmf probabilities must be a matrix")
        object.__setattr__(self, "probs", _check_probs(arr, "JointPmf"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    def row_marginal(self) -> Pmf:
        """Distribution of X."""
        return Pmf(np.clip(self.probs.sum(axis=1), 0.0, 1.0))

    def col_marginal(self) -> Pmf:
        """Distribution of Y."""
        return Pmf(np.clip(self.probs.sum(axis=0), 0.0, 1.0))

    def transpose(self) -> JointPmf:
        return JointPmf(self.probs.T)


def _as_pmf(p) -> Pmf:
    return p if isinstance(p, Pmf) else Pmf(p)


def _as_joint(j) -> JointPmf:
    return j if isinstance(j, JointPmf) else JointPmf(j)


def _neg_plogp(values: np.ndarray) -> float:
    nz = values[values > 0]
    return -math.fsum(nz * np.log2(nz))


def entropy(p: Pmf) -> float:
    """Shannon entropy ``-sum p log2 p``."""
    p = _as_pmf(p)
    return max(_neg_plogp(p.probs), 0.0)


def joint_entropy(j: JointPmf) -> float:
    j = _as_joint(j)
    return max(_neg_plogp(j.probs.ravel()), 0.0)


def conditional_entropy(j: JointPmf) -> float:
    """H(Y | X) = sum_x p_x H(Y | X = x), with X indexing rows."""
    j = _as_joint(j)
    px = j.probs.sum(axis=1)
    terms = []
    for x, row in enumerate(j.probs):
        if px[x] <= 0:
            continue
        nz = row[row > 0]
        terms.extend(-nz * np.log2(nz / px[x]))
    return max(math.fsum(terms), 0.0)


def mutual_information(j: JointPmf) -> float:
    """I(X; Y) = H(Y) - H(Y | X)."""
    j = _as_joint(j)
    return entropy(j.col_marginal()) - conditional_entropy(j)


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p, q = _as_pmf(p), _as_pmf(q)
    if len(p) != len(q):
        raise ValidationError(f"length mismatch: {len(p)} vs {len(q)}")
    bad = (p.probs > 0) & (q.probs == 0)
    if np.any(bad):
        raise DivergenceUndefinedError(
            f"estimate has zero mass on supported outcomes {np.flatnonzero(bad).tolist()}"
        )
    return p.probs, q.probs


def kl_divergence(p: Pmf, q: Pmf) -> float:
    """D_KL(p || q) in bits. Raises if q misses part of p's support."""
    pp, qq = _pair(p, q)
    s = pp > 0
    return math.fsum(pp[s] * np.log2(pp[s] / qq[s]))


def cross_entropy(p: Pmf, q: Pmf) -> float:
    """H(p; q) = -sum p log2 q."""
    pp, qq = _pair(p, q)
    s = pp > 0
    return -math.fsum(pp[s] * np.log2(qq[s]))


def conditional_cross_entropy(true_joint: JointPmf, est_joint: JointPmf) -> float:
    """Expected code length for Y under the estimator's conditional, given Z.

    Rows of both joints index the conditioning variable Z, columns index Y.
    The expectation is over ``true_joint``; the code uses
    ``est(y | z) = est_joint[z, y] / sum_y' est_joint[z, y']``.
    """
    t, e = _as_joint(true_joint), _as_joint(est_joint)
    if t.shape != e.shape:
        raise ValidationError(f"shape mismatch: {t.shape} vs {e.shape}")
    bad = (t.probs > 0) & (e.probs == 0)
    if np.any(bad):
        cells = [tuple(c) for c in np.argwhere(bad).tolist()]
        raise DivergenceUndefinedError(f"estimator has zero mass on cells {cells}")
    ez = e.probs.sum(axis=1)
    terms = []
    for z in range(t.shape[0]):
        row = t.probs[z]
        s = row > 0
        terms.extend(-row[s] * np.log2(e.probs[z, s] / ez[z]))
    return math.fsum(terms)


def uniform_entropy(n: int) -> float:
    """Entropy of the uniform distribution on ``n`` outcomes."""
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    return entropy(Pmf(np.full(n, 1.0 / n)))
