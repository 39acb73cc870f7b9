"""Classification and supervised contrastive losses.

Binary losses (CE, focal, asymmetric multi-label) take probabilities
directly. Contrastive losses take a :class:`FeatureBatch` of unit-norm
feature rows and integer labels; each has a graph builder (``*_node``)
operating on a :class:`~asymcl.autodiff.Tape` and a plain-value wrapper
that evaluates the same graph. Natural log throughout.

Anchors whose positive (or negative) set is empty contribute nothing to
the corresponding term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ValidationError

EPS = 1e-12
NORM_TOL = 1e-9


@dataclass(frozen=True)
class LossParams:
    tau: float = 0.07
    eta: float = 0.0
    gamma: float = 0.0
    gamma_plus: float = 0.0
    gamma_minus: float = 0.0
    margin: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")
        for name in ("eta", "gamma", "gamma_plus", "gamma_minus"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0 <= self.margin <= 1:
            raise ValidationError(f"margin must lie in [0, 1], got {self.margin}")


@dataclass(frozen=True)
class FeatureBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        z = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if z.ndim != 2:
            raise ValidationError("features must be an N x d matrix")
        n, d = z.shape
        if n < 2 or d < 2:
            raise ValidationError(f"need N >= 2 and d >= 2, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValidationError("features must be finite")
        if np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > NORM_TOL):
            raise ValidationError("feature rows must be l2-normalized")
        if y.shape != (n,):
            raise ValidationError(f"expected {n} labels, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValidationError("labels must be integer class ids")
            y = y.astype(np.int64)
        if np.any(y < 0):
            raise ValidationError("labels must be nonnegative")
        z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", z)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_raw(cls, features, labels) -> FeatureBatch:
        """Normalize rows of ``features`` and wrap them."""
        z = np.asarray(features, dtype=np.float64)
        return cls(z / np.linalg.norm(z, axis=1, keepdims=True), labels)

    def __len__(self) -> int:
        return self.features.shape[0]


# -- binary losses (plain values) --------------------------------------------

def _check_prob(p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValidationError("probabilities must lie in [0, 1]")
    return p


def _check_label(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValidationError("binary labels must be 0 or 1")
    return y


def ce_loss(y, p) -> float:
    """Binary cross-entropy ``-y ln p - (1-y) ln(1-p)``."""
    y, p = _check_label(y), _check_prob(p)
    pc = np.clip(p, EPS, 1 - EPS)
    # the unused branch is dropped so that a perfect prediction scores exactly 0
    pos = np.where(y == 1, -np.log(np.where(p == 1, 1.0, pc)), 0.0)
    neg = np.where(y == 0, -np.log(np.where(p == 0, 1.0, 1 - pc)), 0.0)
    return float(pos + neg)


def focal_loss(y, p, gamma: float) -> float:
    """Focal loss; identical to :func:`ce_loss` at ``gamma = 0``."""
    if gamma < 0:
        raise ValidationError("gamma must be nonnegative")
    y, p = _check_label(y), _check_prob(p)
    pc = np.clip(p, EPS, 1 - EPS)
    pos = np.where(y == 1, -np.power(1 - p, gamma) * np.log(np.where(p == 1, 1.0, pc)), 0.0)
    neg = np.where(y == 0, -np.power(p, gamma) * np.log(np.where(p == 0, 1.0, 1 - pc)), 0.0)
    return float(pos + neg)


def asl_multilabel(y, p, params: LossParams) -> float:
    """Asymmetric multi-label loss with shifted probability ``max(p - m, 0)`` on negatives."""
    y, p = _check_label(y), _check_prob(p)
    if y.shape != p.shape or y.ndim != 1:
        raise ValidationError(f"label/probability length mismatch: {y.shape} vs {p.shape}")
    pc = np.clip(p, EPS, 1 - EPS)
    pm = np.maximum(p - params.margin, 0.0)
    pmc = np.clip(pm, EPS, 1 - EPS)
    pos = np.power(1 - p, params.gamma_plus) * np.log(np.where(p == 1, 1.0, pc))
    neg = np.power(pm, params.gamma_minus) * np.log(np.where(pm == 0, 1.0, 1 - pmc))
    return float(np.sum(-y * pos - (1 - y) * neg))


# -- binary losses on a graph -------------------------------------------------

def binary_probs_node(tape: Tape, logits: int) -> int:
    """Map an N x 1 logit column to N x 2 probabilities ``[1 - p, p]``, ``p = sigmoid``."""
    pair = tape.matmul(logits, tape.constant([[0.0, 1.0]]))
    return tape.softmax_rows(pair)


def focal_loss_node(tape: Tape, logits: int, y, gamma: float = 0.0) -> int:
    """Mean focal loss over a batch of logits (``gamma = 0`` gives CE)."""
    y = _check_label(y).reshape(-1)
    n = tape.value(logits).shape[0]
    if y.shape != (n,):
        raise ValidationError(f"expected {n} labels, got {y.shape[0]}")
    onehot = np.stack([1 - y, y], axis=1)
    probs = binary_probs_node(tape, logits)
    p_true = tape.sum(tape.mul(probs, tape.constant(onehot)), axis=1)
    log_p = tape.log(tape.maximum(p_true, EPS))
    if gamma == 0:
        per_sample = log_p
    else:
        p_other = tape.sum(tape.mul(probs, tape.constant(1 - onehot)), axis=1)
        weight = tape.exp(tape.scale(tape.log(tape.maximum(p_other, EPS)), gamma))
        per_sample = tape.mul(weight, log_p)
    return tape.neg(tape.mean(per_sample))


def ce_loss_node(tape: Tape, logits: int, y) -> int:
    return focal_loss_node(tape, logits, y, 0.0)


# -- contrastive losses ------------------------------------------------------

def pair_weights(labels) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalised positive and negative pair indicator matrices.

    ``pos[i, j] = 1/|P_i|`` for same-label ``j != i`` and ``neg[i, j] = 1/|N_i|``
    for different-label ``j``. Rows with an empty set are all zero.
    """
    y = np.asarray(labels)
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    diff = y[:, None] != y[None, :]
    pos = same / np.maximum(same.sum(axis=1, keepdims=True), 1)
    neg = diff / np.maximum(diff.sum(axis=1, keepdims=True), 1)
    return pos.astype(np.float64), neg.astype(np.float64)


def _probs_node(tape: Tape, z: int, tau: float) -> int:
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    n = tape.value(z).shape[0]
    if n < 2:
        raise ValidationError("need at least two features")
    sims = tape.scale(tape.dot_rows(z, z), 1.0 / tau)
    return tape.softmax_rows(sims, mask=np.eye(n, dtype=bool))


def _contrastive_node(tape, z, labels, tau, eta, focus):
    """Shared body. ``focus`` is None (CL), "fcl", or a float gamma (AFCL)."""
    labels = np.asarray(labels)
    if labels.shape != (tape.value(z).shape[0],):
        raise ValidationError("label count does not match feature rows")
    w_pos, w_neg = pair_weights(labels)
    probs = _probs_node(tape, z, tau)
    log_p = tape.log(tape.maximum(probs, EPS))
    if focus is not None or eta is not None:
        # 1 - p_ij summed from the anchor's other entries; subtracting from 1
        # cancels catastrophically when p_ij is close to 1
        n = len(labels)
        others = tape.constant(1.0 - np.eye(n))
        comp = tape.maximum(tape.matmul(probs, others), EPS)
        log_comp = tape.log(comp)
    if focus is None:
        pos_terms = log_p
    elif focus == "fcl":
        pos_terms = tape.mul(comp, log_p)
    else:
        weight = tape.exp(tape.scale(log_comp, focus))
        pos_terms = tape.mul(weight, log_p)
    total = tape.sum(tape.mul(tape.constant(w_pos), pos_terms))
    if eta is not None:
        neg_total = tape.sum(tape.mul(tape.constant(w_neg), log_comp))
        total = tape.add(total, tape.scale(neg_total, eta))
    return tape.neg(total)


def contrastive_loss_node(tape: Tape, z: int, labels, tau: float) -> int:
    return _contrastive_node(tape, z, labels, tau, None, None)


def focal_contrastive_loss_node(tape: Tape, z: int, labels, tau: float) -> int:
    return _contrastive_node(tape, z, labels, tau, None, "fcl")


def acl_node(tape: Tape, z: int, labels, tau: float, eta: float) -> int:
    if eta < 0:
        raise ValidationError("eta must be nonnegative")
    return _contrastive_node(tape, z, labels, tau, float(eta), None)


def afcl_node(tape: Tape, z: int, labels, tau: float, eta: float, gamma: float) -> int:
    if eta < 0 or gamma < 0:
        raise ValidationError("eta and gamma must be nonnegative")
    return _contrastive_node(tape, z, labels, tau, float(eta), float(gamma))


CONTRASTIVE_LOSSES = ("cl", "fcl", "acl", "afcl")


def loss_node(name: str, tape: Tape, z: int, labels, params: LossParams) -> int:
    """Dispatch a contrastive loss by name (``cl``, ``fcl``, ``acl``, ``afcl``)."""
    name = name.lower()
    if name == "cl":
        return contrastive_loss_node(tape, z, labels, params.tau)
    if name == "fcl":
        return focal_contrastive_loss_node(tape, z, labels, params.tau)
    if name == "acl":
        return acl_node(tape, z, labels, params.tau, params.eta)
    if name == "afcl":
        return afcl_node(tape, z, labels, params.tau, params.eta, params.gamma)
    raise ValidationError(f"unknown contrastive loss {name!r}")


def _evaluate(builder, batch: FeatureBatch, *args) -> float:
    tape = Tape()
    z = tape.constant(batch.features)
    return float(tape.value(builder(tape, z, batch.labels, *args)))


def pairwise_probs(batch: FeatureBatch, tau: float) -> np.ndarray:
    """Softmax over each anchor's other features; the diagonal is 0."""
    tape = Tape()
    z = tape.constant(batch.features)
    return np.array(tape.value(_probs_node(tape, z, tau)))


def contrastive_loss(batch: FeatureBatch, tau: float) -> float:
    return _evaluate(contrastive_loss_node, batch, tau)


def focal_contrastive_loss(batch: FeatureBatch, tau: float) -> float:
    return _evaluate(focal_contrastive_loss_node, batch, tau)


def acl(batch: FeatureBatch, tau: float, eta: float) -> float:
    return _evaluate(acl_node, batch, tau, eta)


def afcl(batch: FeatureBatch, tau: float, eta: float, gamma: float) -> float:
    return _evaluate(afcl_node, batch, tau, eta, gamma)
