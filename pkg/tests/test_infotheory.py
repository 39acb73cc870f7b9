import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asymcl import infotheory as it
from asymcl.errors import DivergenceUndefinedError, ValidationError

J = [[0.5, 0.25], [0.125, 0.125]]
INDEP = [[0.25, 0.25], [0.25, 0.25]]
CORR = [[0.5, 0.0], [0.0, 0.5]]


def mp_entropy(ps):
    mpmath.mp.dps = 40
    return float(-sum(mpmath.mpf(p) * mpmath.log(mpmath.mpf(p), 2) for p in ps if p > 0))


def test_entropy_examples():
    assert it.entropy([0.5, 0.5]) == pytest.approx(1.0, abs=1e-12)
    assert it.entropy([1.0, 0.0]) == 0.0
    assert it.entropy([0.25, 0.75]) == pytest.approx(mp_entropy([0.25, 0.75]), abs=1e-15)
    assert it.entropy([0.25, 0.75]) == pytest.approx(0.8112781244591328)


@pytest.mark.parametrize("bad", [[0.5, 0.6], [-0.1, 1.1], [0.3, 0.3], [], [np.nan, 1.0]])
def test_invalid_pmf_rejected(bad):
    with pytest.raises(ValidationError):
        it.entropy(bad)


def test_pmf_renormalises_within_tolerance():
    p = it.Pmf([0.5, 0.5 + 5e-10])
    assert math.fsum(p.probs) == pytest.approx(1.0, abs=1e-15)


def test_joint_entropy_examples():
    assert it.joint_entropy(INDEP) == pytest.approx(2.0, abs=1e-12)
    assert it.joint_entropy(CORR) == pytest.approx(1.0, abs=1e-12)
    assert it.joint_entropy(J) == pytest.approx(mp_entropy([0.5, 0.25, 0.125, 0.125]), abs=1e-12)
    assert it.joint_entropy(J) == pytest.approx(1.75, abs=1e-12)


def test_conditional_entropy_examples():
    assert it.conditional_entropy(INDEP) == pytest.approx(1.0, abs=1e-12)
    assert it.conditional_entropy(CORR) == pytest.approx(0.0, abs=1e-12)
    # chain rule from independently summed joint and row-marginal entropies
    expected = mp_entropy([0.5, 0.25, 0.125, 0.125]) - mp_entropy([0.75, 0.25])
    assert it.conditional_entropy(J) == pytest.approx(expected, abs=1e-12)


def test_mutual_information_examples():
    assert it.mutual_information(INDEP) == pytest.approx(0.0, abs=1e-12)
    assert it.mutual_information(CORR) == pytest.approx(1.0, abs=1e-12)
    expected = (mp_entropy([0.75, 0.25]) + mp_entropy([0.625, 0.375])
                - mp_entropy([0.5, 0.25, 0.125, 0.125]))
    assert it.mutual_information(J) == pytest.approx(expected, abs=1e-12)
    assert it.mutual_information(it.JointPmf(J).transpose()) == pytest.approx(
        it.mutual_information(J), abs=1e-12)


def test_kl_examples():
    assert it.kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert it.kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-15)
    assert it.kl_divergence([0.9, 0.1], [0.5, 0.5]) != pytest.approx(
        it.kl_divergence([0.5, 0.5], [0.9, 0.1]), abs=1e-3)


def test_kl_support_violation():
    with pytest.raises(DivergenceUndefinedError):
        it.kl_divergence([0.5, 0.5], [1.0, 0.0])
    with pytest.raises(DivergenceUndefinedError):
        it.cross_entropy([0.5, 0.5], [1.0, 0.0])
    # zero mass in p where q is zero is fine
    assert it.kl_divergence([1.0, 0.0], [1.0, 0.0]) == 0.0


def test_length_mismatch():
    with pytest.raises(ValidationError):
        it.kl_divergence([0.5, 0.5], [1 / 3] * 3)


def test_cross_entropy_examples():
    assert it.cross_entropy([0.5, 0.5], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-15)
    assert it.cross_entropy([1, 0], [0.5, 0.5]) == pytest.approx(1.0, abs=1e-15)


def test_conditional_cross_entropy():
    assert it.conditional_cross_entropy(J, J) == pytest.approx(it.conditional_entropy(J), abs=1e-12)
    p, q = [[0.2, 0.8]], [[0.6, 0.4]]
    assert it.conditional_cross_entropy(p, q) == pytest.approx(
        it.cross_entropy([0.2, 0.8], [0.6, 0.4]), abs=1e-12)
    true = np.array([[0.1, 0.3], [0.4, 0.2]])
    est = np.array([[0.25, 0.25], [0.1, 0.4]])
    brute = 0.0
    for z in range(2):
        for y in range(2):
            brute -= true[z, y] * math.log2(est[z, y] / est[z].sum())
    assert it.conditional_cross_entropy(true, est) == pytest.approx(brute, abs=1e-12)
    with pytest.raises(DivergenceUndefinedError):
        it.conditional_cross_entropy(true, [[0.5, 0.0], [0.25, 0.25]])
    with pytest.raises(ValidationError):
        it.conditional_cross_entropy(true, [[1.0]])


def test_uniform_entropy():
    assert it.uniform_entropy(2) == pytest.approx(1.0, abs=1e-12)
    assert it.uniform_entropy(1024) == pytest.approx(10.0, abs=1e-12)
    mpmath.mp.dps = 40
    assert it.uniform_entropy(3) == pytest.approx(float(mpmath.log(3, 2)), abs=1e-12)
    with pytest.raises(ValidationError):
        it.uniform_entropy(0)


def test_uniform_entropy_lemmas():
    prev = 0.0
    for n in range(1, 4097):
        cur = it.uniform_entropy(n)
        assert cur >= prev
        prev = cur
    for n in range(2, 11):
        base = it.uniform_entropy(n)
        for m in range(1, 7):
            if n ** m > 200_000:
                continue
            assert it.uniform_entropy(n ** m) == pytest.approx(m * base, abs=1e-9)
    for k in range(0, 13):
        assert it.uniform_entropy(2 ** k) == pytest.approx(k, abs=1e-12)


def test_uniform_entropy_large_power():
    assert it.uniform_entropy(10 ** 6) == pytest.approx(6 * it.uniform_entropy(10), abs=1e-9)


# -- properties ------------------------------------------------------------

weights = arrays(np.float64, st.integers(1, 16),
                 elements=st.floats(0, 1, allow_nan=False, allow_subnormal=False))


def _normalise(w):
    w = np.asarray(w, dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones_like(w)
    return w / w.sum()


@given(weights)
def test_maximality(w):
    p = _normalise(w)
    assert it.entropy(p) <= math.log2(len(p)) + 1e-12


@given(weights, st.integers(1, 5))
def test_extensibility(w, extra):
    p = _normalise(w)
    assert abs(it.entropy(p) - it.entropy(np.concatenate([p, np.zeros(extra)]))) <= 1e-15


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_additivity_and_conditioning(nx, ny, seed):
    rng = np.random.default_rng(seed)
    w = rng.random((nx, ny)) ** 2
    w[rng.random((nx, ny)) < 0.2] = 0
    if w.sum() == 0:
        w[0, 0] = 1
    j = it.JointPmf(w / w.sum())
    assert it.joint_entropy(j) == pytest.approx(
        it.entropy(j.row_marginal()) + it.conditional_entropy(j), abs=1e-9)
    assert it.conditional_entropy(j) <= it.entropy(j.col_marginal()) + 1e-12
    assert it.mutual_information(j) >= -1e-12
    assert it.mutual_information(j) == pytest.approx(it.mutual_information(j.transpose()), abs=1e-12)


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_kl_nonneg_and_cross_entropy_identity(n, seed):
    rng = np.random.default_rng(seed)
    p = _normalise(rng.random(n) * (rng.random(n) > 0.3))
    q = _normalise(rng.random(n) + 1e-3)
    assert it.kl_divergence(p, q) >= -1e-12
    assert it.cross_entropy(p, q) == pytest.approx(it.entropy(p) + it.kl_divergence(p, q), abs=1e-12)
    assert it.cross_entropy(p, p) == pytest.approx(it.entropy(p), abs=1e-12)


@settings(max_examples=200)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_continuity(n, seed):
    rng = np.random.default_rng(seed)
    p = _normalise(rng.random(n))
    eps = 1e-6
    i, j = rng.choice(n, 2, replace=False)
    shift = min(eps, p[i])
    q = p.copy()
    q[i] -= shift
    q[j] += shift
    assert abs(it.entropy(p) - it.entropy(q)) < 1e-4


def test_invariance_under_relabeling():
    rng = np.random.default_rng(5)
    p = _normalise(rng.random(9))
    assert it.entropy(p) == pytest.approx(it.entropy(p[rng.permutation(9)]), abs=1e-14)
