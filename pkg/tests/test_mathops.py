import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vaeas.mathops import (
    DimensionError,
    DomainError,
    SeededRng,
    binary_entropy,
    diag_gaussian_logpdf,
    gaussian_kl_to_standard,
    log_softmax,
    log_sum_exp,
    sample_standard_normal,
    softmax,
    standard_normal_logpdf,
)

finite_vec = arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50))


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
    assert log_sum_exp([0.0, math.log(3)]) == pytest.approx(math.log(4), abs=1e-15)
    assert log_sum_exp([-7.25]) == -7.25


def test_log_sum_exp_empty():
    with pytest.raises(DimensionError):
        log_sum_exp([])


def test_log_sum_exp_against_mpmath():
    mpmath = pytest.importorskip("mpmath")
    v = SeededRng(3).normal(12) * 30
    mpmath.mp.dps = 50
    ref = mpmath.log(sum(mpmath.exp(mpmath.mpf(float(x))) for x in v))
    assert log_sum_exp(v) == pytest.approx(float(ref), rel=1e-14)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(softmax([0, math.log(2)]), [1 / 3, 2 / 3], atol=1e-15)


@given(finite_vec, st.floats(-100, 100))
def test_softmax_shift_invariant_and_normalised(v, c):
    p = softmax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


@given(finite_vec)
def test_softmax_consistent_with_log_sum_exp(v):
    np.testing.assert_allclose(np.exp(v - log_sum_exp(v)), softmax(v), atol=1e-12)
    np.testing.assert_allclose(log_softmax(v), v - log_sum_exp(v), atol=1e-12)


def test_kl_examples():
    assert gaussian_kl_to_standard(np.zeros(3), np.ones(3)) == 0.0
    assert gaussian_kl_to_standard([1.0], [1.0]) == pytest.approx(0.5)
    assert gaussian_kl_to_standard([0.0], [2.0]) == pytest.approx(1.5 - math.log(2), abs=1e-15)


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(DomainError):
        gaussian_kl_to_standard([0.0], [0.0])
    with pytest.raises(DomainError):
        gaussian_kl_to_standard([0.0, 1.0], [1.0, -1.0])


def _mc_kl(mu, sigma, rng, n):
    z = mu + sigma * rng.normal((n, len(mu)))
    d = diag_gaussian_logpdf(z, mu, np.log(sigma)) - standard_normal_logpdf(z)
    return d.mean(), d.std(ddof=1) / math.sqrt(n)


def test_kl_matches_mc_sigma2():
    est, se = _mc_kl(np.array([0.0]), np.array([2.0]), SeededRng(11), 10**6)
    assert abs(est - (1.5 - math.log(2))) < 3 * se


def test_kl_matches_mc_random_draws():
    # 100 random (mu, sigma) pairs, 1e6 draws each, within 3 standard errors
    rng = SeededRng(12)
    misses = 0
    for k in range(100):
        r = rng.substream(k)
        mu = r.normal(2)
        sigma = np.exp(0.5 * r.normal(2))
        est, se = _mc_kl(mu, sigma, r.substream("mc"), 10**6)
        misses += abs(est - gaussian_kl_to_standard(mu, sigma)) > 3 * se
    # a 3-sigma miss has probability ~0.003 per draw
    assert misses <= 2


@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), arrays(np.float64, 4, elements=st.floats(0.05, 5)))
def test_kl_nonnegative(mu, sigma):
    assert gaussian_kl_to_standard(mu, sigma) >= -1e-12


def test_sampling_deterministic_and_moments():
    a = sample_standard_normal(SeededRng(5), 1000)
    b = sample_standard_normal(SeededRng(5), 1000)
    np.testing.assert_array_equal(a, b)
    big = sample_standard_normal(SeededRng(6), 10**6)
    assert abs(big.mean()) < 0.005
    # var of the sample variance is 2/n
    assert abs(big.var() - 1) < 5 * math.sqrt(2 / 10**6)


def test_substreams_disjoint_and_order_free():
    root = SeededRng(9)
    e0 = root.substream("eps", 0).normal(1000)
    e1 = root.substream("eps", 1).normal(1000)
    assert not np.any(np.isin(e0, e1))
    # drawing other streams first does not change a substream
    root.substream("other").normal(50)
    np.testing.assert_array_equal(SeededRng(9).substream("eps", 1).normal(1000), e1)


def test_sample_count_checked():
    with pytest.raises(DimensionError):
        sample_standard_normal(SeededRng(0), 0)


def test_binary_entropy():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert binary_entropy(0.1) == pytest.approx(0.325082973391448, abs=1e-12)
    with pytest.raises(DomainError):
        binary_entropy(1.5)
    with pytest.raises(DomainError):
        binary_entropy(-0.1)


@given(st.floats(0, 1))
def test_binary_entropy_bounds(p):
    assert -1e-15 <= binary_entropy(p) <= math.log(2) + 1e-15
