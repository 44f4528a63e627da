"""Numerically stable kernels and seeded random streams.

Everything is float64 and in nats.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _as_array(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64)


def log_sum_exp(v, axis=None):
    """``log(sum(exp(v)))`` computed around the maximum.

    With ``axis=None`` the whole array is reduced and a float is returned.
    """
    a = _as_array(v)
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise DimensionError("log_sum_exp of an empty vector")
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def log_softmax(v, axis=-1) -> np.ndarray:
    a = _as_array(v)
    if a.size == 0:
        raise DimensionError("softmax of an empty vector")
    m = np.max(a, axis=axis, keepdims=True)
    shifted = a - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(v, axis=-1) -> np.ndarray:
    a = _as_array(v)
    if a.size == 0:
        raise DimensionError("softmax of an empty vector")
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_sigmoid(x) -> np.ndarray:
    # log(1 / (1 + exp(-x))) without overflow on either tail
    x = _as_array(x)
    return -np.logaddexp(0.0, -x)


def sigmoid(x) -> np.ndarray:
    x = _as_array(x)
    return np.exp(log_sigmoid(x))


def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, _as_array(x))


def gaussian_kl_to_standard(mu, sigma, axis=-1):
    """KL( N(mu, diag sigma^2) || N(0, I) ), summed over ``axis``."""
    mu = _as_array(mu)
    sigma = _as_array(sigma)
    if mu.shape != sigma.shape:
        raise DimensionError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    if np.any(sigma <= 0.0):
        raise DomainError("sigma must be strictly positive")
    terms = mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma)
    out = 0.5 * np.sum(terms, axis=axis)
    return float(out) if np.ndim(out) == 0 else out


def kl_from_log_sigma(mu, log_sigma) -> np.ndarray:
    """Same closed form parameterised by log sigma; reduces the last axis."""
    mu = _as_array(mu)
    log_sigma = _as_array(log_sigma)
    return 0.5 * np.sum(mu * mu + np.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma, axis=-1)


def diag_gaussian_logpdf(z, mu, log_sigma) -> np.ndarray:
    z, mu, log_sigma = _as_array(z), _as_array(mu), _as_array(log_sigma)
    u = (z - mu) * np.exp(-log_sigma)
    return np.sum(-0.5 * u * u - log_sigma - 0.5 * LOG_2PI, axis=-1)


def standard_normal_logpdf(z) -> np.ndarray:
    z = _as_array(z)
    return np.sum(-0.5 * z * z - 0.5 * LOG_2PI, axis=-1)


def binary_entropy(p):
    """``-p ln p - (1-p) ln(1-p)`` with ``0 ln 0 = 0``. Accepts arrays."""
    a = _as_array(p)
    if np.any((a < 0.0) | (a > 1.0)) or np.any(np.isnan(a)):
        raise DomainError("binary entropy needs p in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(a > 0.0, a * np.log(a), 0.0) - np.where(a < 1.0, (1.0 - a) * np.log1p(-a), 0.0)
    return float(h) if h.ndim == 0 else h


def _key_word(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    k = int(key)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


class SeededRng:
    """Philox-backed random stream addressed by ``(seed, *keys)``.

    ``substream(epoch, batch, "eps")`` always yields the same draws no
    matter what else has been consumed, so results do not depend on the
    order in which substreams are evaluated.
    """

    def __init__(self, seed: int, keys: tuple = ()):
        self.seed = int(seed)
        self.keys = tuple(keys)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(_key_word(k) for k in self.keys))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, *keys) -> "SeededRng":
        return SeededRng(self.seed, self.keys + tuple(keys))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, keys={self.keys})"


def sample_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    if n < 1:
        raise DimensionError("need at least one draw")
    return rng.normal(n)
