"""Reference estimators of I(z, x) and D(q(z) || p(z)) that do not use the classifier.

``mc_estimate`` evaluates the aggregated posterior of an S-point subset
directly; ``mine_train``/``mine_estimate`` fit a Donsker-Varadhan critic.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classifier import dv_objective
from .mathops import LOG_2PI, SeededRng, diag_gaussian_logpdf, log_sum_exp, standard_normal_logpdf
from .nn import Adam, Mlp, init_mlp, mlp_backward, mlp_forward

log = logging.getLogger(__name__)


def mixture_logpdf(z, mu, log_sigma, chunk=2048) -> np.ndarray:
    """``log (1/S) sum_j N(z; mu_j, sigma_j)`` for each row of z.

    The quadratic form is expanded so each chunk costs two matrix products.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    mu = np.asarray(mu, dtype=np.float64)
    S, D = mu.shape
    prec = np.exp(-2.0 * log_sigma)  # (S, D)
    const = -0.5 * np.sum(mu * mu * prec, axis=1) - np.sum(log_sigma, axis=1) - 0.5 * D * LOG_2PI
    out = np.empty(z.shape[0])
    for a in range(0, z.shape[0], chunk):
        zc = z[a:a + chunk]
        logp = -0.5 * (zc * zc) @ prec.T + zc @ (mu * prec).T + const
        out[a:a + chunk] = log_sum_exp(logp, axis=1) - math.log(S)
    return out


@dataclass
class McResult:
    mi: float
    md: float
    kl: float  # mean closed-form KL over the same points
    S: int


def mc_estimate(mu, log_sigma, S: int | None, rng: SeededRng, draws: int = 1) -> McResult:
    """Aggregated-posterior Monte Carlo over an S-point subset.

    ``mu``/``log_sigma`` are the frozen encoder outputs for the whole set.
    S points are chosen at random (all of them when ``S`` is None or equals
    N); every chosen point contributes ``draws`` codes z ~ q(z | x_i) and
    ``q(z)`` is the mixture over the same S points.
    """
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    N, D = mu.shape
    S = N if S is None else int(S)
    if S < 1 or S > N:
        raise ValueError(f"need 1 <= S <= N, got S={S}, N={N}")
    rows = np.arange(N) if S == N else np.sort(rng.substream("subset").permutation(N)[:S])
    m, ls = mu[rows], log_sigma[rows]
    eps = rng.substream("draws").normal((S, draws, D))
    z = (m[:, None, :] + np.exp(ls)[:, None, :] * eps).reshape(S * draws, D)
    m_r, ls_r = np.repeat(m, draws, axis=0), np.repeat(ls, draws, axis=0)
    log_cond = diag_gaussian_logpdf(z, m_r, ls_r)
    log_agg = mixture_logpdf(z, m, ls)
    log_prior = standard_normal_logpdf(z)
    kl = 0.5 * np.sum(m * m + np.exp(2 * ls) - 1.0 - 2.0 * ls, axis=1)
    return McResult(float(np.mean(log_cond - log_agg)), float(np.mean(log_agg - log_prior)), float(np.mean(kl)), S)


# -- MINE --------------------------------------------------------------------


class MineDivergence(ArithmeticError):
    pass


@dataclass
class MineConfig:
    hidden: int = 256
    layers: int = 3  # two hidden layers plus the scalar output
    batch: int = 512
    steps: int = 3000
    lr: float = 1e-3
    smooth: int = 100


@dataclass
class MineNet:
    params: Mlp
    x_dim: int
    history: list = field(default_factory=list)

    def statistic(self, x, z) -> np.ndarray:
        out, _ = mlp_forward(self.params, np.concatenate([x, z], axis=1))
        return out[:, 0]


def dv_loss_and_grads(params: Mlp, x, z, perm):
    """Negative DV bound on one batch and its parameter gradients.

    The marginal half pairs each x with ``z[perm]``.
    """
    B = x.shape[0]
    inp = np.concatenate([np.concatenate([x, z], axis=1), np.concatenate([x, z[perm]], axis=1)])
    out, tape = mlp_forward(params, inp)
    tj, tm = out[:B, 0], out[B:, 0]
    value = dv_objective(tj, tm)
    w = np.exp(tm - tm.max())
    w /= w.sum()
    g = np.concatenate([np.full(B, -1.0 / B), w])[:, None]
    grads, _ = mlp_backward(params, tape, g)
    return -value, grads.arrays()


def mine_train(sampler: Callable, x_dim: int, z_dim: int, cfg: MineConfig, rng: SeededRng) -> MineNet:
    """Fit a critic T(x, z) by ascending the DV bound.

    ``sampler(rng, n)`` returns n joint draws ``(x, z)``; marginal pairs come
    from permuting z inside the batch. Plain DV gradients, no moving-average
    correction.
    """
    sizes = [x_dim + z_dim] + [cfg.hidden] * (cfg.layers - 1) + [1]
    net = MineNet(init_mlp(sizes, rng.substream("init"), hidden="relu"), x_dim)
    opt = Adam(net.params.arrays(), lr=cfg.lr)
    for step in range(cfg.steps):
        srng = rng.substream("step", step)
        x, z = sampler(srng.substream("joint"), cfg.batch)
        perm = srng.substream("perm").permutation(cfg.batch)
        loss, grads = dv_loss_and_grads(net.params, x, z, perm)
        if not np.isfinite(loss):
            raise MineDivergence(f"DV objective became {loss} at step {step}")
        opt.step(net.params.arrays(), grads)
        net.params.bump()
        net.history.append(-loss)
    return net


def smoothed(history, window) -> np.ndarray:
    h = np.asarray(history, dtype=np.float64)
    if h.size < window:
        return h
    c = np.cumsum(np.insert(h, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def mine_estimate(net: MineNet, batches) -> tuple[float, float]:
    """DV bound on held-out ``(x, z)`` batches: mean and standard error.

    Each batch's marginal is a fixed cyclic shift of its z, so the estimate
    is deterministic given the batches.
    """
    vals = []
    for x, z in batches:
        perm = np.roll(np.arange(len(z)), 1)
        vals.append(dv_objective(net.statistic(x, z), net.statistic(x, z[perm])))
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else float("nan")
    return float(vals.mean()), se


def gaussian_pair_sampler(rho: float):
    """Joint sampler for a standard bivariate normal with correlation rho."""
    c = math.sqrt(max(1.0 - rho * rho, 0.0))

    def sample(rng: SeededRng, n):
        e = rng.normal((n, 2))
        x = e[:, :1]
        z = rho * e[:, :1] + c * e[:, 1:]
        return x, z

    return sample


def gaussian_pair_mi(rho: float) -> float:
    return -0.5 * math.log(1.0 - rho * rho)


def encoder_pair_sampler(images, mu, log_sigma):
    """Joint draws (x_i, z ~ q(z | x_i)) over a frozen encoder's outputs."""
    images = np.asarray(images, dtype=np.float64)

    def sample(rng: SeededRng, n):
        rows = rng.integers(0, images.shape[0], size=n)
        z = mu[rows] + np.exp(log_sigma[rows]) * rng.normal((n, mu.shape[1]))
        return images[rows], z

    return sample
