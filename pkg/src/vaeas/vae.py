"""Encoder/decoder pair with Bernoulli pixels and the alpha/beta objective."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .classifier import (
    LOG_FLOOR,
    AuxClassifier,
    MiReport,
    check_range,
    entropy_from_log_probs,
    error_probability,
    fano_from_log_true,
    md_terms,
)
from .mathops import (
    DimensionError,
    SeededRng,
    binary_entropy,
    kl_from_log_sigma,
)
from .nn import Mlp, MlpGrads, init_mlp, load_mlp, mlp_backward, mlp_forward, save_mlp

PIXELS = 784
LOGIT_CLAMP = 15.0


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    latent: int = 40
    hidden: int = 500
    enc_layers: int = 2
    dec_layers: int = 3
    cls_layers: int = 2
    alpha: float = 1.0
    beta: float = 1.0
    objective: str = "vae-as"  # or "vae": closed-form KL, classifier only observes
    samples_L: int = 1
    batch: int = 100
    epochs: int = 30
    seed: int = 0
    labels_V: int | None = None  # None means one label per training image
    classifier: str = "flat"
    activation: str = "tanh"
    dataset: str = "mnist"
    data_path: str | None = None
    limit: int | None = 5000
    p_on: float = 0.5
    dynamic_binarize: bool = False
    lr: float = 1e-3
    cls_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    cls_weight: float = 1.0
    cls_to_encoder: bool = True
    joint_classifier_grad: bool = False
    eval_K: int = 64
    final_K: int = 0
    au_eps: float = 0.01
    ema_decay: float = 0.9
    save_every: int = 0
    recon_dump: bool = True

    def validate(self, n_train: int | None = None) -> "RunConfig":
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.samples_L < 1:
            raise ConfigError("samples_L must be >= 1")
        for name in ("latent", "hidden", "enc_layers", "dec_layers", "cls_layers", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.objective not in ("vae", "vae-as"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.classifier not in ("flat", "tree"):
            raise ConfigError(f"unknown classifier mode {self.classifier!r}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.labels_V is not None and self.labels_V < 1:
            raise ConfigError("labels_V must be >= 1")
        if n_train is not None and self.labels_V is not None and self.labels_V > n_train:
            raise ConfigError(f"labels_V={self.labels_V} exceeds the {n_train} training images")
        return self

    def resolved_V(self, n_train: int) -> int:
        return n_train if self.labels_V is None else self.labels_V

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DiagonalGaussian:
    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_sigma.shape:
            raise DimensionError("mu and log_sigma shapes differ")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp

    @property
    def latent(self) -> int:
        return self.decoder.in_dim

    @classmethod
    def create(cls, cfg: RunConfig, rng: SeededRng) -> "VaeModel":
        enc = [PIXELS] + [cfg.hidden] * (cfg.enc_layers - 1) + [2 * cfg.latent]
        dec = [cfg.latent] + [cfg.hidden] * (cfg.dec_layers - 1) + [PIXELS]
        return cls(init_mlp(enc, rng.substream("init", "encoder"), hidden=cfg.activation),
                   init_mlp(dec, rng.substream("init", "decoder"), hidden=cfg.activation))

    def arrays(self):
        return self.encoder.arrays() + self.decoder.arrays()

    def bump(self):
        self.encoder.bump()
        self.decoder.bump()

    def save(self, out_dir):
        out_dir = Path(out_dir)
        save_mlp(out_dir / "encoder.ckpt", self.encoder)
        save_mlp(out_dir / "decoder.ckpt", self.decoder)

    @classmethod
    def load(cls, out_dir) -> "VaeModel":
        out_dir = Path(out_dir)
        return cls(load_mlp(out_dir / "encoder.ckpt"), load_mlp(out_dir / "decoder.ckpt"))


def _check_images(x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != PIXELS:
        raise DimensionError(f"images must have {PIXELS} pixels, got {x.shape[-1]}")
    return x


def encode(model: VaeModel, x, with_tape=False):
    x = _check_images(x)
    out, tape = mlp_forward(model.encoder, x)
    D = model.latent
    g = DiagonalGaussian(out[..., :D], out[..., D:])
    return (g, tape) if with_tape else g


def reparameterize(g: DiagonalGaussian, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != g.mu.shape[-1]:
        raise DimensionError("eps and posterior dims differ")
    return g.mu + np.exp(g.log_sigma) * eps


def bernoulli_ll_from_logits(logits, x) -> np.ndarray:
    """``sum x log p + (1-x) log(1-p)`` with ``p = sigmoid(clip(logits))``."""
    lc = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    return np.sum(x * lc - np.logaddexp(0.0, lc), axis=-1)


def decode_logits(model: VaeModel, z, with_tape=False):
    out, tape = mlp_forward(model.decoder, z)
    if out.shape[-1] != PIXELS:
        raise DimensionError("decoder must emit 784 logits")
    return (out, tape) if with_tape else out


def decode_bernoulli_ll(model: VaeModel, z, x) -> np.ndarray:
    x = _check_images(x)
    return bernoulli_ll_from_logits(decode_logits(model, z), x)


@dataclass
class ElboTerms:
    recon_ll: np.ndarray  # per example, mean over L draws
    kl: np.ndarray  # per example, closed form

    @property
    def elbo(self) -> np.ndarray:
        return self.recon_ll - self.kl

    @property
    def mean_recon(self) -> float:
        return float(np.mean(self.recon_ll))

    @property
    def mean_kl(self) -> float:
        return float(np.mean(self.kl))


def elbo_batch(model: VaeModel, x, L: int, rng: SeededRng) -> ElboTerms:
    if L < 1:
        raise ValueError("L must be >= 1")
    x = _check_images(x)
    g = encode(model, x)
    B, D = g.mu.shape
    eps = rng.normal((B, L, D))
    z = reparameterize(DiagonalGaussian(g.mu[:, None, :], g.log_sigma[:, None, :]), eps)
    ll = decode_bernoulli_ll(model, z.reshape(B * L, D), np.repeat(x, L, axis=0)).reshape(B, L)
    return ElboTerms(ll.mean(axis=1), kl_from_log_sigma(g.mu, g.log_sigma))


@dataclass
class LossParts:
    loss: float
    recon: float  # mean log p(x|z)
    kl: float  # mean closed-form KL
    mi: float  # entropy MI; NaN for the tree head, whose alpha penalty is the Fano MI
    md: float
    sc: float
    report: MiReport | None = None


@dataclass
class LossGrads:
    encoder: MlpGrads
    decoder: MlpGrads
    classifier: list | None


def vae_as_loss(model: VaeModel, clf: AuxClassifier | None, x, cats, cfg: RunConfig, eps,
                need_grads=True):
    """Negative alpha/beta ELBO plus the classifier cross-entropy.

    ``loss = -recon + alpha * I + beta * MD + cls_weight * CE`` for the
    ``vae-as`` objective, and ``-recon + KL`` (classifier trained alongside,
    but invisible to the encoder) for ``vae``.

    The classifier's parameters receive only the cross-entropy gradient. The
    I and MD penalties reach the encoder through z with the classifier held
    fixed unless ``cfg.joint_classifier_grad`` is set. ``eps`` has shape
    ``(B, L, D)``.
    """
    if cfg.alpha < 0 or cfg.beta < 0:
        raise ConfigError("alpha and beta must be non-negative")
    x = _check_images(x)
    B = x.shape[0]
    D = model.latent
    eps = np.asarray(eps, dtype=np.float64)
    L = eps.shape[1]
    n = B * L
    enc_out, enc_tape = mlp_forward(model.encoder, x)
    mu, log_sigma = enc_out[:, :D], enc_out[:, D:]
    sigma = np.exp(log_sigma)
    z3 = mu[:, None, :] + sigma[:, None, :] * eps
    if not np.all(np.isfinite(z3)):
        raise FloatingPointError("latent codes became non-finite")
    z = z3.reshape(n, D)
    xr = np.repeat(x, L, axis=0)
    logits, dec_tape = mlp_forward(model.decoder, z)
    lc = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    ll = np.sum(xr * lc - np.logaddexp(0.0, lc), axis=-1)
    recon = float(np.mean(ll))
    kl = kl_from_log_sigma(mu, log_sigma)
    kl_mean = float(np.mean(kl))

    vae_as = cfg.objective == "vae-as"
    loss = -recon
    d_mu = np.zeros_like(mu)
    d_ls = np.zeros_like(log_sigma)
    dz = np.zeros_like(z)
    mi_val = md_val = sc_val = float("nan")
    report = None
    clf_grads = None

    if not vae_as:
        loss += kl_mean
        d_mu += mu / B
        d_ls += (sigma * sigma - 1.0) / B

    if clf is not None:
        cats_r = np.repeat(np.asarray(cats, dtype=np.int64), L)
        cache = clf.forward_train(z, cats_r)
        log_true = cache["log_true"]
        V = clf.V
        sc_val = float(-np.mean(log_true))
        fano, pe = fano_from_log_true(log_true, V)
        mu_r, ls_r = np.repeat(mu, L, axis=0), np.repeat(log_sigma, L, axis=0)
        md_val = float(np.mean(md_terms(z, mu_r, ls_r, log_true, V)))
        if clf.mode == "flat":
            lp = cache["log_probs"]
            H = entropy_from_log_probs(lp)
            mi_raw = math.log(V) - float(np.mean(H))
            mi_val = check_range(mi_raw, V)
            mi_penalty = mi_raw
        else:
            mi_val = float("nan")
            mi_penalty = math.log(V) - float(np.mean(binary_entropy(error_probability(log_true))))
        report = MiReport(mi=mi_val, mi_fano=fano, md=md_val, sc=sc_val, pe=pe, kl=kl_mean)

        # cross-entropy: trains the classifier, optionally pushes z as well
        g_true_ce = np.full(n, -cfg.cls_weight / n)
        g_ce = clf.head_grad_from_log_true(cache, g_true_ce)
        g_frozen = None
        if vae_as:
            loss += cfg.alpha * mi_penalty + cfg.beta * md_val + cfg.cls_weight * sc_val
            # -log s(true|z) inside MD, floored like the value
            g_true_md = np.where(log_true > LOG_FLOOR, -cfg.beta / n, 0.0)
            if clf.mode == "flat":
                p = np.exp(lp)
                # d(-H)/dlogits = p * (log p + H)
                g_pen = cfg.alpha / n * p * (lp + H[:, None])
                g_pen += clf.head_grad_from_log_true(cache, g_true_md)
            else:
                s = np.exp(log_true)
                pe_c = np.clip(error_probability(log_true), 1e-12, 1.0)
                # d(-H_b(1-s))/dlog s = s * (log s - log(1-s))
                g_true_fano = cfg.alpha / n * s * (log_true - np.log(pe_c))
                g_pen = clf.head_grad_from_log_true(cache, g_true_md + g_true_fano)
            if cfg.joint_classifier_grad:
                g_ce = g_ce + g_pen
            else:
                g_frozen = g_pen
            # direct terms of MD: total derivative of log q(z|x) along the
            # reparameterised path is -1 on log sigma; -log p(z) gives +z
            d_ls += -cfg.beta / n * L
            dz += cfg.beta / n * z
        if need_grads:
            if vae_as and not cfg.cls_to_encoder:
                # CE updates the classifier but does not move z
                clf_grads, dz_live = clf.backward(cache, g_ce)
                _, dz_frozen = clf.backward(cache, np.zeros_like(g_ce), g_frozen) if g_frozen is not None else (None, 0.0)
                dz += dz_frozen
            else:
                clf_grads, dz_c = clf.backward(cache, g_ce, g_frozen)
                if vae_as:
                    dz += dz_c

    if not need_grads:
        return LossParts(loss, recon, kl_mean, mi_val, md_val, sc_val, report), None

    # reconstruction
    g_logits = -(xr - 1.0 / (1.0 + np.exp(-lc))) / n
    g_logits *= np.abs(logits) <= LOGIT_CLAMP
    dec_grads, dz_dec = mlp_backward(model.decoder, dec_tape, g_logits)
    dz += dz_dec
    dz3 = dz.reshape(B, L, D)
    d_mu += dz3.sum(axis=1)
    d_ls += (dz3 * eps).sum(axis=1) * sigma
    enc_grads, _ = mlp_backward(model.encoder, enc_tape, np.concatenate([d_mu, d_ls], axis=1))
    return LossParts(loss, recon, kl_mean, mi_val, md_val, sc_val, report), LossGrads(enc_grads, dec_grads, clf_grads)
