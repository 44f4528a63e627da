"""Evaluation metrics and the shared metrics CSV."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .classifier import AuxClassifier, LabelCode, MiReport, report_from_samples
from .mathops import SeededRng, diag_gaussian_logpdf, kl_from_log_sigma, log_sum_exp, standard_normal_logpdf
from .vae import DiagonalGaussian, VaeModel, bernoulli_ll_from_logits, decode_logits, encode

CSV_HEADER = ("epoch", "split", "estimator", "nll", "kl", "mi", "md", "sc", "au", "pe", "alpha", "beta", "V", "seed")


def importance_nll(model: VaeModel, images, K: int, rng: SeededRng, chunk: int = 4096) -> np.ndarray:
    """Per-example ``-log p(x)`` from K importance samples drawn from q(z | x)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    images = np.asarray(images, dtype=np.float64)
    g = encode(model, images)
    B, D = g.mu.shape
    out = np.empty(B)
    per = max(1, chunk // K)
    for a in range(0, B, per):
        mu, ls, x = g.mu[a:a + per], g.log_sigma[a:a + per], images[a:a + per]
        b = mu.shape[0]
        eps = rng.substream("iw", a).normal((b, K, D))
        z = mu[:, None, :] + np.exp(ls)[:, None, :] * eps
        zf = z.reshape(b * K, D)
        ll = bernoulli_ll_from_logits(decode_logits(model, zf), np.repeat(x, K, axis=0)).reshape(b, K)
        logw = ll + standard_normal_logpdf(z) - diag_gaussian_logpdf(z, mu[:, None, :], ls[:, None, :])
        out[a:a + b] = -(log_sum_exp(logw, axis=1) - math.log(K))
    return out


@dataclass
class ActiveUnitsReport:
    variances: np.ndarray
    eps: float

    @property
    def count(self) -> int:
        return int(np.sum(self.variances >= self.eps))


def active_units_from_means(mu, eps=0.01) -> ActiveUnitsReport:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape[0] == 0:
        raise ValueError("active units need at least one example")
    return ActiveUnitsReport(np.var(mu, axis=0), eps)


def active_units(model: VaeModel, images, eps=0.01, chunk=2048) -> ActiveUnitsReport:
    mus = [encode(model, images[a:a + chunk]).mu for a in range(0, len(images), chunk)]
    return active_units_from_means(np.concatenate(mus), eps)


def posterior_params(model: VaeModel, images, chunk=2048) -> DiagonalGaussian:
    parts = [encode(model, images[a:a + chunk]) for a in range(0, len(images), chunk)]
    return DiagonalGaussian(np.concatenate([p.mu for p in parts]), np.concatenate([p.log_sigma for p in parts]))


def classifier_report(model: VaeModel, clf: AuxClassifier, images, cats, rng: SeededRng, L=1, chunk=1000) -> MiReport:
    """Classifier estimates over a whole split with fresh draws, chunk means averaged by size."""
    g = posterior_params(model, images)
    n = len(images)
    acc = {"mi": 0.0, "mi_fano": 0.0, "md": 0.0, "sc": 0.0, "pe": 0.0}
    for a in range(0, n, chunk):
        mu, ls = g.mu[a:a + chunk], g.log_sigma[a:a + chunk]
        b = mu.shape[0]
        eps = rng.substream("cls-eval", a).normal((b, L, mu.shape[1]))
        z = (mu[:, None, :] + np.exp(ls)[:, None, :] * eps).reshape(b * L, -1)
        r = report_from_samples(clf, z, np.repeat(mu, L, 0), np.repeat(ls, L, 0), np.repeat(cats[a:a + chunk], L))
        for k in acc:
            acc[k] += getattr(r, k) * b
    kl = float(np.mean(kl_from_log_sigma(g.mu, g.log_sigma)))
    return MiReport(kl=kl, **{k: v / n for k, v in acc.items()})


@dataclass
class EvalReport:
    nll_test: float
    kl_test: float
    au: int
    nll_train: float  # reconstruction error only
    kl_train: float
    mi: float
    md: float
    sc: float
    nll_train_full: float = float("nan")

    def finite(self) -> bool:
        vals = [self.kl_train, self.nll_train, float(self.au)]
        return all(math.isfinite(v) for v in vals)


def reconstruction_error(model: VaeModel, images, rng: SeededRng, chunk=2048) -> float:
    """Mean ``-log p(x | z)`` with one posterior draw per image."""
    total = 0.0
    for a in range(0, len(images), chunk):
        x = np.asarray(images[a:a + chunk], dtype=np.float64)
        g = encode(model, x)
        z = g.mu + g.sigma * rng.substream("recon", a).normal(g.mu.shape)
        total += float(np.sum(bernoulli_ll_from_logits(decode_logits(model, z), x)))
    return -total / len(images)


def assemble_report(model: VaeModel, clf: AuxClassifier | None, labels: LabelCode | None, train, test,
                    K: int, rng: SeededRng, au_eps=0.01) -> EvalReport:
    """Table-2 style metrics; test-split fields are NaN when there is no test set."""
    if model is None:
        raise ValueError("no trained model supplied")
    tr = np.asarray(train.images, dtype=np.float64)
    g = posterior_params(model, tr)
    au = active_units_from_means(g.mu, au_eps).count
    kl_train = float(np.mean(kl_from_log_sigma(g.mu, g.log_sigma)))
    recon = reconstruction_error(model, tr, rng.substream("recon-train"))
    nll_full = float(np.mean(importance_nll(model, tr, K, rng.substream("iw-train")))) if K else float("nan")
    nll_test = kl_test = float("nan")
    if test is not None and len(test):
        te = np.asarray(test.images, dtype=np.float64)
        gt = posterior_params(model, te)
        kl_test = float(np.mean(kl_from_log_sigma(gt.mu, gt.log_sigma)))
        nll_test = float(np.mean(importance_nll(model, te, K, rng.substream("iw-test")))) if K else float("nan")
    mi = md = sc = float("nan")
    if clf is not None and labels is not None:
        r = classifier_report(model, clf, tr, labels.labels[train.indices], rng.substream("cls"))
        mi, md, sc = r.mi, r.md, r.sc
    return EvalReport(nll_test, kl_test, au, recon, kl_train, mi, md, sc, nll_full)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return f"{v:.10g}"


def metrics_row(epoch, split, estimator, cfg, V, **vals) -> dict:
    row = {k: "" for k in CSV_HEADER}
    row.update(epoch=epoch, split=split, estimator=estimator, alpha=_fmt(cfg.alpha), beta=_fmt(cfg.beta),
               V=V, seed=cfg.seed)
    for k, v in vals.items():
        if k not in row:
            raise KeyError(f"{k} is not a metrics column")
        row[k] = _fmt(v)
    return row


def format_rows(rows, header=CSV_HEADER) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
