"""Training loop shared by the CLI and the experiment scenarios."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classifier import AuxClassifier, LabelCode, assign_labels
from .data import BatchPlan, Dataset, batches, load_dataset, write_pgm
from .mathops import SeededRng, kl_from_log_sigma
from .metrics import active_units_from_means, format_rows, importance_nll, metrics_row, posterior_params
from .nn import Adam, load_mlp, save_mlp
from .vae import RunConfig, VaeModel, decode_logits, vae_as_loss

log = logging.getLogger(__name__)

BATCH_HEADER = ("epoch", "batch", "loss", "recon", "kl", "mi", "mi_fano", "md", "sc", "pe")
DUMP_COUNT = 64


class NumericalAbort(ArithmeticError):
    pass


@dataclass
class TrainResult:
    config: RunConfig
    model: VaeModel
    clf: AuxClassifier
    labels: LabelCode
    train: Dataset
    test: Dataset | None
    rows: list = field(default_factory=list)
    batch_rows: list = field(default_factory=list)

    def final(self, estimator="aux", split="train") -> dict:
        picked = [r for r in self.rows if r["estimator"] == estimator and r["split"] == split]
        return picked[-1]


def load_splits(cfg: RunConfig):
    """Train split plus the test split when per-epoch evaluation wants one."""
    dyn = cfg.dynamic_binarize
    tr = load_dataset(cfg.dataset, cfg.data_path, "train", cfg.limit, cfg.seed, cfg.p_on, dyn)
    te = None
    if cfg.dataset != "random" and cfg.eval_K > 0:
        te = load_dataset(cfg.dataset, cfg.data_path, "test", None, cfg.seed, cfg.p_on, dyn)
    return tr, te


def build(cfg: RunConfig, n_train: int):
    rng = SeededRng(cfg.seed)
    model = VaeModel.create(cfg, rng)
    V = cfg.resolved_V(n_train)
    clf = AuxClassifier.create(cfg.latent, cfg.hidden, cfg.cls_layers, V, cfg.classifier,
                               rng.substream("init", "classifier"), activation=cfg.activation)
    labels = assign_labels(n_train, V, cfg.seed)
    return model, clf, labels


class _Ema:
    def __init__(self, decay):
        self.decay = decay
        self.value = {}

    def update(self, **vals):
        for k, v in vals.items():
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            old = self.value.get(k)
            self.value[k] = v if old is None else self.decay * old + (1.0 - self.decay) * v

    def get(self, k):
        return self.value.get(k, float("nan"))


def save_checkpoint(out_dir, model: VaeModel, clf: AuxClassifier, labels: LabelCode):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir)
    save_mlp(out_dir / "classifier.ckpt", clf.params)
    labels.save(out_dir / "labels.u32")


def load_checkpoint(out_dir, cfg: RunConfig):
    out_dir = Path(out_dir)
    model = VaeModel.load(out_dir)
    params = load_mlp(out_dir / "classifier.ckpt")
    labels_path = out_dir / "labels.u32"
    V = cfg.labels_V if cfg.labels_V is not None else int(np.fromfile(labels_path, dtype="<u4").size)
    clf = AuxClassifier(params, V, cfg.classifier)
    labels = LabelCode.load(labels_path, V, cfg.seed)
    return model, clf, labels


def reconstruct(model: VaeModel, images) -> np.ndarray:
    g = posterior_params(model, np.asarray(images, dtype=np.float64))
    logits = decode_logits(model, g.mu)
    return 1.0 / (1.0 + np.exp(-np.clip(logits, -15, 15)))


def train(cfg: RunConfig, train_set: Dataset, test_set: Dataset | None = None, out_dir=None,
          epoch_hook: Callable | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; write CSVs/checkpoints/PGMs if ``out_dir`` is given.

    ``epoch_hook(epoch, result)`` may return extra metric rows for that epoch.
    """
    n = len(train_set)
    cfg.validate(n)
    model, clf, labels = build(cfg, n)
    res = TrainResult(cfg, model, clf, labels, train_set, test_set)
    rng = SeededRng(cfg.seed)
    opt_kw = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    vae_opt = Adam(model.arrays(), lr=cfg.lr, **opt_kw)
    cls_opt = Adam(clf.params.arrays(), lr=cfg.cls_lr, **opt_kw)
    plan = BatchPlan(min(cfg.batch, n), cfg.seed)
    ema = _Ema(cfg.ema_decay)
    V = clf.V
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    images = np.asarray(train_set.images, dtype=np.float64)

    for epoch in range(1, cfg.epochs + 1):
        sums = {"recon": 0.0, "kl": 0.0}
        seen = 0
        for b, (idx, xb) in enumerate(batches(train_set, plan, epoch)):
            xb = np.asarray(xb, dtype=np.float64)
            eps = rng.substream("eps", epoch, b).normal((xb.shape[0], cfg.samples_L, cfg.latent))
            try:
                parts, grads = vae_as_loss(model, clf, xb, labels.labels[idx], cfg, eps)
            except FloatingPointError as exc:
                raise NumericalAbort(f"{exc} at epoch {epoch}, batch {b}") from exc
            if not math.isfinite(parts.loss):
                raise NumericalAbort(f"loss became {parts.loss} at epoch {epoch}, batch {b}")
            vae_opt.step(model.arrays(), grads.encoder.arrays() + grads.decoder.arrays())
            model.bump()
            cls_opt.step(clf.params.arrays(), grads.classifier)
            clf.params.bump()
            r = parts.report
            ema.update(mi=r.mi, mi_fano=r.mi_fano, md=r.md, sc=r.sc, pe=r.pe)
            sums["recon"] += parts.recon * xb.shape[0]
            sums["kl"] += parts.kl * xb.shape[0]
            seen += xb.shape[0]
            res.batch_rows.append((epoch, b, parts.loss, parts.recon, parts.kl, r.mi, r.mi_fano, r.md, r.sc, r.pe))

        g = posterior_params(model, images)
        au = active_units_from_means(g.mu, cfg.au_eps).count
        res.rows.append(metrics_row(epoch, "train", "aux", cfg, V, nll=-sums["recon"] / seen, kl=sums["kl"] / seen,
                                    mi=ema.get("mi"), md=ema.get("md"), sc=ema.get("sc"), au=au, pe=ema.get("pe")))
        res.rows.append(metrics_row(epoch, "train", "fano", cfg, V, mi=ema.get("mi_fano"), pe=ema.get("pe")))
        if test_set is not None and len(test_set) and cfg.eval_K > 0:
            te = np.asarray(test_set.images, dtype=np.float64)
            gt = posterior_params(model, te)
            nll = importance_nll(model, te, cfg.eval_K, rng.substream("eval", epoch))
            res.rows.append(metrics_row(epoch, "test", "iwae", cfg, V, nll=float(np.mean(nll)),
                                        kl=float(np.mean(kl_from_log_sigma(gt.mu, gt.log_sigma))),
                                        au=active_units_from_means(gt.mu, cfg.au_eps).count))
        if epoch_hook is not None:
            res.rows.extend(epoch_hook(epoch, res) or [])
        log.info("epoch %d recon %.3f kl %.3f mi %.3f md %.3f sc %.3f au %d", epoch, sums["recon"] / seen,
                 sums["kl"] / seen, ema.get("mi"), ema.get("md"), ema.get("sc"), au)
        if out is not None:
            if cfg.recon_dump:
                write_pgm(out / f"recon_epoch{epoch}.pgm", reconstruct(model, images[:DUMP_COUNT]))
            if cfg.save_every and epoch % cfg.save_every == 0:
                save_checkpoint(out / f"epoch{epoch}", model, clf, labels)
            write_outputs(out, res)
    if out is not None:
        save_checkpoint(out, model, clf, labels)
        write_outputs(out, res)
    return res


def write_outputs(out: Path, res: TrainResult):
    (out / "metrics.csv").write_text(format_rows(res.rows))
    lines = [",".join(BATCH_HEADER)]
    for row in res.batch_rows:
        lines.append(",".join(str(v) if isinstance(v, int) else ("" if math.isnan(v) else f"{v:.10g}") for v in row))
    (out / "batches.csv").write_text("\n".join(lines) + "\n")
