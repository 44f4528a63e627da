"""Multi-run scenarios: collapse on noise, decoder depth, alpha/beta sweeps, estimator comparison.

Every scenario expands a base RunConfig into grid points, trains each point
into its own subdirectory and joins the final-epoch rows into
``summary.csv``.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import MineConfig, encoder_pair_sampler, mc_estimate, mine_estimate, mine_train
from .mathops import SeededRng
from .metrics import CSV_HEADER, active_units_from_means, classifier_report, format_rows, metrics_row, posterior_params
from .training import load_splits, train
from .vae import RunConfig

log = logging.getLogger(__name__)

SCENARIOS = ("random-collapse", "decoder-depth", "alpha-sweep", "beta-sweep", "estimator-compare")
SUMMARY_HEADER = ("point",) + CSV_HEADER

DEFAULT_VALUES = {
    "alpha-sweep": (0.0, 0.5, 1.0, 2.0),
    "beta-sweep": (0.5, 1.0, 2.0, 5.0),
}


class UnknownScenario(ValueError):
    pass


def parse_layers(text: str) -> list[int]:
    """``"1..5"`` or ``"1,3,5"``."""
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v]


def parse_S(text: str) -> list[int | None]:
    return [None if v.strip() == "full" else int(v) for v in text.split(",") if v.strip()]


def s_name(S) -> str:
    return "mc_full" if S is None else f"mc_{S}"


def grid(name: str, base: RunConfig, layers=None, values=None) -> list[tuple[str, RunConfig]]:
    if name == "random-collapse":
        # plain VAE on structureless images
        return [("random", replace(base, dataset="random", objective="vae"))]
    if name == "decoder-depth":
        return [(f"dec{k}", replace(base, dec_layers=k, objective="vae")) for k in (layers or range(1, 6))]
    if name == "alpha-sweep":
        return [(f"alpha{v:g}", replace(base, alpha=float(v))) for v in (values or DEFAULT_VALUES[name])]
    if name == "beta-sweep":
        return [(f"beta{v:g}", replace(base, beta=float(v))) for v in (values or DEFAULT_VALUES[name])]
    if name == "estimator-compare":
        return [("compare", base)]
    raise UnknownScenario(f"unknown experiment {name!r}; expected one of {', '.join(SCENARIOS)}")


def estimator_rows(epoch, res, S_list, rng: SeededRng) -> list[dict]:
    """Subset Monte-Carlo rows plus a fresh-draw classifier pass over the train set."""
    cfg = res.config
    images = np.asarray(res.train.images, dtype=np.float64)
    g = posterior_params(res.model, images)
    V = res.clf.V
    rows = []
    for S in S_list:
        r = mc_estimate(g.mu, g.log_sigma, S, rng.substream("mc", epoch, S or 0))
        rows.append(metrics_row(epoch, "train", s_name(S), cfg, V, kl=r.kl, mi=r.mi, md=r.md))
    rep = classifier_report(res.model, res.clf, images, res.labels.labels[res.train.indices],
                            rng.substream("aux-eval", epoch))
    mi = rep.mi if res.clf.mode == "flat" else float("nan")
    rows.append(metrics_row(epoch, "train", "aux_eval", cfg, V, kl=rep.kl, mi=mi, md=rep.md, sc=rep.sc,
                            au=active_units_from_means(g.mu, cfg.au_eps).count, pe=rep.pe))
    rows.append(metrics_row(epoch, "train", "fano_eval", cfg, V, mi=rep.mi_fano, pe=rep.pe))
    return rows


def mine_row(epoch, res, steps, rng: SeededRng) -> dict:
    images = np.asarray(res.train.images, dtype=np.float64)
    g = posterior_params(res.model, images)
    sampler = encoder_pair_sampler(images, g.mu, g.log_sigma)
    net = mine_train(sampler, images.shape[1], g.mu.shape[1], MineConfig(steps=steps), rng.substream("mine"))
    held = [sampler(rng.substream("mine-eval", k), 512) for k in range(8)]
    est, _ = mine_estimate(net, held)
    return metrics_row(epoch, "train", "mine", res.config, res.clf.V, mi=est)


def compare_hook(S_list, every: int, mine_steps: int, rng: SeededRng):
    """Epoch hook emitting the estimator rows every ``every`` epochs and at the end."""

    def hook(epoch, res):
        rows = []
        last = epoch == res.config.epochs
        if epoch % every == 0 or last:
            rows = estimator_rows(epoch, res, S_list, rng)
        if mine_steps and last:
            rows.append(mine_row(epoch, res, mine_steps, rng))
        return rows

    return hook


def _datasets(cfg: RunConfig, cache: dict):
    key = (cfg.dataset, cfg.data_path, cfg.limit, cfg.seed, cfg.p_on, cfg.dynamic_binarize, cfg.eval_K > 0)
    if key not in cache:
        cache[key] = load_splits(cfg)
    return cache[key]


def run_experiment(name: str, base: RunConfig, out_dir, layers=None, values=None, S=None,
                   compare_every: int = 1, mine_steps: int = 0, datasets=None) -> list[dict]:
    """Train every grid point of ``name``; returns the summary rows.

    ``datasets`` may map point names to ``(train, test)`` to skip loading.
    """
    points = grid(name, base, layers, values)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    S_list = list(S) if S is not None else [100, 500, None]
    cache: dict = {}
    summary = []
    for point, cfg in points:
        tr, te = datasets[point] if datasets and point in datasets else _datasets(cfg, cache)
        hook = None
        if name == "estimator-compare":
            S_ok = [s for s in S_list if s is None or s <= len(tr)]
            hook = compare_hook(S_ok, compare_every, mine_steps, SeededRng(cfg.seed, ("compare",)))
        elif name in ("alpha-sweep", "beta-sweep"):
            # full-set Monte Carlo and a fresh classifier pass on the final model only
            hook = compare_hook([None], max(cfg.epochs, 1), 0, SeededRng(cfg.seed, ("compare",)))
        log.info("experiment %s point %s", name, point)
        res = train(cfg, tr, te, out / point, epoch_hook=hook)
        last = res.config.epochs
        for row in res.rows:
            if row["epoch"] == last:
                summary.append({"point": point, **row})
    (out / "summary.csv").write_text(format_rows(summary, SUMMARY_HEADER))
    return summary
