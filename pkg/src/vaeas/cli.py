"""Command line entry point: ``vaeas train|eval|estimate-mi|experiment``.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import MineDivergence
from .classifier import MiRangeError
from .data import DataError
from .experiments import SCENARIOS, UnknownScenario, compare_hook, parse_layers, parse_S, run_experiment
from .mathops import SeededRng
from .metrics import assemble_report, format_rows, metrics_row
from .training import NumericalAbort, TrainResult, load_checkpoint, load_splits, train
from .vae import ConfigError, RunConfig

log = logging.getLogger("vaeas")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FINAL_K = 4096

# flag -> RunConfig field; type conversions come from argparse
CONFIG_FLAGS = {
    "alpha": float, "beta": float, "latent": int, "hidden": int, "enc_layers": int, "dec_layers": int,
    "cls_layers": int, "labels_V": int, "classifier": str, "samples_L": int, "batch": int, "epochs": int,
    "seed": int, "dataset": str, "data_path": str, "limit": int, "eval_K": int, "objective": str,
    "lr": float, "cls_lr": float, "activation": str, "p_on": float, "save_every": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON config; explicit flags override it")
    for name, typ in CONFIG_FLAGS.items():
        flag = "--" + name.replace("_", "-")
        if name == "classifier":
            g.add_argument(flag, choices=["flat", "tree"], default=None)
        elif name == "dataset":
            g.add_argument(flag, choices=["mnist", "omniglot", "random"], default=None)
        elif name == "objective":
            g.add_argument(flag, choices=["vae-as", "vae"], default=None)
        else:
            g.add_argument(flag, type=typ, default=None)
    g.add_argument("--dynamic-binarize", action="store_true", default=None)
    g.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vaeas", description="VAE with auxiliary-softmax mutual information control")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one configuration")
    _add_config_flags(t)

    e = sub.add_parser("eval", help="evaluate a trained run directory")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--eval-K", type=int, default=FINAL_K)
    e.add_argument("--data-path")

    m = sub.add_parser("estimate-mi", help="compare MI/MD estimators on a trained run")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--S", default="100,500,full")
    m.add_argument("--mine-steps", type=int, default=0)
    m.add_argument("--data-path")

    x = sub.add_parser("experiment", help="run a multi-point scenario")
    x.add_argument("id", choices=SCENARIOS)
    _add_config_flags(x)
    x.add_argument("--layers", default="1..5", help="decoder depths, e.g. 1..5 or 1,3,5")
    x.add_argument("--values", help="comma separated alpha or beta values for the sweeps")
    x.add_argument("--S", default="100,500,full")
    x.add_argument("--compare-every", type=int, default=1)
    x.add_argument("--mine-steps", type=int, default=0)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    over = {k: getattr(args, k) for k in list(CONFIG_FLAGS) + ["dynamic_binarize"] if getattr(args, k, None) is not None}
    cfg = replace(cfg, **over)
    if cfg.data_path is None and os.environ.get("VAEAS_DATA"):
        cfg = replace(cfg, data_path=os.environ["VAEAS_DATA"])
    if cfg.dataset != "random" and cfg.data_path is None:
        raise ConfigError(f"dataset {cfg.dataset} needs --data-path (or VAEAS_DATA)")
    return cfg.validate()


def _run_dir_config(out_dir, data_path=None) -> RunConfig:
    path = Path(out_dir) / "config.json"
    if not path.exists():
        raise DataError(f"{path} not found; is {out_dir} a training output directory?")
    cfg = RunConfig.load(path)
    return replace(cfg, data_path=data_path) if data_path else cfg


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    tr, te = load_splits(cfg)
    res = train(cfg, tr, te, args.out_dir)
    last = res.final()
    print(" ".join(f"{k}={last[k]}" for k in ("epoch", "nll", "kl", "mi", "md", "sc", "au")))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_dir_config(args.out_dir, args.data_path)
    if not (Path(args.out_dir) / "encoder.ckpt").exists():
        raise DataError(f"no checkpoint in {args.out_dir}")
    tr, _ = load_splits(replace(cfg, eval_K=0))
    te = None
    if cfg.dataset != "random":
        te = load_splits(replace(cfg, eval_K=1))[1]
    model, clf, labels = load_checkpoint(args.out_dir, cfg)
    rep = assemble_report(model, clf, labels, tr, te, args.eval_K, SeededRng(cfg.seed, ("eval",)), cfg.au_eps)
    V = clf.V
    rows = [
        metrics_row(cfg.epochs, "train", "recon", cfg, V, nll=rep.nll_train, kl=rep.kl_train, au=rep.au),
        metrics_row(cfg.epochs, "train", f"iwae{args.eval_K}", cfg, V, nll=rep.nll_train_full),
        metrics_row(cfg.epochs, "train", "aux_eval", cfg, V, mi=rep.mi, md=rep.md, sc=rep.sc),
    ]
    if te is not None:
        rows.append(metrics_row(cfg.epochs, "test", f"iwae{args.eval_K}", cfg, V, nll=rep.nll_test, kl=rep.kl_test))
    (Path(args.out_dir) / "eval.csv").write_text(format_rows(rows))
    for k, v in vars(rep).items():
        print(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}")
    return EXIT_OK


def cmd_estimate_mi(args) -> int:
    cfg = _run_dir_config(args.out_dir, args.data_path)
    tr, _ = load_splits(replace(cfg, eval_K=0))
    model, clf, labels = load_checkpoint(args.out_dir, cfg)
    res = TrainResult(cfg, model, clf, labels, tr, None)
    S_list = [s for s in parse_S(args.S) if s is None or s <= len(tr)]
    hook = compare_hook(S_list, 1, args.mine_steps, SeededRng(cfg.seed, ("estimate",)))
    rows = hook(cfg.epochs, res)
    (Path(args.out_dir) / "estimates.csv").write_text(format_rows(rows))
    for r in rows:
        print(f"{r['estimator']}: mi={r['mi']} md={r['md']}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = resolve_config(args)
    values = [float(v) for v in args.values.split(",")] if args.values else None
    summary = run_experiment(args.id, cfg, args.out_dir, layers=parse_layers(args.layers), values=values,
                             S=parse_S(args.S), compare_every=args.compare_every, mine_steps=args.mine_steps)
    for row in summary:
        if row["estimator"] in ("aux", "aux_eval", "mc_full") or row["estimator"].startswith("mc_"):
            print(f"{row['point']} {row['estimator']}: kl={row['kl']} mi={row['mi']} md={row['md']} au={row['au']}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "estimate-mi": cmd_estimate_mi, "experiment": cmd_experiment}


def _thread_limit():
    n = os.environ.get("VAEAS_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    np.seterr(over="ignore", under="ignore")
    limiter = _thread_limit()
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UnknownScenario) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalAbort, MiRangeError, MineDivergence, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
