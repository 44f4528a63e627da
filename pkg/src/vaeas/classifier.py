"""Auxiliary multi-classifier over latent codes and the estimators built on it.

Each training image carries a random label in ``[0, V)``. A network
``s(label | z)`` is trained by cross-entropy to recover the label from a code
drawn from ``q(z | x)``; its predictive distribution then stands in for
``q(x | z)``, which gives

* mutual information  ``I = ln V - E_z H(s(. | z))``
* a Fano-style variant that only needs the true-label probability
* marginal KL via ``log q(z) = log q(z | x_i) - ln V - log s(label_i | z)``.

The output head is either a flat softmax over V logits or a binary tree whose
internal nodes each hold a sigmoid decision; a label's probability is the
product of the decisions along its path, so one evaluation touches
``ceil(log2 V)`` nodes instead of V.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mathops import (
    DimensionError,
    SeededRng,
    binary_entropy,
    diag_gaussian_logpdf,
    log_sigmoid,
    log_softmax,
    sigmoid,
    standard_normal_logpdf,
)
from .nn import Mlp, init_mlp, mlp_backward, mlp_forward

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
RANGE_SLACK = 1e-6


class UnsupportedModeError(ValueError):
    pass


class MiRangeError(ArithmeticError):
    """An MI estimate left [0, ln V] by more than rounding error."""


def tree_depth(V: int) -> int:
    return max(0, math.ceil(math.log2(V))) if V > 1 else 0


@dataclass
class LabelCode:
    labels: np.ndarray  # (N,) category of each original sample index
    V: int
    seed: int

    @property
    def N(self) -> int:
        return self.labels.shape[0]

    @property
    def depth(self) -> int:
        return tree_depth(self.V)

    def paths(self, cats) -> np.ndarray:
        """Big-endian bits of each category id, shape ``(n, depth)``."""
        cats = np.asarray(cats, dtype=np.int64)
        shifts = np.arange(self.depth - 1, -1, -1)
        return ((cats[:, None] >> shifts) & 1).astype(np.int8)

    def save(self, path):
        np.asarray(self.labels, dtype="<u4").tofile(path)

    @classmethod
    def load(cls, path, V, seed=0) -> "LabelCode":
        labels = np.fromfile(path, dtype="<u4").astype(np.int64)
        if labels.size and labels.max() >= V:
            raise ValueError(f"{path}: label {labels.max()} outside [0, {V})")
        return cls(labels, V, seed)


def assign_labels(N: int, V: int, seed: int) -> LabelCode:
    """Random balanced surjection of N samples onto V categories.

    Category counts differ by at most one; with ``V == N`` it is a permutation.
    """
    if V < 1 or V > N:
        raise ValueError(f"need 1 <= V <= N, got V={V}, N={N}")
    perm = SeededRng(seed, ("labels",)).permutation(N)
    labels = np.empty(N, dtype=np.int64)
    labels[perm] = np.arange(N) % V
    return LabelCode(labels, V, seed)


def node_index(paths: np.ndarray) -> np.ndarray:
    """Heap index of the internal node visited at each level of each path."""
    n, depth = paths.shape
    idx = np.zeros((n, depth), dtype=np.int64)
    prefix = np.zeros(n, dtype=np.int64)
    for v in range(depth):
        idx[:, v] = (1 << v) - 1 + prefix
        prefix = 2 * prefix + paths[:, v]
    return idx


class AuxClassifier:
    """Trunk MLP plus a flat or tree output head.

    ``params`` is one Mlp whose last layer is the head. In tree mode that
    layer's columns are the ``2**depth - 1`` internal nodes and only the
    columns on a requested path are evaluated.
    """

    def __init__(self, params: Mlp, V: int, mode: str = "flat"):
        if mode not in ("flat", "tree"):
            raise ValueError(f"unknown classifier mode {mode!r}")
        self.params = params
        self.V = V
        self.mode = mode
        self.depth = tree_depth(V)
        want = V if mode == "flat" else max((1 << self.depth) - 1, 1)
        if params.out_dim != want:
            raise DimensionError(f"head has {params.out_dim} outputs, {mode} mode needs {want}")
        self.trunk = params.sub(0, -1) if len(params.layers) > 1 else None
        self.head = params.layers[-1]

    @classmethod
    def create(cls, latent: int, hidden: int, layers: int, V: int, mode: str, rng: SeededRng,
               activation="tanh") -> "AuxClassifier":
        out = V if mode == "flat" else max((1 << tree_depth(V)) - 1, 1)
        sizes = [latent] + [hidden] * (layers - 1) + [out]
        params = init_mlp(sizes, rng, hidden=activation, output="linear")
        if mode == "flat":
            params.layers[-1].W[...] = 0.0  # start from the uniform prediction
        return cls(params, V, mode)

    @property
    def latent_dim(self) -> int:
        return self.params.in_dim

    def _trunk(self, z):
        if self.trunk is None:
            return np.asarray(z, dtype=np.float64), None
        return mlp_forward(self.trunk, z)

    def logits(self, z) -> np.ndarray:
        if self.mode != "flat":
            raise UnsupportedModeError("full logits only exist for the flat head")
        h, _ = self._trunk(z)
        return h @ self.head.W + self.head.b

    def log_probs(self, z) -> np.ndarray:
        """Full log-probability table, shape ``(n, V)``."""
        if self.mode == "flat":
            return log_softmax(self.logits(z), axis=-1)
        # exhaustive tree enumeration; meant for checks at small depth
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        cats = np.arange(self.V)
        out = np.empty((z.shape[0], self.V))
        for c in cats:
            out[:, c] = self.log_prob_true(z, np.full(z.shape[0], c))
        return out

    def leaf_log_probs(self, z) -> np.ndarray:
        """Tree mode: log-probability of every one of the ``2**depth`` leaves."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        code = LabelCode(np.zeros(0, dtype=np.int64), 1 << self.depth, 0)
        out = np.empty((z.shape[0], 1 << self.depth))
        for c in range(1 << self.depth):
            paths = code.paths(np.full(z.shape[0], c))
            out[:, c] = self._tree_forward(z, paths)[0]
        return out

    def _tree_forward(self, z, paths):
        h, tape = self._trunk(z)
        if self.depth == 0:
            return np.zeros(h.shape[0]), (h, tape, None, None, paths)
        nodes = node_index(paths)
        Wn = self.head.W.T[nodes]  # (n, depth, H)
        t = np.einsum("ndh,nh->nd", Wn, h) + self.head.b[nodes]
        signed = np.where(paths == 1, t, -t)
        return log_sigmoid(signed).sum(axis=1), (h, tape, nodes, t, paths)

    def log_prob_true(self, z, cats) -> np.ndarray:
        """``log s(cat | z)`` for one category per row."""
        cats = np.asarray(cats, dtype=np.int64)
        if np.any((cats < 0) | (cats >= self.V)):
            raise ValueError("category outside [0, V)")
        if self.mode == "flat":
            lp = self.log_probs(z)
            return lp[np.arange(lp.shape[0]), cats]
        code = LabelCode(cats, self.V, 0)
        return self._tree_forward(np.atleast_2d(z), code.paths(cats))[0]

    def path_log_prob(self, z, path_bits) -> np.ndarray:
        path_bits = np.atleast_2d(np.asarray(path_bits, dtype=np.int8))
        if self.mode != "tree" or path_bits.shape[1] != self.depth or np.any((path_bits != 0) & (path_bits != 1)):
            raise ValueError(f"path must be {self.depth} bits in tree mode")
        z = np.atleast_2d(z)
        return self._tree_forward(z, np.broadcast_to(path_bits, (z.shape[0], self.depth)))[0]

    # -- forward/backward for training ------------------------------------

    def forward_train(self, z, cats):
        """Evaluate what the losses need; returns a cache for ``backward``.

        Flat: full log-probs. Tree: path log-probs only.
        """
        z = np.asarray(z, dtype=np.float64)
        cats = np.asarray(cats, dtype=np.int64)
        if self.mode == "flat":
            h, tape = self._trunk(z)
            logits = h @ self.head.W + self.head.b
            lp = log_softmax(logits, axis=-1)
            return {"h": h, "tape": tape, "log_probs": lp, "log_true": lp[np.arange(len(cats)), cats], "cats": cats}
        code = LabelCode(cats, self.V, 0)
        log_true, (h, tape, nodes, t, paths) = self._tree_forward(z, code.paths(cats))
        return {"h": h, "tape": tape, "nodes": nodes, "t": t, "paths": paths, "log_true": log_true, "cats": cats}

    def head_grad_from_log_true(self, cache, g_log_true):
        """Cotangent on the head outputs given d loss / d log s(true | z)."""
        if self.mode == "flat":
            p = np.exp(cache["log_probs"])
            g = -p * g_log_true[:, None]
            g[np.arange(len(g_log_true)), cache["cats"]] += g_log_true
            return g
        # d log sigmoid(+-t) / dt = bit - sigmoid(t)
        return (cache["paths"] - sigmoid(cache["t"])) * g_log_true[:, None]

    def _head_input_grad(self, cache, g):
        if self.mode == "flat":
            return g @ self.head.W.T
        if cache["nodes"] is None:
            return np.zeros_like(cache["h"])
        return np.einsum("nd,ndh->nh", g, self.head.W.T[cache["nodes"]])

    def backward(self, cache, g_head, g_head_frozen=None):
        """Return ``(param_grads, dz)``.

        ``g_head`` updates the parameters and reaches dz; ``g_head_frozen``
        only reaches dz, treating the classifier as a fixed function of z.
        """
        h = cache["h"]
        if self.mode == "flat":
            dW = h.T @ g_head
            db = g_head.sum(axis=0)
        else:
            dW, db = np.zeros_like(self.head.W), np.zeros_like(self.head.b)
            if cache["nodes"] is not None:
                nodes = cache["nodes"].ravel()
                dWt = np.zeros((self.head.W.shape[1], h.shape[1]))
                np.add.at(dWt, nodes, (g_head[:, :, None] * h[:, None, :]).reshape(-1, h.shape[1]))
                dW = dWt.T
                np.add.at(db, nodes, g_head.ravel())
        live = self._head_input_grad(cache, g_head)
        frozen = None if g_head_frozen is None else self._head_input_grad(cache, g_head_frozen)
        if self.trunk is None:
            return [dW, db], live if frozen is None else live + frozen
        tg, dz = mlp_backward(self.trunk, cache["tape"], live, input_only_grad=frozen)
        return tg.arrays() + [dW, db], dz


# -- estimators ------------------------------------------------------------


def classifier_loss(clf: AuxClassifier, z, cats) -> float:
    """Mean cross-entropy ``-log s(label | z)`` over all rows (examples x draws)."""
    return float(-np.mean(clf.log_prob_true(z, cats)))


def classifier_loss_and_grads(clf: AuxClassifier, z, cats, weight=1.0):
    cache = clf.forward_train(z, cats)
    n = len(cats)
    loss = -weight * float(np.mean(cache["log_true"]))
    g_head = clf.head_grad_from_log_true(cache, np.full(n, -weight / n))
    grads, dz = clf.backward(cache, g_head)
    return loss, grads, dz


def entropy_from_log_probs(lp) -> np.ndarray:
    p = np.exp(lp)
    return -np.sum(p * lp, axis=-1)


def check_range(value: float, V: int, what="MI") -> float:
    cap = math.log(V)
    if value < -RANGE_SLACK or value > cap + RANGE_SLACK:
        raise MiRangeError(f"{what} estimate {value} outside [0, ln {V}]")
    return min(max(value, 0.0), cap)


def mi_from_log_probs(lp, V) -> float:
    """``ln V - mean H`` from a ``(n, V)`` log-probability table, clamped."""
    return check_range(math.log(V) - float(np.mean(entropy_from_log_probs(lp))), V)


def estimate_mi(clf: AuxClassifier, z) -> float:
    if clf.mode != "flat":
        raise UnsupportedModeError("entropy-based MI needs the flat head; use estimate_mi_fano")
    return mi_from_log_probs(clf.log_probs(z), clf.V)


def error_probability(log_true) -> np.ndarray:
    # 1 - s computed as -expm1(log s) keeps precision near s = 1
    return np.clip(-np.expm1(np.minimum(log_true, 0.0)), 0.0, 1.0)


def fano_from_log_true(log_true, V) -> tuple[float, float]:
    pe = error_probability(log_true)
    mi = math.log(V) - float(np.mean(binary_entropy(pe)))
    return check_range(mi, V, "Fano MI"), float(np.mean(pe))


def estimate_mi_fano(clf: AuxClassifier, z, cats) -> tuple[float, float]:
    """``(ln V - mean H_b(P_e), mean P_e)`` with ``P_e = 1 - s(label | z)``."""
    return fano_from_log_true(clf.log_prob_true(z, cats), clf.V)


def md_terms(z, mu, log_sigma, log_true, V) -> np.ndarray:
    """Per-draw ``log q(z|x_i) - ln V - log s(label_i|z) - log p(z)``."""
    lt = np.maximum(log_true, LOG_FLOOR)
    return diag_gaussian_logpdf(z, mu, log_sigma) - math.log(V) - lt - standard_normal_logpdf(z)


def estimate_md(clf: AuxClassifier, z, mu, log_sigma, cats) -> float:
    """Marginal KL ``D(q(z) || p(z))`` through the classifier's Bayes inversion.

    ``z`` are draws from ``q(z | x_i)`` with posterior parameters ``mu``,
    ``log_sigma`` and labels ``cats`` aligned row by row.
    """
    return float(np.mean(md_terms(z, mu, log_sigma, clf.log_prob_true(z, cats), clf.V)))


def dv_objective(t_joint, t_marginal) -> float:
    """Donsker-Varadhan bound ``mean T_joint - log mean exp T_marginal``."""
    t_marginal = np.asarray(t_marginal, dtype=np.float64).ravel()
    m = t_marginal.max()
    return float(np.mean(t_joint) - (m + np.log(np.mean(np.exp(t_marginal - m)))))


def classifier_dv_form(logits, cats) -> tuple[float, float]:
    """Both sides of the classifier/DV correspondence for a logit table.

    Row ``l`` of ``logits`` holds ``T(x_j, z_l)`` for every label j; ``cats[l]``
    is the label z_l was drawn for. Returns the mean log-softmax of the true
    label and ``mean_l T_true - mean_l log mean_j exp T_j``; they differ by
    exactly ``ln V``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, V = logits.shape
    rows = np.arange(n)
    ce = float(np.mean(log_softmax(logits, axis=1)[rows, cats]))
    m = logits.max(axis=1)
    log_mean = m + np.log(np.mean(np.exp(logits - m[:, None]), axis=1))
    dv = float(np.mean(logits[rows, cats]) - np.mean(log_mean))
    return ce, dv


@dataclass
class MiReport:
    mi: float
    mi_fano: float
    md: float
    sc: float
    pe: float
    kl: float = float("nan")

    def as_dict(self):
        return dict(mi=self.mi, mi_fano=self.mi_fano, md=self.md, sc=self.sc, pe=self.pe, kl=self.kl)


def report_from_samples(clf: AuxClassifier, z, mu, log_sigma, cats) -> MiReport:
    """All classifier-based estimates from one set of aligned draws."""
    cache = clf.forward_train(z, cats)
    log_true = cache["log_true"]
    mi = mi_from_log_probs(cache["log_probs"], clf.V) if clf.mode == "flat" else float("nan")
    fano, pe = fano_from_log_true(log_true, clf.V)
    md = float(np.mean(md_terms(z, mu, log_sigma, log_true, clf.V)))
    return MiReport(mi=mi, mi_fano=fano, md=md, sc=float(-np.mean(log_true)), pe=pe)
