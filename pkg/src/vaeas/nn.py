"""Feed-forward nets with hand-written backward passes.

Weights are stored ``(fan_in, fan_out)`` and inputs are row batches, so a
layer computes ``act(x @ W + b)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .mathops import DimensionError, SeededRng, sigmoid

ACTIVATIONS = ("linear", "tanh", "relu", "sigmoid")
CHECKPOINT_MAGIC = b"VAEASMLP"
CHECKPOINT_VERSION = 1


class TapeError(RuntimeError):
    """Backward called with a tape that does not belong to these params."""


@dataclass(eq=False)
class Dense:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"
    version: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"bad layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def shape(self):
        return self.W.shape


@dataclass(eq=False)
class Mlp:
    layers: list[Dense]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise DimensionError("layer shapes do not chain")

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.W, layer.b))
        return out

    def bump(self):
        for layer in self.layers:
            layer.version += 1

    def copy(self) -> "Mlp":
        return Mlp([Dense(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def sub(self, start=0, stop=None) -> "Mlp":
        """A view over a slice of the layers; arrays are shared."""
        return Mlp(self.layers[start:stop])


def init_mlp(sizes: Sequence[int], rng: SeededRng, hidden="tanh", output="linear") -> Mlp:
    """Weights ~ N(0, 1/fan_in), zero biases."""
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = rng.normal((fan_in, fan_out)) / np.sqrt(fan_in)
        act = output if k == len(sizes) - 2 else hidden
        layers.append(Dense(W, np.zeros(fan_out), act))
    return Mlp(layers)


def _activate(name, a):
    if name == "linear":
        return a
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return sigmoid(a)


def _activation_grad(name, a, h, g):
    """Pull ``g`` back through the activation given pre-activation a and output h."""
    if name == "linear":
        return g
    if name == "tanh":
        return g * (1.0 - h * h)
    if name == "relu":
        return g * (a > 0.0)
    return g * h * (1.0 - h)


@dataclass
class GradientTape:
    inputs: list
    pre: list
    outputs: list
    versions: tuple
    owner: int


def mlp_forward(params: Mlp, x) -> tuple[np.ndarray, GradientTape]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != params.in_dim:
        raise DimensionError(f"input width {x.shape[-1]} != {params.in_dim}")
    inputs, pre, outputs = [], [], []
    h = x
    for layer in params.layers:
        inputs.append(h)
        a = h @ layer.W + layer.b
        h = _activate(layer.activation, a)
        pre.append(a)
        outputs.append(h)
    tape = GradientTape(inputs, pre, outputs, tuple(l.version for l in params.layers), id(params.layers[0]))
    return (h[0] if squeeze else h), tape


@dataclass
class MlpGrads:
    dW: list
    db: list

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.dW, self.db):
            out.extend((w, b))
        return out


def mlp_backward(params: Mlp, tape: GradientTape, out_grad, input_only_grad=None):
    """Return ``(MlpGrads, input_grad)``.

    ``input_only_grad`` is a second cotangent on the output that flows back to
    the input but contributes nothing to the parameter gradients; this is how
    a loss can use the net as a frozen function of its input.
    """
    if tape.owner != id(params.layers[0]) or len(tape.pre) != len(params.layers):
        raise TapeError("tape was produced by a different network")
    if tape.versions != tuple(l.version for l in params.layers):
        raise TapeError("parameters changed since the forward pass")
    g = np.asarray(out_grad, dtype=np.float64)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None, :]
    if g.shape != tape.outputs[-1].shape:
        raise DimensionError(f"out_grad {g.shape} != output {tape.outputs[-1].shape}")
    n = g.shape[0]
    if input_only_grad is not None:
        f = np.asarray(input_only_grad, dtype=np.float64).reshape(g.shape)
        g = np.concatenate([g, f], axis=0)
    dW, db = [None] * len(params.layers), [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        a, h, x = tape.pre[k], tape.outputs[k], tape.inputs[k]
        if g.shape[0] != n:
            # both cotangents share the forward cache
            delta = _activation_grad(layer.activation, a, h, g.reshape(2, n, -1)).reshape(2 * n, -1)
        else:
            delta = _activation_grad(layer.activation, a, h, g)
        dW[k] = x.T @ delta[:n]
        db[k] = delta[:n].sum(axis=0)
        g = delta @ layer.W.T
    if g.shape[0] != n:
        g = g[:n] + g[n:]
    return MlpGrads(dW, db), (g[0] if squeeze else g)


class Adam:
    """Bias-corrected Adam over a fixed list of arrays, updated in place."""

    def __init__(self, arrays: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.step_count = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
        if len(arrays) != len(self.m) or len(grads) != len(arrays):
            raise DimensionError("optimizer was built for a different parameter list")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionError(f"grad {g.shape} vs param {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        return arrays


def optimizer_step(state: Adam, params: Mlp, grads: MlpGrads) -> Mlp:
    state.step(params.arrays(), grads.arrays())
    params.bump()
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    checked: int
    worst: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(arrays: Sequence[np.ndarray], loss_fn: Callable, tolerance=1e-4, h=1e-5,
               max_per_array=None, rng: SeededRng | None = None, floor=1e-8) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must return ``(loss, grads)`` with grads aligned to
    ``arrays``; it is re-evaluated after in-place perturbation of each entry.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, analytic = loss_fn()
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]
    worst_err, worst, checked = 0.0, (), 0
    for k, (p, g) in enumerate(zip(arrays, analytic)):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_array is not None and flat.size > max_per_array:
            pick = rng.permutation(flat.size) if rng is not None else idx
            idx = np.sort(pick[:max_per_array])
        gflat = g.reshape(-1)
        for j in idx:
            old = flat[j]
            flat[j] = old + h
            up = loss_fn()[0]
            flat[j] = old - h
            down = loss_fn()[0]
            flat[j] = old
            num = (up - down) / (2.0 * h)
            err = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), floor)
            checked += 1
            if err > worst_err:
                worst_err, worst = err, (k, int(j), float(gflat[j]), float(num))
    return GradCheckReport(worst_err, tolerance, checked, worst)


def save_mlp(path, params: Mlp):
    """Write the versioned little-endian checkpoint.

    Layout: 8-byte magic ``VAEASMLP``, u32 version, u32 layer count, then per
    layer u32 rows, u32 cols, u8 activation index, rows*cols f64 weights in
    row-major order, cols f64 biases.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params.layers)))
        for layer in params.layers:
            rows, cols = layer.W.shape
            fh.write(struct.pack("<IIB", rows, cols, ACTIVATIONS.index(layer.activation)))
            fh.write(np.ascontiguousarray(layer.W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off, layers = 16, []
    for _ in range(count):
        rows, cols, act = struct.unpack_from("<IIB", blob, off)
        off += 9
        W = np.frombuffer(blob, "<f8", rows * cols, off).reshape(rows, cols).astype(np.float64)
        off += 8 * rows * cols
        b = np.frombuffer(blob, "<f8", cols, off).astype(np.float64)
        off += 8 * cols
        layers.append(Dense(W, b, ACTIVATIONS[act]))
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return Mlp(layers)
