"""Small reverse-mode differentiation engine and optimizers.

Only the handful of operations used by the coordinate fields are supported:
affine layers, pointwise nonlinearities, weighted gathers (grid and lattice
interpolation), concatenation, additions and squared-error losses. Every
value is a float64 array; every reduction is a fixed-order numpy reduction so
repeated runs are bit-identical.

Typical use::

    tape = Tape()
    x = tape.constant(points)
    y = mlp_forward(tape, params, spec, x)
    loss = mse(y, targets)
    grads = tape.backward(loss, params=params)
    optimizer_step(params, grads, state)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError

__all__ = [
    "ParamStore",
    "Node",
    "Tape",
    "MLPSpec",
    "OptState",
    "affine",
    "relu",
    "softplus",
    "activation",
    "gather",
    "concat",
    "add",
    "sub",
    "scale",
    "mse",
    "sse",
    "mlp_forward",
    "backward",
    "optimizer_step",
    "gradcheck",
]


class ParamStore:
    """Ordered collection of named float64 tensors.

    Shapes are fixed once an entry is added; :meth:`assign` only accepts a
    replacement of the same shape. ``version`` counts optimizer updates;
    ``mutations`` counts every write and never resets, so it can key caches.
    """

    def __init__(self, entries: dict[str, np.ndarray] | None = None):
        self._entries: dict[str, np.ndarray] = {}
        self.version = 0
        self.mutations = 0
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._entries:
            raise ConfigError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter {name!r} has non-finite values")
        self._entries[name] = arr
        self.mutations += 1

    def assign(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        old = self._entries[name]
        if arr.shape != old.shape:
            raise ConfigError(f"parameter {name!r}: shape {arr.shape} != {old.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"parameter {name!r} has non-finite values")
        self._entries[name] = np.array(arr, dtype=np.float64)
        self.mutations += 1

    def subtract_(self, name: str, delta: np.ndarray) -> None:
        """In-place ``value -= delta``; arrays previously read from the store change too."""
        self._entries[name] -= delta
        self.mutations += 1

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def size(self) -> int:
        return int(sum(v.size for v in self._entries.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, v in self._entries.items():
            out._entries[k] = v.copy()
        out.version = self.version
        return out

    def equals(self, other: "ParamStore") -> bool:
        """Bit-exact comparison of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k], other[k]) for k in self)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}{list(v.shape)}" for k, v in self._entries.items())
        return f"ParamStore({inner})"


class Node:
    """A value produced on a tape."""

    __slots__ = ("value", "tape", "index", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, name: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(#{self.index}, shape={self.value.shape}, name={self.name!r})"


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Record of executed primitives.

    With ``record=False`` the tape only computes values, which is how frozen
    levels and exported fields are evaluated.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list[tuple[Node, tuple[Node, ...], BackwardFn]] = []
        self._params: dict[str, Node] = {}
        self._count = 0

    def _node(self, value: np.ndarray, name: str | None = None) -> Node:
        node = Node(value, self, self._count, name)
        self._count += 1
        return node

    def constant(self, value) -> Node:
        return self._node(np.asarray(value, dtype=np.float64))

    def param(self, store: ParamStore, name: str) -> Node:
        node = self._params.get(name)
        if node is None:
            node = self._node(store[name], name)
            self._params[name] = node
        return node

    def push(self, value: np.ndarray, parents: tuple[Node, ...], backward_fn: BackwardFn) -> Node:
        out = self._node(value)
        if self.record:
            self._ops.append((out, parents, backward_fn))
        return out

    def __len__(self) -> int:
        return len(self._ops)

    def reset(self) -> None:
        self._ops.clear()
        self._params.clear()

    def backward(self, output: Node, seed=None, params: ParamStore | None = None) -> dict[str, np.ndarray]:
        """Reverse sweep from ``output``; returns gradients keyed by parameter name.

        Parameters named in ``params`` but never read during the forward pass
        get exact zero gradients. The tape is reset afterwards.
        """
        if not self.record:
            raise UsageError("backward on a non-recording tape")
        if not self._ops and output.name is None:
            raise UsageError("backward called before any forward pass was recorded")
        if output.tape is not self:
            raise UsageError("output node belongs to a different tape")
        if seed is None:
            seed = np.ones_like(output.value)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise ConfigError(f"seed shape {seed.shape} != output shape {output.value.shape}")

        grads: dict[int, np.ndarray] = {output.index: seed}
        for out, parents, fn in reversed(self._ops):
            g = grads.pop(out.index, None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg

        result: dict[str, np.ndarray] = {}
        names = params.names() if params is not None else list(self._params)
        for name in names:
            node = self._params.get(name)
            g = grads.get(node.index) if node is not None else None
            if g is None:
                shape = params[name].shape if params is not None else node.value.shape
                g = np.zeros(shape)
            result[name] = g
        self.reset()
        return result


def backward(tape: Tape, output: Node, seed=None, params: ParamStore | None = None):
    """Functional alias for :meth:`Tape.backward`."""
    return tape.backward(output, seed, params)


# ---------------------------------------------------------------- primitives


def affine(x: Node, weight: Node, bias: Node) -> Node:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    if x.value.shape[-1] != weight.value.shape[0] or bias.value.shape != weight.value.shape[1:]:
        raise ConfigError(
            f"affine shape mismatch: x{x.value.shape} W{weight.value.shape} b{bias.value.shape}"
        )
    xv, wv = x.value, weight.value

    def fn(g):
        return g @ wv.T, xv.T @ g, g.sum(axis=0)

    return x.tape.push(xv @ wv + bias.value, (x, weight, bias), fn)


def relu(x: Node) -> Node:
    mask = x.value > 0
    return x.tape.push(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def softplus(x: Node, beta: float = 100.0) -> Node:
    """Smooth rectifier ``log(1 + exp(beta x)) / beta``."""
    z = beta * x.value
    out = (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return x.tape.push(out, (x,), lambda g: (g * sig,))


def activation(x: Node, kind: str) -> Node:
    if kind == "relu":
        return relu(x)
    if kind == "softplus":
        return softplus(x)
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def _scatter_rows(index: np.ndarray, rows: np.ndarray, n_out: int) -> np.ndarray:
    # bincount accumulates in input order, which keeps the sum deterministic
    out = np.empty((n_out, rows.shape[1]))
    for c in range(rows.shape[1]):
        out[:, c] = np.bincount(index, weights=rows[:, c], minlength=n_out)
    return out


def gather(table: Node, index: np.ndarray, weight: np.ndarray) -> Node:
    """Weighted row gather: ``out[n] = sum_k weight[n, k] * table[index[n, k]]``.

    ``index`` and ``weight`` are constants of shape (n, k); the gradient flows
    only into ``table``.
    """
    tv = table.value
    if tv.ndim != 2:
        raise ConfigError(f"gather table must be 2-D, got shape {tv.shape}")
    index = np.asarray(index)
    weight = np.asarray(weight, dtype=np.float64)
    if index.shape != weight.shape or index.ndim != 2:
        raise ConfigError(f"gather index {index.shape} / weight {weight.shape} mismatch")
    out = np.einsum("nk,nkc->nc", weight, tv[index])
    n_rows = tv.shape[0]

    def fn(g):
        rows = (weight[:, :, None] * g[:, None, :]).reshape(-1, g.shape[1])
        return (_scatter_rows(index.ravel(), rows, n_rows),)

    return table.tape.push(out, (table,), fn)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    values = [n.value for n in nodes]
    out = np.concatenate(values, axis=axis)
    splits = np.cumsum([v.shape[axis] for v in values])[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return nodes[0].tape.push(out, tuple(nodes), fn)


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ConfigError(f"add shape mismatch {a.value.shape} vs {b.value.shape}")
    return a.tape.push(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ConfigError(f"sub shape mismatch {a.value.shape} vs {b.value.shape}")
    return a.tape.push(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Node, factor: float) -> Node:
    return a.tape.push(a.value * factor, (a,), lambda g: (g * factor,))


def sse(y: Node, target) -> Node:
    """Sum of squared errors, reduced to a scalar."""
    diff = y.value - np.asarray(target, dtype=np.float64)
    return y.tape.push(np.array(np.sum(diff * diff)), (y,), lambda g: (2.0 * g * diff,))


def mse(y: Node, target) -> Node:
    """Mean of squared errors over every element."""
    diff = y.value - np.asarray(target, dtype=np.float64)
    n = diff.size
    return y.tape.push(np.array(np.sum(diff * diff) / n), (y,), lambda g: (2.0 * g * diff / n,))


# ---------------------------------------------------------------------- MLP


@dataclass(frozen=True)
class MLPSpec:
    """Fully connected network: ``sizes = (in, hidden..., out)``.

    The activation follows every layer except the last.
    """

    sizes: tuple[int, ...]
    activation: str = "relu"
    prefix: str = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ConfigError(f"invalid MLP sizes {self.sizes}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def weight_name(self, i: int) -> str:
        return f"{self.prefix}.{i}.weight"

    def bias_name(self, i: int) -> str:
        return f"{self.prefix}.{i}.bias"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for i in range(self.n_layers):
            shapes[self.weight_name(i)] = (self.sizes[i], self.sizes[i + 1])
            shapes[self.bias_name(i)] = (self.sizes[i + 1],)
        return shapes


def mlp_forward(tape: Tape, params: ParamStore, spec: MLPSpec, x: Node | np.ndarray) -> Node:
    if not isinstance(x, Node):
        x = tape.constant(x)
    if not np.all(np.isfinite(x.value)):
        raise NumericError(f"{spec.prefix}: non-finite input")
    for name, shape in spec.param_shapes().items():
        if name not in params:
            raise ConfigError(f"{spec.prefix}: missing parameter {name!r}")
        if params[name].shape != shape:
            raise ConfigError(f"{spec.prefix}: {name!r} has shape {params[name].shape}, expected {shape}")
    h = x
    for i in range(spec.n_layers):
        h = affine(h, tape.param(params, spec.weight_name(i)), tape.param(params, spec.bias_name(i)))
        if i < spec.n_layers - 1:
            h = activation(h, spec.activation)
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"{spec.prefix}: non-finite output at layer {i}")
    return h


# --------------------------------------------------------------- optimizers

ALGORITHMS = ("sgd", "rmsprop", "adam")


@dataclass
class OptState:
    """Optimizer hyperparameters plus per-parameter accumulators."""

    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown optimizer {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.eps > 0:
            raise ConfigError("optimizer eps must be > 0")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")


def _finite(g: np.ndarray) -> bool:
    # one reduction in the common case; an overflowing sum of finite values falls through
    return math.isfinite(float(np.sum(g))) or bool(np.all(np.isfinite(g)))


def optimizer_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptState):
    """Apply one update in place; returns ``(params, state)`` for chaining.

    Accumulators and parameters are updated in place with one scratch buffer
    per parameter.
    """
    for name, g in grads.items():
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter {name!r}")
        if not _finite(g):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {state.step}")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        if state.algorithm == "sgd":
            params.subtract_(name, state.lr * g)
            continue
        tmp = np.multiply(g, g)
        if state.algorithm == "rmsprop":
            acc = state.second.get(name)
            if acc is None:
                acc = state.second[name] = np.zeros_like(p)
            acc *= state.decay
            tmp *= 1.0 - state.decay
            acc += tmp
            np.add(acc, state.eps, out=tmp)
            np.sqrt(tmp, out=tmp)
            np.divide(g, tmp, out=tmp)
            tmp *= state.lr
        else:
            m = state.first.get(name)
            if m is None:
                m = state.first[name] = np.zeros_like(p)
                state.second[name] = np.zeros_like(p)
            v = state.second[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            tmp *= 1.0 - state.beta2
            v += tmp
            # lr * m_hat / (sqrt(v_hat) + eps)
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / math.sqrt(1.0 - state.beta2**t)
            tmp += state.eps
            np.divide(m, tmp, out=tmp)
            tmp *= state.lr / (1.0 - state.beta1**t)
        params.subtract_(name, tmp)
    params.version += 1
    return params, state


# ---------------------------------------------------------------- gradcheck


def gradcheck(
    loss_fn: Callable[[Tape, ParamStore], Node],
    params: ParamStore,
    probes: int = 20,
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients against central differences.

    ``probes`` randomly chosen scalar entries (across all parameters) are
    perturbed. Returns the worst relative error among probes whose absolute
    error exceeds ``atol``; 0.0 when every probe is within ``atol``.
    """
    tape = Tape()
    out = loss_fn(tape, params)
    grads = tape.backward(out, params=params)
    rng = np.random.default_rng(seed)
    names = params.names()
    sizes = np.array([params[n].size for n in names])
    flat_ids = rng.choice(int(sizes.sum()), size=min(probes, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for fid in flat_ids:
        k = int(np.searchsorted(offsets, fid, side="right") - 1)
        name, local = names[k], int(fid - offsets[k])
        base = params[name].copy()
        vals = []
        for sign in (1.0, -1.0):
            pert = base.copy()
            pert.flat[local] += sign * h
            params.assign(name, pert)
            vals.append(float(loss_fn(Tape(record=False), params).value.sum()))
        params.assign(name, base)
        numeric = (vals[0] - vals[1]) / (2 * h)
        analytic = float(grads[name].flat[local])
        err = abs(analytic - numeric)
        if err <= atol:
            continue
        worst = max(worst, err / max(abs(analytic), abs(numeric)))
    if not math.isfinite(worst):
        raise NumericError("gradcheck produced a non-finite error")
    return worst
