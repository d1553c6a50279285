"""Dense double-precision arrays with taped reverse-mode gradients.

Everything downstream (the message-passing classifier, the variational
generators, the explainer losses) is built from the handful of primitives in
this module. A :class:`Tape` records each primitive in execution order;
``Tape.backward`` replays the record once in reverse, accumulating
vector-Jacobian products into ``Value.grad`` buffers. Parameters live in a
:class:`ParamStore` and are bound to a tape as leaf values, so gradients of
parameters that never entered the computation are exactly zero.

All arrays are float64. No other numeric backend is used.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Value",
    "ParamStore",
    "Adam",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "sqrt",
    "relu",
    "sigmoid",
    "softplus",
    "clamp",
    "vsum",
    "vmean",
    "concat",
    "slice_cols",
    "rows",
    "tile_rows",
    "log_softmax",
    "mlp2_init",
    "mlp2_forward",
    "reparameterize",
    "kl_std_normal",
    "grad_check",
    "save_params",
    "load_params",
    "read_checkpoint_meta",
]

CHECKPOINT_VERSION = 1


class Tape:
    """Ordered record of primitive operations for one reverse pass.

    A tape owns the values created on it. ``backward`` walks the record in
    reverse creation order exactly once, so each primitive's adjoint runs a
    single time regardless of fan-out.
    """

    def __init__(self):
        self._nodes: list[Value] = []
        self._leaves: dict[str, Value] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, value: "Value") -> None:
        self._nodes.append(value)

    def backward(self, root: "Value") -> None:
        """Accumulate gradients of the scalar ``root`` into every value.

        Parameters
        ----------
        root : Value
            Scalar value recorded on this tape.
        """
        if root.tape is not self:
            raise ValueError("root value was not recorded on this tape")
        if root.data.size != 1:
            raise ValueError("backward root must be a scalar")
        root.grad = np.ones_like(root.data)
        for node in reversed(self._nodes):
            if node.grad is None or node._vjp is None:
                continue
            node._vjp(node.grad)


class Value:
    """Array node on a tape. Leaf values have no parents."""

    __slots__ = ("data", "grad", "tape", "_vjp")

    def __init__(self, data, tape: Tape | None = None, vjp: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._vjp = vjp
        if tape is not None:
            tape._record(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def item(self) -> float:
        return float(self.data)

    # Operator sugar; constants are lifted to tape-less leaves.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(np.asarray(x, dtype=np.float64))


def _tape_of(*values: Value) -> Tape | None:
    for v in values:
        if v.tape is not None:
            return v.tape
    return None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a: Value, b: Value, data: np.ndarray, da, db) -> Value:
    tape = _tape_of(a, b)
    out = Value(data, tape)
    if tape is not None:

        def vjp(g):
            a._accumulate(_unbroadcast(da(g), a.data.shape))
            b._accumulate(_unbroadcast(db(g), b.data.shape))

        out._vjp = vjp
    return out


def _unary(a: Value, data: np.ndarray, da) -> Value:
    out = Value(data, a.tape)
    if a.tape is not None:

        def vjp(g):
            a._accumulate(da(g))

        out._vjp = vjp
    return out


def add(a: Value, b: Value) -> Value:
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Value, b: Value) -> Value:
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Value, b: Value) -> Value:
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a: Value, b: Value) -> Value:
    return _binary(
        a,
        b,
        a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def neg(a: Value) -> Value:
    return _unary(a, -a.data, lambda g: -g)


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    tape = _tape_of(a, b)
    out = Value(a.data @ b.data, tape)
    if tape is not None:

        def vjp(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        out._vjp = vjp
    return out


def exp(a: Value) -> Value:
    data = np.exp(a.data)
    return _unary(a, data, lambda g: g * data)


def log(a: Value) -> Value:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def sqrt(a: Value) -> Value:
    data = np.sqrt(a.data)
    return _unary(a, data, lambda g: g * 0.5 / data)


def relu(a: Value) -> Value:
    mask = a.data > 0.0
    return _unary(a, np.where(mask, a.data, 0.0), lambda g: g * mask)


def sigmoid(a: Value) -> Value:
    # Stable in both tails: exp of a non-positive argument only.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, data, lambda g: g * data * (1.0 - data))


def softplus(a: Value) -> Value:
    data = np.logaddexp(0.0, a.data)
    x = a.data
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, data, lambda g: g * sig)


def clamp(a: Value, lo: float, hi: float) -> Value:
    mask = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda g: g * mask)


def vsum(a: Value, axis: int | None = None, keepdims: bool = False) -> Value:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def da(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _unary(a, data, da)


def vmean(a: Value, axis: int | None = None, keepdims: bool = False) -> Value:
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(vsum(a, axis=axis, keepdims=keepdims), Value(1.0 / count))


def concat(values: Sequence[Value], axis: int = 1) -> Value:
    values = list(values)
    tape = _tape_of(*values)
    data = np.concatenate([v.data for v in values], axis=axis)
    out = Value(data, tape)
    if tape is not None:
        sizes = [v.data.shape[axis] for v in values]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            for v, lo, hi in zip(values, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                v._accumulate(g[tuple(sl)])

        out._vjp = vjp
    return out


def slice_cols(a: Value, start: int, stop: int) -> Value:
    data = a.data[:, start:stop]
    out = Value(data, a.tape)
    if a.tape is not None:

        def vjp(g):
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accumulate(full)

        out._vjp = vjp
    return out


def rows(a: Value, index: Sequence[int]) -> Value:
    """Gather rows of a 2-d value; duplicate indices accumulate on backward."""
    idx = np.asarray(index, dtype=np.int64)
    data = a.data[idx]
    out = Value(data, a.tape)
    if a.tape is not None:

        def vjp(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

        out._vjp = vjp
    return out


def tile_rows(a: Value, count: int) -> Value:
    """Repeat a single-row value ``count`` times."""
    if a.data.ndim != 2 or a.data.shape[0] != 1:
        raise ValueError("tile_rows expects a (1, d) value")
    data = np.broadcast_to(a.data, (count, a.data.shape[1])).copy()
    return _unary(a, data, lambda g: g.sum(axis=0, keepdims=True))


def log_softmax(a: Value) -> Value:
    """Row-wise log-softmax of a 2-d value."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def da(g):
        return g - np.exp(data) * g.sum(axis=1, keepdims=True)

    return _unary(a, data, da)


class ParamStore:
    """Named float64 parameter arrays shared across tapes.

    Parameters are mutated in place by the optimizer; each training step binds
    them to the step's tape via :meth:`use`, which returns one leaf per name
    per tape so fan-out accumulates on a single gradient buffer.
    """

    def __init__(self, seed: int = 0):
        self._arrays: dict[str, np.ndarray] = {}
        self.rng = np.random.default_rng(seed)

    def add(self, name: str, shape: tuple[int, ...], scale: float | None = None) -> np.ndarray:
        """Register a parameter. ``scale`` defaults to Glorot-style 1/sqrt(fan_in)."""
        if name in self._arrays:
            raise ValueError("parameter %r already registered" % name)
        if scale is None:
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            scale = 1.0 / np.sqrt(max(1, fan_in))
        self._arrays[name] = self.rng.normal(0.0, scale, size=shape)
        return self._arrays[name]

    def add_zeros(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name in self._arrays:
            raise ValueError("parameter %r already registered" % name)
        self._arrays[name] = np.zeros(shape)
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def names(self) -> list[str]:
        return list(self._arrays)

    def array(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def use(self, tape: Tape, name: str) -> Value:
        """Bind a parameter to ``tape`` as a leaf value (cached per tape)."""
        leaf = tape._leaves.get(name)
        if leaf is None:
            leaf = Value(self._arrays[name], tape)
            tape._leaves[name] = leaf
        return leaf

    def gradients(self, tape: Tape) -> dict[str, np.ndarray]:
        """Gradients per parameter after ``tape.backward``; unused ones are zero."""
        grads = {}
        for name, arr in self._arrays.items():
            leaf = tape._leaves.get(name)
            if leaf is None or leaf.grad is None:
                grads[name] = np.zeros_like(arr)
            else:
                grads[name] = leaf.grad
        return grads

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self._arrays.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        if set(snapshot) != set(self._arrays):
            raise ValueError("snapshot names do not match the store")
        for name, arr in snapshot.items():
            self._arrays[name][...] = arr

    def manifest(self) -> dict[str, list[int]]:
        return {name: list(arr.shape) for name, arr in self._arrays.items()}


class Adam:
    """Adam with weight decay folded into the gradient."""

    def __init__(
        self,
        store: ParamStore,
        learning_rate: float = 0.005,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {name: np.zeros_like(store.array(name)) for name in store.names()}
        self._v = {name: np.zeros_like(store.array(name)) for name in store.names()}
        self._t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name in self.store.names():
            g = grads[name]
            arr = self.store.array(name)
            if self.weight_decay:
                g = g + self.weight_decay * arr
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self._t)
            v_hat = v / (1.0 - b2**self._t)
            arr -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def mlp2_init(store: ParamStore, prefix: str, in_dim: int, hidden_dim: int, out_dim: int) -> None:
    """Register the four parameters of a two-layer perceptron."""
    store.add("%s.w1" % prefix, (hidden_dim, in_dim))
    store.add_zeros("%s.b1" % prefix, (hidden_dim,))
    store.add("%s.w2" % prefix, (out_dim, hidden_dim))
    store.add_zeros("%s.b2" % prefix, (out_dim,))


def mlp2_forward(store: ParamStore, tape: Tape, prefix: str, x: Value) -> Value:
    """y = W2 @ relu(W1 @ x + b1) + b2, applied row-wise to a (batch, in) value."""
    w1 = store.use(tape, "%s.w1" % prefix)
    b1 = store.use(tape, "%s.b1" % prefix)
    w2 = store.use(tape, "%s.w2" % prefix)
    b2 = store.use(tape, "%s.b2" % prefix)
    hidden = relu(add(matmul(x, transpose(w1)), b1))
    return add(matmul(hidden, transpose(w2)), b2)


def transpose(a: Value) -> Value:
    return _unary(a, a.data.T.copy(), lambda g: g.T)


def reparameterize(mu: Value, logvar: Value, noise: np.ndarray) -> Value:
    """z = mu + exp(logvar / 2) * noise with ``noise`` a fixed draw."""
    std = exp(mul(logvar, Value(0.5)))
    return add(mu, mul(std, Value(noise)))


def kl_std_normal(mu: Value, logvar: Value) -> Value:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) summed over every entry."""
    term = sub(add(exp(logvar), mul(mu, mu)), add(Value(np.ones_like(mu.data)), logvar))
    return mul(vsum(term), Value(0.5))


def grad_check(
    loss_fn: Callable[[ParamStore, Tape], Value],
    store: ParamStore,
    eps: float = 1e-4,
    max_entries: int = 16,
    seed: int = 0,
    names: Iterable[str] | None = None,
) -> float:
    """Max relative error between taped and central-difference gradients.

    ``loss_fn`` must be a deterministic function of the store's parameters
    (fix any noise draws and sampled masks in the closure). A subset of
    entries per parameter is probed; the relative error uses the floor
    max(|analytic|, |numeric|, 1e-6).
    """
    tape = Tape()
    loss = loss_fn(store, tape)
    tape.backward(loss)
    grads = store.gradients(tape)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names if names is not None else store.names():
        arr = store.array(name)
        total = arr.size
        picks = np.arange(total) if total <= max_entries else rng.choice(total, size=max_entries, replace=False)
        for flat in picks:
            orig = arr.flat[flat]
            arr.flat[flat] = orig + eps
            up = float(loss_fn(store, Tape()).data)
            arr.flat[flat] = orig - eps
            down = float(loss_fn(store, Tape()).data)
            arr.flat[flat] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = grads[name].flat[flat]
            denom = max(abs(numeric), abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def save_params(store: ParamStore, path, meta: dict | None = None) -> None:
    """Write a versioned JSON checkpoint with exact decimal-text floats."""
    payload = {
        "v": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in store._arrays.items()
        },
    }
    if meta is not None:
        payload["meta"] = meta
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_checkpoint_meta(path) -> dict:
    """Read only the ``meta`` dict of a checkpoint, validating the version."""
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("v")
    if version != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version: %r" % version)
    return payload.get("meta", {})


def load_params(store: ParamStore, path) -> dict:
    """Load a checkpoint into ``store``, validating version and every shape.

    Returns the checkpoint's ``meta`` dict (possibly empty). The file must
    cover exactly the store's parameter names.
    """
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("v")
    if version != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version: %r" % version)
    entries = payload.get("params", {})
    missing = sorted(set(store.names()) - set(entries))
    extra = sorted(set(entries) - set(store.names()))
    if missing:
        raise ValueError("checkpoint is missing parameter %r" % missing[0])
    if extra:
        raise ValueError("checkpoint has unknown parameter %r" % extra[0])
    for name, entry in entries.items():
        arr = store.array(name)
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise ValueError(
                "parameter %r has shape %s in the checkpoint, expected %s"
                % (name, shape, arr.shape)
            )
        data = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
        arr[...] = data
    return payload.get("meta", {})
