"""A small reverse-mode autodiff engine over float64 numpy arrays.

Tensors are 0-, 1- or 2-D.  2-D tensors are treated as a stack of row
vectors: every vector op (matvec, concat, dot, cosine) also accepts a batch
of rows and applies row-wise, which is how whole tree levels of the logic
graph are evaluated at once.  Nothing else broadcasts except ``add`` of a
bias vector onto a row batch.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@contextmanager
def no_grad():
    """Build values only; no parents or backward closures are recorded."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "name", "requires_grad")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple["Tensor", ...] = (), op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        if self.value.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {self.value.shape}")
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = op
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.op}{label}, shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.value.shape)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        else:
            self.grad.fill(0.0)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.value

    def backward(self) -> None:
        backward(self)

    __add__ = lambda self, other: add(self, _lift(other))
    __radd__ = lambda self, other: add(_lift(other), self)
    __sub__ = lambda self, other: sub(self, _lift(other))
    __rsub__ = lambda self, other: sub(_lift(other), self)
    __neg__ = lambda self: scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: tuple[Tensor, ...], op: str,
            fn: Callable[[np.ndarray], None]) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=track, parents=parents if track else (), op=op)
    if track:
        out.backward_fn = fn
    return out


def _send(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undo the single allowed broadcast: (d,) bias added onto (n, d) rows
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def _same_or_bias(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.value.ndim == 2 and a.value.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_or_bias(a, b, "add")

    def fn(g):
        _send(a, _sum_to(g, a.shape))
        _send(b, _sum_to(g, b.shape))

    return _result(a.value + b.value, (a, b), "add", fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_or_bias(a, b, "sub")

    def fn(g):
        _send(a, _sum_to(g, a.shape))
        _send(b, -_sum_to(g, b.shape))

    return _result(a.value - b.value, (a, b), "sub", fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")

    def fn(g):
        _send(a, g * b.value)
        _send(b, g * a.value)

    return _result(a.value * b.value, (a, b), "mul", fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.value * c, (a,), "scale", lambda g: _send(a, g * c))


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """``W @ x`` for a vector x, or ``x @ W.T`` row-wise for a (n, k) batch."""
    if w.value.ndim != 2 or x.value.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"matvec: cannot apply {w.shape} to {x.shape}")
    out = x.value @ w.value.T

    def fn(g):
        if x.value.ndim == 1:
            _send(w, np.outer(g, x.value))
        else:
            _send(w, g.T @ x.value)
        _send(x, g @ w.value)

    return _result(out, (w, x), "matvec", fn)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join two d-vectors (or two row batches) along the last axis."""
    if a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1] or a.value.ndim == 0:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[-1]

    def fn(g):
        _send(a, g[..., :k])
        _send(b, g[..., k:])

    return _result(np.concatenate([a.value, b.value], axis=-1), (a, b), "concat", fn)


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is taken as 0
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), (a,), "relu", lambda g: _send(a, g * mask))


def sigmoid(a: Tensor) -> Tensor:
    v = a.value
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (a,), "sigmoid", lambda g: _send(a, g * s * (1.0 - s)))


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise ShapeError("log: non-positive input")
    return _result(np.log(a.value), (a,), "log", lambda g: _send(a, g / a.value))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _result(np.asarray(a.value.sum()), (a,), "sum",
                   lambda g: _send(a, np.broadcast_to(g, a.shape).copy()))


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product; row-wise for two (n, d) batches."""
    if a.shape != b.shape or a.value.ndim == 0:
        raise ShapeError(f"dot: shapes differ {a.shape} vs {b.shape}")
    out = (a.value * b.value).sum(axis=-1)

    def fn(g):
        g = g[..., None]
        _send(a, g * b.value)
        _send(b, g * a.value)

    return _result(out, (a, b), "dot", fn)


def l2_norm_sq(a: Tensor) -> Tensor:
    """Squared Frobenius norm of the whole tensor."""
    return _result(np.asarray((a.value ** 2).sum()), (a,), "l2_norm_sq",
                   lambda g: _send(a, 2.0 * g * a.value))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """``a.b / (|a||b|)``, row-wise for batches.  Zero-norm operands are an error."""
    if a.shape != b.shape or a.value.ndim == 0:
        raise ShapeError(f"cosine_similarity: shapes differ {a.shape} vs {b.shape}")
    na = np.sqrt((a.value ** 2).sum(axis=-1))
    nb = np.sqrt((b.value ** 2).sum(axis=-1))
    if np.any(na == 0) or np.any(nb == 0):
        raise ShapeError("cosine_similarity: zero-norm operand")
    ab = (a.value * b.value).sum(axis=-1)
    cos = ab / (na * nb)

    def fn(g):
        g_ = g[..., None]
        na_, nb_, cos_ = na[..., None], nb[..., None], cos[..., None]
        _send(a, g_ * (b.value / (na_ * nb_) - cos_ * a.value / na_ ** 2))
        _send(b, g_ * (a.value / (na_ * nb_) - cos_ * b.value / nb_ ** 2))

    return _result(cos, (a, b), "cosine", fn)


def take_rows(a: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows ``a[index]`` from a (n, d) tensor; repeats allowed."""
    if a.value.ndim != 2:
        raise ShapeError("take_rows needs a 2-D tensor")
    idx = np.asarray(index, dtype=np.intp)

    contiguous = idx.size > 0 and np.array_equal(idx, np.arange(idx[0], idx[0] + idx.size))

    def fn(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.value)
        if contiguous:
            full[idx[0]:idx[0] + idx.size] = g
        else:
            np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(a.value[idx], (a,), "take_rows", fn)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack vectors and/or row batches into one (n, d) tensor."""
    if not parts:
        raise ShapeError("stack_rows needs at least one tensor")
    blocks = [p.value[None, :] if p.value.ndim == 1 else p.value for p in parts]
    widths = {b.shape[1] for b in blocks}
    if len(widths) != 1:
        raise ShapeError(f"stack_rows: mismatched widths {sorted(widths)}")
    bounds = np.cumsum([0] + [b.shape[0] for b in blocks])

    def fn(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _send(p, g[lo:hi].reshape(p.shape))

    return _result(np.concatenate(blocks, axis=0), tuple(parts), "stack_rows", fn)


def repeat_row(v: Tensor, n: int) -> Tensor:
    """Tile a d-vector into n identical rows."""
    if v.value.ndim != 1:
        raise ShapeError("repeat_row needs a vector")
    return _result(np.tile(v.value, (n, 1)), (v,), "repeat_row",
                   lambda g: _send(v, g.sum(axis=0)))


def take_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    """Column block ``a[:, lo:hi]`` of a matrix."""
    if a.value.ndim != 2 or not 0 <= lo < hi <= a.shape[1]:
        raise ShapeError(f"take_cols: bad range {lo}:{hi} for {a.shape}")

    def fn(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.value)
        full[:, lo:hi] = g
        a._accumulate(full)

    return _result(a.value[:, lo:hi].copy(), (a,), "take_cols", fn)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable tensor."""
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    for node in order:
        if node.backward_fn is not None:
            node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            # interior gradients are not needed after propagation
            node.grad = None


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------


class ParamStore:
    """Named leaf tensors with Adam state.

    Frozen entries (the anchor true vector) never receive updates, even if a
    gradient is written into them.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: dict[str, Tensor] = {}
        self.trainable: dict[str, bool] = {}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self.params[name] = t
        self.trainable[name] = trainable
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def items(self):
        return self.params.items()

    def trainable_items(self) -> Iterable[tuple[str, Tensor]]:
        return ((k, t) for k, t in self.params.items() if self.trainable[k])

    def num_trainable(self) -> int:
        return int(np.sum([t.value.size for _, t in self.trainable_items()]))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def adam_step(self, lr: float) -> None:
        for name, t in self.params.items():
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, t in self.params.items():
            if not self.trainable[name] or t.grad is None:
                continue
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            t.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].value = v.copy()

    # Checkpoint format (JSON):
    #   {"format": "noan-params/1", "meta": {...},
    #    "params": {name: {"shape": [...], "trainable": bool, "values": [row-major floats]}}}
    def to_json(self, meta: dict | None = None) -> dict:
        return {
            "format": "noan-params/1",
            "meta": meta or {},
            "params": {
                k: {"shape": list(t.shape), "trainable": self.trainable[k],
                    "values": t.value.ravel().tolist()}
                for k, t in self.params.items()
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "ParamStore":
        if data.get("format") != "noan-params/1":
            raise ValueError(f"unknown checkpoint format {data.get('format')!r}")
        store = cls()
        for k, rec in data["params"].items():
            values = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
            store.add(k, values, trainable=bool(rec["trainable"]))
        return store

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(meta)))

    @classmethod
    def load(cls, path: str | Path) -> tuple["ParamStore", dict]:
        data = json.loads(Path(path).read_text())
        return cls.from_json(data), data.get("meta", {})


def numeric_gradient(f: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function with respect to ``x.value``."""
    grad = np.zeros_like(x.value)
    flat = x.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max abs difference over the larger max-norm.

    ``floor`` keeps exactly-zero gradients from dividing finite-difference
    roundoff (about 1e-11 at h=1e-5) by a vanishing scale.
    """
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)


__all__ = [
    "Tensor", "ParamStore", "ShapeError", "TrainingError", "no_grad",
    "add", "sub", "mul", "scale", "matvec", "concat", "relu", "sigmoid", "log",
    "sum", "dot", "l2_norm_sq", "cosine_similarity", "take_rows", "stack_rows",
    "repeat_row", "take_cols", "backward", "numeric_gradient", "relative_error",
]
