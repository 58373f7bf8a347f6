"""Neural AND/OR/NOT modules over letter embeddings.

An NNF expression is turned into a binary plan (n-ary connectives become a
left fold of the binary module) and every node of every expression in a
batch is evaluated level by level: all nodes of the same height and kind go
through their module in one matrix product.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .logic import ALPHABET, And, Expression, Not, Var, is_nnf, to_nnf

TRAIN = "train"
EVAL = "eval"

LETTER_INDEX = {ch: i for i, ch in enumerate(ALPHABET)}


class AssemblyError(ValueError):
    pass


@dataclass
class ModelConfig:
    d: int = 64
    alpha: float = 10.0
    hidden: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = self.d
        if self.d < 2:
            raise ValueError(f"embedding dimension must be >= 2, got {self.d}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {self.hidden}")

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class NoanModel:
    """Letter embeddings, the frozen true vector and the three logic modules."""

    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None):
        self.cfg = cfg
        if store is None:
            store = self._init_params(cfg)
        self.store = store

    @staticmethod
    def _init_params(cfg: ModelConfig) -> ParamStore:
        rng = np.random.default_rng(cfg.seed)
        d, h = cfg.d, cfg.hidden
        store = ParamStore()
        store.add("embeddings", _uniform(rng, (len(ALPHABET), d), d))
        true = _uniform(rng, d, d)
        while np.linalg.norm(true) == 0:
            true = _uniform(rng, d, d)
        store.add("true", true, trainable=False)
        for name, fan in (("and", 2 * d), ("or", 2 * d), ("not", d)):
            store.add(f"{name}.w1", _uniform(rng, (h, fan), fan))
            store.add(f"{name}.b1", _uniform(rng, h, fan))
            store.add(f"{name}.w2", _uniform(rng, (d, h), h))
            store.add(f"{name}.b2", _uniform(rng, d, h))
        return store

    @property
    def embeddings(self) -> Tensor:
        return self.store["embeddings"]

    @property
    def true(self) -> Tensor:
        return self.store["true"]

    def _mlp(self, name: str, x: Tensor) -> Tensor:
        p = self.store
        hidden = ad.relu(ad.add(ad.matvec(p[f"{name}.w1"], x), p[f"{name}.b1"]))
        return ad.add(ad.matvec(p[f"{name}.w2"], hidden), p[f"{name}.b2"])

    def not_(self, x: Tensor) -> Tensor:
        return self._mlp("not", x)

    def and_(self, a: Tensor, b: Tensor) -> Tensor:
        return self._mlp("and", ad.concat(a, b))

    def or_(self, a: Tensor, b: Tensor) -> Tensor:
        return self._mlp("or", ad.concat(a, b))

    def false(self) -> Tensor:
        return self.not_(self.true)

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"model_config": self.cfg.to_dict()}
        if extra:
            meta.update(extra)
        self.store.save(path, meta)

    @classmethod
    def load(cls, path) -> "NoanModel":
        store, meta = ParamStore.load(path)
        return cls(ModelConfig(**meta["model_config"]), store)


# ---------------------------------------------------------------------------
# Binary plans
# ---------------------------------------------------------------------------

# plan nodes: ("var", letter) | ("not", child) | ("and"|"or", left, right)


def fold_plan(kind: str, operands: list, mode: str, rng: np.random.Generator | None):
    """Left fold of a binary connective; operands are shuffled in train mode."""
    if len(operands) < 2:
        raise AssemblyError(f"{kind} needs at least two operands, got {len(operands)}")
    operands = list(operands)
    if mode == TRAIN:
        if rng is None:
            raise AssemblyError("train mode needs an rng for operand shuffling")
        order = rng.permutation(len(operands))
        operands = [operands[i] for i in order]
    elif mode != EVAL:
        raise AssemblyError(f"unknown mode {mode!r}")
    acc = operands[0]
    for nxt in operands[1:]:
        acc = (kind, acc, nxt)
    return acc


def binary_plan(e: Expression, mode: str = EVAL, rng: np.random.Generator | None = None):
    if isinstance(e, Var):
        return ("var", e.letter)
    if isinstance(e, Not):
        if not isinstance(e.child, Var):
            raise AssemblyError("expression is not in negation normal form")
        return ("not", binary_plan(e.child, mode, rng))
    kind = "and" if isinstance(e, And) else "or"
    return fold_plan(kind, [binary_plan(c, mode, rng) for c in e.children], mode, rng)


def fold_connective(model: NoanModel, kind: str, operands: Sequence[Tensor], mode: str = EVAL,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Fold AND/OR over already-computed vectors (the single-expression path)."""
    module = {"and": model.and_, "or": model.or_}[kind]
    tree = fold_plan(kind, list(range(len(operands))), mode, rng)

    def run(node):
        if isinstance(node, int):
            return operands[node]
        return module(run(node[1]), run(node[2]))

    return run(tree)


# ---------------------------------------------------------------------------
# Batched assembly
# ---------------------------------------------------------------------------


@dataclass
class BatchTrace:
    """Every vector produced while assembling a batch of expressions.

    ``vectors`` holds one row per plan node (each variable occurrence, each
    intermediate fold result and each root).  ``rows[i]`` lists the rows that
    belong to expression i and ``roots[i]`` is its output row.
    """

    vectors: Tensor
    roots: np.ndarray
    rows: list[list[int]]
    outputs: Tensor

    def trace(self, i: int) -> "ForwardTrace":
        idx = self.rows[i]
        return ForwardTrace(
            output=ad.take_rows(self.outputs, [i]),
            W=ad.take_rows(self.vectors, idx),
        )


@dataclass
class ForwardTrace:
    output: Tensor
    W: Tensor

    def output_vector(self) -> np.ndarray:
        return self.output.value.reshape(-1)


@dataclass
class BatchLayout:
    """Index plan for evaluating a batch level by level.

    ``steps`` is a list of (kind, left rows, right rows or None) applied in
    order; each step's outputs are appended after all earlier rows.
    """

    leaf_letters: np.ndarray
    steps: list[tuple[str, np.ndarray, np.ndarray | None]]
    roots: np.ndarray
    rows: list[list[int]]


def compile_batch(exprs: Sequence[Expression], mode: str = EVAL,
                  rng: np.random.Generator | None = None) -> BatchLayout:
    if not exprs:
        raise AssemblyError("empty batch")
    # flattened plan nodes
    kinds: list[str] = []
    heights: list[int] = []
    payload: list = []
    owner: list[int] = []
    roots: list[int] = []

    def visit(node, expr_id: int) -> int:
        kind = node[0]
        if kind == "var":
            height, data = 0, LETTER_INDEX[node[1]]
        elif kind == "not":
            c = visit(node[1], expr_id)
            height, data = heights[c] + 1, (c,)
        else:
            a = visit(node[1], expr_id)
            b = visit(node[2], expr_id)
            height, data = max(heights[a], heights[b]) + 1, (a, b)
        kinds.append(kind)
        heights.append(height)
        payload.append(data)
        owner.append(expr_id)
        return len(kinds) - 1

    for i, e in enumerate(exprs):
        if not is_nnf(e):
            raise AssemblyError(f"expression {i} is not in negation normal form")
        roots.append(visit(binary_plan(e, mode, rng), i))

    n_nodes = len(kinds)
    heights_arr = np.asarray(heights)
    row_of = np.full(n_nodes, -1, dtype=np.intp)
    leaves = [i for i in range(n_nodes) if kinds[i] == "var"]
    row_of[leaves] = np.arange(len(leaves))
    n_rows = len(leaves)
    steps = []
    for h in range(1, int(heights_arr.max()) + 1):
        at_h = np.flatnonzero(heights_arr == h)
        for kind in ("not", "and", "or"):
            group = [int(i) for i in at_h if kinds[i] == kind]
            if not group:
                continue
            left = row_of[[payload[i][0] for i in group]]
            right = None if kind == "not" else row_of[[payload[i][1] for i in group]]
            steps.append((kind, left, right))
            row_of[group] = n_rows + np.arange(len(group))
            n_rows += len(group)

    rows: list[list[int]] = [[] for _ in exprs]
    for nid in np.argsort(row_of, kind="stable"):
        rows[owner[nid]].append(int(row_of[nid]))
    return BatchLayout(np.asarray([payload[i] for i in leaves], dtype=np.intp), steps,
                       row_of[roots], rows)


def run_layout(layout: BatchLayout, model: NoanModel) -> BatchTrace:
    blocks: list[Tensor] = [ad.take_rows(model.embeddings, layout.leaf_letters)]
    pool = blocks[0]
    n_pool = 1
    for kind, left, right in layout.steps:
        if len(blocks) != n_pool:
            pool = ad.stack_rows(blocks)
            n_pool = len(blocks)
        if kind == "not":
            out = model.not_(ad.take_rows(pool, left))
        else:
            a = ad.take_rows(pool, left)
            b = ad.take_rows(pool, right)
            out = model.and_(a, b) if kind == "and" else model.or_(a, b)
        blocks.append(out)
    vectors = blocks[0] if len(blocks) == 1 else ad.stack_rows(blocks)
    return BatchTrace(vectors=vectors, roots=layout.roots, rows=layout.rows,
                      outputs=ad.take_rows(vectors, layout.roots))


def assemble_batch(exprs: Sequence[Expression], model: NoanModel, mode: str = EVAL,
                   rng: np.random.Generator | None = None) -> BatchTrace:
    return run_layout(compile_batch(exprs, mode, rng), model)


def assemble(e: Expression, model: NoanModel, mode: str = EVAL,
             rng: np.random.Generator | None = None) -> ForwardTrace:
    return assemble_batch([e], model, mode, rng).trace(0)


# ---------------------------------------------------------------------------
# Truth probability
# ---------------------------------------------------------------------------


def similarity(u: Tensor, v: Tensor, alpha: float) -> Tensor:
    """``sigmoid(alpha * cos(u, v))``; row-wise for batches."""
    return ad.sigmoid(ad.scale(ad.cosine_similarity(u, v), alpha))


def batch_truth(exprs: Sequence[Expression] | BatchLayout, model: NoanModel, mode: str = EVAL,
                rng: np.random.Generator | None = None) -> tuple[Tensor, BatchTrace]:
    """Truth probabilities of a batch of expressions (normalized to NNF first).

    A precompiled ``BatchLayout`` may be passed instead of expressions.
    """
    if isinstance(exprs, BatchLayout):
        layout = exprs
    else:
        layout = compile_batch([e if is_nnf(e) else to_nnf(e) for e in exprs], mode, rng)
    bt = run_layout(layout, model)
    true_rows = ad.repeat_row(model.true, len(layout.roots))
    return similarity(bt.outputs, true_rows, model.cfg.alpha), bt


def predict_truth(e: Expression, model: NoanModel, mode: str = EVAL,
                  rng: np.random.Generator | None = None) -> tuple[float, ForwardTrace]:
    p, bt = batch_truth([e], model, mode, rng)
    return float(p.value[0]), bt.trace(0)


# ---------------------------------------------------------------------------
# Reference evaluator
# ---------------------------------------------------------------------------


@dataclass
class RecursiveEvaluator:
    """Plain numpy evaluation of an expression, one node at a time.

    Shares nothing with the graph machinery beyond the raw weight arrays, so
    it serves as an independent check of ``assemble``.  Eval-mode order only.
    """

    weights: dict[str, np.ndarray]
    alpha: float = 10.0

    @classmethod
    def from_model(cls, model: NoanModel) -> "RecursiveEvaluator":
        return cls({k: t.value.copy() for k, t in model.store.items()}, model.cfg.alpha)

    def _mlp(self, name: str, x: np.ndarray) -> np.ndarray:
        w = self.weights
        h = np.maximum(w[f"{name}.w1"] @ x + w[f"{name}.b1"], 0.0)
        return w[f"{name}.w2"] @ h + w[f"{name}.b2"]

    def vector(self, e: Expression) -> np.ndarray:
        if isinstance(e, Var):
            return self.weights["embeddings"][ALPHABET.index(e.letter)]
        if isinstance(e, Not):
            return self._mlp("not", self.vector(e.child))
        name = "and" if isinstance(e, And) else "or"
        acc = self.vector(e.children[0])
        for c in e.children[1:]:
            acc = self._mlp(name, np.concatenate([acc, self.vector(c)]))
        return acc

    def truth(self, e: Expression) -> float:
        v = self.vector(to_nnf(e))
        t = self.weights["true"]
        cos = float(v @ t / (np.linalg.norm(v) * np.linalg.norm(t)))
        return float(1.0 / (1.0 + np.exp(-self.alpha * cos)))


__all__ = [
    "ModelConfig", "NoanModel", "AssemblyError", "TRAIN", "EVAL", "fold_plan", "binary_plan",
    "fold_connective", "BatchLayout", "compile_batch", "run_layout", "BatchTrace", "ForwardTrace", "assemble_batch", "assemble",
    "similarity", "batch_truth", "predict_truth", "RecursiveEvaluator",
]
