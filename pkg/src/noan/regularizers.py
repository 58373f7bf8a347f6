"""Logical regularizers and the full training objective.

Each law in the table below is scored with the same ``Sim`` head used for
prediction, summed over the vector set W produced by the forward pass:

    r1  NOT(w) far from w             (w in W and T)
    r2  NOT(NOT(w)) = w
    r3  AND(w, T) = w      r7  OR(w, F) = w
    r4  AND(w, F) = F      r8  OR(w, T) = T
    r5  AND(w, w) = w      r9  OR(w, w) = w
    r6  AND(w, NOT w) = F  r10 OR(w, NOT w) = T

F is NOT(T) through the current NOT module.  All AND and all OR
applications go through their module in a single batched call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import gen_commonsense
from .model import NoanModel, batch_truth, similarity

N_RULES = 10


class NumericGuardError(ValueError):
    pass


@dataclass
class RegularizerWeights:
    lambda_l: float = 0.1
    lambda_len: float = 1e-4
    lambda_theta: float = 1e-4

    def __post_init__(self):
        for k in ("lambda_l", "lambda_len", "lambda_theta"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0")


@dataclass
class LossBreakdown:
    bce: float
    r: tuple[float, ...]
    len_penalty: float
    theta_penalty: float
    total: float
    weights: RegularizerWeights = field(default_factory=RegularizerWeights)
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def recomposed(self) -> float:
        w = self.weights
        return (self.bce + w.lambda_l * float(np.sum(self.r)) + w.lambda_len * self.len_penalty
                + w.lambda_theta * self.theta_penalty)


def logic_regularizers(W: Tensor, model: NoanModel) -> list[Tensor]:
    """r1..r10 over the rows of ``W`` (a (n, d) tensor or a single d-vector)."""
    if W.value.ndim == 1:
        W = ad.stack_rows([W])
    n = W.shape[0]
    if n == 0:
        raise ValueError("regularizers need a non-empty vector set")
    alpha = model.cfg.alpha
    T = model.true

    negated = model.not_(ad.stack_rows([W, T]))  # rows 0..n-1: NOT(w), row n: F
    not_w = ad.take_rows(negated, np.arange(n))
    F = ad.take_rows(negated, [n])
    zeros = np.zeros(n, dtype=np.intp)
    t_rows = ad.repeat_row(T, n)
    f_rows = ad.take_rows(F, zeros)

    ands = _with_left(model, "and", W, [T, (F, zeros), W, not_w])
    ors = _with_left(model, "or", W, [(F, zeros), T, W, not_w])
    not_not_w = model.not_(not_w)

    def seg(t: Tensor, k: int) -> Tensor:
        return ad.take_rows(t, np.arange(k * n, (k + 1) * n))

    w_and_t = ad.stack_rows([W, T])
    # (left, right) pairs; r1 scores similarity itself, the rest score 1 - similarity
    pairs = [
        (negated, w_and_t),
        (not_not_w, W),
        (seg(ands, 0), W),
        (seg(ands, 1), f_rows),
        (seg(ands, 2), W),
        (seg(ands, 3), f_rows),
        (seg(ors, 0), W),
        (seg(ors, 1), t_rows),
        (seg(ors, 2), W),
        (seg(ors, 3), t_rows),
    ]
    sims = similarity(ad.stack_rows([a for a, _ in pairs]), ad.stack_rows([b for _, b in pairs]), alpha)
    out = []
    lo = 0
    for k, (a, _) in enumerate(pairs):
        hi = lo + a.shape[0]
        s = _segment_sum(sims, lo, hi)
        out.append(s if k == 0 else ad.sub(Tensor(float(hi - lo)), s))
        lo = hi
    return out


def _with_left(model: NoanModel, name: str, left: Tensor, rights: list) -> Tensor:
    """``module(left, r)`` for each right block, stacked in order.

    Same result as calling the module on concatenated pairs, but the left
    half of the first layer multiplies ``left`` once for all blocks.  A right
    block is a vector (broadcast), a row batch, or ``(row, index)`` to gather.
    """
    p = model.store
    d = model.cfg.d
    w1 = p[f"{name}.w1"]
    w_left, w_right = ad.take_cols(w1, 0, d), ad.take_cols(w1, d, 2 * d)
    pre_left = ad.add(ad.matvec(w_left, left), p[f"{name}.b1"])
    blocks = []
    for r in rights:
        if isinstance(r, tuple):
            part = ad.take_rows(ad.matvec(w_right, r[0]), r[1])
        else:
            part = ad.matvec(w_right, r)
        blocks.append(ad.add(pre_left, part))
    hidden = ad.relu(ad.stack_rows(blocks))
    return ad.add(ad.matvec(p[f"{name}.w2"], hidden), p[f"{name}.b2"])


def _segment_sum(v: Tensor, lo: int, hi: int) -> Tensor:
    mask = np.zeros(v.shape[0])
    mask[lo:hi] = 1.0
    return ad.dot(v, Tensor(mask))


def bce_loss(p: Tensor, y) -> Tensor:
    """``-sum(y log p + (1 - y) log(1 - p))``; p must lie strictly inside (0, 1)."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    if np.any((p.value <= 0) | (p.value >= 1)):
        raise NumericGuardError("predicted probability outside the open interval (0, 1)")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    # probability assigned to the observed label
    q = ad.add(ad.mul(p, Tensor(2.0 * y - 1.0)), Tensor(1.0 - y))
    return ad.scale(ad.sum(ad.log(q)), -1.0)


def total_loss(p: Tensor, y, W: Tensor, model: NoanModel,
               weights: RegularizerWeights | None = None) -> LossBreakdown:
    """BCE plus weighted logic, vector-length and parameter penalties.

    ``W`` is the union of all traced vectors of the batch.  The parameter
    penalty covers every trainable tensor (embeddings, weights and biases).
    """
    weights = weights or RegularizerWeights()
    bce = bce_loss(p, y)
    rs = logic_regularizers(W, model)
    len_pen = ad.l2_norm_sq(W)
    theta_terms = [ad.l2_norm_sq(t) for _, t in model.store.trainable_items()]
    theta_pen = theta_terms[0]
    for t in theta_terms[1:]:
        theta_pen = ad.add(theta_pen, t)

    r_sum = rs[0]
    for r in rs[1:]:
        r_sum = ad.add(r_sum, r)
    total = ad.add(
        ad.add(bce, ad.scale(r_sum, weights.lambda_l)),
        ad.add(ad.scale(len_pen, weights.lambda_len), ad.scale(theta_pen, weights.lambda_theta)),
    )
    return LossBreakdown(
        bce=bce.item(),
        r=tuple(r.item() for r in rs),
        len_penalty=len_pen.item(),
        theta_penalty=theta_pen.item(),
        total=total.item(),
        weights=weights,
        tensor=total,
    )


def law_scores(W: Tensor, model: NoanModel) -> list[float]:
    with ad.no_grad():
        return [r.item() for r in logic_regularizers(W, model)]


def probe_vectors(model: NoanModel) -> Tensor:
    """W set of an eval-mode pass over the commonsense positives (fixed, seed-free)."""
    with ad.no_grad():
        _, bt = batch_truth([ex.expr for ex in gen_commonsense()], model)
    return bt.vectors


def probe_law_scores(model: NoanModel) -> tuple[list[float], int]:
    W = probe_vectors(model)
    return law_scores(W, model), W.shape[0]
