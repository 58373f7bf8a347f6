"""Random-graph gradient checks for the autodiff engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    n_params: int
    ops: list[str]


def random_graph(rng: np.random.Generator, max_dim: int = 8):
    """Build a random scalar-valued graph; returns (params, build, op names).

    The graph always goes through at least three layers and draws from the
    full op set, including the row-batch ops.  Draws whose forward pass is
    undefined (a relu zeroing a vector fed to cosine) are redrawn.
    """
    while True:
        params, build, ops = _draw_graph(rng, max_dim)
        try:
            build()
        except ad.ShapeError:
            continue
        return params, build, ops


def _draw_graph(rng: np.random.Generator, max_dim: int):
    d = int(rng.integers(2, max_dim + 1))
    params: list[Tensor] = []

    def param(*shape) -> Tensor:
        t = Tensor(rng.normal(size=shape), requires_grad=True)
        params.append(t)
        return t

    recipe = []
    cur = d
    n_layers = int(rng.integers(3, 6))
    for _ in range(n_layers):
        kind = str(rng.choice(["matvec", "take_cols", "add", "sub", "mul", "relu", "sigmoid",
                               "scale", "concat"]))
        if kind == "matvec":
            out = int(rng.integers(2, max_dim + 1))
            recipe.append(("matvec", param(out, cur)))
            cur = out
        elif kind == "take_cols":
            # matvec through a column block of a wider matrix
            out = int(rng.integers(2, max_dim + 1))
            recipe.append(("take_cols", param(out, cur + 2)))
            cur = out
        elif kind in ("add", "sub", "mul"):
            recipe.append((kind, param(cur)))
        elif kind == "scale":
            recipe.append(("scale", float(rng.normal())))
        elif kind == "concat":
            if 2 * cur > max_dim:
                recipe.append(("matvec", param(max(2, cur // 2), cur)))
                cur = max(2, cur // 2)
            extra = param(cur)
            recipe.append(("concat", extra))
            cur *= 2
        else:
            recipe.append((kind, None))
    x = param(d)
    batched = bool(rng.integers(0, 2))
    other = param(cur)
    second = param(cur) if batched else None
    reducer = str(rng.choice(["sum", "dot", "l2_norm_sq", "cosine", "log_sigmoid"]))

    def build() -> Tensor:
        h = x
        for kind, arg in recipe:
            if kind == "matvec":
                h = ad.matvec(arg, h)
            elif kind == "take_cols":
                h = ad.matvec(ad.take_cols(arg, 1, arg.shape[1] - 1), h)
            elif kind == "add":
                h = ad.add(h, arg)
            elif kind == "sub":
                h = ad.sub(h, arg)
            elif kind == "mul":
                h = ad.mul(h, arg)
            elif kind == "scale":
                h = ad.scale(h, arg)
            elif kind == "concat":
                h = ad.concat(h, arg)
            elif kind == "relu":
                h = ad.relu(h)
            elif kind == "sigmoid":
                h = ad.sigmoid(h)
        o = other
        if batched:
            # rows [h, second, h]; compared against [other x3]
            h = ad.take_rows(ad.stack_rows([h, second]), [0, 1, 0])
            o = ad.repeat_row(other, 3)
        if reducer == "sum":
            return ad.sum(h)
        if reducer == "dot":
            return ad.sum(ad.dot(h, o))
        if reducer == "l2_norm_sq":
            return ad.l2_norm_sq(h)
        if reducer == "cosine":
            return ad.sum(ad.cosine_similarity(h, o))
        return ad.sum(ad.log(ad.sigmoid(ad.dot(h, o))))

    ops = [k for k, _ in recipe] + [str(reducer)]
    if "take_cols" in ops:
        ops.append("matvec")
    if batched:
        ops += ["stack_rows", "take_rows", "repeat_row"]
    return params, build, ops


def check_graph(seed: int, max_dim: int = 8, h: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    params, build, ops = random_graph(rng, max_dim)
    for p in params:
        p.zero_grad()
    root = build()
    ad.backward(root)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        num = ad.numeric_gradient(lambda: build().item(), p, h)
        worst = max(worst, ad.relative_error(g, num))
    return GradCheckResult(seed, worst, len(params), sorted(set(ops)))


def run_gradchecks(n: int = 100, seed: int = 0, max_dim: int = 8) -> list[GradCheckResult]:
    return [check_graph(seed * 100_003 + i, max_dim) for i in range(n)]
