"""Per-problem training with early stopping, and candidate ranking."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import TrainingError
from .data import DatasetBundle, LabeledExample, build_bundle, gen_candidates
from .logic import AnalogyProblem, implication_expr, parse_problem, to_nnf
from .model import (EVAL, TRAIN, BatchLayout, ModelConfig, NoanModel, RecursiveEvaluator,
                    batch_truth, compile_batch)
from .regularizers import N_RULES, RegularizerWeights, total_loss

log = logging.getLogger(__name__)

LOG_FIELDS = (["epoch", "bce"] + [f"r{i}" for i in range(1, N_RULES + 1)]
              + ["len_penalty", "theta_penalty", "total", "train_acc", "val_acc"])


@dataclass
class TrainConfig:
    epochs_max: int = 300
    batch_size: int = 32
    lr: float = 0.001
    patience: int = 30
    seed: int = 0
    weights: RegularizerWeights = field(default_factory=RegularizerWeights)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs_max < 1:
            raise ValueError("epochs_max must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")

    def with_seed(self, seed: int) -> "TrainConfig":
        d = asdict(self)
        d["seed"] = seed
        d["weights"] = RegularizerWeights(**d["weights"])
        d["model"] = ModelConfig(**{**d["model"], "seed": seed})
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        weights = RegularizerWeights(**d.pop("weights", {}))
        model = ModelConfig(**d.pop("model", {}))
        return cls(weights=weights, model=model, **d)


# config file: plain key=value lines; ``#`` starts a comment
_CONFIG_KEYS = {
    "epochs_max": ("", int), "batch_size": ("", int), "lr": ("", float),
    "patience": ("", int), "seed": ("", int),
    "lambda_l": ("weights", float), "lambda_len": ("weights", float),
    "lambda_theta": ("weights", float),
    "d": ("model", int), "dim": ("model", int), "alpha": ("model", float),
    "hidden": ("model", int),
}


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    d = (base or TrainConfig()).to_dict()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        section, conv = _CONFIG_KEYS[key]
        key = "d" if key == "dim" else key
        (d[section] if section else d)[key] = conv(value)
    d["model"]["seed"] = d["seed"]
    return TrainConfig.from_dict(d)


def accuracy(model: NoanModel, examples: Sequence[LabeledExample],
             layout: BatchLayout | None = None) -> float:
    if not examples:
        return float("nan")
    with ad.no_grad():
        p, _ = batch_truth(layout or [ex.expr for ex in examples], model, EVAL)
    pred = p.value > 0.5
    return float(np.mean(pred == np.array([ex.label for ex in examples])))


@dataclass
class TrainResult:
    model: NoanModel
    log: list[dict]
    best_epoch: int
    best_val_acc: float
    best_train_acc: float


def train(bundle: DatasetBundle, cfg: TrainConfig, log_path: str | Path | None = None,
          model: NoanModel | None = None) -> TrainResult:
    """Mini-batch Adam on the full loss with early stopping on validation accuracy.

    The best snapshot is chosen by validation accuracy, with training
    accuracy breaking ties.  Without validation data, training accuracy alone
    is used.
    """
    if model is None:
        model = NoanModel(cfg.model)
    rng = np.random.default_rng([cfg.seed, 1])
    data = bundle.train
    labels = np.array([ex.label for ex in data], dtype=np.float64)
    rows: list[dict] = []
    best_key = (-1.0, -1.0)
    best_snap = model.store.snapshot()
    best_epoch = 0
    since = 0
    train_layout = compile_batch([ex.expr for ex in data], EVAL)
    val_layout = (compile_batch([ex.expr for ex in bundle.validation], EVAL)
                  if bundle.validation else None)

    for epoch in range(1, cfg.epochs_max + 1):
        order = rng.permutation(len(data))
        sums = np.zeros(N_RULES + 4)
        for lo in range(0, len(data), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            p, bt = batch_truth([data[i].expr for i in idx], model, TRAIN, rng)
            loss = total_loss(p, labels[idx], bt.vectors, model, cfg.weights)
            if not np.isfinite(loss.total):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            ad.backward(loss.tensor)
            try:
                model.store.adam_step(cfg.lr)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            sums += [loss.bce, *loss.r, loss.len_penalty, loss.theta_penalty, loss.total]

        train_acc = accuracy(model, data, train_layout)
        val_acc = accuracy(model, bundle.validation, val_layout) if val_layout else train_acc
        row = {"epoch": epoch, "bce": sums[0]}
        row.update({f"r{i + 1}": sums[1 + i] for i in range(N_RULES)})
        row.update(len_penalty=sums[-3], theta_penalty=sums[-2], total=sums[-1],
                   train_acc=train_acc, val_acc=val_acc)
        rows.append(row)

        key = (val_acc, train_acc)
        if key > best_key:
            best_key, best_epoch, since = key, epoch, 0
            best_snap = model.store.snapshot()
        else:
            since += 1
            if since >= cfg.patience:
                break

    model.store.restore(best_snap)
    if log_path is not None:
        write_log(rows, log_path)
    return TrainResult(model, rows, best_epoch, best_key[0], best_key[1])


def write_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if k != "epoch" else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankedEntry:
    candidate: str
    p: float
    rank: int


@dataclass
class RankedAnswers:
    entries: list[RankedEntry]
    problem: str
    seed: int

    def rank_of(self, target: str) -> int | None:
        return rank_of(self, target)

    def to_json(self) -> str:
        return json.dumps({
            "problem": self.problem,
            "seed": self.seed,
            "entries": [asdict(e) for e in self.entries],
        }, indent=2) + "\n"


def order_candidates(scored: Sequence[tuple[str, float]]) -> list[RankedEntry]:
    """Sort by probability, then shorter string, then alphabetical."""
    ordered = sorted(scored, key=lambda cp: (-cp[1], len(cp[0]), cp[0]))
    return [RankedEntry(c, float(p), i + 1) for i, (c, p) in enumerate(ordered)]


def rank_candidates(model: NoanModel, problem: AnalogyProblem, candidates: Sequence[str],
                    seed: int = 0) -> RankedAnswers:
    candidates = list(dict.fromkeys(candidates))
    exprs = [to_nnf(implication_expr(problem.query, c)) for c in candidates]
    with ad.no_grad():
        p, _ = batch_truth(exprs, model, EVAL)
    return RankedAnswers(order_candidates(list(zip(candidates, p.value.tolist()))),
                         problem.render(), seed)


def rank_candidates_reference(model: NoanModel, problem: AnalogyProblem,
                              candidates: Sequence[str], seed: int = 0) -> RankedAnswers:
    """Same ranking through the node-by-node numpy evaluator."""
    ev = RecursiveEvaluator.from_model(model)
    candidates = list(dict.fromkeys(candidates))
    scored = [(c, ev.truth(implication_expr(problem.query, c))) for c in candidates]
    return RankedAnswers(order_candidates(scored), problem.render(), seed)


def rank_of(ra: RankedAnswers, target: str) -> int | None:
    """1-based rank of ``target``, or None when it is not among the entries."""
    for e in ra.entries:
        if e.candidate == target:
            return e.rank
    return None


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------


class SolveError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class SolveResult:
    ranked: RankedAnswers
    train: TrainResult
    log_path: Path | None = None
    checkpoint_path: Path | None = None
    ranked_path: Path | None = None


def solve(problem_text: str | AnalogyProblem, cfg: TrainConfig | None = None,
          candidates: Sequence[str] | None = None, out_dir: str | Path | None = None) -> SolveResult:
    """Parse, build data, train a fresh model and rank the candidates.

    ``candidates`` (e.g. a curated benchmark list) are used first and the
    generator fills the set up to 20.
    """
    cfg = cfg or TrainConfig()
    try:
        problem = (problem_text if isinstance(problem_text, AnalogyProblem)
                   else parse_problem(problem_text))
    except ValueError as exc:
        raise SolveError("parse", exc) from exc
    try:
        bundle = build_bundle(problem, seed=cfg.seed)
        cset = gen_candidates(problem, np.random.default_rng([cfg.seed, 2]),
                              curated=list(candidates or []))
    except ValueError as exc:
        raise SolveError("data", exc) from exc

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        result = train(bundle, cfg, log_path=out / "train_log.csv" if out else None)
    except (TrainingError, ValueError) as exc:
        raise SolveError("train", exc) from exc
    ranked = rank_candidates(result.model, problem, cset.candidates, seed=cfg.seed)
    res = SolveResult(ranked, result)
    if out is not None:
        res.log_path = out / "train_log.csv"
        res.checkpoint_path = out / "checkpoint.json"
        res.ranked_path = out / "ranked.json"
        result.model.save(res.checkpoint_path, {"train_config": cfg.to_dict(),
                                                "problem": problem.render()})
        res.ranked_path.write_text(ranked.to_json())
    log.info("solved %s: top answer %s (p=%.4f, best epoch %d)", problem.render(),
             ranked.entries[0].candidate, ranked.entries[0].p, result.best_epoch)
    return res


def solve_shared(problems: Sequence[AnalogyProblem], cfg: TrainConfig | None = None,
                 candidates: Sequence[Sequence[str] | None] | None = None) -> list[RankedAnswers]:
    """Rank several problems that share one source pair with a single trained model.

    The training bundle depends only on the source pair and the seed, so the
    result is identical to calling :func:`solve` on each problem separately.
    """
    cfg = cfg or TrainConfig()
    if not problems:
        return []
    first = problems[0]
    if any((p.initial, p.modified) != (first.initial, first.modified) for p in problems):
        raise ValueError("problems must share the same source pair")
    candidates = list(candidates) if candidates is not None else [None] * len(problems)
    try:
        bundle = build_bundle(first, seed=cfg.seed)
        csets = [gen_candidates(p, np.random.default_rng([cfg.seed, 2]), curated=list(c or []))
                 for p, c in zip(problems, candidates)]
    except ValueError as exc:
        raise SolveError("data", exc) from exc
    try:
        result = train(bundle, cfg)
    except (TrainingError, ValueError) as exc:
        raise SolveError("train", exc) from exc
    return [rank_candidates(result.model, p, cs.candidates, seed=cfg.seed)
            for p, cs in zip(problems, csets)]
