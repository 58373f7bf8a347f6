"""Benchmark datasets, multi-seed evaluation and report tables.

Dataset files are JSON::

    {"name": "murena", "participants": 68,
     "problems": [
        {"problem": "ABC:ABD::IJK:?",
         "answers": [{"answer": "IJL", "selected": 93.0, "paper_noan_rank": 1,
                      "pisa_rank": 1, "metacat_rank": 1}, ...],
         "candidates": ["IJL", "IJD", ...],          # 20 strings
         "provenance": ["curated", "curated", ...]}  # optional
     ]}

Answers are listed most-selected first.  A rank of ``null`` means the method
did not produce the answer (shown as the infinity sign).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .logic import parse_problem
from .train import SolveError, TrainConfig, solve_shared

log = logging.getLogger(__name__)

INFINITY = "∞"
BUILTIN = ("murena", "rijsdijk")


class DatasetError(ValueError):
    pass


@dataclass
class ParticipantAnswer:
    answer: str
    selected: float
    pisa_rank: int | None = None
    metacat_rank: int | None = None
    paper_noan_rank: int | None = None


@dataclass
class BenchmarkProblem:
    problem: str
    answers: list[ParticipantAnswer]
    candidates: list[str] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)

    @property
    def top_answer(self) -> str:
        return max(self.answers, key=lambda a: a.selected).answer


@dataclass
class Dataset:
    name: str
    problems: list[BenchmarkProblem]
    participants: int | None = None

    def __len__(self):
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def to_dict(self) -> dict:
        return {"name": self.name, "participants": self.participants,
                "problems": [asdict(p) for p in self.problems]}


def _rank_field(v, where: str) -> int | None:
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise DatasetError(f"{where}: rank must be a positive integer or null, got {v!r}")
    return v


def _parse_record(i: int, rec: dict) -> BenchmarkProblem:
    where = f"record {i}"
    if not isinstance(rec, dict) or "problem" not in rec:
        raise DatasetError(f"{where}: missing 'problem'")
    try:
        parse_problem(rec["problem"])
    except ValueError as exc:
        raise DatasetError(f"{where}: {exc}") from exc
    raw = rec.get("answers")
    if not raw:
        raise DatasetError(f"{where}: at least one participant answer is required")
    answers = []
    for j, a in enumerate(raw):
        w = f"{where}, answer {j}"
        if not isinstance(a, dict) or "answer" not in a or "selected" not in a:
            raise DatasetError(f"{w}: needs 'answer' and 'selected'")
        sel = a["selected"]
        if not isinstance(sel, (int, float)) or not 0 < sel <= 100:
            raise DatasetError(f"{w}: selection percentage must be in (0, 100], got {sel!r}")
        ans = a["answer"]
        if not isinstance(ans, str) or not ans.isalpha() or not ans.isupper() or not ans.isascii():
            raise DatasetError(f"{w}: answer must be uppercase letters, got {ans!r}")
        answers.append(ParticipantAnswer(
            ans, float(sel),
            _rank_field(a.get("pisa_rank"), w),
            _rank_field(a.get("metacat_rank"), w),
            _rank_field(a.get("paper_noan_rank"), w),
        ))
    candidates = list(rec.get("candidates", []))
    return BenchmarkProblem(rec["problem"], answers, candidates, list(rec.get("provenance", [])))


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("noan") / "datasets" / f"{name}.json"))


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset file; ``murena`` and ``rijsdijk`` name the bundled ones."""
    if str(path) in BUILTIN:
        path = builtin_path(str(path))
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("problems"), list):
        raise DatasetError(f"{path}: expected an object with a 'problems' list")
    problems = [_parse_record(i, rec) for i, rec in enumerate(doc["problems"])]
    return Dataset(doc.get("name", path.stem), problems, doc.get("participants"))


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ds.to_dict(), indent=1) + "\n")


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class ProblemResult:
    problem: str
    answers: list[ParticipantAnswer]
    seed_ranks: dict[int, list[int | None]]
    errors: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def median_ranks(self) -> list[float | None]:
        """Median over seeds per answer; ABSENT if any seed failed to rank it."""
        out = []
        for j in range(len(self.answers)):
            ranks = [r[j] for r in self.seed_ranks.values()]
            if not ranks or any(r is None for r in ranks):
                out.append(None)
            else:
                out.append(statistics.median(ranks))
        return out

    def top_rank(self) -> float | None:
        j = max(range(len(self.answers)), key=lambda k: self.answers[k].selected)
        return self.median_ranks()[j]


@dataclass
class BenchmarkReport:
    dataset: str
    results: list[ProblemResult]
    seeds: list[int]
    config: dict
    wall_time: float = 0.0

    @property
    def partial(self) -> bool:
        return any(r.failed for r in self.results)

    def top_k(self, k: int) -> int:
        return sum(1 for r in self.results if r.top_rank() is not None and r.top_rank() <= k)

    @property
    def top1(self) -> int:
        return self.top_k(1)

    @property
    def top2(self) -> int:
        return self.top_k(2)


def _solve_group(args) -> list[tuple[int, int, list[int | None], str | None]]:
    seed, items, cfg_dict = args
    cfg = TrainConfig.from_dict(cfg_dict).with_seed(seed)
    problems = [parse_problem(text) for _, text, _, _ in items]
    try:
        ranked = solve_shared(problems, cfg, [c for _, _, c, _ in items])
    except SolveError as exc:
        if exc.stage != "train":
            raise
        return [(i, seed, [None] * len(answers), str(exc)) for i, _, _, answers in items]
    return [(i, seed, [ra.rank_of(a) for a in answers], None)
            for (i, _, _, answers), ra in zip(items, ranked)]


def run_benchmark(dataset: Dataset, cfg: TrainConfig | None = None,
                  seeds: Sequence[int] = (1, 2, 3, 4, 5), jobs: int = 1) -> BenchmarkReport:
    """Train and rank every (problem, seed) pair; merge results in (problem, seed) order.

    Problems with the same source pair train on identical data, so one model
    per (source pair, seed) serves all of them.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    cfg = cfg or TrainConfig()
    start = time.perf_counter()
    groups: dict[tuple[str, str], list] = {}
    for i, p in enumerate(dataset.problems):
        prob = parse_problem(p.problem)
        groups.setdefault((prob.initial, prob.modified), []).append(
            (i, p.problem, p.candidates, [a.answer for a in p.answers]))
    tasks = [(s, items, cfg.to_dict()) for items in groups.values() for s in seeds]
    outcomes = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_solve_group, tasks):
                outcomes.extend(out)
    else:
        for t in tasks:
            out = _solve_group(t)
            outcomes.extend(out)
            log.info("source %s seed %d: ranks %s", t[1][0][1].split("::")[0], t[0],
                     [o[2] for o in out])
    outcomes.sort(key=lambda o: (o[0], o[1]))
    results = [ProblemResult(p.problem, p.answers, {}) for p in dataset.problems]
    for i, seed, ranks, err in outcomes:
        results[i].seed_ranks[seed] = ranks
        if err:
            results[i].errors.append(f"seed {seed}: {err}")
    return BenchmarkReport(dataset.name, results, list(seeds), cfg.to_dict(),
                           time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def fmt_rank(r: float | int | None) -> str:
    return INFINITY if r is None else f"{r:g}"


def fmt_pct(x: float) -> str:
    return f"{x:g}%"


def report_rows(report: BenchmarkReport) -> list[list[str]]:
    rows = []
    for res in report.results:
        for j, (a, med) in enumerate(zip(res.answers, res.median_ranks())):
            rows.append([res.problem if j == 0 else "", a.answer, fmt_pct(a.selected),
                         fmt_rank(med), fmt_rank(a.pisa_rank), fmt_rank(a.metacat_rank)])
    return rows


def _aggregate_lines(report: BenchmarkReport) -> list[tuple[str, str]]:
    n = len(report.results)
    pct = lambda k: f"{k}/{n} ({100.0 * k / n:.1f}%)" if n else "0/0"  # noqa: E731
    return [("top-1 match", pct(report.top1)), ("top-2 inclusion", pct(report.top2)),
            ("seeds", ",".join(str(s) for s in report.seeds)),
            ("wall time", f"{report.wall_time:.1f} s")]


HEADER = ["Problem", "Answer", "Selected", "Noan", "Pisa", "Metacat"]


def emit_report(report: BenchmarkReport, fmt: str = "markdown",
                path: str | Path | None = None) -> str:
    """Render the report as a markdown table or CSV; optionally write it to ``path``."""
    rows = report_rows(report)
    if fmt == "markdown":
        lines = ["| " + " | ".join(HEADER) + " |", "|" + "---|" * len(HEADER)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("")
        lines += [f"- {k}: {v}" for k, v in _aggregate_lines(report)]
        text = "\n".join(lines) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([h.lower() for h in HEADER])
        w.writerows(rows)
        for k, v in _aggregate_lines(report):
            w.writerow([f"# {k}", v])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
