"""Command-line entry point: ``noan solve|bench|gen-data|gradcheck|inspect``.

Exit codes: 0 success, 1 usage or runtime error, 2 benchmark finished with
some failed problems.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _config(args):
    from .model import ModelConfig
    from .train import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if args.epochs is not None:
        d["epochs_max"] = args.epochs
    if args.dim is not None:
        d["model"]["d"] = args.dim
        d["model"]["hidden"] = args.dim
    d["model"]["seed"] = d["seed"]
    ModelConfig(**d["model"])
    return TrainConfig.from_dict(d)


def _add_train_opts(p):
    p.add_argument("--dim", type=int, help="embedding dimension (default 64)")
    p.add_argument("--epochs", type=int, help="maximum training epochs (default 300)")
    p.add_argument("--config", help="key=value config file")


def cmd_solve(args) -> int:
    from .train import solve

    cfg = _config(args)
    cands = [c.strip() for c in args.candidates.split(",")] if args.candidates else None
    res = solve(args.problem, cfg, candidates=cands, out_dir=args.out)
    if args.json:
        sys.stdout.write(res.ranked.to_json())
    else:
        print(f"# {res.ranked.problem}  seed={cfg.seed}  best epoch={res.train.best_epoch}")
        for e in res.ranked.entries:
            print(f"{e.rank:>3}  {e.candidate:<16} {e.p:.6f}")
        if res.ranked_path:
            print(f"# wrote {res.ranked_path}, {res.checkpoint_path}, {res.log_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import emit_report, load_dataset, run_benchmark

    cfg = _config(args)
    ds = load_dataset(args.dataset)
    report = run_benchmark(ds, cfg, args.seeds, jobs=args.jobs)
    text = emit_report(report, args.format, args.out)
    sys.stdout.write(text)
    return EXIT_PARTIAL if report.partial else EXIT_OK


def cmd_gen_data(args) -> int:
    from .data import build_bundle, gen_candidates
    from .logic import parse_problem, render

    problem = parse_problem(args.problem)
    bundle = build_bundle(problem, seed=args.seed)
    cset = gen_candidates(problem, np.random.default_rng([args.seed, 2]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def dump(examples):
        return [{"lhs": ex.lhs, "rhs": ex.rhs, "label": ex.label, "expr": render(ex.expr)}
                for ex in examples]

    (out / "train.json").write_text(json.dumps(dump(bundle.train), indent=1) + "\n")
    (out / "validation.json").write_text(json.dumps(dump(bundle.validation), indent=1) + "\n")
    (out / "candidates.json").write_text(json.dumps(
        {"query": cset.query, "candidates": cset.candidates, "provenance": cset.provenance},
        indent=1) + "\n")
    print(f"train={len(bundle.train)} validation={len(bundle.validation)} "
          f"candidates={len(cset)} -> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradchecks

    results = run_gradchecks(args.graphs, args.seed)
    worst = max(r.max_rel_error for r in results)
    bad = [r for r in results if r.max_rel_error > args.tol]
    print(f"{len(results)} graphs, max relative error {worst:.3e} (tolerance {args.tol:g})")
    for r in bad:
        print(f"  FAIL seed={r.seed} err={r.max_rel_error:.3e} ops={','.join(r.ops)}")
    return EXIT_ERROR if bad else EXIT_OK


def cmd_inspect(args) -> int:
    from .model import NoanModel
    from .regularizers import probe_law_scores

    model = NoanModel.load(args.checkpoint)
    scores, n = probe_law_scores(model)
    names = ["negation", "double negation", "AND identity", "AND annihilator",
             "AND idempotence", "AND complementation", "OR identity", "OR annihilator",
             "OR idempotence", "OR complementation"]
    print(f"# probe set: {n} vectors; per-vector mean in brackets (0 = law satisfied)")
    for i, (name, s) in enumerate(zip(names, scores), 1):
        per = s / (n + 1 if i == 1 else n)
        print(f"r{i:<3} {name:<22} {s:12.4f}  [{per:.4f}]")
    print(f"sum  {'':<22} {sum(scores):12.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="noan", description="Neural logic solver for letter-string analogies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="train on one problem and rank candidate answers")
    s.add_argument("problem", help="e.g. ABC:ABD::IJK:?")
    s.add_argument("--seed", type=int)
    _add_train_opts(s)
    s.add_argument("--out", help="directory for ranked.json, checkpoint.json, train_log.csv")
    s.add_argument("--candidates", help="comma-separated answers to include first")
    s.add_argument("--json", action="store_true", help="print the ranking as JSON")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a benchmark dataset over several seeds")
    b.add_argument("dataset", help="dataset JSON path, or 'murena' / 'rijsdijk'")
    b.add_argument("--seeds", type=_seeds, default=[1, 2, 3, 4, 5])
    b.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    b.add_argument("--out", help="write the report to this file")
    b.add_argument("--jobs", type=int, default=1)
    _add_train_opts(b)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-data", help="write the generated training data for a problem")
    g.add_argument("problem")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("gradcheck", help="finite-difference check of the autodiff engine")
    c.add_argument("--graphs", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("inspect", help="logical-law scores of a checkpoint")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a one-line error with exit status 1
        if args.verbose:
            raise
        print(f"noan: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
