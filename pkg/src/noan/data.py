"""Training, validation and candidate data for one analogy problem.

The alphabet is treated as cyclic, so Z is followed by A.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .logic import ALPHABET, AnalogyProblem, Expression, check_letters, implication_expr, to_nnf

N_CANDIDATES = 20
N_SHIFTS = 25
HOLDOUT_FRACTION = 0.1


def shift(s: str, k: int) -> str:
    return "".join(ALPHABET[(ALPHABET.index(ch) + k) % 26] for ch in s)


def succ(ch: str, k: int = 1) -> str:
    return shift(ch, k)


@dataclass(frozen=True)
class LabeledExample:
    lhs: str
    rhs: str
    label: bool
    expr: Expression = field(compare=False, repr=False)

    @classmethod
    def make(cls, lhs: str, rhs: str, label: bool) -> "LabeledExample":
        check_letters(lhs)
        check_letters(rhs)
        return cls(lhs, rhs, bool(label), to_nnf(implication_expr(lhs, rhs)))

    @property
    def key(self) -> tuple[str, str]:
        return (self.lhs, self.rhs)

    def __str__(self) -> str:
        return f"{self.lhs}->{self.rhs}:{'T' if self.label else 'F'}"


@dataclass
class DatasetBundle:
    train: list[LabeledExample]
    validation: list[LabeledExample]
    one_shot: LabeledExample | None = None
    holdout: list[LabeledExample] = field(default_factory=list)


def gen_commonsense() -> list[LabeledExample]:
    """Repetition, forward and reverse derivation on one and two letters."""
    out: dict[tuple[str, str], LabeledExample] = {}
    for x in ALPHABET:
        x1, x2 = succ(x), succ(x, 2)
        for lhs, rhs in (
            (x, x), (x, x1), (x1, x),
            (x + x, x + x), (x + x1, x1 + x2), (x1 + x2, x + x1),
        ):
            out.setdefault((lhs, rhs), LabeledExample.make(lhs, rhs, True))
    return list(out.values())


def _random_string(rng: np.random.Generator, length: int) -> str:
    return "".join(ALPHABET[i] for i in rng.integers(0, 26, size=length))


def sample_negatives(positives: list[LabeledExample], rng: np.random.Generator,
                     count: int | None = None) -> list[LabeledExample]:
    """Uniform draws without replacement of same-length (1 or 2) pairs that are not positive."""
    if not positives:
        raise ValueError("need at least one positive example")
    count = len(positives) if count is None else count
    taken = {p.key for p in positives}
    pool_size = 26 * 26 + 676 * 676 - sum(1 for p in positives if len(p.lhs) == len(p.rhs) <= 2)
    if count > pool_size:
        raise ValueError(f"cannot draw {count} negatives from a pool of {pool_size}")
    # weight string lengths by pool share so the draw is uniform over pairs
    p_one = 26 * 26 / (26 * 26 + 676 * 676)
    out = []
    while len(out) < count:
        n = 1 if rng.random() < p_one else 2
        pair = (_random_string(rng, n), _random_string(rng, n))
        if pair in taken:
            continue
        taken.add(pair)
        out.append(LabeledExample.make(*pair, False))
    return out


def one_shot_example(problem: AnalogyProblem) -> LabeledExample:
    return LabeledExample.make(problem.initial, problem.modified, True)


def propagate_validation(problem: AnalogyProblem) -> list[LabeledExample]:
    """The one-shot pair shifted through the alphabet by 1..25 places."""
    return [
        LabeledExample.make(shift(problem.initial, k), shift(problem.modified, k), True)
        for k in range(1, N_SHIFTS + 1)
    ]


def commonsense_split(rng: np.random.Generator,
                      holdout_fraction: float = HOLDOUT_FRACTION) -> tuple[list, list]:
    """Positives plus sampled negatives, split into (train, held-out) parts."""
    pos = gen_commonsense()
    neg = sample_negatives(pos, rng)
    data = pos + neg
    order = rng.permutation(len(data))
    n_hold = int(round(holdout_fraction * len(data)))
    hold = [data[i] for i in order[:n_hold]]
    train = [data[i] for i in sorted(order[n_hold:])]
    return train, hold


def build_bundle(problem: AnalogyProblem | None, seed: int = 0,
                 holdout_fraction: float = HOLDOUT_FRACTION) -> DatasetBundle:
    """Commonsense data plus, when a problem is given, its one-shot and propagated pairs.

    A commonsense pair that coincides with the one-shot or one of its shifts is
    dropped from the commonsense part so each pair carries one label.
    """
    rng = np.random.default_rng(seed)
    train, hold = commonsense_split(rng, holdout_fraction)
    if problem is None:
        return DatasetBundle(train=train, validation=list(hold), holdout=hold)
    shot = one_shot_example(problem)
    shifted = [ex for ex in propagate_validation(problem) if ex.key != shot.key]
    reserved = {shot.key} | {ex.key for ex in shifted}
    train = [ex for ex in train if ex.key not in reserved] + [shot]
    hold = [ex for ex in hold if ex.key not in reserved]
    return DatasetBundle(train=train, validation=shifted + hold, one_shot=shot, holdout=hold)


# ---------------------------------------------------------------------------
# Candidate answers
# ---------------------------------------------------------------------------


@dataclass
class CandidateSet:
    query: str
    candidates: list[str]
    provenance: list[str]

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


def _families(q: str) -> list[tuple[str, str]]:
    n = len(q)
    first, last = q[0], q[-1]
    rep = [q] + [q[:k] for k in range(1, n)] + [first * k for k in range(1, n + 2)]
    run = lambda start, length: "".join(succ(start, i) for i in range(length))  # noqa: E731
    fwd = [q[:-1] + succ(last), succ(first)] + [run(first, k) for k in range(2, n + 2)]
    fwd += [shift(q, 1), q + succ(last), q[:-1] + succ(last) * 2]
    rev = [q[::-1], shift(q, -1)] + [run(first, k)[::-1] for k in range(2, n + 2)]
    rev += [q[:-1] + succ(last, -1)]
    out = [(s, "repetition") for s in rep] + [(s, "forward") for s in fwd]
    out += [(s, "reverse") for s in rev]
    return out


def gen_candidates(problem: AnalogyProblem, rng: np.random.Generator,
                   curated: list[str] | None = None, size: int = N_CANDIDATES) -> CandidateSet:
    """Curated answers first, then query-derived families, then random fill.

    Curated strings (participant answers) are always kept; the structured
    families are interleaved so each one is represented before the set fills.
    """
    q = problem.query
    chosen: dict[str, str] = {}
    for c in curated or []:
        chosen.setdefault(check_letters(c), "curated")
    if problem.candidates:
        for c in problem.candidates:
            chosen.setdefault(c, "curated")
    if len(chosen) > size:
        raise ValueError(f"{len(chosen)} curated candidates exceed the set size {size}")

    by_family: dict[str, list[str]] = {"repetition": [], "forward": [], "reverse": []}
    for s, fam in _families(q):
        if s not in by_family[fam]:
            by_family[fam].append(s)
    queues = [list(v) for v in by_family.values()]
    names = list(by_family)
    while len(chosen) < size and any(queues):
        for name, qu in zip(names, queues):
            while qu and qu[0] in chosen:
                qu.pop(0)
            if qu and len(chosen) < size:
                chosen[qu.pop(0)] = name
    while len(chosen) < size:
        s = _random_string(rng, int(rng.integers(1, len(q) + 3)))
        chosen.setdefault(s, "random")
    return CandidateSet(q, list(chosen), list(chosen.values()))
