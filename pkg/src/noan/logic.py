"""Propositional IR for letter-string analogies.

Letters are propositional variables; a string is the conjunction of its
letters and an analogy ``a:b`` becomes the implication ``a -> b``, which is
immediately rewritten as ``!a | b`` and pushed into negation normal form.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Mapping, Union

ALPHABET = string.ascii_uppercase


class ParseError(ValueError):
    """Raised for malformed problem text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(KeyError):
    pass


def check_letters(s: str) -> str:
    if not s:
        raise ValueError("letter string must be non-empty")
    for i, ch in enumerate(s):
        if ch not in ALPHABET:
            raise ValueError(f"invalid letter {ch!r} at index {i} in {s!r}")
    return s


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    letter: str

    def __post_init__(self):
        if len(self.letter) != 1 or self.letter not in ALPHABET:
            raise ValueError(f"variable must be a single letter A-Z, got {self.letter!r}")


@dataclass(frozen=True)
class Not:
    child: "Expression"


@dataclass(frozen=True)
class And:
    children: tuple["Expression", ...]

    def __init__(self, *children: "Expression"):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise ValueError("And needs at least two children")
        object.__setattr__(self, "children", tuple(children))


@dataclass(frozen=True)
class Or:
    children: tuple["Expression", ...]

    def __init__(self, *children: "Expression"):
        if len(children) == 1 and isinstance(children[0], (list, tuple)):
            children = tuple(children[0])
        if len(children) < 2:
            raise ValueError("Or needs at least two children")
        object.__setattr__(self, "children", tuple(children))


Expression = Union[Var, Not, And, Or]


def conjunction_of(s: str) -> Expression:
    """``"ABC"`` -> ``And(A, B, C)``; repeated letters are kept in order."""
    check_letters(s)
    if len(s) == 1:
        return Var(s)
    return And(*(Var(ch) for ch in s))


def implication_expr(lhs: str, rhs: str) -> Expression:
    """Material implication ``lhs -> rhs`` as ``Or(Not(lhs), rhs)`` (not normalized)."""
    return Or(Not(conjunction_of(lhs)), conjunction_of(rhs))


def to_nnf(e: Expression) -> Expression:
    """Push negations down to the variables with De Morgan's laws.

    Child order is preserved and nested connectives are not flattened.
    """
    return _nnf(e, negate=False)


def _nnf(e: Expression, negate: bool) -> Expression:
    if isinstance(e, Var):
        return Not(e) if negate else e
    if isinstance(e, Not):
        return _nnf(e.child, not negate)
    children = tuple(_nnf(c, negate) for c in e.children)
    if isinstance(e, And):
        return Or(*children) if negate else And(*children)
    if isinstance(e, Or):
        return And(*children) if negate else Or(*children)
    raise TypeError(f"not an expression: {e!r}")


def is_nnf(e: Expression) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Not):
        return isinstance(e.child, Var)
    return all(is_nnf(c) for c in e.children)


def variables(e: Expression) -> set[str]:
    if isinstance(e, Var):
        return {e.letter}
    if isinstance(e, Not):
        return variables(e.child)
    out: set[str] = set()
    for c in e.children:
        out |= variables(c)
    return out


def eval_boolean(e: Expression, assignment: Mapping[str, bool]) -> bool:
    if isinstance(e, Var):
        try:
            return bool(assignment[e.letter])
        except KeyError:
            raise EvaluationError(f"no value assigned to variable {e.letter}") from None
    if isinstance(e, Not):
        return not eval_boolean(e.child, assignment)
    # evaluate every child so a missing variable is reported even when short-circuiting
    values = [eval_boolean(c, assignment) for c in e.children]
    if isinstance(e, And):
        return all(values)
    return any(values)


def render(e: Expression) -> str:
    """Plain-text form: ``&``, ``|`` and ``!`` for AND, OR and NOT."""
    if isinstance(e, Var):
        return e.letter
    if isinstance(e, Not):
        inner = render(e.child)
        return f"!{inner}" if isinstance(e.child, (Var, Not)) else f"!({inner})"
    sep = " & " if isinstance(e, And) else " | "
    parts = []
    for c in e.children:
        s = render(c)
        parts.append(f"({s})" if isinstance(c, (And, Or)) else s)
    return sep.join(parts)


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalogyProblem:
    initial: str
    modified: str
    query: str
    candidates: tuple[str, ...] | None = None

    def __post_init__(self):
        for s in (self.initial, self.modified, self.query):
            check_letters(s)
        if self.candidates is not None:
            seen = dict.fromkeys(check_letters(c) for c in self.candidates)
            object.__setattr__(self, "candidates", tuple(seen))

    def render(self) -> str:
        answer = self.candidates[0] if self.candidates and len(self.candidates) == 1 else "?"
        return f"{self.initial}:{self.modified}::{self.query}:{answer}"

    def __str__(self) -> str:
        return self.render()


_SEGMENT = re.compile(r"[A-Z]+")


def parse_problem(text: str) -> AnalogyProblem:
    """Parse ``S1:S2::S3:?`` or ``S1:S2::S3:S4``.

    A fourth string is kept as the single candidate.
    """
    raw = text
    text = text.strip()
    offset = len(raw) - len(raw.lstrip())
    if "::" not in text:
        raise ParseError("expected '::' between the two halves", offset + len(text))
    if text.count("::") != 1:
        second = text.index("::", text.index("::") + 2)
        raise ParseError("more than one '::' separator", offset + second)
    cut = text.index("::")
    left, right = text[:cut], text[cut + 2 :]
    segments: list[tuple[str, int]] = []
    for half, base in ((left, 0), (right, cut + 2)):
        parts = half.split(":")
        if len(parts) != 2:
            raise ParseError(f"expected exactly one ':' in {half!r}", offset + base)
        pos = base
        for part in parts:
            segments.append((part, pos))
            pos += len(part) + 1
    values = []
    for i, (seg, pos) in enumerate(segments):
        if i == 3 and seg == "?":
            values.append(None)
            continue
        if not seg:
            raise ParseError("empty segment", offset + pos)
        m = _SEGMENT.fullmatch(seg)
        if m is None:
            bad = next(j for j, ch in enumerate(seg) if ch not in ALPHABET)
            raise ParseError(f"invalid character {seg[bad]!r}", offset + pos + bad)
        values.append(seg)
    s1, s2, s3, s4 = values
    return AnalogyProblem(s1, s2, s3, None if s4 is None else (s4,))
