"""Input checks shared by the estimators."""

from __future__ import annotations

from typing import Sequence

from .grammar import Grammar, load_minij
from .syntax import ParseTree, parse


class GrammarMismatch(ValueError):
    """A checkpoint was trained against a different grammar."""


def resolve_grammar(g: Grammar | None) -> Grammar:
    return load_minij() if g is None else g


def as_tree(x, g: Grammar, start: str | None = None) -> ParseTree:
    if isinstance(x, ParseTree):
        return x
    if isinstance(x, (str, list, tuple)):
        return parse(x, g, start=start)
    raise TypeError(f"expected a ParseTree or source fragment, got {type(x).__name__}")


def check_trees(X, g: Grammar) -> list[ParseTree]:
    if isinstance(X, (str, ParseTree)):
        raise TypeError("expected a sequence of fragments, got a single fragment")
    return [as_tree(x, g) for x in X]


def check_pairs(X, y, g: Grammar) -> tuple[list[ParseTree], list[ParseTree]]:
    X = check_trees(X, g)
    if y is None:
        raise ValueError("y (edited fragments) is required for fitting")
    if len(X) != len(y):
        raise ValueError(f"X and y have different lengths: {len(X)} != {len(y)}")
    ys = []
    for t_p, t_n in zip(X, y):
        ys.append(as_tree(t_n, g, start=t_p.symbol))
    for t_p, t_n in zip(X, ys):
        if t_p.symbol != t_n.symbol:
            raise ValueError(f"root mismatch: {t_p.symbol} vs {t_n.symbol}")
    return X, ys


def check_grammar_hash(expected: str, g: Grammar) -> None:
    if expected != g.source_hash:
        raise GrammarMismatch(
            f"grammar hash mismatch: checkpoint {expected[:12]}..., grammar {g.source_hash[:12]}..."
        )


def check_positive_int(name: str, value) -> int:
    if not isinstance(value, (int,)) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return value


def rule_ids_valid(rs: Sequence[int], g: Grammar) -> None:
    for r in rs:
        if not 0 <= r < len(g.productions):
            raise ValueError(f"unknown rule id {r}")
