"""Synthetic patch corpora built from edit templates with random identifiers."""

from __future__ import annotations

import random
from typing import Callable, Sequence

from .editmine import PatchRecord

VAR_NAMES = (
    "obj", "other", "value", "item", "key", "count", "index", "name", "node", "list",
    "map", "result", "target", "source", "left", "right", "first", "last", "data", "buffer",
    "size", "total", "entry", "parent", "child", "input", "output", "state", "config", "context",
    "request", "response", "message", "event", "handler", "listener", "builder", "reader", "writer", "stream",
)
METHOD_NAMES = ("add", "put", "set", "push", "offer", "append", "insert", "register", "write", "send")
CALL_NAMES = ("get", "find", "load", "read", "lookup", "fetch", "resolve", "parse")
TYPE_NAMES = ("int", "Object", "String", "Node", "List", "Map")


def _zipf_choice(rng: random.Random, names, exclude=()):
    pool = [n for n in names if n not in exclude]
    weights = [1.0 / (r + 1) for r in range(len(pool))]
    return rng.choices(pool, weights)[0]


def _vars(rng, names, k):
    out = []
    for _ in range(k):
        out.append(_zipf_choice(rng, names, out))
    return out


def _equals(rng, names):
    x, y = _vars(rng, names, 2)
    return f"return {x} . equals ( {y} ) ;", f"return {x} == {y} ;"


def _add_flag(rng, names):
    x, y = _vars(rng, names, 2)
    m = _zipf_choice(rng, METHOD_NAMES)
    return f"{x} . {m} ( {y} ) ;", f"{x} . {m} ( {y} , true ) ;"


def _relax_bound(rng, names):
    x, y = _vars(rng, names, 2)
    return f"return {x} < {y} ;", f"return {x} <= {y} ;"


def _swap_call(rng, names):
    x, y = _vars(rng, names, 2)
    m = _zipf_choice(rng, CALL_NAMES)
    return f"return {x} . {m} ( {y} ) ;", f"return {y} . {m} ( {x} ) ;"


def _swap_minus(rng, names):
    x, y, z = _vars(rng, names, 3)
    return f"{x} = {y} - {z} ;", f"{x} = {z} - {y} ;"


def _pass_target(rng, names):
    x, y = _vars(rng, names, 2)
    m = _zipf_choice(rng, CALL_NAMES)
    return f"{x} = {y} . {m} ( ) ;", f"{x} = {y} . {m} ( {x} ) ;"


TEMPLATES: dict[str, Callable[[random.Random, Sequence[str]], tuple[str, str]]] = {
    "equals_to_eq": _equals,
    "add_flag_arg": _add_flag,
    "relax_bound": _relax_bound,
    "swap_call": _swap_call,
    "swap_minus": _swap_minus,
    "pass_target": _pass_target,
}


def generate_corpus(
    n: int,
    seed: int = 0,
    n_projects: int = 5,
    templates: dict[str, Callable] | None = None,
    prefix_prob: float = 0.0,
    n_names: int = 20,
) -> list[PatchRecord]:
    """``n`` distinct patch records, round-robin over templates, increasing timestamps.

    With ``prefix_prob`` > 0 some fragments start with an unchanged
    declaration, which varies the extracted context. Variables are drawn
    Zipf-style from the first ``n_names`` entries of ``VAR_NAMES``.
    """
    if not 3 <= n_names <= len(VAR_NAMES):
        raise ValueError(f"n_names must be in [3, {len(VAR_NAMES)}]")
    names = VAR_NAMES[:n_names]
    rng = random.Random(seed)
    templates = templates or TEMPLATES
    makers = list(templates.values())
    seen = set()
    records = []
    t = 1_600_000_000
    while len(records) < n:
        before, after = makers[len(records) % len(makers)](rng, names)
        if rng.random() < prefix_prob:
            ty = _zipf_choice(rng, TYPE_NAMES)
            v, w = _vars(rng, names, 2)
            head = f"{ty} {v} = {w} ; "
            before, after = head + before, head + after
        if (before, after) in seen:
            continue
        seen.add((before, after))
        t += rng.randint(60, 86_400)
        records.append(PatchRecord(f"project{rng.randrange(n_projects)}", t, before, after))
    return records
