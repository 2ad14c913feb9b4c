"""Parse trees and the maps between source text, rule sequences and tokens.

A parse tree is fully determined by its pre-order rule sequence plus the
left-to-right list of terminal tokens; :func:`tree_to_rules` and
:func:`rules_to_tree` are mutually inverse on valid input.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

from .grammar import Grammar, GrammarError

__all__ = [
    "AugToken",
    "Derivation",
    "DerivationError",
    "Incomplete",
    "Infeasible",
    "LexError",
    "ParseError",
    "ParseTree",
    "Surplus",
    "fill_tokens",
    "parse",
    "random_tree",
    "render",
    "rules_to_tree",
    "terminal_types",
    "tokenize",
    "tree_to_rules",
    "tree_to_tokens",
]


class LexError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at character {position}")
        self.position = position


class ParseError(ValueError):
    """No parse exists; ``position`` is the index of the offending token."""

    def __init__(self, message: str, position: int, frontier: str | None = None):
        super().__init__(message)
        self.position = position
        self.frontier = frontier


class DerivationError(ValueError):
    pass


class Infeasible(DerivationError):
    def __init__(self, step: int, expected: str, got: str):
        super().__init__(f"rule {step} has head {got!r} but frontier node is {expected!r}")
        self.step = step


class Incomplete(DerivationError):
    def __init__(self, open_symbols: Sequence[str]):
        super().__init__(f"rules exhausted with open frontier {list(open_symbols)}")
        self.open_symbols = tuple(open_symbols)


class Surplus(DerivationError):
    def __init__(self, remaining: int):
        super().__init__(f"{remaining} rule(s) left after the tree was complete")
        self.remaining = remaining


@dataclass(frozen=True)
class ParseTree:
    """A node; internal nodes carry the id of the production that expanded them."""

    symbol: str
    children: tuple["ParseTree", ...] = ()
    token: str | None = None
    rule: int | None = None

    @property
    def is_terminal(self) -> bool:
        return self.rule is None

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def preorder(self) -> Iterator["ParseTree"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list["ParseTree"]:
        return [n for n in self.preorder() if n.is_terminal]

    def subtree(self, path: Sequence[int]) -> "ParseTree":
        node = self
        for i in path:
            node = node.children[i]
        return node

    def replace(self, path: Sequence[int], new: "ParseTree") -> "ParseTree":
        if not path:
            return new
        i = path[0]
        kids = list(self.children)
        kids[i] = kids[i].replace(path[1:], new)
        return ParseTree(self.symbol, tuple(kids), self.token, self.rule)

    def __str__(self) -> str:
        if self.is_terminal:
            return self.symbol if self.token is None else f"{self.symbol}:{self.token!r}"
        return f"({self.symbol} {' '.join(str(c) for c in self.children)})"


class AugToken(NamedTuple):
    token: str
    type: str


# -- lexing ------------------------------------------------------------------

_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*|[0-9]+")


def tokenize(source: str, g: Grammar) -> list[str]:
    """Split ``source`` into lexemes: words, integers and the grammar's punctuation."""
    punct = sorted((lx for lx in g.fixed_lexemes if not _WORD_RE.fullmatch(lx)), key=len, reverse=True)
    out: list[str] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        m = _WORD_RE.match(source, i)
        if m:
            out.append(m.group())
            i = m.end()
            continue
        for lx in punct:
            if source.startswith(lx, i):
                out.append(lx)
                i += len(lx)
                break
        else:
            raise LexError(f"unexpected character {ch!r}", i)
    return out


# -- parsing -----------------------------------------------------------------


class _Parser:
    # Memoized all-parses top-down parser. The grammar is unambiguous and free
    # of left recursion, so each (symbol, position) has few analyses.

    def __init__(self, g: Grammar, tokens: Sequence[str]):
        self.g = g
        self.tokens = tokens
        self.memo: dict[tuple[str, int], list[tuple[ParseTree, int]]] = {}
        self.far = -1
        self.far_frontier: str | None = None
        self._stack: list[str] = []

    def fail(self, pos: int):
        if pos > self.far:
            self.far = pos
            self.far_frontier = self._stack[-1] if self._stack else None

    def symbol(self, sym: str, pos: int) -> list[tuple[ParseTree, int]]:
        g = self.g
        if g.is_terminal(sym):
            t = g.terminal(sym)
            if t.is_empty:
                return [(ParseTree(sym, token=""), pos)]
            if pos < len(self.tokens) and g.accepts_lexeme(sym, self.tokens[pos]):
                return [(ParseTree(sym, token=self.tokens[pos]), pos + 1)]
            self.fail(pos)
            return []
        key = (sym, pos)
        if key in self.memo:
            return self.memo[key]
        self._stack.append(sym)
        results: list[tuple[ParseTree, int]] = []
        for prod in g.rules_for(sym):
            partial: list[tuple[tuple[ParseTree, ...], int]] = [((), pos)]
            for rsym in prod.rhs:
                nxt = []
                for kids, p in partial:
                    for child, q in self.symbol(rsym, p):
                        nxt.append((kids + (child,), q))
                partial = nxt
                if not partial:
                    break
            results.extend((ParseTree(sym, kids, rule=prod.id), p) for kids, p in partial)
        self._stack.pop()
        self.memo[key] = results
        return results


def parse(source: str | Sequence[str], g: Grammar, start: str | None = None) -> ParseTree:
    """Parse a fragment (string or token list) rooted at ``start``."""
    tokens = tokenize(source, g) if isinstance(source, str) else list(source)
    root = start or g.start_symbol
    if not g.is_nonterminal(root):
        raise GrammarError(f"unknown nonterminal {root!r}")
    p = _Parser(g, tokens)
    complete = [t for t, end in p.symbol(root, 0) if end == len(tokens)]
    if len(complete) == 1:
        return complete[0]
    if complete:
        raise ParseError(f"ambiguous input: {len(complete)} parses", 0, root)
    pos = max(p.far, 0)
    if pos >= len(tokens):
        raise ParseError("unexpected end of input", len(tokens), p.far_frontier)
    raise ParseError(
        f"no rule applies at token {pos} ({tokens[pos]!r}) while parsing {p.far_frontier}",
        pos,
        p.far_frontier,
    )


# -- rule sequences ------------------------------------------------------------


def tree_to_rules(t: ParseTree) -> list[int]:
    """Pre-order production ids of the internal nodes."""
    return [n.rule for n in t.preorder() if not n.is_terminal]


class Derivation:
    """Incremental frontier-node expansion.

    The pending stack holds unexpanded nonterminals with the frontier node on
    top; terminals are recorded but never pushed.
    """

    def __init__(self, g: Grammar, root: str):
        self.g = g
        self.root = root
        self.steps = 0
        self._root_node = [root, [], None, None]
        self._pending = [self._root_node]

    @property
    def frontier(self) -> str | None:
        return self._pending[-1][0] if self._pending else None

    @property
    def done(self) -> bool:
        return not self._pending

    def apply(self, rule_id: int) -> None:
        self.steps += 1
        if not self._pending:
            raise Surplus(1)
        prod = self.g.productions[rule_id]
        node = self._pending.pop()
        if prod.lhs != node[0]:
            self._pending.append(node)
            raise Infeasible(self.steps, node[0], prod.lhs)
        node[3] = rule_id
        kids = [[sym, [], None, None] for sym in prod.rhs]
        node[1] = kids
        for kid in reversed(kids):
            if self.g.is_nonterminal(kid[0]):
                self._pending.append(kid)

    def pending_symbols(self) -> list[str]:
        return [n[0] for n in reversed(self._pending)]

    def tree(self) -> ParseTree:
        if self._pending:
            raise Incomplete(self.pending_symbols())

        def freeze(n) -> ParseTree:
            sym, kids, tok, rule = n
            return ParseTree(sym, tuple(freeze(k) for k in kids), tok, rule)

        return freeze(self._root_node)


def rules_to_tree(rs: Sequence[int], g: Grammar, root: str | None = None) -> ParseTree:
    """Replay ``rs`` from ``root`` (default: head of the first rule, else the start symbol).

    Returns a skeleton whose terminals carry types but no tokens.
    """
    if root is None:
        root = g.productions[rs[0]].lhs if len(rs) else g.start_symbol
    d = Derivation(g, root)
    for k, rid in enumerate(rs):
        if d.done:
            raise Surplus(len(rs) - k)
        if not 0 <= rid < len(g.productions):
            raise Infeasible(k + 1, d.frontier, f"<rule {rid}>")
        d.apply(rid)
    return d.tree()


# -- tokens --------------------------------------------------------------------


def _slots(t: ParseTree, g: Grammar | None = None) -> list[ParseTree]:
    # EMPTY terminals carry no lexeme; with a grammar we detect them by type.
    out = []
    for leaf in t.leaves():
        if g is not None:
            if g.terminal(leaf.symbol).is_empty:
                continue
        elif leaf.token == "":
            continue
        out.append(leaf)
    return out


def tree_to_tokens(t: ParseTree) -> list[AugToken]:
    toks = []
    for leaf in t.leaves():
        if leaf.token is None:
            raise ValueError(f"unfilled terminal {leaf.symbol}")
        if leaf.token != "":
            toks.append(AugToken(leaf.token, leaf.symbol))
    return toks


def terminal_types(skeleton: ParseTree, g: Grammar) -> list[str]:
    """Types of the token-bearing terminal slots, left to right."""
    return [leaf.symbol for leaf in _slots(skeleton, g)]


def fill_tokens(skeleton: ParseTree, tokens: Sequence[str], g: Grammar) -> ParseTree:
    """Place ``tokens`` into the non-EMPTY terminal slots of ``skeleton``."""
    it = iter(tokens)

    def fill(n: ParseTree) -> ParseTree:
        if n.is_terminal:
            if g.terminal(n.symbol).is_empty:
                return ParseTree(n.symbol, token="")
            try:
                return ParseTree(n.symbol, token=next(it))
            except StopIteration:
                raise ValueError("too few tokens for skeleton") from None
        return ParseTree(n.symbol, tuple(fill(c) for c in n.children), None, n.rule)

    out = fill(skeleton)
    if next(it, None) is not None:
        raise ValueError("too many tokens for skeleton")
    return out


def render(t: ParseTree) -> str:
    """Canonical single-space-joined source text."""
    parts = []
    for leaf in t.leaves():
        if leaf.token is None:
            raise ValueError(f"cannot render unfilled terminal {leaf.symbol}")
        if leaf.token:
            parts.append(leaf.token)
    return " ".join(parts)


# -- random derivations (testing and corpus tooling) ---------------------------

_NAMES = {
    "VAR": ("a", "b", "x", "obj", "this", "super", "count"),
    "METHOD": ("get", "equals", "size", "put"),
    "TYPE": ("int", "Object", "String"),
    "INT_LIT": ("0", "1", "42"),
    "BOOL_LIT": ("true", "false"),
}


def _min_depths(g: Grammar) -> dict[str, int]:
    depth = {n: float("inf") for n in g.nonterminals}
    changed = True
    while changed:
        changed = False
        for p in g.productions:
            d = 1 + max((depth[s] if g.is_nonterminal(s) else 0) for s in p.rhs)
            if d < depth[p.lhs]:
                depth[p.lhs] = d
                changed = True
    return depth


def random_tree(
    g: Grammar,
    rng: random.Random,
    max_depth: int = 12,
    root: str | None = None,
    names: dict[str, Sequence[str]] | None = None,
) -> ParseTree:
    """Sample a complete, token-filled derivation no deeper than ``max_depth``."""
    names = names or _NAMES
    mins = _min_depths(g)
    root = root or g.start_symbol
    if mins[root] > max_depth:
        raise GrammarError(f"{root} cannot be derived within depth {max_depth}")

    def grow(sym: str, budget: int) -> ParseTree:
        if g.is_terminal(sym):
            t = g.terminal(sym)
            return ParseTree(sym, token=t.fixed_lexeme if t.is_fixed else rng.choice(names[sym]))
        options = [
            p for p in g.rules_for(sym)
            if all(not g.is_nonterminal(s) or mins[s] <= budget - 1 for s in p.rhs)
        ]
        prod = rng.choice(options)
        return ParseTree(sym, tuple(grow(s, budget - 1) for s in prod.rhs), rule=prod.id)

    return grow(root, max_depth)
