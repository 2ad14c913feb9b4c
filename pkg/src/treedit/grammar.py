"""Closed context-free grammars with rule and token masks.

A grammar file lists terminal declarations followed by productions::

    start Stmts
    terminal VAR
    terminal SC = ";"
    Stmt -> Expr SC

Value-bearing terminal types (``VAR``, ``METHOD``, ``TYPE``, ``INT_LIT``,
``BOOL_LIT``) are declared without a lexeme. Every other terminal carries a
fixed lexeme; the empty lexeme ``""`` encodes epsilon.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable

UNKNOWN = "<unknown>"

VALUE_BEARING = ("VAR", "METHOD", "TYPE", "INT_LIT", "BOOL_LIT")
IDENTIFIER_KINDS = ("VAR", "METHOD", "TYPE")
BOOL_VALUES = ("false", "true")

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_INT_RE = re.compile(r"[0-9]+\Z")


class GrammarError(ValueError):
    """Raised for malformed grammar files or queries on undeclared symbols."""


class TerminalKind(enum.Enum):
    VALUE_BEARING = "value"
    FIXED_LEXEME = "fixed"


@dataclass(frozen=True)
class TerminalType:
    name: str
    kind: TerminalKind
    fixed_lexeme: str | None = None

    def __post_init__(self):
        if (self.kind is TerminalKind.FIXED_LEXEME) != (self.fixed_lexeme is not None):
            raise GrammarError(f"terminal {self.name}: lexeme must be present iff fixed")

    @property
    def is_fixed(self) -> bool:
        return self.kind is TerminalKind.FIXED_LEXEME

    @property
    def is_empty(self) -> bool:
        return self.fixed_lexeme == ""


@dataclass(frozen=True)
class Production:
    id: int
    lhs: str
    rhs: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.lhs} -> {' '.join(self.rhs)}"


@dataclass(frozen=True)
class ScopeInfo:
    """Identifier tokens visible at an edit site, by terminal kind."""

    vars: frozenset[str] = frozenset()
    methods: frozenset[str] = frozenset()
    types: frozenset[str] = frozenset()

    def for_kind(self, kind: str) -> frozenset[str]:
        return {"VAR": self.vars, "METHOD": self.methods, "TYPE": self.types}.get(
            kind, frozenset()
        )


@dataclass
class Grammar:
    nonterminals: tuple[str, ...]
    terminal_types: dict[str, TerminalType]
    productions: tuple[Production, ...]
    start_symbol: str
    source_hash: str = ""
    _by_lhs: dict[str, tuple[Production, ...]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        by_lhs: dict[str, list[Production]] = {n: [] for n in self.nonterminals}
        for p in self.productions:
            by_lhs.setdefault(p.lhs, []).append(p)
        self._by_lhs = {n: tuple(ps) for n, ps in by_lhs.items()}
        self._validate()

    def _validate(self):
        nts = set(self.nonterminals)
        if self.start_symbol not in nts:
            raise GrammarError(f"start symbol {self.start_symbol!r} has no productions")
        for i, p in enumerate(self.productions):
            if p.id != i:
                raise GrammarError(f"production {p} has id {p.id}, expected {i}")
            if not p.rhs:
                raise GrammarError(f"empty right-hand side in production {i}")
            for sym in p.rhs:
                if sym not in nts and sym not in self.terminal_types:
                    raise GrammarError(f"undeclared symbol {sym!r} in production {i}: {p}")
        for n in self.nonterminals:
            if not self._by_lhs.get(n):
                raise GrammarError(f"nonterminal {n!r} has no productions")
        reachable = {self.start_symbol}
        stack = [self.start_symbol]
        while stack:
            for p in self._by_lhs[stack.pop()]:
                for sym in p.rhs:
                    if sym in nts and sym not in reachable:
                        reachable.add(sym)
                        stack.append(sym)
        unreachable = [n for n in self.nonterminals if n not in reachable]
        if unreachable:
            raise GrammarError(f"unreachable nonterminal(s): {', '.join(unreachable)}")
        self._check_productive()

    def _check_productive(self):
        productive: set[str] = set()
        changed = True
        while changed:
            changed = False
            for p in self.productions:
                if p.lhs in productive:
                    continue
                if all(s in self.terminal_types or s in productive for s in p.rhs):
                    productive.add(p.lhs)
                    changed = True
        dead = [n for n in self.nonterminals if n not in productive]
        if dead:
            raise GrammarError(f"nonterminal(s) derive no finite tree: {', '.join(dead)}")

    # -- queries ---------------------------------------------------------

    def is_nonterminal(self, sym: str) -> bool:
        return sym in self._by_lhs

    def is_terminal(self, sym: str) -> bool:
        return sym in self.terminal_types

    def rules_for(self, n: str) -> tuple[Production, ...]:
        try:
            return self._by_lhs[n]
        except KeyError:
            raise GrammarError(f"unknown nonterminal {n!r}") from None

    def rule_ids_for(self, n: str) -> tuple[int, ...]:
        return tuple(p.id for p in self.rules_for(n))

    def terminal(self, name: str) -> TerminalType:
        try:
            return self.terminal_types[name]
        except KeyError:
            raise GrammarError(f"unknown terminal type {name!r}") from None

    @cached_property
    def fixed_lexemes(self) -> dict[str, str]:
        """Map lexeme -> terminal name for non-empty fixed lexemes."""
        return {
            t.fixed_lexeme: t.name
            for t in self.terminal_types.values()
            if t.is_fixed and not t.is_empty
        }

    @cached_property
    def keywords(self) -> frozenset[str]:
        words = {lx for lx in self.fixed_lexemes if _IDENT_RE.match(lx)}
        if "BOOL_LIT" in self.terminal_types:
            words.update(BOOL_VALUES)
        return frozenset(words)

    def accepts_lexeme(self, ttype: str, token: str) -> bool:
        """Whether ``token`` is lexically valid for a slot of type ``ttype``."""
        t = self.terminal(ttype)
        if t.is_fixed:
            return token == t.fixed_lexeme
        if ttype == "BOOL_LIT":
            return token in BOOL_VALUES
        if ttype == "INT_LIT":
            return bool(_INT_RE.match(token))
        return bool(_IDENT_RE.match(token)) and token not in self.keywords

    def __len__(self) -> int:
        return len(self.productions)


def rules_for(g: Grammar, n: str) -> tuple[Production, ...]:
    return g.rules_for(n)


def tokens_for(g: Grammar, t: str, scope: ScopeInfo | None = None, vocab=None) -> frozenset[str]:
    """Allowed tokens for a terminal slot of type ``t``.

    ``vocab`` is any container of known token strings exposing
    ``tokens_of_kind(kind)``; without one, identifier kinds are limited by
    scope alone and integer literals fall back to ``<unknown>``.
    """
    tt = g.terminal(t)
    if tt.is_fixed:
        return frozenset({tt.fixed_lexeme})
    if t == "BOOL_LIT":
        return frozenset(BOOL_VALUES)
    if t == "INT_LIT":
        ints = frozenset(vocab.tokens_of_kind("INT_LIT")) if vocab is not None else frozenset()
        return ints or frozenset({UNKNOWN})
    in_scope = scope.for_kind(t) if scope is not None else frozenset()
    if vocab is not None:
        in_scope = in_scope & frozenset(vocab.tokens_of_kind(t))
    return in_scope | {UNKNOWN}


# -- loading ---------------------------------------------------------------

_TERMINAL_RE = re.compile(r'terminal\s+([A-Za-z_][A-Za-z0-9_]*)\s*(?:=\s*"((?:[^"\\]|\\.)*)")?\s*\Z')
_PROD_RE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*->\s*(.*)\Z")


def _strip_comment(line: str) -> str:
    quoted = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            quoted = not quoted
        elif ch == "#" and not quoted:
            return line[:i]
    return line


def parse_grammar_text(text: str) -> Grammar:
    terminals: dict[str, TerminalType] = {}
    raw_prods: list[tuple[str, tuple[str, ...]]] = []
    start = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("start "):
            start = line.split(None, 1)[1].strip()
            continue
        m = _TERMINAL_RE.match(line)
        if m:
            if raw_prods:
                raise GrammarError(f"line {lineno}: terminal declared after productions")
            name, lexeme = m.group(1), m.group(2)
            if name in terminals:
                raise GrammarError(f"line {lineno}: duplicate terminal declaration {name!r}")
            if lexeme is None:
                if name not in VALUE_BEARING:
                    raise GrammarError(
                        f"line {lineno}: terminal {name!r} needs a lexeme "
                        f"(value-bearing types are {', '.join(VALUE_BEARING)})"
                    )
                terminals[name] = TerminalType(name, TerminalKind.VALUE_BEARING)
            else:
                lexeme = bytes(lexeme, "utf-8").decode("unicode_escape")
                terminals[name] = TerminalType(name, TerminalKind.FIXED_LEXEME, lexeme)
            continue
        m = _PROD_RE.match(line)
        if not m:
            raise GrammarError(f"line {lineno}: cannot parse {raw.strip()!r}")
        lhs, rhs = m.group(1), tuple(m.group(2).split())
        if not rhs:
            raise GrammarError(f"line {lineno}: empty right-hand side for {lhs}")
        if lhs in terminals:
            raise GrammarError(f"line {lineno}: terminal {lhs!r} used as production head")
        raw_prods.append((lhs, rhs))
    if not raw_prods:
        raise GrammarError("grammar has no productions")
    nonterminals: list[str] = []
    for lhs, _ in raw_prods:
        if lhs not in nonterminals:
            nonterminals.append(lhs)
    productions = tuple(Production(i, lhs, rhs) for i, (lhs, rhs) in enumerate(raw_prods))
    digest = hashlib.sha256(
        "\n".join(
            [f"start {start or nonterminals[0]}"]
            + [f"terminal {t.name}={t.fixed_lexeme!r}" for t in terminals.values()]
            + [str(p) for p in productions]
        ).encode("utf-8")
    ).hexdigest()
    g = Grammar(
        nonterminals=tuple(nonterminals),
        terminal_types=terminals,
        productions=productions,
        start_symbol=start or nonterminals[0],
        source_hash=digest,
    )
    _check_left_recursion(g)
    return g


def _check_left_recursion(g: Grammar) -> None:
    # EMPTY-lexeme terminals match nothing, so they never block a left edge.
    def left_edge(p: Production) -> Iterable[str]:
        for sym in p.rhs:
            yield sym
            if not (g.is_terminal(sym) and g.terminal(sym).is_empty):
                break

    edges = {n: {s for p in g.rules_for(n) for s in left_edge(p) if g.is_nonterminal(s)} for n in g.nonterminals}
    for n in g.nonterminals:
        seen, stack = set(), list(edges[n])
        while stack:
            s = stack.pop()
            if s == n:
                raise GrammarError(f"left-recursive nonterminal {n!r}")
            if s not in seen:
                seen.add(s)
                stack.extend(edges[s])


def load_grammar(path: str | Path) -> Grammar:
    return parse_grammar_text(Path(path).read_text(encoding="utf-8"))


def minij_path() -> Path:
    return Path(str(resources.files("treedit") / "data" / "minij.grammar"))


def load_minij() -> Grammar:
    """The grammar shipped with the package."""
    return load_grammar(minij_path())
