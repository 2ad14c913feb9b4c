"""Mining bounded edit pairs from before/after fragments.

Changed tokens are found by an LCS alignment of the two token sequences and
lifted to parse-tree leaves. The lowest common ancestor of the changed leaves
is the changed subtree; context is added by climbing ancestors while the
subtree stays within ``max_tree_size`` nodes.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .grammar import Grammar
from .syntax import (
    AugToken,
    LexError,
    ParseError,
    ParseTree,
    fill_tokens,
    parse,
    rules_to_tree,
    tree_to_rules,
    tree_to_tokens,
)

logger = logging.getLogger(__name__)

LITERAL_TYPES = frozenset({"INT_LIT", "BOOL_LIT"})


class EmptyChange(ValueError):
    pass


class ChangeTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PatchRecord:
    project: str
    timestamp: int
    before: str
    after: str

    @classmethod
    def from_json(cls, line: str | dict) -> "PatchRecord":
        d = json.loads(line) if isinstance(line, str) else line
        return cls(str(d["project"]), int(d["timestamp"]), d["before"], d["after"])

    def to_json(self) -> str:
        return json.dumps(
            {"project": self.project, "timestamp": self.timestamp, "before": self.before, "after": self.after},
            sort_keys=True,
        )


@dataclass(frozen=True)
class ExtractionConfig:
    max_change_size: int = 10
    max_tree_size: int = 20

    def __post_init__(self):
        if not 1 <= self.max_change_size <= self.max_tree_size:
            raise ValueError("need 1 <= max_change_size <= max_tree_size")


@dataclass(frozen=True)
class EditPair:
    t_p: ParseTree
    t_n: ParseTree
    change_size: int
    tree_size: int
    project: str = ""
    timestamp: int = 0

    @property
    def src_tokens(self) -> list[AugToken]:
        return tree_to_tokens(self.t_p)

    @property
    def tgt_tokens(self) -> list[AugToken]:
        return tree_to_tokens(self.t_n)

    def key(self) -> tuple:
        """Canonical identity used for de-duplication."""
        return (
            self.t_p.symbol,
            tuple(t for t, _ in self.src_tokens),
            tuple(t for t, _ in self.tgt_tokens),
        )

    def to_dict(self) -> dict:
        return {
            "project": self.project,
            "timestamp": self.timestamp,
            "root": self.t_p.symbol,
            "src_rules": tree_to_rules(self.t_p),
            "src_tokens": [list(a) for a in self.src_tokens],
            "tgt_rules": tree_to_rules(self.t_n),
            "tgt_tokens": [list(a) for a in self.tgt_tokens],
            "change_size": self.change_size,
            "tree_size": self.tree_size,
        }

    @classmethod
    def from_dict(cls, d: dict, g: Grammar) -> "EditPair":
        def build(rules, toks):
            return fill_tokens(rules_to_tree(rules, g, d["root"]), [t for t, _ in toks], g)

        return cls(
            build(d["src_rules"], d["src_tokens"]),
            build(d["tgt_rules"], d["tgt_tokens"]),
            int(d["change_size"]),
            int(d["tree_size"]),
            d.get("project", ""),
            int(d.get("timestamp", 0)),
        )


# -- alignment -------------------------------------------------------------------


class EditScript(NamedTuple):
    kept: list[tuple[int, int]]
    deleted: list[int]
    inserted: list[int]

    def __len__(self) -> int:
        return len(self.deleted) + len(self.inserted)


def align_tokens(a: Sequence[str], b: Sequence[str]) -> EditScript:
    """Minimal insert/delete script from a longest common subsequence.

    Among optimal alignments the earliest match in ``a`` is preferred.
    """
    n, m = len(a), len(b)
    # suffix table: L[i][j] = LCS(a[i:], b[j:])
    L = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, nxt = L[i], L[i + 1]
        for j in range(m - 1, -1, -1):
            row[j] = nxt[j + 1] + 1 if a[i] == b[j] else max(nxt[j], row[j + 1])
    kept, deleted, inserted = [], [], []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j] and L[i][j] == L[i + 1][j + 1] + 1:
            kept.append((i, j))
            i += 1
            j += 1
        elif L[i][j + 1] >= L[i + 1][j]:
            inserted.append(j)
            j += 1
        else:
            deleted.append(i)
            i += 1
    deleted.extend(range(i, n))
    inserted.extend(range(j, m))
    return EditScript(kept, deleted, inserted)


# -- tree regions -------------------------------------------------------------------


def leaf_paths(t: ParseTree) -> list[tuple[int, ...]]:
    """Paths of token-bearing leaves, left to right."""
    out = []

    def walk(node, path):
        if node.is_terminal:
            if node.token != "":
                out.append(path)
            return
        for i, c in enumerate(node.children):
            walk(c, path + (i,))

    walk(t, ())
    return out


def _common_prefix(paths: Iterable[tuple[int, ...]]) -> tuple[int, ...]:
    paths = list(paths)
    first = paths[0]
    k = len(first)
    for p in paths[1:]:
        k = min(k, len(p))
        for d in range(k):
            if p[d] != first[d]:
                k = d
                break
    return first[:k]


def changed_subtree(t: ParseTree, changed_leaf_indices: Iterable[int]) -> tuple[int, ...]:
    """Path to the lowest internal node covering every changed leaf."""
    idx = sorted(set(changed_leaf_indices))
    if not idx:
        raise EmptyChange("no changed leaves")
    paths = leaf_paths(t)
    for i in idx:
        if not 0 <= i < len(paths):
            raise IndexError(f"leaf index {i} out of range ({len(paths)} leaves)")
    lca = _common_prefix(paths[i] for i in idx)
    if t.subtree(lca).is_terminal:
        lca = lca[:-1]
    return lca


def expand_context(t: ParseTree, changed_root: tuple[int, ...], cfg: ExtractionConfig) -> tuple[int, ...]:
    """Path to the highest ancestor of ``changed_root`` within ``max_tree_size`` nodes."""
    size = t.subtree(changed_root).size()
    if size > cfg.max_change_size or size > cfg.max_tree_size:
        raise ChangeTooLarge(f"changed subtree has {size} nodes (limit {cfg.max_change_size})")
    path = changed_root
    while path and t.subtree(path[:-1]).size() <= cfg.max_tree_size:
        path = path[:-1]
    return path


def _token_span(t: ParseTree, path: tuple[int, ...]) -> tuple[int, int]:
    paths = leaf_paths(t)
    inside = [k for k, p in enumerate(paths) if p[: len(path)] == path]
    if not inside:
        # region holding only EMPTY leaves: locate by the next token-bearing leaf
        start = next((k for k, p in enumerate(paths) if p > path), len(paths))
        return start, start
    return inside[0], inside[-1] + 1


def _neighbours(script: EditScript, side: int, other_changed: list[int]) -> list[int]:
    # Kept tokens on ``side`` that bracket an insertion/deletion made only on the other side.
    lo, hi = min(other_changed), max(other_changed)
    left = [pair[side] for pair in script.kept if pair[1 - side] < lo]
    right = [pair[side] for pair in script.kept if pair[1 - side] > hi]
    return ([left[-1]] if left else []) + ([right[0]] if right else [])


def _changed_root(t: ParseTree, changed: list[int]) -> tuple[int, ...]:
    if not changed:
        return ()
    return changed_subtree(t, changed)


def extract_pair(rec: PatchRecord, g: Grammar, cfg: ExtractionConfig) -> tuple[EditPair | None, str]:
    """One record to an edit pair, or ``(None, reason)`` when it is skipped."""
    try:
        before = parse(rec.before, g)
        after = parse(rec.after, g)
    except (ParseError, LexError):
        return None, "parse_error"
    a_aug, b_aug = tree_to_tokens(before), tree_to_tokens(after)
    a = [t for t, _ in a_aug]
    b = [t for t, _ in b_aug]
    if a == b:
        return None, "no_change"
    script = align_tokens(a, b)
    changed_types = [a_aug[i].type for i in script.deleted] + [b_aug[j].type for j in script.inserted]
    if all(ty in LITERAL_TYPES for ty in changed_types):
        return None, "literal_only"
    del_p = script.deleted or _neighbours(script, 0, script.inserted)
    ins_n = script.inserted or _neighbours(script, 1, script.deleted)
    root_p = _changed_root(before, del_p)
    root_n = _changed_root(after, ins_n)
    change_size = before.subtree(root_p).size()
    if max(change_size, after.subtree(root_n).size()) > cfg.max_change_size:
        return None, "change_too_large"
    try:
        ctx = expand_context(before, root_p, cfg)
    except ChangeTooLarge:
        return None, "change_too_large"
    # Try the widest context first; the same region must exist in the new tree.
    for depth in range(len(ctx), len(root_p) + 1):
        path = root_p[:depth]
        if root_n[: len(path)] != path:
            continue
        try:
            node_n = after.subtree(path)
        except IndexError:
            continue
        node_p = before.subtree(path)
        if node_n.symbol != node_p.symbol:
            continue
        s_p, e_p = _token_span(before, path)
        s_n, e_n = _token_span(after, path)
        if s_p != s_n or len(a) - e_p != len(b) - e_n:
            continue
        return EditPair(node_p, node_n, change_size, node_p.size(), rec.project, rec.timestamp), "ok"
    return None, "context_mismatch"


def _extract_chunk(args):
    recs, g, cfg = args
    return [extract_pair(r, g, cfg) for r in recs]


def extract_pairs(
    records: Sequence[PatchRecord],
    g: Grammar,
    cfg: ExtractionConfig | None = None,
    stats: Counter | None = None,
    n_jobs: int = 1,
) -> list[EditPair]:
    """Edit pairs for ``records`` in input order; skip reasons are tallied in ``stats``."""
    cfg = cfg or ExtractionConfig()
    stats = stats if stats is not None else Counter()
    records = list(records)
    if n_jobs > 1 and len(records) > 1:
        size = -(-len(records) // n_jobs)
        chunks = [(records[i : i + size], g, cfg) for i in range(0, len(records), size)]
        with ProcessPoolExecutor(n_jobs) as ex:
            results = [r for chunk in ex.map(_extract_chunk, chunks) for r in chunk]
    else:
        results = [extract_pair(r, g, cfg) for r in records]
    pairs = []
    stats["records"] += len(records)
    for pair, reason in results:
        stats[reason] += 1
        if pair is not None:
            pairs.append(pair)
    logger.info("extracted %d pairs from %d records: %s", len(pairs), len(records), dict(stats))
    return pairs


# -- splitting ---------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[EditPair] = field(default_factory=list)
    valid: list[EditPair] = field(default_factory=list)
    test: list[EditPair] = field(default_factory=list)
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    n_duplicates: int = 0

    def parts(self) -> dict[str, list[EditPair]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


def split_and_dedup(
    pairs: Sequence[EditPair], fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> DatasetSplit:
    """Per-project chronological split, then global de-duplication.

    Each project's pairs are ordered by timestamp, ties broken by content so
    the result does not depend on input order, and cut into train/valid/test
    by ``fractions``. Of pairs sharing a canonical
    key, only the chronologically earliest survives, wherever it landed.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    by_project: dict[str, list[int]] = {}
    for i, p in enumerate(pairs):
        by_project.setdefault(p.project, []).append(i)
    def order(i):
        return pairs[i].timestamp, pairs[i].key(), pairs[i].project, i

    where: dict[int, str] = {}
    for project in sorted(by_project):
        idx = sorted(by_project[project], key=order)
        n = len(idx)
        n_train = int(n * fractions[0] + 1e-9)
        n_valid = int(n * (fractions[0] + fractions[1]) + 1e-9) - n_train
        for rank, i in enumerate(idx):
            where[i] = "train" if rank < n_train else "valid" if rank < n_train + n_valid else "test"
    seen = set()
    dropped = set()
    for i in sorted(range(len(pairs)), key=order):
        key = pairs[i].key()
        if key in seen:
            dropped.add(i)
        seen.add(key)
    split = DatasetSplit(fractions=tuple(fractions), n_duplicates=len(dropped))
    parts = split.parts()
    for project in sorted(by_project):
        for i in sorted(by_project[project], key=order):
            if i not in dropped:
                parts[where[i]].append(pairs[i])
    return split


# -- files -----------------------------------------------------------------------------


def read_records(path: str | Path) -> list[PatchRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PatchRecord.from_json(line) for line in fh if line.strip()]


def write_records(path: str | Path, records: Iterable[PatchRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def write_pairs(path: str | Path, pairs: Iterable[EditPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def read_pairs(path: str | Path, g: Grammar) -> list[EditPair]:
    with open(path, encoding="utf-8") as fh:
        return [EditPair.from_dict(json.loads(line), g) for line in fh if line.strip()]
