"""Model training entry points and top-K exact-match evaluation."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._training import TrainConfig
from ._validation import GrammarMismatch, resolve_grammar
from .editmine import DatasetSplit, EditPair
from .grammar import Grammar
from .suggest import suggest
from . import neural as nn
from . import token_model as tm
from . import tree_model as trm
from .syntax import parse, tree_to_rules, tree_to_tokens
from .token_model import TokenGenerator, Vocabulary, build_scope, is_concretizable
from .tree_model import TreeTranslator

__all__ = ["EvalReport", "TrainConfig", "evaluate", "gradcheck_models", "train", "write_history_csv"]


def train(
    model: str,
    split: DatasetSplit,
    cfg: TrainConfig | None = None,
    grammar: Grammar | None = None,
    *,
    d_e: int = 32,
    d_h: int = 64,
    min_freq: int = 2,
    init: TreeTranslator | TokenGenerator | None = None,
    tree_model: TreeTranslator | None = None,
) -> TreeTranslator | TokenGenerator:
    """Fit the ``"tree"`` or ``"token"`` model on ``split.train``.

    ``init`` resumes from an already fitted estimator of the same kind.
    """
    cfg = cfg or TrainConfig()
    if not split.train:
        raise ValueError("empty training split")
    g = resolve_grammar(grammar)
    X = [p.t_p for p in split.train]
    y = [p.t_n for p in split.train]
    Xv = [p.t_p for p in split.valid] or None
    yv = [p.t_n for p in split.valid] or None
    common = dict(
        grammar=grammar,
        d_e=d_e,
        d_h=d_h,
        lr=cfg.lr,
        lr_decay=cfg.lr_decay,
        n_epoch=cfg.n_epoch,
        valid_patience=cfg.valid_patience,
        clip=cfg.clip,
        seed=cfg.seed,
    )
    if model == "tree":
        est = init if init is not None else TreeTranslator(**common)
        if init is not None:
            if init.grammar_hash_ != g.source_hash:
                raise GrammarMismatch("resume checkpoint was trained on a different grammar")
            est.set_params(**{k: v for k, v in common.items() if k not in ("d_e", "d_h")}, warm_start=True)
        return est.fit(X, y, Xv, yv)
    if model == "token":
        est = init if init is not None else TokenGenerator(min_freq=min_freq, **common)
        if init is not None:
            if init.grammar_hash_ != g.source_hash:
                raise GrammarMismatch("resume checkpoint was trained on a different grammar")
            est.set_params(**{k: v for k, v in common.items() if k not in ("d_e", "d_h")}, warm_start=True)
        return est.fit(X, y, Xv, yv, tree_model=tree_model)
    raise ValueError(f"unknown model {model!r}; expected 'tree' or 'token'")


def write_history_csv(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_metric", "lr"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_metric"]), repr(row["lr"])])


@dataclass
class EvalReport:
    ks: list[int]
    n_pairs: int
    n_concretizable: int
    hits: dict[int, int]
    hits_concretizable: dict[int, int]
    tree_hits: int
    k_tree: int
    k_token: int
    per_pair: list[dict] = field(default_factory=list, repr=False)

    @property
    def n_unconcretizable(self) -> int:
        return self.n_pairs - self.n_concretizable

    def accuracy(self, k: int) -> float:
        return 100.0 * self.hits[k] / self.n_pairs if self.n_pairs else 0.0

    def accuracy_concretizable(self, k: int) -> float:
        return 100.0 * self.hits_concretizable[k] / self.n_concretizable if self.n_concretizable else 0.0

    @property
    def tree_accuracy(self) -> float:
        return 100.0 * self.tree_hits / self.n_pairs if self.n_pairs else 0.0

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_concretizable": self.n_concretizable,
            "n_unconcretizable": self.n_unconcretizable,
            "k_tree": self.k_tree,
            "k_token": self.k_token,
            "accuracy": {str(k): self.accuracy(k) for k in self.ks},
            "accuracy_concretizable": {str(k): self.accuracy_concretizable(k) for k in self.ks},
            "tree_accuracy": self.tree_accuracy,
            "pairs": self.per_pair,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_table(self) -> str:
        rows = [("K", "exact match %", "concretizable %")]
        rows += [(str(k), f"{self.accuracy(k):.2f}", f"{self.accuracy_concretizable(k):.2f}") for k in self.ks]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
        lines.append(f"tree top-{self.k_tree} accuracy: {self.tree_accuracy:.2f}%")
        lines.append(
            f"pairs: {self.n_pairs}  concretizable: {self.n_concretizable}  unconcretizable: {self.n_unconcretizable}"
        )
        return "\n".join(lines) + "\n"


def evaluate(
    tree_model: TreeTranslator,
    token_model: TokenGenerator,
    pairs: Sequence[EditPair],
    ks: Sequence[int] = (1, 2, 5, 10),
    k_tree: int = 2,
    k_token: int = 10,
) -> EvalReport:
    """Top-K exact match of suggestions against the developers' edits.

    Pairs whose target cannot be produced by the token model are counted as
    misses and also reported separately.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive integers")
    if tree_model.grammar_hash_ != token_model.grammar_hash_:
        raise GrammarMismatch("tree and token checkpoints were trained on different grammars")
    g = tree_model.grammar_
    hits = {k: 0 for k in ks}
    hits_c = {k: 0 for k in ks}
    tree_hits = n_conc = 0
    per_pair = []
    for pair in pairs:
        gold_tokens = tuple(t for t, _ in tree_to_tokens(pair.t_n))
        gold_rules = tuple(tree_to_rules(pair.t_n))
        conc = is_concretizable(
            token_model.vocab_, g, tree_to_tokens(pair.t_p), tree_to_tokens(pair.t_n), build_scope(pair.t_p)
        )
        n_conc += conc
        skeletons = [r for r, _ in tree_model.beam(pair.t_p, k_tree)]
        tree_ok = gold_rules in skeletons
        tree_hits += tree_ok
        sugg = suggest(tree_model, token_model, pair.t_p, k=ks[-1], k_tree=k_tree, k_token=k_token)
        rank = next((i + 1 for i, s in enumerate(sugg) if s.tokens == gold_tokens), None)
        for k in ks:
            ok = rank is not None and rank <= k
            hits[k] += ok
            hits_c[k] += ok and conc
        per_pair.append({"rank": rank, "tree_ok": tree_ok, "concretizable": conc})
    return EvalReport(ks, len(pairs), n_conc, hits, hits_c, tree_hits, k_tree, k_token, per_pair)


def load_models(tree_path, token_path, grammar: Grammar | None = None):
    tree = TreeTranslator.load(tree_path, grammar)
    token = TokenGenerator.load(token_path, grammar)
    if tree.grammar_hash_ != token.grammar_hash_:
        raise GrammarMismatch("tree and token checkpoints were trained on different grammars")
    return tree, token


GRADCHECK_PAIR = ("return object . equals ( other ) ;", "return object == other ;")


def gradcheck_models(
    seed: int = 0, grammar: Grammar | None = None, corrupt: bool = False, d_e: int = 3, d_h: int = 4
) -> dict[str, float]:
    """Max finite-difference relative error per parameter slice of both models.

    Uses tiny randomly initialised models on a fixed edit pair. Keys are
    ``"tree/<param>"`` and ``"token/<param>"``.
    """
    g = resolve_grammar(grammar)
    rng = np.random.default_rng(seed)
    t_p, t_n = (parse(s, g, start="Ret_Stmt") for s in GRADCHECK_PAIR)
    src_rules, tgt_rules = tree_to_rules(t_p), tree_to_rules(t_n)
    tree_params = trm.init_params(len(g.productions), d_e, d_h, rng, scale=0.5)
    errs = nn.grad_check_groups(
        lambda p: trm.tree_teacher_forced_loss(p, g, src_rules, tgt_rules, t_p.symbol), tree_params, corrupt=corrupt
    )
    out = {f"tree/{k}": v for k, v in errs.items()}
    vocab = Vocabulary.build([(t_p, t_n)], g, min_freq=1)
    types = tm.type_index(g)
    tok_params = tm.init_params(len(vocab), len(types), d_e, d_h, rng, scale=0.5)
    src, tgt, scope = tree_to_tokens(t_p), tree_to_tokens(t_n), build_scope(t_p)
    errs = nn.grad_check_groups(
        lambda p: tm.token_teacher_forced_loss(p, vocab, g, types, src, tgt, scope), tok_params, corrupt=corrupt
    )
    out.update({f"token/{k}": v for k, v in errs.items()})
    return out
