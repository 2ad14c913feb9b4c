"""Two-stage decoding: skeletons from the tree model, fillings from the token model."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_tree, check_pairs, check_positive_int, check_trees, resolve_grammar
from .grammar import Grammar
from .syntax import ParseTree, fill_tokens, render, rules_to_tree, terminal_types, tree_to_tokens
from .token_model import TokenGenerator, build_scope
from .tree_model import TreeTranslator


@dataclass(frozen=True)
class Suggestion:
    rules: tuple[int, ...]
    tokens: tuple[str, ...]
    code: str
    log_p_tree: float
    log_p_token: float

    @property
    def joint(self) -> float:
        return self.log_p_tree + self.log_p_token

    def tree(self, g: Grammar, root: str) -> ParseTree:
        return fill_tokens(rules_to_tree(self.rules, g, root), self.tokens, g)


def suggest(
    tree_model: TreeTranslator,
    token_model: TokenGenerator,
    c_p: str | ParseTree,
    k: int = 5,
    k_tree: int = 2,
    k_token: int = 10,
    *,
    root: str | None = None,
    drop_identity: bool = True,
) -> list[Suggestion]:
    """Top-``k`` edits of ``c_p`` ranked by joint log-probability.

    Candidates with the same token sequence are merged, keeping the best
    score. Unless ``drop_identity`` is false, candidates reproducing ``c_p``
    are removed.
    """
    check_positive_int("k", k)
    check_is_fitted(tree_model, "params_")
    check_is_fitted(token_model, "params_")
    g = tree_model.grammar_
    t_p = as_tree(c_p, g, start=root)
    src_tokens = tuple(tok for tok, _ in tree_to_tokens(t_p))
    scope = build_scope(t_p)
    best: dict[tuple[str, ...], Suggestion] = {}
    for rules, lp_tree in tree_model.beam(t_p, k_tree):
        skeleton = rules_to_tree(rules, g, t_p.symbol)
        slots = terminal_types(skeleton, g)
        for tokens, lp_tok in token_model.beam(t_p, slots, k_token, scope):
            if drop_identity and tokens == src_tokens:
                continue
            cand = Suggestion(tuple(rules), tokens, render(fill_tokens(skeleton, tokens, g)), lp_tree, lp_tok)
            old = best.get(tokens)
            if old is None or cand.joint > old.joint or (cand.joint == old.joint and cand.rules < old.rules):
                best[tokens] = cand
    ranked = sorted(best.values(), key=lambda s: (-s.joint, s.tokens, s.rules))
    return ranked[:k]


class EditSuggester(BaseEstimator):
    """Tree and token models behind one fit/predict interface.

    >>> model = EditSuggester(n_epoch=2).fit(before_fragments, after_fragments)  # doctest: +SKIP
    >>> model.suggest("return a . equals ( b ) ;")  # doctest: +SKIP
    """

    def __init__(
        self,
        grammar: Grammar | None = None,
        d_e: int = 32,
        d_h: int = 64,
        lr: float = 0.5,
        lr_decay: float = 0.5,
        n_epoch: int = 30,
        valid_patience: int = 5,
        min_freq: int = 2,
        k: int = 5,
        k_tree: int = 2,
        k_token: int = 10,
        seed: int = 0,
    ):
        self.grammar = grammar
        self.d_e = d_e
        self.d_h = d_h
        self.lr = lr
        self.lr_decay = lr_decay
        self.n_epoch = n_epoch
        self.valid_patience = valid_patience
        self.min_freq = min_freq
        self.k = k
        self.k_tree = k_tree
        self.k_token = k_token
        self.seed = seed

    def _shared(self) -> dict:
        return dict(
            grammar=self.grammar,
            d_e=self.d_e,
            d_h=self.d_h,
            lr=self.lr,
            lr_decay=self.lr_decay,
            n_epoch=self.n_epoch,
            valid_patience=self.valid_patience,
            seed=self.seed,
        )

    def fit(self, X, y, X_valid=None, y_valid=None):
        g = resolve_grammar(self.grammar)
        X, y = check_pairs(X, y, g)
        self.tree_model_ = TreeTranslator(**self._shared()).fit(X, y, X_valid, y_valid)
        self.token_model_ = TokenGenerator(min_freq=self.min_freq, **self._shared()).fit(X, y, X_valid, y_valid)
        self.grammar_ = g
        return self

    @classmethod
    def from_models(cls, tree_model: TreeTranslator, token_model: TokenGenerator, **kwargs) -> "EditSuggester":
        if tree_model.grammar_hash_ != token_model.grammar_hash_:
            raise ValueError("tree and token models were trained on different grammars")
        est = cls(**kwargs)
        est.tree_model_ = tree_model
        est.token_model_ = token_model
        est.grammar_ = tree_model.grammar_
        return est

    @classmethod
    def load(cls, tree_path: str | Path, token_path: str | Path, grammar: Grammar | None = None, **kwargs):
        return cls.from_models(TreeTranslator.load(tree_path, grammar), TokenGenerator.load(token_path, grammar), **kwargs)

    def suggest(self, c_p, k: int | None = None, root: str | None = None) -> list[Suggestion]:
        check_is_fitted(self, "tree_model_")
        return suggest(
            self.tree_model_, self.token_model_, c_p, k or self.k, self.k_tree, self.k_token, root=root
        )

    def predict(self, X) -> list[str | None]:
        """Best suggestion per fragment, rendered; ``None`` when nothing decodes."""
        check_is_fitted(self, "tree_model_")
        out = []
        for t in check_trees(X, self.grammar_):
            s = self.suggest(t, k=1)
            out.append(s[0].code if s else None)
        return out

    def score(self, X, y, k: int | None = None) -> float:
        """Fraction of pairs whose edit appears among the top ``k`` suggestions."""
        check_is_fitted(self, "tree_model_")
        X, y = check_pairs(X, y, self.grammar_)
        k = k or self.k
        hits = 0
        for t_p, t_n in zip(X, y):
            gold = tuple(tok for tok, _ in tree_to_tokens(t_n))
            hits += any(s.tokens == gold for s in self.suggest(t_p, k=k))
        return hits / len(X)
