"""Tree translation: predict the rule sequence of the edited tree.

An LSTM encodes the source rule sequence; an attention LSTM decoder emits one
production per step for the current frontier node, with the output softmax
restricted to productions headed by that node. Every decoded sequence is
therefore a valid derivation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import neural as nn
from ._training import fit_loop
from ._validation import (
    check_grammar_hash,
    check_pairs,
    check_positive_int,
    check_trees,
    resolve_grammar,
    rule_ids_valid,
)
from .grammar import Grammar
from .syntax import Infeasible, ParseTree, rules_to_tree, tree_to_rules


class TreeParams(NamedTuple):
    """View of the flat parameter dict."""

    rule_emb: np.ndarray
    enc: nn.LstmParams
    dec: nn.LstmParams
    out_W: np.ndarray
    out_b: np.ndarray

    @classmethod
    def of(cls, p: dict) -> "TreeParams":
        return cls(
            p["rule_emb"],
            nn.LstmParams(p["enc.W"], p["enc.b"]),
            nn.LstmParams(p["dec.W"], p["dec.b"]),
            p["out.W"],
            p["out.b"],
        )


def init_params(n_rules: int, d_e: int, d_h: int, rng: np.random.Generator, scale: float = 0.08) -> dict:
    """Rule embeddings have one extra row, the decoder's begin-of-sequence input."""
    enc_W, enc_b = nn.init_lstm(rng, d_e, d_h, scale)
    dec_W, dec_b = nn.init_lstm(rng, d_e + d_h, d_h, scale)
    return {
        "rule_emb": nn.uniform(rng, (n_rules + 1, d_e), scale),
        "enc.W": enc_W,
        "enc.b": enc_b,
        "dec.W": dec_W,
        "dec.b": dec_b,
        "out.W": nn.uniform(rng, (n_rules, d_h), scale),
        "out.b": nn.uniform(rng, (n_rules,), scale),
    }


class Encoded(NamedTuple):
    states: np.ndarray  # (tau, d_h)
    h: np.ndarray
    c: np.ndarray
    caches: list


def encode_rules(params: dict, rs: Sequence[int]) -> Encoded:
    """Run the encoder LSTM over rule embeddings from a zero state."""
    p = TreeParams.of(params)
    n_rules = p.out_W.shape[0]
    d_h = p.enc.d_h
    h, c = np.zeros(d_h), np.zeros(d_h)
    states, caches = [], []
    for r in rs:
        if not 0 <= r < n_rules:
            raise ValueError(f"unknown rule id {r}")
        h, c, cache = nn.lstm_step(p.enc, h, c, p.rule_emb[r])
        states.append(h)
        caches.append(cache)
    if not states:
        raise ValueError("cannot encode an empty rule sequence")
    return Encoded(np.array(states), h, c, caches)


@dataclass(frozen=True)
class TreeDecoderState:
    """Decoder hypothesis; ``stack`` holds pending nonterminals, frontier last."""

    h: np.ndarray
    c: np.ndarray
    stack: tuple[str, ...]
    rules: tuple[int, ...] = ()
    log_prob: float = 0.0
    step_log_probs: tuple[float, ...] = field(default=(), compare=False)

    @property
    def frontier(self) -> str | None:
        return self.stack[-1] if self.stack else None

    @property
    def complete(self) -> bool:
        return not self.stack


def initial_state(enc: Encoded, root: str) -> TreeDecoderState:
    return TreeDecoderState(enc.h, enc.c, (root,))


def push_rule(stack: tuple[str, ...], rule_id: int, g: Grammar) -> tuple[str, ...]:
    """Replace the frontier by the rule's nonterminals, leftmost on top."""
    prod = g.productions[rule_id]
    if not stack or prod.lhs != stack[-1]:
        raise Infeasible(0, stack[-1] if stack else None, prod.lhs)
    return stack[:-1] + tuple(s for s in reversed(prod.rhs) if g.is_nonterminal(s))


def _dec_forward(p: TreeParams, h, c, prev: int, keys: np.ndarray):
    ctx, w = nn.attend(h, keys)
    x = np.concatenate([p.rule_emb[prev], ctx])
    h_new, c_new, cache = nn.lstm_step(p.dec, h, c, x)
    logits = p.out_W @ h_new + p.out_b
    return h_new, c_new, logits, (h, w, cache)


def decode_rule_step(params: dict, state: TreeDecoderState, enc: Encoded, g: Grammar):
    """Advance one step; returns ``(distribution over rules, h, c)``."""
    if state.complete:
        raise ValueError("decode_rule_step on a complete derivation")
    p = TreeParams.of(params)
    prev = state.rules[-1] if state.rules else p.out_W.shape[0]
    h, c, logits, _ = _dec_forward(p, state.h, state.c, prev, enc.states)
    return nn.masked_softmax(logits, g.rule_ids_for(state.frontier)), h, c


def tree_teacher_forced_loss(params: dict, g: Grammar, src: Sequence[int], tgt: Sequence[int], root: str | None = None):
    """Summed cross-entropy of ``tgt`` given ``src``, with gradients."""
    p = TreeParams.of(params)
    n_rules = p.out_W.shape[0]
    root = root or (g.productions[tgt[0]].lhs if len(tgt) else g.start_symbol)
    enc = encode_rules(params, src)
    keys = enc.states
    h, c = enc.h, enc.c
    stack: tuple[str, ...] = (root,)
    loss = 0.0
    steps = []
    prev = n_rules
    for k, r in enumerate(tgt, 1):
        if not stack:
            raise Infeasible(k, None, g.productions[r].lhs)
        mask = g.rule_ids_for(stack[-1])
        if g.productions[r].lhs != stack[-1]:
            raise Infeasible(k, stack[-1], g.productions[r].lhs)
        h_new, c_new, logits, cache = _dec_forward(p, h, c, prev, keys)
        dist = nn.masked_softmax(logits, mask)
        loss += nn.cross_entropy(dist, r)
        steps.append((prev, h_new, dist, r, cache))
        stack = push_rule(stack, r, g)
        h, c, prev = h_new, c_new, r
    if stack:
        raise ValueError(f"target rule sequence leaves {list(stack)} unexpanded")

    grads = nn.zeros_like(params)
    d_e = p.rule_emb.shape[1]
    dkeys = np.zeros_like(keys)
    dh_next = np.zeros_like(enc.h)
    dc_next = np.zeros_like(enc.c)
    for prev, h_k, dist, r, (h_prev, w, cache) in reversed(steps):
        dlogits = nn.cross_entropy_grad(dist, r)
        grads["out.W"] += np.outer(dlogits, h_k)
        grads["out.b"] += dlogits
        dh = dh_next + p.out_W.T @ dlogits
        dx, dh_prev, dc_next = nn.lstm_step_backward(p.dec, cache, dh, dc_next, grads["dec.W"], grads["dec.b"])
        grads["rule_emb"][prev] += dx[:d_e]
        dq, dk = nn.attend_backward(h_prev, keys, w, dx[d_e:])
        dkeys += dk
        dh_next = dh_prev + dq
    # decoder starts from the encoder's final state
    dh, dc = dh_next, dc_next
    for i in range(len(src) - 1, -1, -1):
        dh = dh + dkeys[i]
        dx, dh, dc = nn.lstm_step_backward(p.enc, enc.caches[i], dh, dc, grads["enc.W"], grads["enc.b"])
        grads["rule_emb"][src[i]] += dx
    return loss, grads


def beam_rules(
    params: dict,
    g: Grammar,
    src: Sequence[int],
    k_tree: int,
    max_steps: int = 60,
    root: str | None = None,
) -> list[tuple[tuple[int, ...], float]]:
    """Beam search over derivations; only frontier-matching rules are expanded.

    Returns up to ``k_tree`` complete rule sequences ranked by log-probability
    (ties broken by the rule-id sequence).
    """
    check_positive_int("k_tree", k_tree)
    p = TreeParams.of(params)
    n_rules = p.out_W.shape[0]
    root = root or g.productions[src[0]].lhs
    enc = encode_rules(params, src)
    live = [initial_state(enc, root)]
    finished: list[TreeDecoderState] = []
    for _ in range(max_steps):
        if not live:
            break
        candidates = []
        for st in live:
            prev = st.rules[-1] if st.rules else n_rules
            h, c, logits, _ = _dec_forward(p, st.h, st.c, prev, enc.states)
            mask = g.rule_ids_for(st.frontier)
            dist = nn.masked_softmax(logits, mask)
            for r in mask:
                lp = float(np.log(dist[r])) if dist[r] > 0 else -np.inf
                candidates.append((st.log_prob + lp, st.rules + (r,), st, r, lp, h, c))
        candidates.sort(key=lambda t: (-t[0], t[1]))
        live = []
        for score, rules, st, r, lp, h, c in candidates[:k_tree]:
            new = TreeDecoderState(h, c, push_rule(st.stack, r, g), rules, score, st.step_log_probs + (lp,))
            (finished if new.complete else live).append(new)
        finished.sort(key=lambda s: (-s.log_prob, s.rules))
        finished = finished[:k_tree]
        if len(finished) >= k_tree and (not live or max(s.log_prob for s in live) <= finished[-1].log_prob):
            break
    return [(s.rules, s.log_prob) for s in finished]


def greedy_rules(params: dict, g: Grammar, src: Sequence[int], max_steps: int = 60, root: str | None = None):
    out = beam_rules(params, g, src, 1, max_steps, root)
    return out[0] if out else None


class TreeTranslator(BaseEstimator):
    """Estimator mapping a source parse tree to ranked edited rule sequences.

    ``fit(X, y)`` takes source trees ``X`` and edited trees ``y`` (parse trees
    or fragments). ``predict(X)`` returns the top-1 skeleton tree per input.
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
        clip: float = 5.0,
        init_scale: float = 0.08,
        max_steps: int = 60,
        seed: int = 0,
        warm_start: bool = False,
    ):
        self.grammar = grammar
        self.d_e = d_e
        self.d_h = d_h
        self.lr = lr
        self.lr_decay = lr_decay
        self.n_epoch = n_epoch
        self.valid_patience = valid_patience
        self.clip = clip
        self.init_scale = init_scale
        self.max_steps = max_steps
        self.seed = seed
        self.warm_start = warm_start

    def _init(self, g: Grammar):
        rng = np.random.default_rng(self.seed)
        self.params_ = init_params(len(g.productions), self.d_e, self.d_h, rng, self.init_scale)
        self.grammar_ = g
        self.grammar_hash_ = g.source_hash

    def fit(self, X, y, X_valid=None, y_valid=None):
        g = resolve_grammar(self.grammar)
        X, y = check_pairs(X, y, g)
        if X_valid is None:
            Xv, yv = X, y
        else:
            Xv, yv = check_pairs(X_valid, y_valid, g)
        if self.warm_start and hasattr(self, "params_"):
            check_grammar_hash(self.grammar_hash_, g)
        else:
            self._init(g)
        src = [tree_to_rules(t) for t in X]
        tgt = [tree_to_rules(t) for t in y]
        roots = [t.symbol for t in X]
        vsrc = [tree_to_rules(t) for t in Xv]
        vtgt = [tuple(tree_to_rules(t)) for t in yv]
        vroots = [t.symbol for t in Xv]

        def step(i, lr):
            loss, grads = tree_teacher_forced_loss(self.params_, g, src[i], tgt[i], roots[i])
            nn.sgd_update(self.params_, grads, lr, self.clip)
            return loss

        def validate():
            hits = 0
            for s, t, r in zip(vsrc, vtgt, vroots):
                best = greedy_rules(self.params_, g, s, self.max_steps, r)
                hits += best is not None and best[0] == t
            return hits / max(len(vsrc), 1)

        self.history_ = fit_loop(
            len(src),
            step,
            validate,
            lambda: self.params_,
            self._restore,
            n_epoch=self.n_epoch,
            valid_patience=self.valid_patience,
            lr=self.lr,
            lr_decay=self.lr_decay,
            rng=np.random.default_rng(self.seed + 1),
        )
        return self

    def _restore(self, params):
        self.params_ = params

    def beam(self, x, k_tree: int = 2) -> list[tuple[tuple[int, ...], float]]:
        """Ranked ``(rule sequence, log-prob)`` pairs for one source tree."""
        check_is_fitted(self, "params_")
        t = check_trees([x], self.grammar_)[0]
        return beam_rules(self.params_, self.grammar_, tree_to_rules(t), k_tree, self.max_steps, t.symbol)

    def predict(self, X) -> list[ParseTree | None]:
        check_is_fitted(self, "params_")
        out = []
        for t in check_trees(X, self.grammar_):
            best = beam_rules(self.params_, self.grammar_, tree_to_rules(t), 1, self.max_steps, t.symbol)
            out.append(rules_to_tree(best[0][0], self.grammar_, t.symbol) if best else None)
        return out

    def score(self, X, y) -> float:
        """Top-1 rule-sequence accuracy."""
        check_is_fitted(self, "params_")
        X, y = check_pairs(X, y, self.grammar_)
        preds = self.predict(X)
        hits = sum(p is not None and tree_to_rules(p) == tree_to_rules(t) for p, t in zip(preds, y))
        return hits / len(X)

    # -- persistence --

    def to_checkpoint(self) -> tuple[dict, dict]:
        check_is_fitted(self, "params_")
        meta = {
            "model": "tree",
            "grammar_hash": self.grammar_hash_,
            "config": {k: v for k, v in self.get_params().items() if k != "grammar"},
            "history": getattr(self, "history_", []),
        }
        return meta, self.params_

    def save(self, path: str | Path) -> None:
        meta, arrays = self.to_checkpoint()
        nn.save_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path, grammar: Grammar | None = None) -> "TreeTranslator":
        meta, arrays = nn.load_checkpoint(path)
        return cls.from_checkpoint(meta, arrays, grammar)

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict, grammar: Grammar | None = None) -> "TreeTranslator":
        if meta.get("model") != "tree":
            raise ValueError(f"expected a tree checkpoint, got {meta.get('model')!r}")
        g = resolve_grammar(grammar)
        check_grammar_hash(meta["grammar_hash"], g)
        est = cls(grammar=grammar, **meta["config"])
        est.params_ = arrays
        est.grammar_ = g
        est.grammar_hash_ = g.source_hash
        est.history_ = meta.get("history", [])
        rule_ids_valid([arrays["out.W"].shape[0] - 1], g)
        if arrays["out.W"].shape[0] != len(g.productions):
            raise ValueError("checkpoint output width does not match the grammar")
        return est
