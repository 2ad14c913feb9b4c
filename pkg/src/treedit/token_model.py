"""Token generation: concretize the terminal slots of a predicted skeleton.

The encoder reads (token, type) pairs of the source fragment. The decoder is
conditioned on the type of each target slot; its softmax is masked to tokens
the grammar and the edit's scope allow. Identifier slots may emit
``<unknown>``, which is replaced by the source token with the highest
attention weight.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import neural as nn
from ._training import fit_loop
from ._validation import check_grammar_hash, check_pairs, check_positive_int, resolve_grammar
from .grammar import BOOL_VALUES, IDENTIFIER_KINDS, UNKNOWN, Grammar, ScopeInfo, tokens_for
from .syntax import AugToken, ParseTree, terminal_types, tree_to_tokens

BOS = "<bos>"
ALWAYS_IN_SCOPE = frozenset({"this", "super"})


class UnconcretizableError(ValueError):
    """A target token is neither producible from the vocabulary nor copyable."""


class Vocabulary:
    """Closed token vocabulary; id 0 is ``<unknown>``, id 1 the decoder start symbol."""

    def __init__(self, tokens: Sequence[str], kinds: dict[str, Sequence[str]]):
        if list(tokens[:2]) != [UNKNOWN, BOS]:
            raise ValueError("vocabulary must start with <unknown>, <bos>")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate vocabulary entries")
        self.kinds = {k: tuple(v) for k, v in kinds.items()}
        self._by_kind: dict[str, frozenset[str]] = {}
        for tok, ks in self.kinds.items():
            for k in ks:
                self._by_kind[k] = self._by_kind.get(k, frozenset()) | {tok}

    @classmethod
    def build(cls, pairs: Sequence[tuple[ParseTree, ParseTree]], g: Grammar, min_freq: int = 2) -> "Vocabulary":
        """Identifiers need ``min_freq`` training pairs; lexemes and seen literals are always kept."""
        doc_freq: Counter[str] = Counter()
        kinds: dict[str, set[str]] = {}
        for t_p, t_n in pairs:
            seen = set()
            for tok, ty in tree_to_tokens(t_p) + tree_to_tokens(t_n):
                seen.add(tok)
                if not g.terminal(ty).is_fixed:
                    kinds.setdefault(tok, set()).add(ty)
            doc_freq.update(seen)
        tokens = [UNKNOWN, BOS]
        fixed = list(g.fixed_lexemes)
        tokens += fixed
        bools = [b for b in BOOL_VALUES if "BOOL_LIT" in g.terminal_types]
        tokens += [b for b in bools if b not in tokens]
        literals = sorted(t for t, ks in kinds.items() if "INT_LIT" in ks)
        idents = sorted(
            t for t, ks in kinds.items()
            if ks & set(IDENTIFIER_KINDS) and doc_freq[t] >= min_freq and t not in tokens
        )
        for t in literals + idents:
            if t not in tokens:
                tokens.append(t)
        kept = set(tokens)
        out_kinds = {t: sorted(ks) for t, ks in sorted(kinds.items()) if t in kept}
        for b in bools:
            out_kinds[b] = ["BOOL_LIT"]
        return cls(tokens, out_kinds)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, 0)

    def tokens_of_kind(self, kind: str) -> frozenset[str]:
        return self._by_kind.get(kind, frozenset())

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "kinds": {k: list(v) for k, v in self.kinds.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d["tokens"], d["kinds"])


def build_scope(t_p: ParseTree) -> ScopeInfo:
    """Identifiers visible at the edit: those occurring in ``t_p``, plus ``this``/``super``."""
    found = {"VAR": set(ALWAYS_IN_SCOPE), "METHOD": set(), "TYPE": set()}
    for leaf in t_p.leaves():
        if leaf.symbol in found and leaf.token:
            found[leaf.symbol].add(leaf.token)
    return ScopeInfo(frozenset(found["VAR"]), frozenset(found["METHOD"]), frozenset(found["TYPE"]))


def allowed_ids(vocab: Vocabulary, g: Grammar, ttype: str, scope: ScopeInfo) -> tuple[int, ...]:
    toks = tokens_for(g, ttype, scope, vocab)
    return tuple(sorted(vocab.index[t] for t in toks if t in vocab.index))


class TokenParams(NamedTuple):
    tok_emb: np.ndarray
    type_emb: np.ndarray
    enc: nn.LstmParams
    dec: nn.LstmParams
    out_W: np.ndarray
    out_b: np.ndarray

    @classmethod
    def of(cls, p: dict) -> "TokenParams":
        return cls(
            p["tok_emb"],
            p["type_emb"],
            nn.LstmParams(p["enc.W"], p["enc.b"]),
            nn.LstmParams(p["dec.W"], p["dec.b"]),
            p["out.W"],
            p["out.b"],
        )


def type_index(g: Grammar) -> dict[str, int]:
    """Terminal types in declaration order; the last row is the start-of-sequence type."""
    idx = {name: i for i, name in enumerate(g.terminal_types)}
    idx[BOS] = len(idx)
    return idx


def init_params(n_vocab: int, n_types: int, d_e: int, d_h: int, rng: np.random.Generator, scale: float = 0.08) -> dict:
    enc_W, enc_b = nn.init_lstm(rng, 2 * d_e, d_h, scale)
    dec_W, dec_b = nn.init_lstm(rng, 2 * d_e + d_h, d_h, scale)
    return {
        "tok_emb": nn.uniform(rng, (n_vocab, d_e), scale),
        "type_emb": nn.uniform(rng, (n_types, d_e), scale),
        "enc.W": enc_W,
        "enc.b": enc_b,
        "dec.W": dec_W,
        "dec.b": dec_b,
        "out.W": nn.uniform(rng, (n_vocab, d_h), scale),
        "out.b": nn.uniform(rng, (n_vocab,), scale),
    }


class EncodedTokens(NamedTuple):
    states: np.ndarray  # (m + 1, d_h); row 0 is the start-of-sequence step
    h: np.ndarray
    c: np.ndarray
    caches: list
    inputs: list  # (token id, type id) per row


def encode_tokens(params: dict, vocab: Vocabulary, types: dict[str, int], aug: Sequence[AugToken]) -> EncodedTokens:
    """Encoder over ``[<bos>] + aug``; out-of-vocabulary tokens read as ``<unknown>``."""
    p = TokenParams.of(params)
    d_h = p.enc.d_h
    h, c = np.zeros(d_h), np.zeros(d_h)
    inputs = [(vocab.index[BOS], types[BOS])] + [(vocab.id(tok), types[ty]) for tok, ty in aug]
    states, caches = [], []
    for tid, yid in inputs:
        h, c, cache = nn.lstm_step(p.enc, h, c, np.concatenate([p.tok_emb[tid], p.type_emb[yid]]))
        states.append(h)
        caches.append(cache)
    return EncodedTokens(np.array(states), h, c, caches, inputs)


@dataclass(frozen=True)
class TokenDecoderState:
    h: np.ndarray
    c: np.ndarray
    prev: int
    tokens: tuple[str, ...] = ()
    log_prob: float = 0.0
    attention: tuple[np.ndarray, ...] = ()

    @property
    def position(self) -> int:
        return len(self.tokens)


def _dec_forward(p: TokenParams, h, c, prev: int, type_id: int, keys: np.ndarray):
    ctx, w = nn.attend(h, keys)
    x = np.concatenate([p.tok_emb[prev], p.type_emb[type_id], ctx])
    h_new, c_new, cache = nn.lstm_step(p.dec, h, c, x)
    logits = p.out_W @ h_new + p.out_b
    return h_new, c_new, logits, w, cache


def decode_token_step(
    params: dict,
    vocab: Vocabulary,
    g: Grammar,
    types: dict[str, int],
    state: TokenDecoderState,
    enc: EncodedTokens,
    ttype: str,
    scope: ScopeInfo,
):
    """Returns ``(distribution over vocabulary, attention weights, h, c)``."""
    p = TokenParams.of(params)
    h, c, logits, w, _ = _dec_forward(p, state.h, state.c, state.prev, types[ttype], enc.states)
    return nn.masked_softmax(logits, allowed_ids(vocab, g, ttype, scope)), w, h, c


def copy_resolve(
    weights: np.ndarray,
    src: Sequence[AugToken],
    ttype: str,
    scope: ScopeInfo,
) -> str | None:
    """Source token to substitute for ``<unknown>``.

    ``weights`` has one entry per encoder state, the first being the
    start-of-sequence step. Prefers the most attended source token of the same
    kind that is in scope; otherwise the most attended source token overall.
    Ties go to the earliest position. Returns ``None`` for an empty source.
    """
    if not src:
        return None
    w = np.asarray(weights)[1 : len(src) + 1]
    allowed = scope.for_kind(ttype)
    compatible = [j for j, (tok, ty) in enumerate(src) if ty == ttype and (tok in allowed or ttype not in IDENTIFIER_KINDS)]
    pool = compatible or range(len(src))
    best = max(pool, key=lambda j: (w[j], -j))
    return src[best].token


def target_labels(
    vocab: Vocabulary, g: Grammar, src: Sequence[AugToken], tgt: Sequence[AugToken], scope: ScopeInfo
) -> list[int]:
    """Gold output ids; copyable tokens outside the mask become ``<unknown>``."""
    src_tokens = {tok for tok, _ in src}
    labels = []
    for tok, ty in tgt:
        ids = allowed_ids(vocab, g, ty, scope)
        tid = vocab.index.get(tok)
        if tid is not None and tid in ids:
            labels.append(tid)
        elif 0 in ids and tok in src_tokens:
            labels.append(0)
        else:
            raise UnconcretizableError(f"target token {tok!r} ({ty}) is neither allowed nor copyable")
    return labels


def is_concretizable(vocab, g, src, tgt, scope) -> bool:
    try:
        target_labels(vocab, g, src, tgt, scope)
    except UnconcretizableError:
        return False
    return True


def token_teacher_forced_loss(
    params: dict,
    vocab: Vocabulary,
    g: Grammar,
    types: dict[str, int],
    src: Sequence[AugToken],
    tgt: Sequence[AugToken],
    scope: ScopeInfo,
):
    """Summed masked cross-entropy over the target slots, with gradients."""
    p = TokenParams.of(params)
    labels = target_labels(vocab, g, src, tgt, scope)
    enc = encode_tokens(params, vocab, types, src)
    keys = enc.states
    h, c = enc.h, enc.c
    prev = vocab.index[BOS]
    loss = 0.0
    steps = []
    for (tok, ty), label in zip(tgt, labels):
        yid = types[ty]
        h_new, c_new, logits, w, cache = _dec_forward(p, h, c, prev, yid, keys)
        mask = allowed_ids(vocab, g, ty, scope)
        dist = nn.masked_softmax(logits, mask)
        loss += nn.cross_entropy(dist, label, mask)
        steps.append((prev, yid, h, h_new, dist, label, w, cache))
        h, c, prev = h_new, c_new, label

    grads = nn.zeros_like(params)
    d_e = p.tok_emb.shape[1]
    dkeys = np.zeros_like(keys)
    dh_next = np.zeros_like(enc.h)
    dc_next = np.zeros_like(enc.c)
    for prev, yid, h_prev, h_k, dist, label, w, cache in reversed(steps):
        dlogits = nn.cross_entropy_grad(dist, label)
        grads["out.W"] += np.outer(dlogits, h_k)
        grads["out.b"] += dlogits
        dh = dh_next + p.out_W.T @ dlogits
        dx, dh_prev, dc_next = nn.lstm_step_backward(p.dec, cache, dh, dc_next, grads["dec.W"], grads["dec.b"])
        grads["tok_emb"][prev] += dx[:d_e]
        grads["type_emb"][yid] += dx[d_e : 2 * d_e]
        dq, dk = nn.attend_backward(h_prev, keys, w, dx[2 * d_e :])
        dkeys += dk
        dh_next = dh_prev + dq
    dh, dc = dh_next, dc_next
    for i in range(len(enc.inputs) - 1, -1, -1):
        dh = dh + dkeys[i]
        dx, dh, dc = nn.lstm_step_backward(p.enc, enc.caches[i], dh, dc, grads["enc.W"], grads["enc.b"])
        tid, yid = enc.inputs[i]
        grads["tok_emb"][tid] += dx[:d_e]
        grads["type_emb"][yid] += dx[d_e:]
    return loss, grads


def teacher_forced_attention(
    params: dict,
    vocab: Vocabulary,
    g: Grammar,
    types: dict[str, int],
    src: Sequence[AugToken],
    tgt: Sequence[AugToken],
    scope: ScopeInfo,
) -> list[np.ndarray]:
    """Attention weights at each target step when fed the gold prefix."""
    p = TokenParams.of(params)
    labels = target_labels(vocab, g, src, tgt, scope)
    enc = encode_tokens(params, vocab, types, src)
    h, c, prev = enc.h, enc.c, vocab.index[BOS]
    out = []
    for (_, ty), label in zip(tgt, labels):
        h, c, _, w, _ = _dec_forward(p, h, c, prev, types[ty], enc.states)
        out.append(w)
        prev = label
    return out


def beam_tokens(
    params: dict,
    vocab: Vocabulary,
    g: Grammar,
    types: dict[str, int],
    src: Sequence[AugToken],
    slot_types: Sequence[str],
    scope: ScopeInfo,
    k_token: int,
) -> list[tuple[tuple[str, ...], float]]:
    """Beam search over slot fillings, resolving ``<unknown>`` by copying.

    A hypothesis whose copied token is not lexically valid for its slot is
    discarded, so every returned sequence fits the skeleton.
    """
    check_positive_int("k_token", k_token)
    p = TokenParams.of(params)
    enc = encode_tokens(params, vocab, types, src)
    beam = [TokenDecoderState(enc.h, enc.c, vocab.index[BOS])]
    for ttype in slot_types:
        mask = allowed_ids(vocab, g, ttype, scope)
        candidates = []
        for st in beam:
            h, c, logits, w, _ = _dec_forward(p, st.h, st.c, st.prev, types[ttype], enc.states)
            dist = nn.masked_softmax(logits, mask)
            for tid in mask:
                if dist[tid] <= 0.0:
                    continue
                tok = vocab.tokens[tid] if tid != 0 else copy_resolve(w, src, ttype, scope)
                if tok is None or not g.accepts_lexeme(ttype, tok):
                    continue
                score = st.log_prob + float(np.log(dist[tid]))
                candidates.append((score, st.tokens + (tok,), tid, h, c, st.attention + (w,)))
        candidates.sort(key=lambda t: (-t[0], t[1]))
        beam = [TokenDecoderState(h, c, tid, toks, score, att) for score, toks, tid, h, c, att in candidates[:k_token]]
        if not beam:
            return []
    return [(st.tokens, st.log_prob) for st in beam]


class TokenGenerator(BaseEstimator):
    """Estimator filling skeleton terminal slots with concrete tokens.

    ``fit(X, y)`` takes source trees and edited trees; the edited trees supply
    both the slot types and the gold tokens.
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
        min_freq: int = 2,
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
        self.min_freq = min_freq
        self.seed = seed
        self.warm_start = warm_start

    def _init(self, g: Grammar, pairs):
        rng = np.random.default_rng(self.seed)
        self.grammar_ = g
        self.grammar_hash_ = g.source_hash
        self.vocab_ = Vocabulary.build(pairs, g, self.min_freq)
        self.types_ = type_index(g)
        self.params_ = init_params(len(self.vocab_), len(self.types_), self.d_e, self.d_h, rng, self.init_scale)

    def _example(self, t_p: ParseTree, t_n: ParseTree):
        return tree_to_tokens(t_p), tree_to_tokens(t_n), build_scope(t_p)

    def fit(self, X, y, X_valid=None, y_valid=None, tree_model=None):
        """Train on the concretizable pairs of ``(X, y)``.

        Validation is top-1 exact match of the greedy filling; with a fitted
        ``tree_model`` the skeleton is predicted instead of taken from gold.
        """
        g = resolve_grammar(self.grammar)
        X, y = check_pairs(X, y, g)
        Xv, yv = (X, y) if X_valid is None else check_pairs(X_valid, y_valid, g)
        if self.warm_start and hasattr(self, "params_"):
            check_grammar_hash(self.grammar_hash_, g)
        else:
            self._init(g, list(zip(X, y)))
        data = []
        for t_p, t_n in zip(X, y):
            src, tgt, scope = self._example(t_p, t_n)
            if is_concretizable(self.vocab_, g, src, tgt, scope):
                data.append((src, tgt, scope))
        self.n_unconcretizable_ = len(X) - len(data)
        valid = list(zip(Xv, yv))

        def step(i, lr):
            src, tgt, scope = data[i]
            loss, grads = token_teacher_forced_loss(self.params_, self.vocab_, g, self.types_, src, tgt, scope)
            nn.sgd_update(self.params_, grads, lr, self.clip)
            return loss

        def validate():
            hits = 0
            for t_p, t_n in valid:
                gold = tuple(tok for tok, _ in tree_to_tokens(t_n))
                if tree_model is None:
                    best = self.beam(t_p, terminal_types(t_n, g), 1)
                    hits += bool(best) and best[0][0] == gold
                else:
                    from .suggest import suggest

                    out = suggest(tree_model, self, t_p, k=1, k_tree=1, k_token=1, drop_identity=False)
                    hits += bool(out) and out[0].tokens == gold
            return hits / max(len(valid), 1)

        self.history_ = fit_loop(
            len(data),
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

    def beam(self, t_p: ParseTree, slot_types: Sequence[str], k_token: int = 10, scope: ScopeInfo | None = None):
        """Ranked ``(tokens, log-prob)`` fillings of ``slot_types`` given source ``t_p``."""
        check_is_fitted(self, "params_")
        scope = build_scope(t_p) if scope is None else scope
        return beam_tokens(
            self.params_, self.vocab_, self.grammar_, self.types_, tree_to_tokens(t_p), slot_types, scope, k_token
        )

    def predict(self, X, skeletons) -> list[tuple[str, ...] | None]:
        check_is_fitted(self, "params_")
        out = []
        for t_p, sk in zip(X, skeletons):
            best = self.beam(t_p, terminal_types(sk, self.grammar_), 1)
            out.append(best[0][0] if best else None)
        return out

    def score(self, X, y) -> float:
        """Top-1 exact match with gold skeletons."""
        X, y = check_pairs(X, y, self.grammar_)
        preds = self.predict(X, y)
        return sum(p == tuple(t for t, _ in tree_to_tokens(n)) for p, n in zip(preds, y)) / len(X)

    # -- persistence --

    def to_checkpoint(self) -> tuple[dict, dict]:
        check_is_fitted(self, "params_")
        meta = {
            "model": "token",
            "grammar_hash": self.grammar_hash_,
            "config": {k: v for k, v in self.get_params().items() if k != "grammar"},
            "vocab": self.vocab_.to_dict(),
            "history": getattr(self, "history_", []),
        }
        return meta, self.params_

    def save(self, path: str | Path) -> None:
        meta, arrays = self.to_checkpoint()
        nn.save_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path, grammar: Grammar | None = None) -> "TokenGenerator":
        meta, arrays = nn.load_checkpoint(path)
        return cls.from_checkpoint(meta, arrays, grammar)

    @classmethod
    def from_checkpoint(cls, meta: dict, arrays: dict, grammar: Grammar | None = None) -> "TokenGenerator":
        if meta.get("model") != "token":
            raise ValueError(f"expected a token checkpoint, got {meta.get('model')!r}")
        g = resolve_grammar(grammar)
        check_grammar_hash(meta["grammar_hash"], g)
        est = cls(grammar=grammar, **meta["config"])
        est.params_ = arrays
        est.grammar_ = g
        est.grammar_hash_ = g.source_hash
        est.vocab_ = Vocabulary.from_dict(meta["vocab"])
        est.types_ = type_index(g)
        est.history_ = meta.get("history", [])
        return est
