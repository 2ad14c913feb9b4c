import math

import numpy as np
import pytest

from treedit import neural as nn
from treedit import token_model as tm
from treedit.grammar import UNKNOWN, ScopeInfo
from treedit.syntax import AugToken, parse, terminal_types, tree_to_tokens
from treedit.token_model import TokenGenerator, Vocabulary, build_scope, copy_resolve

from oracles import all_fillings


def _setup(g, pairs, seed=0, d_e=3, d_h=4, min_freq=1, scale=0.5):
    vocab = Vocabulary.build(pairs, g, min_freq=min_freq)
    types = tm.type_index(g)
    params = tm.init_params(len(vocab), len(types), d_e, d_h, np.random.default_rng(seed), scale)
    return vocab, types, params


def test_scope_of_motivating_source(motiv):
    scope = build_scope(motiv[0])
    assert {"object", "this", "super"} <= scope.vars
    assert scope.methods == {"equals"} and scope.types == frozenset()


def test_scope_without_identifiers(g):
    scope = build_scope(parse("return 1 ;", g, start="Ret_Stmt"))
    assert scope == ScopeInfo(frozenset({"this", "super"}), frozenset(), frozenset())


def test_scope_is_leaf_union(g, rng):
    from treedit.syntax import random_tree

    for _ in range(30):
        t = random_tree(g, rng, max_depth=8)
        vars_ = {n.token for n in t.leaves() if n.symbol == "VAR"} | {"this", "super"}
        assert build_scope(t).vars == vars_


def test_vocabulary_cutoff_and_reserved_ids(g, motiv):
    other = (parse("return a . equals ( object ) ;", g, start="Ret_Stmt"), parse("return object == a ;", g, start="Ret_Stmt"))
    vocab = Vocabulary.build([motiv, other], g, min_freq=2)
    assert vocab.tokens[:2] == [UNKNOWN, tm.BOS]
    assert "object" in vocab  # two pairs
    assert "a" not in vocab and "super" not in vocab  # one pair each
    assert {"true", "false", ";", "==", "return"} <= set(vocab.tokens)
    assert Vocabulary.from_dict(vocab.to_dict()).tokens == vocab.tokens


def test_encoder_states_for_motivating_call(g):
    call = parse("super . equals ( object )", g, start="Method_call")
    aug = tree_to_tokens(call)
    assert len(aug) == 6
    vocab, types, params = _setup(g, [(call, call)])
    enc = tm.encode_tokens(params, vocab, types, aug)
    assert enc.states.shape[0] == 7
    p = tm.TokenParams.of(params)
    h = c = np.zeros(4)
    h, c, _ = nn.lstm_step(p.enc, h, c, np.concatenate([p.tok_emb[1], p.type_emb[types[tm.BOS]]]))
    np.testing.assert_array_equal(enc.states[0], h)
    for i, (tok, ty) in enumerate(aug, 1):
        h, c, _ = nn.lstm_step(p.enc, h, c, np.concatenate([p.tok_emb[vocab.id(tok)], p.type_emb[types[ty]]]))
        np.testing.assert_array_equal(enc.states[i], h)


def test_empty_source_is_bos_only(g, motiv):
    vocab, types, params = _setup(g, [motiv])
    assert tm.encode_tokens(params, vocab, types, []).states.shape[0] == 1


def test_decode_masks(g, motiv):
    vocab, types, params = _setup(g, [motiv])
    enc = tm.encode_tokens(params, vocab, types, tree_to_tokens(motiv[0]))
    st = tm.TokenDecoderState(enc.h, enc.c, vocab.index[tm.BOS])
    scope = ScopeInfo(frozenset({"object", "this"}), frozenset(), frozenset())
    dist, *_ = tm.decode_token_step(params, vocab, g, types, st, enc, "SC", scope)
    assert dist[vocab.index[";"]] == 1.0
    dist, *_ = tm.decode_token_step(params, vocab, g, types, st, enc, "BOOL_LIT", scope)
    assert {vocab.tokens[i] for i in np.flatnonzero(dist)} == {"true", "false"}
    dist, *_ = tm.decode_token_step(params, vocab, g, types, st, enc, "VAR", scope)
    assert {vocab.tokens[i] for i in np.flatnonzero(dist)} == {"object", "this", UNKNOWN}
    # restrict-and-renormalize oracle
    p = tm.TokenParams.of(params)
    _, _, logits, _, _ = tm._dec_forward(p, enc.h, enc.c, vocab.index[tm.BOS], types["VAR"], enc.states)
    ids = [vocab.index[t] for t in ("<unknown>", "this", "object")]
    e = np.exp(logits[ids] - logits[ids].max())
    np.testing.assert_allclose(dist[ids], e / e.sum(), atol=1e-12)


SRC = [AugToken("return", "RETURN"), AugToken("a", "VAR"), AugToken(".", "DOT"), AugToken("get", "METHOD"),
       AugToken("(", "LPAR"), AugToken("object", "VAR"), AugToken(")", "RPAR"), AugToken(";", "SC")]
SCOPE = ScopeInfo(frozenset({"a", "object", "this", "super"}), frozenset({"get"}), frozenset())


def test_copy_peaked_attention():
    w = np.zeros(len(SRC) + 1)
    w[6] = 0.9  # BOS row first, so "object" is row 6
    w[0] = 0.1
    assert copy_resolve(w, SRC, "VAR", SCOPE) == "object"


def test_copy_uniform_attention_takes_earliest():
    w = np.full(len(SRC) + 1, 1 / (len(SRC) + 1))
    assert copy_resolve(w, SRC, "VAR", SCOPE) == "a"
    assert copy_resolve(w, SRC, "METHOD", SCOPE) == "get"


def test_copy_falls_back_to_global_argmax():
    w = np.array([0.05, 0.1, 0.1, 0.1, 0.1, 0.35, 0.05, 0.1, 0.05])
    # no TYPE tokens in the source: the most attended token overall
    assert copy_resolve(w, SRC, "TYPE", SCOPE) == "("


def test_copy_prefers_compatible_over_global_peak():
    w = np.array([0.0, 0.05, 0.04, 0.7, 0.0, 0.0, 0.2, 0.01, 0.0])
    assert copy_resolve(w, SRC, "VAR", SCOPE) == "object"


def test_copy_empty_source():
    assert copy_resolve(np.array([1.0]), [], "VAR", SCOPE) is None


def test_target_labels_and_unconcretizable(g, motiv):
    vocab, types, params = _setup(g, [motiv], min_freq=2)
    src = tree_to_tokens(motiv[0])
    scope = build_scope(motiv[0])
    # "object" is OOV but copyable; "this" is OOV and absent from the source
    assert tm.target_labels(vocab, g, src, [AugToken("object", "VAR")], scope) == [0]
    assert not tm.is_concretizable(vocab, g, src, tree_to_tokens(motiv[1]), scope)
    with pytest.raises(tm.UnconcretizableError):
        tm.target_labels(vocab, g, src, [AugToken("zz", "VAR")], scope)
    assert tm.target_labels(vocab, g, src, [AugToken(";", "SC")], scope) == [vocab.index[";"]]


def test_loss_singleton_plus_binary(g, motiv):
    vocab, types, params = _setup(g, [motiv])
    tgt = [AugToken(";", "SC"), AugToken("true", "BOOL_LIT")]
    src = tree_to_tokens(motiv[0])
    scope = build_scope(motiv[0])
    loss, _ = tm.token_teacher_forced_loss(params, vocab, g, types, src, tgt, scope)
    p = tm.TokenParams.of(params)
    enc = tm.encode_tokens(params, vocab, types, src)
    h, c, _, _, _ = tm._dec_forward(p, enc.h, enc.c, vocab.index[tm.BOS], types["SC"], enc.states)
    _, _, logits, _, _ = tm._dec_forward(p, h, c, vocab.index[";"], types["BOOL_LIT"], enc.states)
    t, f = logits[vocab.index["true"]], logits[vocab.index["false"]]
    assert loss == pytest.approx(-math.log(math.exp(t) / (math.exp(t) + math.exp(f))), abs=1e-12)


def test_token_gradcheck(g, motiv):
    vocab, types, params = _setup(g, [motiv])
    src, tgt, scope = tree_to_tokens(motiv[0]), tree_to_tokens(motiv[1]), build_scope(motiv[0])
    errs = nn.grad_check_groups(lambda p: tm.token_teacher_forced_loss(p, vocab, g, types, src, tgt, scope), params)
    assert max(errs.values()) <= 1e-4, errs


def test_loss_decreases_memorising_one_pair(g, motiv):
    vocab, types, params = _setup(g, [motiv], d_e=8, d_h=8, scale=0.08)
    src, tgt, scope = tree_to_tokens(motiv[0]), tree_to_tokens(motiv[1]), build_scope(motiv[0])
    losses = []
    for _ in range(50):
        loss, grads = tm.token_teacher_forced_loss(params, vocab, g, types, src, tgt, scope)
        losses.append(loss)
        nn.sgd_update(params, grads, 0.05)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_all_singleton_masks(g, motiv):
    vocab, types, params = _setup(g, [motiv])
    out = tm.beam_tokens(params, vocab, g, types, tree_to_tokens(motiv[0]), ["RETURN", "SC"], build_scope(motiv[0]), 5)
    assert out == [(("return", ";"), 0.0)]


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("slots", [["VAR", "EQ", "VAR"], ["BOOL_LIT", "LT", "INT_LIT"], ["METHOD", "VAR"]])
def test_beam_equals_enumeration(g, motiv, seed, slots):
    extra = (parse("return 3 < 4 ;", g, start="Ret_Stmt"), parse("return false ;", g, start="Ret_Stmt"))
    vocab, types, params = _setup(g, [motiv, extra], seed=seed, scale=1.0)
    src, scope = tree_to_tokens(motiv[0]), build_scope(motiv[0])
    oracle = all_fillings(params, vocab, g, types, src, slots, scope)
    beam = tm.beam_tokens(params, vocab, g, types, src, slots, scope, len(oracle))
    got = sorted(beam)
    want = sorted(oracle)
    assert [t for t, _ in got] == [t for t, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, abs=1e-6)
    assert UNKNOWN not in {tok for toks, _ in beam for tok in toks}


def test_k1_equals_greedy(g, motiv):
    vocab, types, params = _setup(g, [motiv], seed=5, scale=1.0)
    src, scope = tree_to_tokens(motiv[0]), build_scope(motiv[0])
    slots = terminal_types(motiv[1], g)
    p = tm.TokenParams.of(params)
    enc = tm.encode_tokens(params, vocab, types, src)
    h, c, prev, toks, lp = enc.h, enc.c, vocab.index[tm.BOS], [], 0.0
    for ty in slots:
        h, c, logits, w, _ = tm._dec_forward(p, h, c, prev, types[ty], enc.states)
        dist = nn.masked_softmax(logits, tm.allowed_ids(vocab, g, ty, scope))
        prev = int(np.argmax(dist))
        lp += float(np.log(dist[prev]))
        toks.append(vocab.tokens[prev] if prev else copy_resolve(w, src, ty, scope))
    (b_toks, b_lp), = tm.beam_tokens(params, vocab, g, types, src, slots, scope, 1)
    assert list(b_toks) == toks and b_lp == pytest.approx(lp, abs=1e-12)


def test_forced_unknown_reaches_copy(g, motiv):
    # every OOV-but-copyable target is reachable through the copy path
    vocab, types, params = _setup(g, [motiv], min_freq=5, scale=1.0)
    src, scope = tree_to_tokens(motiv[0]), build_scope(motiv[0])
    outs = tm.beam_tokens(params, vocab, g, types, src, ["VAR"], scope, 10)
    assert {t[0] for t, _ in outs} & {"super", "object"}


def test_estimator_round_trip(g, motiv, tmp_path):
    X, y = [motiv[0]], [motiv[1]]
    est = TokenGenerator(grammar=g, d_e=8, d_h=16, n_epoch=30, valid_patience=30, lr_decay=1.0, min_freq=1).fit(X, y)
    assert est.predict(X, y) == [("return", "object", "==", "this", ";")]
    est.save(tmp_path / "tok.json")
    again = TokenGenerator.load(tmp_path / "tok.json", g)
    slots = terminal_types(motiv[1], g)
    assert again.beam(motiv[0], slots, 4) == est.beam(motiv[0], slots, 4)


def test_unconcretizable_pairs_are_skipped(g):
    X = [parse("return a ;", g, start="Ret_Stmt")] * 2
    y = [parse("return b ;", g, start="Ret_Stmt"), parse("return a ;", g, start="Ret_Stmt")]
    est = TokenGenerator(grammar=g, d_e=4, d_h=4, n_epoch=1, min_freq=2).fit(X, y)
    assert est.n_unconcretizable_ == 1
