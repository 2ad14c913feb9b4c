import numpy as np
import pytest

from treedit import neural as nn
from treedit import tree_model as trm
from treedit._validation import GrammarMismatch
from treedit.grammar import parse_grammar_text
from treedit.syntax import parse, rules_to_tree, tree_to_rules
from treedit.tree_model import TreeTranslator

from oracles import all_derivations, tree_log_prob

TWO_WAY = 'start S\nterminal VAR\nterminal BOOL_LIT\nterminal SC = ";"\nS -> A SC\nA -> VAR\nA -> BOOL_LIT\n'


def _params(g, seed=0, d_e=4, d_h=5, scale=0.5):
    return trm.init_params(len(g.productions), d_e, d_h, np.random.default_rng(seed), scale)


def test_encode_single_rule_state(toy):
    p = _params(toy)
    enc = trm.encode_rules(p, [2])
    h, _, _ = nn.lstm_step(nn.LstmParams(p["enc.W"], p["enc.b"]), np.zeros(5), np.zeros(5), p["rule_emb"][2])
    assert enc.states.shape == (1, 5)
    np.testing.assert_array_equal(enc.states[0], h)


def test_encode_matches_step_chain(g, motiv):
    p = _params(g)
    rs = tree_to_rules(motiv[0])
    enc = trm.encode_rules(p, rs)
    assert len(enc.states) == len(rs)
    q = nn.LstmParams(p["enc.W"], p["enc.b"])
    h = c = np.zeros(5)
    for i, r in enumerate(rs):
        h, c, _ = nn.lstm_step(q, h, c, p["rule_emb"][r])
        np.testing.assert_array_equal(enc.states[i], h)


def test_encode_rejects_unknown_rule(toy):
    with pytest.raises(ValueError):
        trm.encode_rules(_params(toy), [99])


def test_decode_mask_and_zero_params(g, motiv):
    p = _params(g)
    enc = trm.encode_rules(p, tree_to_rules(motiv[0]))
    st = trm.TreeDecoderState(enc.h, enc.c, ("Stmt",))
    dist, _, _ = trm.decode_rule_step(p, st, enc, g)
    allowed = set(g.rule_ids_for("Stmt"))
    assert all(dist[i] == 0 for i in range(len(dist)) if i not in allowed)
    zero = {k: np.zeros_like(v) for k, v in p.items()}
    dist0, _, _ = trm.decode_rule_step(zero, st, enc, g)
    np.testing.assert_allclose(dist0[sorted(allowed)], 1 / len(allowed))


def test_decode_on_complete_state_raises(toy):
    p = _params(toy)
    enc = trm.encode_rules(p, [0])
    with pytest.raises(ValueError):
        trm.decode_rule_step(p, trm.TreeDecoderState(enc.h, enc.c, ()), enc, toy)


def test_stack_order_matches_preorder(g, motiv):
    stack = ("Ret_Stmt",)
    for node in (n for n in motiv[1].preorder() if not n.is_terminal):
        assert stack[-1] == node.symbol
        stack = trm.push_rule(stack, node.rule, g)
    assert stack == ()


def test_singleton_mask_loss_is_zero():
    gm = parse_grammar_text('start S\nterminal SC = ";"\nS -> SC\n')
    loss, _ = trm.tree_teacher_forced_loss(_params(gm), gm, [0], [0])
    assert loss == 0.0


def test_gradcheck_toy(toy):
    src = tree_to_rules(parse("return x < true ;", toy))
    tgt = tree_to_rules(parse("x == true ;", toy))
    p = _params(toy, d_e=3, d_h=4)
    errs = nn.grad_check_groups(lambda q: trm.tree_teacher_forced_loss(q, toy, src, tgt), p)
    assert max(errs.values()) <= 1e-4, errs


def test_loss_decreases_memorising_one_pair(g, motiv):
    src, tgt = tree_to_rules(motiv[0]), tree_to_rules(motiv[1])
    p = _params(g, d_e=8, d_h=8, scale=0.08)
    losses = []
    for _ in range(50):
        loss, grads = trm.tree_teacher_forced_loss(p, g, src, tgt)
        losses.append(loss)
        nn.sgd_update(p, grads, 0.05)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_loss_equals_forward_oracle(toy):
    p = _params(toy)
    src = tree_to_rules(parse("x ;", toy))
    for tgt in all_derivations(toy, "S"):
        loss, _ = trm.tree_teacher_forced_loss(p, toy, src, tgt)
        assert -loss == pytest.approx(tree_log_prob(p, toy, src, tgt, "S"), abs=1e-12)


def test_infeasible_target_raises(toy):
    p = _params(toy)
    with pytest.raises(ValueError):
        trm.tree_teacher_forced_loss(p, toy, [0], [5, 0])


def test_two_derivation_grammar_beam():
    gm = parse_grammar_text(TWO_WAY)
    p = _params(gm, seed=3)
    derivs = all_derivations(gm, "S")
    assert len(derivs) == 2
    beam = trm.beam_rules(p, gm, [0, 1], 2)
    oracle = sorted(((tree_log_prob(p, gm, [0, 1], d, "S"), d) for d in derivs), key=lambda t: (-t[0], t[1]))
    assert [r for r, _ in beam] == [d for _, d in oracle]
    for (_, lp), (olp, _) in zip(beam, oracle):
        assert lp == pytest.approx(olp, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_beam_equals_exhaustive(toy, seed):
    p = _params(toy, seed=seed, scale=1.0)
    src = tree_to_rules(parse("return x == y ;", toy))
    derivs = all_derivations(toy, "S")
    beam = trm.beam_rules(p, toy, src, len(derivs))
    got = {r: lp for r, lp in beam}
    assert set(got) == set(derivs)
    for d in derivs:
        assert got[d] == pytest.approx(tree_log_prob(p, toy, src, d, "S"), abs=1e-6)
    scores = [lp for _, lp in beam]
    assert scores == sorted(scores, reverse=True)


def _greedy_oracle(p, g, src, root):
    enc = trm.encode_rules(p, src)
    st = trm.initial_state(enc, root)
    total = 0.0
    while st.stack:
        dist, h, c = trm.decode_rule_step(p, st, enc, g)
        r = int(np.argmax(dist))
        total += float(np.log(dist[r]))
        st = trm.TreeDecoderState(h, c, trm.push_rule(st.stack, r, g), st.rules + (r,))
    return st.rules, total


@pytest.mark.parametrize("seed", range(4))
def test_k1_equals_greedy(g, motiv, seed):
    p = _params(g, seed=seed)
    src = tree_to_rules(motiv[0])
    rules, lp = trm.beam_rules(p, g, src, 1, max_steps=200)[0]
    o_rules, o_lp = _greedy_oracle(p, g, src, "Ret_Stmt")
    assert rules == o_rules and lp == pytest.approx(o_lp, abs=1e-12)


def test_beam_outputs_are_feasible(g, motiv):
    p = _params(g, seed=9, scale=1.0)
    for rules, _ in trm.beam_rules(p, g, tree_to_rules(motiv[0]), 8):
        rules_to_tree(rules, g, "Ret_Stmt")


def test_estimator_fit_predict_save_load(g, motiv, tmp_path):
    X, y = [motiv[0]], [motiv[1]]
    est = TreeTranslator(grammar=g, d_e=8, d_h=16, n_epoch=40, valid_patience=40, seed=1).fit(X, y)
    assert [tree_to_rules(t) for t in est.predict(X)] == [tree_to_rules(motiv[1])]
    assert est.score(X, y) == 1.0
    assert est.get_params()["d_h"] == 16
    path = tmp_path / "tree.json"
    est.save(path)
    again = TreeTranslator.load(path, g)
    assert again.beam(motiv[0], 3) == est.beam(motiv[0], 3)


def test_checkpoint_grammar_mismatch(g, toy, motiv, tmp_path):
    est = TreeTranslator(grammar=g, d_e=4, d_h=4, n_epoch=1).fit([motiv[0]], [motiv[1]])
    est.save(tmp_path / "t.json")
    with pytest.raises(GrammarMismatch):
        TreeTranslator.load(tmp_path / "t.json", toy)


def test_fit_rejects_mismatched_roots(g):
    with pytest.raises(ValueError):
        TreeTranslator(grammar=g, n_epoch=1).fit(["return a ;"], ["return a ; return b ;", "x"])
