import sys
import random

import pytest

from treedit.grammar import load_minij, parse_grammar_text
from treedit.syntax import parse

MOTIV_BEFORE = "return super . equals ( object ) ;"
MOTIV_AFTER = "return object == this ;"

# A finite toy grammar: small enough to enumerate every derivation.
TOY_GRAMMAR = """
start S
terminal VAR
terminal BOOL_LIT
terminal SC = ";"
terminal EQ = "=="
terminal LT = "<"
terminal RETURN = "return"
S -> RETURN E SC
S -> E SC
E -> A EQ A
E -> A LT A
E -> A
A -> VAR
A -> BOOL_LIT
"""


@pytest.fixture(scope="session")
def g():
    return load_minij()


@pytest.fixture(scope="session")
def toy():
    return parse_grammar_text(TOY_GRAMMAR)


@pytest.fixture(scope="session")
def motiv(g):
    return parse(MOTIV_BEFORE, g, start="Ret_Stmt"), parse(MOTIV_AFTER, g, start="Ret_Stmt")


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n}: FAIL  (did not complete)"))
