"""Two-stage code edit suggestion: predict the edited parse-tree skeleton, then its tokens.

Typical use::

    from treedit import EditSuggester, load_minij
    model = EditSuggester(grammar=load_minij()).fit(before, after)
    for s in model.suggest("return a . equals ( b ) ;"):
        print(s.joint, s.code)
"""

from ._training import TrainConfig
from ._validation import GrammarMismatch
from .editmine import (
    DatasetSplit,
    EditPair,
    ExtractionConfig,
    PatchRecord,
    extract_pair,
    extract_pairs,
    split_and_dedup,
)
from .grammar import Grammar, GrammarError, ScopeInfo, load_grammar, load_minij, rules_for, tokens_for
from .suggest import EditSuggester, Suggestion, suggest
from .syntax import ParseError, ParseTree, parse, render, rules_to_tree, tree_to_rules, tree_to_tokens
from .token_model import TokenGenerator, Vocabulary, copy_resolve
from .train_eval import EvalReport, evaluate, train
from .tree_model import TreeTranslator

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "EditPair",
    "EditSuggester",
    "EvalReport",
    "ExtractionConfig",
    "Grammar",
    "GrammarError",
    "GrammarMismatch",
    "ParseError",
    "ParseTree",
    "PatchRecord",
    "ScopeInfo",
    "Suggestion",
    "TokenGenerator",
    "TrainConfig",
    "TreeTranslator",
    "Vocabulary",
    "copy_resolve",
    "evaluate",
    "extract_pair",
    "extract_pairs",
    "load_grammar",
    "load_minij",
    "parse",
    "render",
    "rules_for",
    "rules_to_tree",
    "split_and_dedup",
    "suggest",
    "tokens_for",
    "train",
    "tree_to_rules",
    "tree_to_tokens",
]
