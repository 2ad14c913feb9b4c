"""Command-line entry point: ``treedit {extract,train,suggest,eval,gradcheck,synth}``.

Data goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 failure,
2 usage error or unparsable input.

A JSON config file (``--config``, or the path in ``$TREEDIT_CONFIG``) can set
defaults for any training or extraction flag, e.g.
``{"n_epoch": 20, "lr": 0.5, "d_h": 64, "max_tree_size": 20}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

from . import synth
from ._training import TrainConfig
from ._validation import GrammarMismatch
from .editmine import (
    DatasetSplit,
    ExtractionConfig,
    extract_pairs,
    read_pairs,
    read_records,
    split_and_dedup,
    write_pairs,
    write_records,
)
from .grammar import GrammarError, load_grammar, load_minij
from .suggest import suggest
from .syntax import LexError, ParseError, parse
from .token_model import TokenGenerator
from .train_eval import evaluate, gradcheck_models, load_models, train, write_history_csv
from .tree_model import TreeTranslator

CONFIG_ENV = "TREEDIT_CONFIG"
GRADCHECK_TOL = 1e-4
_CONFIG_KEYS = {
    "n_epoch", "valid_patience", "lr", "lr_decay", "clip", "seed",
    "d_e", "d_h", "min_freq", "max_change_size", "max_tree_size",
}


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _ks(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _load_config(path: str | None) -> dict:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}", 2) from None
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys in {path}: {', '.join(sorted(unknown))}", 2)
    return cfg


def _setting(args, cfg: dict, name: str, default):
    """Command-line flag, else config file, else built-in default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _grammar(args):
    if args.grammar:
        try:
            return load_grammar(args.grammar)
        except (OSError, GrammarError) as e:
            raise CliError(f"bad grammar {args.grammar}: {e}", 2) from None
    return load_minij()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------


def cmd_extract(args) -> int:
    g = _grammar(args)
    cfg = _load_config(args.config)
    ecfg = ExtractionConfig(
        _setting(args, cfg, "max_change_size", 10), _setting(args, cfg, "max_tree_size", 20)
    )
    records = read_records(args.corpus)
    stats: Counter = Counter()
    pairs = extract_pairs(records, g, ecfg, stats, n_jobs=args.jobs)
    split = split_and_dedup(pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in split.parts().items():
        write_pairs(out / f"{name}.jsonl", part)
    summary = {
        "records": len(records),
        "skipped": {k: v for k, v in stats.items() if k not in ("records", "ok")},
        "pairs": len(pairs),
        "duplicates_removed": split.n_duplicates,
        "train": len(split.train),
        "valid": len(split.valid),
        "test": len(split.test),
        "max_change_size": ecfg.max_change_size,
        "max_tree_size": ecfg.max_tree_size,
    }
    _write_json(out / "stats.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    g = _grammar(args)
    cfg = _load_config(args.config)
    data = Path(args.data)
    split = DatasetSplit(
        train=read_pairs(data / "train.jsonl", g),
        valid=read_pairs(data / "valid.jsonl", g) if (data / "valid.jsonl").exists() else [],
    )
    if not split.train:
        raise CliError(f"no training pairs in {data / 'train.jsonl'}")
    tcfg = TrainConfig(
        n_epoch=_setting(args, cfg, "n_epoch", 30),
        valid_patience=_setting(args, cfg, "valid_patience", 5),
        lr=_setting(args, cfg, "lr", 0.5),
        lr_decay=_setting(args, cfg, "lr_decay", 0.5),
        clip=_setting(args, cfg, "clip", 5.0),
        seed=_setting(args, cfg, "seed", 0),
    )
    cls = TreeTranslator if args.model == "tree" else TokenGenerator
    init = cls.load(args.resume_from, g) if args.resume_from else None
    tree_model = TreeTranslator.load(args.tree_checkpoint, g) if args.tree_checkpoint else None
    est = train(
        args.model,
        split,
        tcfg,
        g,
        d_e=_setting(args, cfg, "d_e", 32),
        d_h=_setting(args, cfg, "d_h", 64),
        min_freq=_setting(args, cfg, "min_freq", 2),
        init=init,
        tree_model=tree_model,
    )
    est.save(args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    write_history_csv(log_path, est.history_)
    best = max(est.history_, key=lambda r: r["val_metric"])
    print(f"saved {args.out}: {len(est.history_)} epochs, best validation top-1 {best['val_metric']:.4f}")
    return 0


def _read_input(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", 2) from None


def cmd_suggest(args) -> int:
    tree, token = load_models(args.tree, args.token, _grammar(args))
    text = _read_input(args.input)
    try:
        t_p = parse(text, tree.grammar_, start=args.root)
    except (LexError, ParseError) as e:
        raise CliError(f"cannot parse input: {e}", 2) from None
    for i, s in enumerate(suggest(tree, token, t_p, k=args.K, k_tree=args.k_tree, k_token=args.k_token), 1):
        print(f"{i}\t{s.joint:.6f}\t{s.code}")
    return 0


def cmd_eval(args) -> int:
    tree, token = load_models(args.tree, args.token, _grammar(args))
    pairs = read_pairs(args.test, tree.grammar_)
    report = evaluate(tree, token, pairs, ks=args.ks, k_tree=args.k_tree, k_token=args.k_token)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    sys.stdout.write(report.to_table())
    return 0


def cmd_gradcheck(args) -> int:
    errs = gradcheck_models(seed=args.seed, grammar=_grammar(args), corrupt=args.corrupt)
    width = max(map(len, errs))
    for name, err in errs.items():
        print(f"{name:<{width}}  {err:.3e}  {'ok' if err <= GRADCHECK_TOL else 'FAIL'}")
    worst = max(errs.values())
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if worst > GRADCHECK_TOL:
        raise CliError(f"gradient check failed: max relative error {worst:.3e} > {GRADCHECK_TOL:g}")
    return 0


def cmd_synth(args) -> int:
    records = synth.generate_corpus(args.n, seed=args.seed, n_projects=args.projects, n_names=args.names)
    write_records(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treedit", description="Tree-then-token code edit suggestion.")
    ap.add_argument("--grammar", help="grammar file (default: bundled MiniJ)")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="mine edit pairs from a patch corpus and split them")
    p.add_argument("corpus", help="JSON-lines file of {project, timestamp, before, after}")
    p.add_argument("--out", required=True, help="output directory for train/valid/test .jsonl")
    p.add_argument("--max-change-size", dest="max_change_size", type=_positive_int)
    p.add_argument("--max-tree-size", dest="max_tree_size", type=_positive_int)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--config")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train the tree or token model")
    p.add_argument("--model", choices=("tree", "token"), required=True)
    p.add_argument("--data", required=True, help="directory written by 'extract'")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log (default: checkpoint path with .csv)")
    p.add_argument("--resume-from", dest="resume_from", help="checkpoint to continue training from")
    p.add_argument("--tree-checkpoint", dest="tree_checkpoint", help="validate the token model through this tree model")
    p.add_argument("--n-epoch", dest="n_epoch", type=_positive_int)
    p.add_argument("--valid-patience", dest="valid_patience", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-e", dest="d_e", type=_positive_int)
    p.add_argument("--d-h", dest="d_h", type=_positive_int)
    p.add_argument("--min-freq", dest="min_freq", type=_positive_int, help="token vocabulary cutoff")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    def models(p):
        p.add_argument("--tree", required=True, help="tree model checkpoint")
        p.add_argument("--token", required=True, help="token model checkpoint")
        p.add_argument("--k-tree", dest="k_tree", type=_positive_int, default=2)
        p.add_argument("--k-token", dest="k_token", type=_positive_int, default=10)

    p = sub.add_parser("suggest", help="print ranked edits for a code fragment")
    models(p)
    p.add_argument("--input", default="-", help="fragment file, '-' for stdin")
    p.add_argument("-K", type=_positive_int, default=5, help="number of suggestions")
    p.add_argument("--root", help="start symbol for the fragment (default: grammar start)")
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("eval", help="top-K exact match on a test set")
    models(p)
    p.add_argument("--test", required=True, help="test .jsonl written by 'extract'")
    p.add_argument("--ks", type=_ks, default=[1, 2, 5, 10])
    p.add_argument("--out", help="directory for report.json and report.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of both models' gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="perturb analytic gradients (must fail)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic patch corpus")
    p.add_argument("--n", type=_positive_int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--projects", type=_positive_int, default=5)
    p.add_argument("--names", type=_positive_int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"treedit: error: {e}", file=sys.stderr)
        return e.code
    except GrammarMismatch as e:
        print(f"treedit: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"treedit: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
