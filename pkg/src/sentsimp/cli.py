"""Command-line entry point.

Subcommands: synth (generate a synthetic corpus), align (sentence-align two
documents), train, simplify, evaluate, gradcheck.  Exit codes: 0 success,
1 check failure, 2 usage or input error.  Machine-readable output is one
``key=value`` pair per line with period decimal separators.

The default seed comes from --seed, falling back to the ``S4_SEED``
environment variable, then 0.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import aligner as AL
from . import corpus as C
from . import gradcheck as G
from . import metrics as ME
from . import model as M
from . import trainer as TR
from .vocab import load_pretrained, tokenize


class InputError(Exception):
    """User-facing input problem; reported on stderr with exit code 2."""


def _default_seed() -> int:
    raw = os.environ.get("S4_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _read_lines(path: str) -> list[str]:
    if not os.path.exists(path):
        raise InputError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _read_token_lines(path: str) -> list[list[str]]:
    return [tokenize(line) for line in _read_lines(path)]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sentsimp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus with gold sidecars")
    p.add_argument("out_prefix", help="writes <prefix>.tsv, <prefix>.align, <prefix>.dict")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--copy-frac", type=float, default=0.9)
    p.add_argument("--sub-frac", type=float, default=0.1)
    p.add_argument("--split-frac", type=float, default=0.0)
    p.add_argument("--delete-frac", type=float, default=0.0)
    p.add_argument("--dict-size", type=int, default=12)
    p.add_argument("--min-sent-len", type=int, default=4)
    p.add_argument("--max-sent-len", type=int, default=9)
    p.add_argument("--pairs-per-article", type=int, default=10)
    p.add_argument("--zipf-exponent", type=float, default=2.0)
    p.add_argument("--zipf-offset", type=float, default=6.0)
    p.add_argument("--markov-branch", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("align", help="sentence-align a complex document to a simple one")
    p.add_argument("complex_file")
    p.add_argument("simple_file")
    p.add_argument("out", help="output alignment file")
    p.add_argument("--gamma", type=float, default=10.0, help="additive skip score")

    p = sub.add_parser("train", help="train a simplification model")
    p.add_argument("corpus", help="parallel TSV file")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--embedding-dim", type=int, default=300)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-copy-feed", action="store_true")
    p.add_argument("--bce", action="store_true", help="fine-tune with the copy-encouraging loss")
    p.add_argument("--trainable-embeddings", type=int, default=None,
                   help="trainable embedding rows; all corpus tokens when omitted")
    p.add_argument("--pretrained", default=None, help="pre-trained embedding text file")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.7)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--max-epochs", type=int, default=10)
    p.add_argument("--phase2-max-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--phase2-lr", type=float, default=None)
    p.add_argument("--validation-sample", type=int, default=1024)
    p.add_argument("--early-stop-metric", choices=("loss", "bleu"), default="loss")
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simplify", help="simplify sentences with a trained model")
    p.add_argument("checkpoint")
    p.add_argument("input", help="one sentence per line")
    p.add_argument("--out", default=None, help="output file (stdout when omitted)")

    p = sub.add_parser("evaluate", help="score candidate simplifications")
    p.add_argument("candidate_file")
    p.add_argument("reference_file")
    p.add_argument("original_file")

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--size", choices=("tiny",), default="tiny")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inject-fault", default=None, metavar="OP",
                   help="testing hook: corrupt the named op's adjoint")

    return parser


def _cmd_synth(args) -> int:
    cfg = C.SynthConfig(
        vocab_size=args.vocab_size,
        n_pairs=args.pairs,
        copy_frac=args.copy_frac,
        sub_frac=args.sub_frac,
        split_frac=args.split_frac,
        delete_frac=args.delete_frac,
        dict_size=args.dict_size,
        min_len=args.min_sent_len,
        max_len=args.max_sent_len,
        pairs_per_article=args.pairs_per_article,
        zipf_exponent=args.zipf_exponent,
        zipf_offset=args.zipf_offset,
        markov_branch=args.markov_branch,
        seed=args.seed if args.seed is not None else _default_seed(),
    )
    sc = C.synth_generate(cfg)
    try:
        C.write_parallel_tsv(sc.corpus, args.out_prefix + ".tsv")
        C.write_alignments(sc.alignments, args.out_prefix + ".align")
        C.write_dictionary(sc.dictionary, args.out_prefix + ".dict")
    except OSError as exc:
        raise InputError(f"cannot write corpus files: {exc}") from exc
    print(f"pairs={len(sc.corpus)}")
    print(f"corpus={args.out_prefix}.tsv")
    return 0


def _cmd_align(args) -> int:
    comp = [s for s in _read_token_lines(args.complex_file)]
    simp = [s for s in _read_token_lines(args.simple_file)]
    result = AL.align(comp, simp, args.gamma)
    text = AL.format_alignment(result)
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            if text:
                fh.write(text + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc}") from exc
    print(f"score={result.score!r}")
    return 0


def _cmd_train(args) -> int:
    if not os.path.exists(args.corpus):
        raise InputError(f"no such file: {args.corpus}")
    try:
        corpus = C.read_parallel_tsv(args.corpus)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    seed = args.seed if args.seed is not None else _default_seed()
    train_frac = 1.0 - args.val_frac - args.test_frac
    if train_frac <= 0:
        raise InputError("--val-frac and --test-frac leave no training data")
    corpus = C.split_by_article(corpus, (train_frac, args.val_frac, args.test_frac), seed=seed)
    hp = M.Hyperparams(
        layers=args.layers,
        hidden=args.hidden,
        embedding_dim=args.embedding_dim,
        max_len=args.max_len,
        use_attention=not args.no_attention,
        use_copy_feed=not args.no_copy_feed,
        use_bce_loss=args.bce,
        trainable_embed_count=args.trainable_embeddings,
    )
    config = TR.TrainConfig(
        batch_size=args.batch_size,
        dropout=args.dropout,
        validation_sample=args.validation_sample,
        patience=args.patience,
        max_epochs=args.max_epochs,
        phase2_max_epochs=args.phase2_max_epochs,
        phase2_lr=args.phase2_lr,
        seed=seed,
        early_stop_metric=args.early_stop_metric,
        lr=args.lr,
    )
    pretrained = None
    if args.pretrained is not None:
        if not os.path.exists(args.pretrained):
            raise InputError(f"no such file: {args.pretrained}")
        pretrained = load_pretrained(args.pretrained, dim=args.embedding_dim)
    resume = None
    if args.resume is not None:
        try:
            resume = TR.Checkpoint.load(args.resume)
        except TR.CheckpointError as exc:
            raise InputError(str(exc)) from exc
    try:
        ckpt = TR.train(corpus, hp, config, pretrained=pretrained, resume_from=resume, log=print)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    ckpt.save(args.checkpoint)
    if ckpt.best_val_score is not None:
        print(f"best_val_loss={ckpt.best_val_score!r}")
    print(f"checkpoint={args.checkpoint}")
    return 0


def _cmd_simplify(args) -> int:
    try:
        ckpt = TR.Checkpoint.load(args.checkpoint)
        params = ckpt.build_model("best")
    except (TR.CheckpointError, KeyError, ValueError) as exc:
        raise InputError(f"cannot load checkpoint: {exc}") from exc
    lines = _read_lines(args.input)
    out_lines = []
    for line in lines:
        tokens = tokenize(line)
        if not tokens:
            out_lines.append("")
            continue
        tokens = tokens[: params.hp.max_len]
        ids = [params.input_vocab.id_of(t) for t in tokens]
        gen, _trace = M.decode_generate(ids, tokens, params)
        out_lines.append(" ".join(gen))
    text = "\n".join(out_lines) + ("\n" if out_lines else "")
    if args.out is None:
        sys.stdout.write(text)
    else:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise InputError(f"cannot write {args.out}: {exc}") from exc
    return 0


def _cmd_evaluate(args) -> int:
    cands = _read_token_lines(args.candidate_file)
    refs = _read_token_lines(args.reference_file)
    origs = _read_token_lines(args.original_file)
    if not (len(cands) == len(refs) == len(origs)):
        raise InputError(
            f"line counts differ: {len(cands)} candidates, {len(refs)} references, {len(origs)} originals"
        )
    if not cands:
        raise InputError("empty input files")
    try:
        report = ME.evaluate_corpus(cands, refs, origs)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    print(report.table())
    for line in report.kv_lines():
        print(line)
    return 0


def _cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    results = G.run_all(seed=seed, inject_fault=args.inject_fault)
    worst = max(results, key=lambda r: r.error / r.tolerance)
    for r in results:
        print(f"{r.name}={r.error!r}")
    print(f"worst_op={worst.name}")
    print(f"worst_error={worst.error!r}")
    failures = [r for r in results if not r.ok]
    if failures:
        print(f"failed={','.join(r.name for r in failures)}")
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "align":
            return _cmd_align(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "simplify":
            return _cmd_simplify(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        raise InputError(f"unknown command {args.command}")
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
