"""Command line interface.

Subcommands cover the whole workflow: synthesize a corpus, train a model,
force-align, score alignments against a reference, inspect learned
transition probabilities, dump soft alignments, and run the numerical
self-checks.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .alignment import (
    corpus_tse,
    dump_soft_alignment,
    read_alignments,
    remap_alignment_labels,
    write_alignments,
)
from .check import run_gradient_check, run_oracle_check, run_viterbi_check
from .checkpoint import load_model, save_model
from .config import (
    SynthConfig,
    parse_overrides,
    synth_config_from_file,
    synth_config_from_mapping,
    train_config_from_file,
    train_config_from_mapping,
)
from .data import load_corpus, make_generative_spec, synth_corpus
from .trainer import align_corpus, train
from .transitions import sigmoid


def _cmd_synth(args) -> int:
    overrides = parse_overrides(args.set)
    if args.spec:
        sc = synth_config_from_file(args.spec, overrides)
    elif overrides:
        sc = synth_config_from_mapping(overrides, source="--set")
    else:
        sc = SynthConfig()
    spec = make_generative_spec(
        n_speech_labels=sc.n_speech_labels,
        feature_dim=sc.feature_dim,
        separation=sc.separation,
        std=sc.std,
        p_forward_speech=sc.p_forward_speech,
        p_forward_silence=sc.p_forward_silence,
        min_labels=sc.min_labels,
        max_labels=sc.max_labels,
        max_frames=sc.max_frames,
        substates_per_speech_label=sc.substates_per_speech_label,
        substates_for_silence=sc.substates_for_silence,
        seed=sc.seed,
    )
    corpus = synth_corpus(spec, args.out, sc.n_utterances)
    frames = sum(u.features.shape[0] for u in corpus.utterances)
    print(
        f"wrote {len(corpus)} utterances, {frames} frames, "
        f"{corpus.inventory.n_labels - 1} speech labels to {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    overrides = parse_overrides(args.set)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.config:
        cfg = train_config_from_file(args.config, overrides)
    else:
        cfg = train_config_from_mapping(overrides, source="--set")
    corpus = load_corpus(args.corpus)
    log = None if args.quiet else print
    result = train(corpus, cfg, log=log)
    save_model(args.out, result.model)
    if not args.quiet:
        print(f"final loss/frame {result.final_loss:.6f}; model saved to {args.out}")
    return 0


def _cmd_align(args) -> int:
    model = load_model(args.model)
    corpus = load_corpus(
        args.corpus,
        substates_per_speech_label=model.inventory.substates_per_speech_label,
        substates_for_silence=model.inventory.substates_for_silence,
    )
    table = align_corpus(
        model, corpus, model.scales, prior_scale=args.prior_scale, threads=args.threads
    )
    skipped = len(corpus) - len(table)
    names = [model.inventory.name_of(k) for k in range(model.inventory.n_labels)]
    ordered = [table[u.utt_id] for u in corpus.utterances if u.utt_id in table]
    write_alignments(args.out, ordered, names)
    print(f"aligned {len(ordered)} utterances ({skipped} infeasible) to {args.out}")
    return 0


def _cmd_tse(args) -> int:
    hyp, hyp_names = read_alignments(args.hyp)
    ref, ref_names = read_alignments(args.ref)
    # ids are assigned per file by appearance order; put both on one table
    hyp = remap_alignment_labels(hyp, hyp_names, ref_names)
    report = corpus_tse(hyp, ref)
    print(
        f"tse_frames={report.tse_frames:.6f} tse_ms={report.tse_ms:.6f} "
        f"segments={report.num_segments} skipped_utts={report.num_skipped}"
    )
    return 0


def _cmd_show_tm(args) -> int:
    model = load_model(args.model)
    tm = model.transitions
    kind = tm.paramization.kind
    print(f"kind: {kind}")
    if tm.paramization.input_dependent:
        print("per-frame probabilities depend on the input; bias-implied values:")
    width = max(len(n) for n in tm.table.names)
    print(f"{'slot'.ljust(width)}  {'p_forward':>10}  {'p_loop':>10}  {'logit':>10}")
    for name, z in zip(tm.table.names, tm.logits):
        p = float(sigmoid(z))
        print(f"{name.ljust(width)}  {p:10.6f}  {1.0 - p:10.6f}  {float(z):10.6f}")
    return 0


def _cmd_check(args) -> int:
    failed = []
    if args.suite in ("oracle", "all"):
        rep = run_oracle_check(instances=args.instances, seed=args.seed)
        print("[oracle]")
        for line in rep.lines():
            print("  " + line)
        print(f"  result: {'ok' if rep.ok else 'FAILED'}")
        if not rep.ok:
            failed.append("oracle")
    if args.suite in ("gradients", "all"):
        rep = run_gradient_check(seed=args.seed)
        print("[gradients]")
        for line in rep.lines():
            print("  " + line)
        print(f"  result: {'ok' if rep.ok else 'FAILED'}")
        if not rep.ok:
            failed.append("gradients")
    if args.suite in ("viterbi", "all"):
        rep = run_viterbi_check(instances=max(500, args.instances // 2), seed=args.seed)
        print("[viterbi]")
        for line in rep.lines():
            print("  " + line)
        print(f"  result: {'ok' if rep.ok else 'FAILED'}")
        if not rep.ok:
            failed.append("viterbi")
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 1
    print("all checks passed")
    return 0


def _cmd_dump_gamma(args) -> int:
    from .trainer import utterance_forward

    model = load_model(args.model)
    corpus = load_corpus(
        args.corpus,
        substates_per_speech_label=model.inventory.substates_per_speech_label,
        substates_for_silence=model.inventory.substates_for_silence,
    )
    matches = [u for u in corpus.utterances if u.utt_id == args.utt]
    if not matches:
        print(f"utterance {args.utt!r} not in corpus", file=sys.stderr)
        return 1
    utt = matches[0]
    _, stats, _, _, _ = utterance_forward(model, utt, model.scales)
    text = dump_soft_alignment(stats.gamma)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {stats.gamma.shape[0]} frames x {stats.gamma.shape[1]} states to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fullsum",
        description="Full-sum training of a frame classifier with learnable transition probabilities.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with known ground truth")
    p.add_argument("--spec", help="key=value spec file; defaults used if omitted")
    p.add_argument("--out", required=True, help="corpus directory to create")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a spec key")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads; results are identical for any value")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("align", help="Viterbi forced alignment of a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="alignment TSV to write")
    p.add_argument("--prior-scale", type=float, default=None,
                   help="subtract this multiple of the log class prior "
                        "(default: the value stored with the model)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("tse", help="time-stamp error between two alignment files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=_cmd_tse)

    p = sub.add_parser("show-tm", help="print learned transition probabilities")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_show_tm)

    p = sub.add_parser("check", help="run the numerical self-check suites")
    p.add_argument("--suite", choices=("oracle", "gradients", "viterbi", "all"), default="all")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("dump-gamma", help="dump per-frame state occupancies of one utterance")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utt", required=True, help="utterance id")
    p.add_argument("--out", help="output TSV; stdout if omitted")
    p.set_defaults(func=_cmd_dump_gamma)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
