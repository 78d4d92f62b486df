"""Command-line pipeline: synth, train-lm, build-den, train, decode, score,
stream-demo.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Configuration comes
from a key=value file plus CATDESK_-prefixed environment variables, with
command-line flags winning.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import am, fst
from .config import ConfigError, RunConfig, load_config
from .data import SynthSpec, corpus_read, corpus_write, symbol_table_for, synth_corpus
from .decode import Lexicon, beam_decode, build_decode_graph, edit_distance, greedy_decode
from .lm import arpa_read, arpa_write, build_denominator, estimate_ngram
from .loss import log_softmax_rows
from .streaming import ChunkPlan, context_latency_ms, streaming_infer
from .symbols import SymbolTable
from .topology import build_ctc_topology
from .training import chunk_plan_for, infer_logits, train_model

CONFIG_FLAGS = {
    "seed": int, "alphabet": int, "d_in": int, "d_h": int, "lm_order": int,
    "alpha": float, "lambda": float, "chunk_size": int, "left_context": int,
    "right_context": int, "jitter_fraction": float, "lr": float, "epochs": int,
    "beam": float, "frame_shift_ms": float, "sampling_factor": int,
    "data_dir": str, "work_dir": str,
}


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    for key, typ in CONFIG_FLAGS.items():
        sub.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}",
                         type=typ, help=argparse.SUPPRESS)


def _config_from(args) -> RunConfig:
    overrides = {key: getattr(args, f"cfg_{key}") for key in CONFIG_FLAGS}
    return load_config(args.config, overrides=overrides)


def _load_split(root, split: str):
    path = Path(root) / split
    if not path.is_dir():
        raise FileNotFoundError(
            f"corpus split {path} not found; run 'catdesk synth' first")
    return corpus_read(path)


def cmd_synth(args) -> int:
    cfg = _config_from(args)
    spec = SynthSpec(
        alphabet_size=cfg.alphabet,
        d_in=cfg.d_in,
        noise_std=args.noise_std,
        duration_range=(args.min_duration, args.max_duration),
        labels_per_utt=(args.min_labels, args.max_labels),
        corpus_size=args.corpus_size,
        seed=cfg.seed,
    )
    out = Path(args.out or cfg.data_dir)
    symtab = symbol_table_for(spec)
    for name, utts in zip(("train", "dev", "test"), synth_corpus(spec)):
        corpus_write(out / name, utts, symtab)
        print(f"wrote {len(utts)} utterances to {out / name}")
    return 0


def cmd_train_lm(args) -> int:
    cfg = _config_from(args)
    utts, symtab = _load_split(args.corpus or cfg.data_dir, "train")
    transcripts = [[symtab.sym_of(i) for i in u.transcript] for u in utts]
    lm = estimate_ngram(transcripts, order=cfg.lm_order, vocab=set(symtab.label_syms))
    Path(args.out).write_text(arpa_write(lm), encoding="utf-8")
    sizes = " ".join(f"{k}:{len(lm.entries.get(k, {}))}" for k in range(1, lm.order + 1))
    print(f"wrote order-{lm.order} model ({sizes} entries) to {args.out}")
    return 0


def _denominator_from(cfg: RunConfig, lm_path: str):
    lm = arpa_read(Path(lm_path).read_text(encoding="utf-8"))
    symtab = SymbolTable.for_alphabet(sorted(lm.vocab))
    topo = build_ctc_topology(symtab.label_ids)
    return build_denominator(topo, lm, symtab), lm, symtab


def cmd_build_den(args) -> int:
    cfg = _config_from(args)
    den, _, symtab = _denominator_from(cfg, args.lm)
    Path(args.out).write_text(fst.write_text(den.graph), encoding="utf-8")
    Path(str(args.out) + ".syms").write_text(symtab.to_text(), encoding="utf-8")
    print(f"denominator graph: {den.graph.num_states} states, "
          f"{den.graph.num_arcs} arcs -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    train_utts, symtab = _load_split(args.corpus or cfg.data_dir, "train")
    dev_utts, _ = _load_split(args.corpus or cfg.data_dir, "dev")

    den = lm = None
    if args.loss == "crf":
        if not args.lm:
            print("error: --loss crf needs --lm <arpa>; run 'catdesk train-lm' "
                  "and 'catdesk build-den' first", file=sys.stderr)
            return 1
        den, lm, _ = _denominator_from(cfg, args.lm)
    teacher = None
    if args.mode in ("csf", "sf"):
        if not args.teacher and cfg.twin_scale > 0:
            print(f"error: --mode {args.mode} needs --teacher "
                  "<whole-utterance checkpoint>", file=sys.stderr)
            return 1
        if args.teacher:
            teacher = am.load_checkpoint(args.teacher)

    metrics_path = Path(args.metrics or (Path(cfg.work_dir) / "metrics.log"))
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics_path, "a", encoding="utf-8") as metrics:
        def log(line: str):
            metrics.write(line + "\n")
            print(line)

        result = train_model(train_utts, dev_utts, cfg, args.mode, args.loss,
                             den, lm, teacher, log=log)
    am.save_checkpoint(args.out, result.params)
    if result.skipped_utterances:
        print(f"warning: skipped {result.skipped_utterances} infeasible utterances",
              file=sys.stderr)
    print(f"best dev-PER {result.best_dev_per:.4f}; checkpoint -> {args.out}")
    return 0


def _read_lexicon(path, symtab: SymbolTable) -> Lexicon:
    prons: dict[str, list[tuple[int, ...]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        word, pron = parts[0], tuple(symtab.id_of(s) for s in parts[1:])
        prons.setdefault(word, []).append(pron)
    return Lexicon({w: tuple(p) for w, p in prons.items()})


def cmd_decode(args) -> int:
    cfg = _config_from(args)
    utts, symtab = _load_split(args.corpus or cfg.data_dir, args.split)
    params = am.load_checkpoint(args.ckpt)
    plan = chunk_plan_for(cfg, args.infer)

    graph = word_tab = None
    if args.method == "wfst":
        if not (args.lexicon and args.word_lm):
            print("error: --method wfst needs --lexicon and --word-lm", file=sys.stderr)
            return 1
        word_lm = arpa_read(Path(args.word_lm).read_text(encoding="utf-8"))
        lexicon = _read_lexicon(args.lexicon, symtab)
        topo = build_ctc_topology(symtab.label_ids)
        graph, word_tab = build_decode_graph(topo, lexicon, word_lm)

    out_lines = []
    ref_lines = []
    for utt in utts:
        logits = infer_logits(params, utt.features, args.infer, plan)
        if args.method == "greedy":
            labels = greedy_decode(logits)
            logp = log_softmax_rows(logits).scores
            score = float(logp.max(axis=1).sum())
            tokens = [symtab.sym_of(i) for i in labels]
        else:
            hyp = beam_decode(graph, logits, beam=cfg.beam, word_tab=word_tab)
            score = hyp.score
            tokens = list(hyp.tokens)
        out_lines.append(f"{utt.utt_id}\t{score:.4f}\t{' '.join(tokens)}".rstrip())
        ref_tokens = " ".join(symtab.sym_of(i) for i in utt.transcript)
        ref_lines.append(f"{utt.utt_id}\t0.0\t{ref_tokens}")
    Path(args.out).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    if args.ref_out:
        Path(args.ref_out).write_text("\n".join(ref_lines) + "\n", encoding="utf-8")
    print(f"decoded {len(utts)} utterances -> {args.out}")
    return 0


def _read_hyp_file(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected 'utt-id<TAB>score<TAB>tokens'")
        tokens = parts[2].split() if len(parts) > 2 else []
        out[parts[0]] = tokens
    return out


def cmd_score(args) -> int:
    refs = _read_hyp_file(args.ref)
    hyps = _read_hyp_file(args.hyp)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        print(f"error: hypotheses missing for {len(missing)} utterances "
              f"(first: {missing[0]})", file=sys.stderr)
        return 1
    total_ref = dist = subs = ins = dels = 0
    for utt_id, ref in sorted(refs.items()):
        counts = edit_distance(ref, hyps[utt_id])
        total_ref += len(ref)
        dist += counts.distance
        subs += counts.substitutions
        ins += counts.insertions
        dels += counts.deletions
    per = dist / total_ref if total_ref else 0.0
    print(f"PER {per:.3f} S {subs} I {ins} D {dels}")
    return 0


def cmd_stream_demo(args) -> int:
    cfg = _config_from(args)
    params = am.load_checkpoint(args.ckpt)
    plan = ChunkPlan(cfg.chunk_size, cfg.left_context, cfg.right_context)

    def frames():
        for line in sys.stdin:
            if line.strip():
                yield np.array([float(x) for x in line.split()])

    max_lag = 0
    bound = plan.chunk_size + plan.right_context
    count = 0
    for row in streaming_infer(params, frames(), plan):
        max_lag = max(max_lag, row.lag_frames)
        count += 1
        values = " ".join(f"{v:.6f}" for v in row.scores)
        print(f"{row.frame_index} {row.lag_frames} {values}")
    latency = context_latency_ms(plan.right_context, cfg.frame_shift_ms,
                                 cfg.sampling_factor)
    print(f"# frames {count} max-lag {max_lag} bound {bound} "
          f"context-latency-ms {latency:g}")
    if max_lag > bound:
        print("error: ingest lag exceeded the chunk+context bound", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catdesk",
        description="desk-scale sequence-discriminative training and decoding")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic corpus")
    _add_config_flags(p)
    p.add_argument("--out", help="corpus root (default: config data_dir)")
    p.add_argument("--corpus-size", type=int, default=250)
    p.add_argument("--noise-std", type=float, default=0.3)
    p.add_argument("--min-duration", type=int, default=2)
    p.add_argument("--max-duration", type=int, default=5)
    p.add_argument("--min-labels", type=int, default=2)
    p.add_argument("--max-labels", type=int, default=6)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train-lm", help="estimate the label n-gram model")
    _add_config_flags(p)
    p.add_argument("--corpus", help="corpus root (default: config data_dir)")
    p.add_argument("--out", required=True, help="output ARPA path")
    p.set_defaults(func=cmd_train_lm)

    p = subs.add_parser("build-den", help="compile the denominator graph")
    _add_config_flags(p)
    p.add_argument("--lm", required=True, help="label model ARPA path")
    p.add_argument("--out", required=True, help="output text-FST path")
    p.set_defaults(func=cmd_build_den)

    p = subs.add_parser("train", help="train an acoustic model")
    _add_config_flags(p)
    p.add_argument("--corpus", help="corpus root (default: config data_dir)")
    p.add_argument("--mode", choices=("whole", "csf", "sf"), default="whole")
    p.add_argument("--loss", choices=("crf", "ctc"), default="crf")
    p.add_argument("--lm", help="label model ARPA (required for --loss crf)")
    p.add_argument("--teacher", help="whole-utterance checkpoint for twin regularization")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--metrics", help="metrics log path (default: work_dir/metrics.log)")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("decode", help="decode a corpus split")
    _add_config_flags(p)
    p.add_argument("--corpus", help="corpus root (default: config data_dir)")
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--method", choices=("greedy", "wfst"), default="greedy")
    p.add_argument("--infer", choices=("whole", "csf", "sf"), default="whole")
    p.add_argument("--lexicon", help="word pronunciation file (wfst method)")
    p.add_argument("--word-lm", help="word-level ARPA (wfst method)")
    p.add_argument("--out", required=True, help="hypothesis output file")
    p.add_argument("--ref-out", help="also write references in the same format")
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("score", help="score hypotheses against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_score)

    p = subs.add_parser("stream-demo", help="stream frames from stdin")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_stream_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
