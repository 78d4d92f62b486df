"""Training loops: whole-utterance and chunked, with per-epoch evaluation.

One utterance per step (desk scale), Adam updates, per-epoch dev error-rate
logging, and best-checkpoint tracking.  The pure-CTC setting routes through
the same objective with a zero-weight denominator and no label prior, which
is exactly the CTC loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .am import ModelParams, OptimState, am_backward, am_forward, optimizer_step
from .config import RunConfig
from .data import Utterance
from .decode import greedy_decode
from .lm import DenominatorGraph, NGramLm
from .loss import InfeasibleUtteranceError, ctc_crf_loss, uniform_denominator
from .streaming import (
    ChunkPlan,
    TwinConfig,
    csf_training_loss,
    draw_chunk_size,
    plan_chunks,
    run_chunked,
    run_copyover,
)

MODES = ("whole", "csf", "sf")
LOSSES = ("crf", "ctc")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    dev_per: float


@dataclass
class TrainResult:
    params: ModelParams        # best-dev parameters
    best_dev_per: float
    history: list[EpochRecord]
    skipped_utterances: int


def chunk_plan_for(cfg: RunConfig, mode: str) -> ChunkPlan:
    """The chunk geometry a mode trains and infers with: contextual frames
    for csf, bare chunks for the copy-over baseline."""
    if mode == "sf":
        return ChunkPlan(cfg.chunk_size, 0, 0, cfg.jitter_fraction, cfg.seed)
    return ChunkPlan(cfg.chunk_size, cfg.left_context, cfg.right_context,
                     cfg.jitter_fraction, cfg.seed)


def infer_logits(params: ModelParams, features: np.ndarray, mode: str,
                 plan: ChunkPlan | None = None):
    """Mode-matched inference: whole forward, chunked with resets, or the
    copy-over baseline."""
    if mode == "whole":
        logits, _, _ = am_forward(params, features)
        return logits
    if mode == "csf":
        layout = plan_chunks(features.shape[0], plan)
        logits, _, _ = run_chunked(params, features, layout)
        return logits
    if mode == "sf":
        return run_copyover(params, features, plan.chunk_size)
    raise ValueError(f"unknown mode {mode!r}")


def evaluate_per(params: ModelParams, utts: list[Utterance], mode: str,
                 plan: ChunkPlan | None = None,
                 den: DenominatorGraph | None = None, beam: float = 16.0):
    """Error rate over a split; returns (rate, (distance, S, I, D)).

    With a denominator graph the hypotheses come from beam search over it
    (label-model-aware decoding); otherwise from greedy collapse.
    """
    from .decode import beam_decode, edit_distance

    total_ref = 0
    dist = subs = ins = dels = 0
    for utt in utts:
        logits = infer_logits(params, utt.features, mode, plan)
        if den is not None:
            hyp = tuple(int(t) for t in beam_decode(den.graph, logits, beam=beam).tokens)
        else:
            hyp = greedy_decode(logits)
        counts = edit_distance(utt.transcript, hyp)
        total_ref += len(utt.transcript)
        dist += counts.distance
        subs += counts.substitutions
        ins += counts.insertions
        dels += counts.deletions
    rate = dist / total_ref if total_ref else 0.0
    return rate, (dist, subs, ins, dels)


def train_model(train_utts: list[Utterance], dev_utts: list[Utterance],
                cfg: RunConfig, mode: str, loss_kind: str,
                den: DenominatorGraph | None, lm: NGramLm | None,
                teacher: ModelParams | None = None,
                log=None) -> TrainResult:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if loss_kind not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    if mode in ("csf", "sf") and teacher is None and cfg.twin_scale > 0:
        raise ValueError(f"{mode} training requires a whole-utterance teacher checkpoint")

    n_out = cfg.alphabet + 1
    if loss_kind == "ctc":
        den = uniform_denominator(list(range(2, 2 + cfg.alphabet)))
        lm = None
        alpha = 0.0
    else:
        if den is None:
            raise ValueError("crf training requires a denominator graph")
        alpha = cfg.alpha

    params = ModelParams.init(cfg.d_in, cfg.d_h, n_out, seed=cfg.seed)
    opt = OptimState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    plan = chunk_plan_for(cfg, mode)
    twin = TwinConfig(scale=cfg.twin_scale if mode in ("csf", "sf") else 0.0,
                      teacher=teacher)

    best: ModelParams | None = None
    best_per = float("inf")
    history: list[EpochRecord] = []
    skipped = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_utts))
        losses = []
        for idx in order:
            utt = train_utts[idx]
            try:
                if mode == "whole":
                    logits, _, cache = am_forward(params, utt.features)
                    report = ctc_crf_loss(logits, utt.transcript, den, lm, alpha)
                    grads = am_backward(cache, report.grad_logits)
                    losses.append(report.total)
                else:
                    draw = draw_chunk_size(plan, rng) if plan.jitter_fraction > 0 else None
                    report = csf_training_loss(params, utt.features, utt.transcript,
                                               den, lm, plan, twin, alpha,
                                               jitter_draw=draw)
                    grads = report.grads
                    losses.append(report.total)
            except InfeasibleUtteranceError:
                skipped += 1
                continue
            optimizer_step(params, grads, opt)
        # model selection matches the decode policy: label-model-aware beam
        # search for the CRF system, greedy for the LM-free CTC baseline
        dev_per, _ = evaluate_per(params, dev_utts, mode, plan,
                                  den=den if loss_kind == "crf" else None,
                                  beam=cfg.beam)
        record = EpochRecord(epoch, float(np.mean(losses)) if losses else 0.0, dev_per)
        history.append(record)
        if log is not None:
            log(f"{record.epoch} {record.mean_loss:.6f} {record.dev_per:.4f}")
        if dev_per < best_per:
            best_per = dev_per
            best = params.copy()
    assert best is not None
    return TrainResult(best, best_per, history, skipped)


__all__ = [
    "LOSSES",
    "MODES",
    "EpochRecord",
    "TrainResult",
    "chunk_plan_for",
    "evaluate_per",
    "infer_logits",
    "train_model",
]
