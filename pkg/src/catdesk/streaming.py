"""Chunked low-latency processing with contextual frames and twin regularization.

An utterance is split into non-overlapping core chunks; each chunk is padded
with a fixed number of left/right contextual frames (zeros past the utterance
edges), run through the network with hidden states reset to zero in both
directions, and the outputs of the contextual frames are discarded when the
per-chunk outputs are spliced back into a full-length sequence.  Training
adds a twin term: the mean-squared error between the chunked hidden states
and those of a frozen whole-utterance teacher, scaled by a small factor.
Chunk size may be jittered per minibatch.

Streaming inference replays exactly the same computation frame by frame: a
chunk is emitted once its right context has been ingested, so the context
latency is the right-context width times the effective frame duration.

The copy-over baseline (chunks without contextual frames, forward states
carried across chunk boundaries at inference, backward states reset) is also
provided for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .am import ModelParams, am_backward, am_forward
from .loss import FrameLogits, LossReport, ctc_crf_loss

DEFAULT_CHUNK_SIZE = 40
DEFAULT_LEFT_CONTEXT = 10
DEFAULT_RIGHT_CONTEXT = 10
DEFAULT_TWIN_SCALE = 0.005


class StreamOrderError(Exception):
    """A frame arrived out of order on a streaming source."""


@dataclass(frozen=True)
class ChunkPlan:
    chunk_size: int = DEFAULT_CHUNK_SIZE
    left_context: int = DEFAULT_LEFT_CONTEXT
    right_context: int = DEFAULT_RIGHT_CONTEXT
    jitter_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.left_context < 0 or self.right_context < 0:
            raise ValueError("context widths must be >= 0")
        if not 0.0 <= self.jitter_fraction < 1.0:
            raise ValueError("jitter_fraction must be in [0, 1)")

    def jitter_bounds(self) -> tuple[int, int]:
        lo = max(1, math.ceil(self.chunk_size * (1.0 - self.jitter_fraction)))
        hi = max(lo, math.floor(self.chunk_size * (1.0 + self.jitter_fraction)))
        return lo, hi


def draw_chunk_size(plan: ChunkPlan, rng: np.random.Generator) -> int:
    """One uniform draw from the jitter range; call once per minibatch."""
    lo, hi = plan.jitter_bounds()
    return int(rng.integers(lo, hi + 1))


@dataclass(frozen=True)
class Chunk:
    core_start: int
    core_end: int
    left_pad: int   # zero frames prepended (utterance start)
    right_pad: int  # zero frames appended (utterance end)
    ctx_lo: int     # first real frame included (core_start - real left context)
    ctx_hi: int     # one past the last real frame included

    @property
    def core_len(self) -> int:
        return self.core_end - self.core_start


@dataclass(frozen=True)
class ChunkLayout:
    num_frames: int
    left_context: int
    right_context: int
    chunks: tuple[Chunk, ...]


def plan_chunks(t: int, plan: ChunkPlan, jitter_draw: int | None = None) -> ChunkLayout:
    """Partition [0, t) into cores of the (possibly jittered) chunk size and
    attach context ranges; the realized size is constant within the utterance."""
    if t < 1:
        raise ValueError("utterance must have at least one frame")
    if jitter_draw is None:
        size = plan.chunk_size
    else:
        lo, hi = plan.jitter_bounds()
        if not lo <= jitter_draw <= hi:
            raise ValueError(f"jitter draw {jitter_draw} outside [{lo}, {hi}]")
        size = jitter_draw
    chunks = []
    for core_start in range(0, t, size):
        core_end = min(core_start + size, t)
        ctx_lo = max(0, core_start - plan.left_context)
        ctx_hi = min(t, core_end + plan.right_context)
        chunks.append(Chunk(
            core_start=core_start,
            core_end=core_end,
            left_pad=plan.left_context - (core_start - ctx_lo),
            right_pad=plan.right_context - (ctx_hi - core_end),
            ctx_lo=ctx_lo,
            ctx_hi=ctx_hi,
        ))
    return ChunkLayout(t, plan.left_context, plan.right_context, tuple(chunks))


def _chunk_input(features: np.ndarray, chunk: Chunk) -> np.ndarray:
    d_in = features.shape[1]
    return np.concatenate([
        np.zeros((chunk.left_pad, d_in)),
        features[chunk.ctx_lo:chunk.ctx_hi],
        np.zeros((chunk.right_pad, d_in)),
    ])


def run_chunked(params: ModelParams, features: np.ndarray, layout: ChunkLayout):
    """Process every chunk independently with zero initial states and splice
    the core-frame outputs back together.

    Returns (spliced logits, spliced hidden trace of shape (T, 2, d_h),
    per-chunk caches for the backward pass).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != layout.num_frames:
        raise ValueError(
            f"layout covers {layout.num_frames} frames but features have {features.shape[0]}")
    rows = []
    trace_rows = []
    caches = []
    for chunk in layout.chunks:
        logits, trace, cache = am_forward(params, _chunk_input(features, chunk))
        lo = layout.left_context
        hi = lo + chunk.core_len
        rows.append(logits.scores[lo:hi])
        trace_rows.append(trace[lo:hi])
        caches.append(cache)
    spliced = FrameLogits.dense(np.concatenate(rows))
    return spliced, np.concatenate(trace_rows), caches


def chunked_backward(params: ModelParams, layout: ChunkLayout, caches,
                     grad_logits: np.ndarray, grad_trace: np.ndarray | None = None):
    """Distribute spliced-output gradients back through every chunk; context
    frames receive zero gradient because their outputs were discarded."""
    grads = params.zeros_like()
    for chunk, cache in zip(layout.chunks, caches):
        chunk_t = cache.features.shape[0]
        g_logits = np.zeros((chunk_t, params.n_out))
        lo = layout.left_context
        hi = lo + chunk.core_len
        g_logits[lo:hi] = grad_logits[chunk.core_start:chunk.core_end]
        g_hidden = None
        if grad_trace is not None:
            g_hidden = np.zeros((chunk_t, 2, params.d_h))
            g_hidden[lo:hi] = grad_trace[chunk.core_start:chunk.core_end]
        for name, g in am_backward(cache, g_logits, g_hidden).items():
            grads[name] += g
    return grads


# -- twin regularization -------------------------------------------------------------

@dataclass(frozen=True)
class TwinConfig:
    scale: float = DEFAULT_TWIN_SCALE  # weight of the mean-squared hidden-state error
    teacher: ModelParams | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("twin scale must be >= 0")


def twin_reg_loss(student_trace: np.ndarray, teacher_trace: np.ndarray,
                  cfg: TwinConfig):
    """Scaled mean-squared error between hidden traces; returns the loss and
    its exact gradient with respect to the student trace."""
    student_trace = np.asarray(student_trace, dtype=np.float64)
    teacher_trace = np.asarray(teacher_trace, dtype=np.float64)
    if student_trace.shape != teacher_trace.shape:
        raise ValueError(
            f"trace shapes differ: {student_trace.shape} vs {teacher_trace.shape}")
    if cfg.scale == 0.0:
        return 0.0, np.zeros_like(student_trace)
    diff = student_trace - teacher_trace
    loss = cfg.scale * float((diff * diff).mean())
    grad = cfg.scale * 2.0 * diff / diff.size
    return loss, grad


@dataclass(frozen=True)
class ChunkedLossReport:
    crf_loss: float
    ctc_aux_loss: float
    twin_loss: float
    total: float
    grads: dict[str, np.ndarray] = field(repr=False, default=None)


def csf_training_loss(student: ModelParams, features: np.ndarray, labels,
                      den, lm, plan: ChunkPlan, twin: TwinConfig,
                      alpha: float, jitter_draw: int | None = None) -> ChunkedLossReport:
    """Chunk-with-context training objective: the sequence loss on spliced
    chunk outputs plus the twin term against the frozen whole-utterance
    teacher.  Gradients flow through splicing and the student hidden trace;
    the teacher receives none."""
    features = np.asarray(features, dtype=np.float64)
    layout = plan_chunks(features.shape[0], plan, jitter_draw)
    spliced, student_trace, caches = run_chunked(student, features, layout)
    report = ctc_crf_loss(spliced, labels, den, lm, alpha)

    twin_loss = 0.0
    grad_trace = None
    if twin.scale > 0.0:
        if twin.teacher is None:
            raise ValueError("twin regularization requires a teacher model")
        _, teacher_trace, _ = am_forward(twin.teacher, features)
        twin_loss, grad_trace = twin_reg_loss(student_trace, teacher_trace, twin)

    grads = chunked_backward(student, layout, caches, report.grad_logits, grad_trace)
    return ChunkedLossReport(
        crf_loss=report.crf_loss,
        ctc_aux_loss=report.ctc_aux_loss,
        twin_loss=twin_loss,
        total=report.total + twin_loss,
        grads=grads,
    )


# -- streaming inference ----------------------------------------------------------------

@dataclass(frozen=True)
class StreamedFrame:
    frame_index: int
    scores: np.ndarray
    lag_frames: int  # ingest index at emission minus the frame's own index


def context_latency_ms(right_context: int, frame_shift_ms: float,
                       sampling_factor: int) -> float:
    """Latency contributed by the right contextual frames, in milliseconds."""
    return right_context * frame_shift_ms * sampling_factor


def streaming_infer(params: ModelParams, frame_source, plan: ChunkPlan):
    """Consume frames in order and emit core-frame logit rows as soon as each
    chunk's right context has been ingested (or the stream ends).

    ``frame_source`` yields feature vectors, or (index, vector) pairs when
    the producer tracks indices itself; a non-consecutive index raises
    StreamOrderError.  Emitted rows are bitwise identical to the batch
    chunked run with no jitter.
    """
    size = plan.chunk_size
    buf: list[np.ndarray] = []
    core_start = 0

    def emit_chunk(core_end: int, last_ingest: int):
        ctx_lo = max(0, core_start - plan.left_context)
        real_hi = min(len(buf), core_end + plan.right_context)
        chunk = Chunk(
            core_start=core_start,
            core_end=core_end,
            left_pad=plan.left_context - (core_start - ctx_lo),
            right_pad=plan.right_context - (real_hi - core_end),
            ctx_lo=ctx_lo,
            ctx_hi=real_hi,
        )
        feats = np.asarray(buf, dtype=np.float64)
        logits, _, _ = am_forward(params, _chunk_input(feats, chunk))
        lo = plan.left_context
        for i in range(chunk.core_len):
            idx = core_start + i
            yield StreamedFrame(idx, logits.scores[lo + i], last_ingest - idx)

    for item in frame_source:
        if isinstance(item, tuple):
            index, vec = item
            if index != len(buf):
                raise StreamOrderError(
                    f"expected frame {len(buf)}, got {index}")
        else:
            vec = item
        buf.append(np.asarray(vec, dtype=np.float64))
        ingested = len(buf)
        while ingested >= core_start + size + plan.right_context:
            yield from emit_chunk(core_start + size, ingested - 1)
            core_start += size
    total = len(buf)
    while core_start < total:
        core_end = min(core_start + size, total)
        yield from emit_chunk(core_end, total - 1)
        core_start = core_end


# -- copy-over baseline -------------------------------------------------------------------

def run_copyover(params: ModelParams, features: np.ndarray, chunk_size: int) -> FrameLogits:
    """Chunked inference without contextual frames: forward hidden states are
    carried across chunk boundaries, backward states reset to zero."""
    features = np.asarray(features, dtype=np.float64)
    rows = []
    h_fw = np.zeros(params.d_h)
    for start in range(0, features.shape[0], chunk_size):
        piece = features[start:start + chunk_size]
        logits, trace, _ = am_forward(
            params, piece, initial_states=(h_fw, np.zeros(params.d_h)))
        rows.append(logits.scores)
        h_fw = trace[-1, 0]
    return FrameLogits.dense(np.concatenate(rows))


__all__ = [
    "Chunk",
    "ChunkLayout",
    "ChunkPlan",
    "ChunkedLossReport",
    "DEFAULT_CHUNK_SIZE",
    "DEFAULT_LEFT_CONTEXT",
    "DEFAULT_RIGHT_CONTEXT",
    "DEFAULT_TWIN_SCALE",
    "StreamOrderError",
    "StreamedFrame",
    "TwinConfig",
    "chunked_backward",
    "context_latency_ms",
    "csf_training_loss",
    "draw_chunk_size",
    "plan_chunks",
    "run_chunked",
    "run_copyover",
    "streaming_infer",
    "twin_reg_loss",
]
