"""Sequence-level losses: graph forward-backward, CTC, and the CRF objective.

The CRF loss of an utterance is

    -(logZ_num + log p(l)) + logZ_den

where both partition functions run log-space forward-backward with
log-softmaxed frame scores: logZ_num over the transcript's alignment lattice,
logZ_den over the denominator graph, and log p(l) is the label-sequence prior
(a constant with respect to the network, so it moves the loss value but not
the gradient).  The gradient with respect to the per-frame log-probabilities
is the denominator occupancy minus the numerator occupancy, chained through
the log-softmax Jacobian.  An auxiliary CTC term with a small weight is added
to help convergence.

All math here is double precision; single-precision inputs are widened.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fst import NEG_INF, Wfst, input_epsilon_topo_order
from .lm import DenominatorGraph, NGramLm, sentence_logprob
from .symbols import BLANK, EPSILON
from .topology import build_ctc_topology, check_label_seq, min_alignment_frames, numerator_graph

DEFAULT_CTC_WEIGHT = 0.01


class InfeasibleUtteranceError(Exception):
    """Transcript cannot be aligned: it needs more frames than the utterance has."""


@dataclass(frozen=True)
class FrameLogits:
    """Pre-normalization acoustic scores, one row per frame.

    ``labels[j]`` is the emission symbol id of column j; by convention the
    acoustic model emits blank in column 0 and label id k in column k - 1.
    """

    scores: np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if scores.ndim != 2 or scores.shape[0] < 1:
            raise ValueError(f"scores must be a T x M matrix with T >= 1, got {scores.shape}")
        if scores.shape[1] != len(self.labels):
            raise ValueError("one emission label per column required")
        if not np.isfinite(scores).all():
            raise ValueError("frame scores must be finite")

    @classmethod
    def dense(cls, scores: np.ndarray) -> "FrameLogits":
        """Column j carries emission id j + 1 (blank first, then labels)."""
        scores = np.asarray(scores, dtype=np.float64)
        return cls(scores, tuple(range(1, scores.shape[1] + 1)))

    @property
    def num_frames(self) -> int:
        return self.scores.shape[0]

    def column_of(self, label_id: int) -> int:
        return self.labels.index(label_id)


def log_softmax_rows(logits: FrameLogits) -> FrameLogits:
    """Shift each row so its exponentials sum to one (max-subtracted)."""
    s = logits.scores
    shifted = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return FrameLogits(shifted - lse, logits.labels)


@dataclass(frozen=True)
class ForwardBackwardResult:
    log_z: float
    gamma: np.ndarray  # T x M frame-emission posteriors; zeros when infeasible
    feasible: bool


def _arc_arrays(graph: Wfst, logits: FrameLogits):
    col_of = {lab: j for j, lab in enumerate(logits.labels)}
    missing = sorted(graph.input_labels() - set(col_of))
    if missing:
        raise ValueError(f"emission scores missing for label ids {missing}")
    emit = [(a.src, a.dst, col_of[a.ilabel], a.weight)
            for a in graph.arcs if a.ilabel != EPSILON]
    if emit:
        src, dst, col, w = (np.array(x) for x in zip(*emit))
    else:
        src = dst = col = np.zeros(0, dtype=int)
        w = np.zeros(0)
    eps = input_epsilon_topo_order(graph)
    return src, dst, col, w.astype(np.float64), eps


def graph_forward_backward(graph: Wfst, logits: FrameLogits) -> ForwardBackwardResult:
    """Log-space forward-backward over a graph with per-frame emission scores.

    Paths must consume exactly T frames on non-epsilon input labels; epsilon
    arcs (back-off) consume none.  Returns the log partition function and the
    T x M matrix of frame-emission posteriors.
    """
    T, M = logits.scores.shape
    if graph.is_empty():
        return ForwardBackwardResult(NEG_INF, np.zeros((T, M)), False)
    src, dst, col, w, eps_arcs = _arc_arrays(graph, logits)
    scores = logits.scores
    n = graph.num_states

    final_w = np.full(n, NEG_INF)
    for s, fw in graph.finals.items():
        final_w[s] = fw

    alphas = np.full((T + 1, n), NEG_INF)
    alphas[0, graph.start] = 0.0
    for arc in eps_arcs:
        alphas[0, arc.dst] = np.logaddexp(alphas[0, arc.dst], alphas[0, arc.src] + arc.weight)
    for t in range(T):
        nxt = np.full(n, NEG_INF)
        np.logaddexp.at(nxt, dst, alphas[t, src] + w + scores[t, col])
        for arc in eps_arcs:
            nxt[arc.dst] = np.logaddexp(nxt[arc.dst], nxt[arc.src] + arc.weight)
        alphas[t + 1] = nxt

    log_z = _logsumexp_vec(alphas[T] + final_w)
    if log_z == NEG_INF:
        return ForwardBackwardResult(NEG_INF, np.zeros((T, M)), False)

    beta = final_w.copy()
    for arc in reversed(eps_arcs):
        beta[arc.src] = np.logaddexp(beta[arc.src], arc.weight + beta[arc.dst])
    gamma = np.zeros((T, M))
    for t in range(T - 1, -1, -1):
        contrib = alphas[t, src] + w + scores[t, col] + beta[dst]
        row = np.full(M, NEG_INF)
        np.logaddexp.at(row, col, contrib)
        gamma[t] = np.exp(row - log_z)
        prev = np.full(n, NEG_INF)
        np.logaddexp.at(prev, src, w + scores[t, col] + beta[dst])
        for arc in reversed(eps_arcs):
            prev[arc.src] = np.logaddexp(prev[arc.src], arc.weight + prev[arc.dst])
        beta = prev
    return ForwardBackwardResult(float(log_z), gamma, True)


def _logsumexp_vec(v: np.ndarray) -> float:
    m = v.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(v - m).sum()))


def _chain_log_softmax(grad_logprobs: np.ndarray, logprobs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. log-softmax outputs back to the raw logits."""
    probs = np.exp(logprobs)
    return grad_logprobs - probs * grad_logprobs.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LossReport:
    crf_loss: float
    ctc_aux_loss: float
    total: float
    grad_logits: np.ndarray


def _check_feasible(labels, num_frames):
    needed = min_alignment_frames(labels)
    if needed > num_frames:
        raise InfeasibleUtteranceError(
            f"transcript needs at least {needed} frames but the utterance has {num_frames}")


def ctc_loss(logits: FrameLogits, labels, topology: Wfst | None = None):
    """Alignment-marginal loss: -log of the summed probability of every
    alignment collapsing to ``labels``.  Returns (loss, gradient wrt logits)."""
    labels = check_label_seq(labels)
    _check_feasible(labels, logits.num_frames)
    if topology is None:
        topology = build_ctc_topology([lab for lab in logits.labels if lab != BLANK])
    logprobs = log_softmax_rows(logits)
    lattice = numerator_graph(labels, topology)
    fb = graph_forward_backward(lattice, logprobs)
    if not fb.feasible:
        raise InfeasibleUtteranceError("no alignment path of the utterance length")
    grad = _chain_log_softmax(-fb.gamma, logprobs.scores)
    return -fb.log_z, grad


def uniform_denominator(alphabet, symtab=None) -> DenominatorGraph:
    """Zero-weight denominator accepting every emission string: with
    per-frame normalized scores its partition function is exactly zero."""
    topology = build_ctc_topology(alphabet)
    graph = Wfst()
    state = graph.add_state()
    graph.set_start(state)
    graph.set_final(state, 0.0)
    for sym in sorted(topology.input_labels()):
        graph.add_arc(state, sym, sym, 0.0, state)
    return DenominatorGraph(
        graph=graph.freeze(),
        topology=topology,
        emission_ids=tuple(sorted(topology.input_labels())),
        symtab=symtab,
    )


def ctc_crf_loss(logits: FrameLogits, labels, den: DenominatorGraph,
                 lm: NGramLm | None, alpha: float = DEFAULT_CTC_WEIGHT) -> LossReport:
    """The CRF objective with an auxiliary CTC term of weight ``alpha``.

    ``lm`` supplies the label-sequence prior; pass None to drop the prior
    term from the loss value (it never affects the gradient).
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    labels = check_label_seq(labels)
    _check_feasible(labels, logits.num_frames)
    logprobs = log_softmax_rows(logits)

    lattice = numerator_graph(labels, den.topology)
    num = graph_forward_backward(lattice, logprobs)
    if not num.feasible:
        raise InfeasibleUtteranceError("no alignment path of the utterance length")
    den_fb = graph_forward_backward(den.graph, logprobs)
    if not den_fb.feasible:
        raise ValueError("denominator graph admits no path of the utterance length")

    prior = 0.0
    if lm is not None:
        prior = sentence_logprob(lm, [den.symtab.sym_of(i) for i in labels])
    crf = -(num.log_z + prior) + den_fb.log_z
    grad_crf = _chain_log_softmax(den_fb.gamma - num.gamma, logprobs.scores)

    ctc_aux = -num.log_z
    grad_ctc = _chain_log_softmax(-num.gamma, logprobs.scores)

    return LossReport(
        crf_loss=float(crf),
        ctc_aux_loss=float(ctc_aux),
        total=float(crf + alpha * ctc_aux),
        grad_logits=grad_crf + alpha * grad_ctc,
    )


__all__ = [
    "DEFAULT_CTC_WEIGHT",
    "ForwardBackwardResult",
    "FrameLogits",
    "InfeasibleUtteranceError",
    "LossReport",
    "ctc_crf_loss",
    "ctc_loss",
    "graph_forward_backward",
    "log_softmax_rows",
    "uniform_denominator",
]
