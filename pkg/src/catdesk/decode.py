"""WFST decoding (topology o lexicon o word model), greedy decoding, scoring.

The decode graph maps emission-symbol frames to word sequences.  Its arcs
carry only graph (lexicon/model) weights; acoustic scores are added during
the frame-synchronous search, optionally rescaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fst import EPSILON, NEG_INF, NoPathError, Wfst, compose, input_epsilon_topo_order, trim
from .lm import LmError, NGramLm, lm_to_fst
from .loss import FrameLogits, log_softmax_rows
from .symbols import SymbolTable
from .topology import ctc_collapse

DEFAULT_BEAM = 16.0
DEFAULT_MAX_ACTIVE = 2000


@dataclass(frozen=True)
class Lexicon:
    """Word pronunciations: each word maps to one or more label sequences."""

    prons: dict[str, tuple[tuple[int, ...], ...]]

    def __post_init__(self):
        for word, prons in self.prons.items():
            if not prons or any(len(p) == 0 for p in prons):
                raise ValueError(f"word {word!r} needs at least one nonempty pronunciation")

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(sorted(self.prons))

    def label_ids(self) -> frozenset[int]:
        return frozenset(l for prons in self.prons.values() for p in prons for l in p)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]
    score: float
    alignment: tuple[int, ...] | None = None  # per-frame emission ids


def lexicon_to_fst(lexicon: Lexicon, word_tab: SymbolTable,
                   label_alphabet) -> Wfst:
    """Labels in, words out.  The word is emitted on the first arc of each
    pronunciation and an epsilon back-transition allows word sequences."""
    fst = Wfst()
    home = fst.add_state()
    fst.set_start(home)
    fst.set_final(home, 0.0)
    for word in lexicon.words:
        wid = word_tab.id_of(word)
        for pron in lexicon.prons[word]:
            prev = home
            for i, label in enumerate(pron):
                nxt = fst.add_state()
                fst.add_arc(prev, label, wid if i == 0 else EPSILON, 0.0, nxt)
                prev = nxt
            fst.add_arc(prev, EPSILON, EPSILON, 0.0, home)
    fst.input_alphabet = frozenset(label_alphabet)
    fst.output_alphabet = frozenset(word_tab.id_of(w) for w in lexicon.words)
    return fst.freeze()


def build_decode_graph(topology: Wfst, lexicon: Lexicon, word_lm: NGramLm,
                       word_tab: SymbolTable | None = None) -> tuple[Wfst, SymbolTable]:
    """Compose topology, lexicon, and word model into one search graph.

    Returns the graph (emission frames in, word ids out) and the word symbol
    table used on the output side.
    """
    bad_labels = sorted(lexicon.label_ids() - topology.output_labels())
    if bad_labels:
        raise ValueError(f"lexicon uses label ids outside the topology alphabet: {bad_labels}")
    missing_words = sorted(set(lexicon.words) - set(word_lm.vocab))
    if missing_words:
        raise LmError(f"lexicon words missing from the word model: {missing_words}")
    if word_tab is None:
        word_tab = SymbolTable.for_alphabet(sorted(word_lm.vocab))
    lex_fst = lexicon_to_fst(lexicon, word_tab, topology.output_labels())
    graph = trim(compose(compose(topology, lex_fst), lm_to_fst(word_lm, word_tab)))
    return graph, word_tab


def _beam_better(cand, incumbent):
    if incumbent is None:
        return True
    if cand[0] != incumbent[0]:
        return cand[0] > incumbent[0]
    return (cand[1], cand[2]) < (incumbent[1], incumbent[2])


def beam_decode(graph: Wfst, logits: FrameLogits, beam: float = DEFAULT_BEAM,
                max_active: int = DEFAULT_MAX_ACTIVE,
                acoustic_scale: float = 1.0,
                word_tab: SymbolTable | None = None) -> Hypothesis:
    """Frame-synchronous Viterbi search with score-margin and count pruning.

    With an infinite beam and unlimited ``max_active`` this is exact best-path
    search; ties prefer the lexicographically smallest output sequence.
    """
    if beam <= 0:
        raise ValueError("beam must be positive")
    if graph.is_empty():
        raise NoPathError("empty decode graph")
    logprobs = log_softmax_rows(logits)
    scores = logprobs.scores * acoustic_scale
    col_of = {lab: j for j, lab in enumerate(logprobs.labels)}
    missing = sorted(graph.input_labels() - set(col_of))
    if missing:
        raise ValueError(f"emission scores missing for label ids {missing}")

    eps_arcs = input_epsilon_topo_order(graph)
    consuming = [a for a in graph.arcs if a.ilabel != EPSILON]

    def eps_close(level):
        for arc in eps_arcs:
            val = level.get(arc.src)
            if val is None:
                continue
            out = val[1] + ((arc.olabel,) if arc.olabel != EPSILON else ())
            cand = (val[0] + arc.weight, out, val[2])
            if _beam_better(cand, level.get(arc.dst)):
                level[arc.dst] = cand

    def prune(level):
        if not level:
            return level
        best = max(v[0] for v in level.values())
        kept = {s: v for s, v in level.items() if v[0] >= best - beam}
        if len(kept) > max_active:
            ranked = sorted(kept.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))
            kept = dict(ranked[:max_active])
        return kept

    level = {graph.start: (0.0, (), ())}
    eps_close(level)
    level = prune(level)
    for t in range(scores.shape[0]):
        nxt = {}
        for arc in consuming:
            val = level.get(arc.src)
            if val is None:
                continue
            out = val[1] + ((arc.olabel,) if arc.olabel != EPSILON else ())
            cand = (val[0] + arc.weight + scores[t, col_of[arc.ilabel]],
                    out, val[2] + (arc.ilabel,))
            if _beam_better(cand, nxt.get(arc.dst)):
                nxt[arc.dst] = cand
        eps_close(nxt)
        level = prune(nxt)
        if not level:
            raise NoPathError(f"all paths pruned at frame {t}; try a larger beam")
    best = None
    for s, fw in graph.finals.items():
        val = level.get(s)
        if val is None:
            continue
        cand = (val[0] + fw, val[1], val[2])
        if _beam_better(cand, best):
            best = cand
    if best is None:
        raise NoPathError("no surviving path reaches a final state; try a larger beam")
    tokens = tuple(word_tab.sym_of(i) for i in best[1]) if word_tab else \
        tuple(str(i) for i in best[1])
    return Hypothesis(tokens=tokens, score=best[0], alignment=best[2])


def greedy_decode(logits: FrameLogits) -> tuple[int, ...]:
    """Per-frame argmax (ties toward the lower label id) then collapse."""
    scores = np.asarray(logits.scores)
    cols = scores.argmax(axis=1)
    return ctc_collapse([logits.labels[c] for c in cols])


@dataclass(frozen=True)
class EditCounts:
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(ref, hyp) -> EditCounts:
    """Unit-cost Levenshtein with a backtrace that prefers substitution over
    insertion over deletion on ties."""
    ref = list(ref)
    hyp = list(hyp)
    R, H = len(ref), len(hyp)
    d = np.zeros((R + 1, H + 1), dtype=np.int64)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            ins = d[i, j - 1] + 1
            dele = d[i - 1, j] + 1
            d[i, j] = min(sub, ins, dele)
    subs = ins = dels = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return EditCounts(int(d[R, H]), subs, ins, dels)


def error_rate(ref, hyp) -> tuple[float, EditCounts]:
    """Edit distance over reference length (1.0 for a nonempty hypothesis
    against an empty reference)."""
    ref = list(ref)
    counts = edit_distance(ref, hyp)
    if not ref:
        return (0.0 if counts.distance == 0 else 1.0), counts
    return counts.distance / len(ref), counts


__all__ = [
    "DEFAULT_BEAM",
    "DEFAULT_MAX_ACTIVE",
    "EditCounts",
    "Hypothesis",
    "Lexicon",
    "beam_decode",
    "build_decode_graph",
    "edit_distance",
    "error_rate",
    "greedy_decode",
    "lexicon_to_fst",
]
