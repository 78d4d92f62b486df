"""Back-off n-gram language models over label symbols.

The model estimated here supplies the label-sequence prior of the
sequence-level loss: it is trained on training transcripts, serialized as
ARPA, compiled to a WFST, and composed with the CTC topology into the
denominator graph that forward-backward runs over.

Smoothing is Witten-Bell.  The unigram distribution interpolates with the
uniform distribution over the prediction vocabulary (labels plus the
sentence-end marker), so it stays normalized even when every vocabulary item
was observed.  Higher orders use the back-off form; a context gets a back-off
weight only when it has unseen continuations, and only such contexts get an
epsilon back-off arc in the compiled FST.

The compiled FST uses plain epsilon arcs for back-off.  When an explicit
n-gram arc and a back-off route both exist, a log-semiring sum over the FST
counts both; graph-weight oracles must therefore score sequences by summing
all back-off routes, not by the usual deterministic back-off rule (which
`sentence_logprob` implements).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .fst import Wfst, compose, trim
from .symbols import SymbolTable

BOS = "<s>"
EOS = "</s>"

LN10 = math.log(10.0)

# log10 probability conventionally assigned to the unpredictable <s> token
BOS_LOG10 = -99.0

MAX_ORDER = 4


class LmError(Exception):
    pass


class OovError(LmError):
    def __init__(self, symbol):
        super().__init__(f"out-of-vocabulary symbol {symbol!r}")
        self.symbol = symbol


class ArpaParseError(LmError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"ARPA line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class NGramEntry:
    log10_prob: float
    log10_backoff: float | None  # None: context never needs to back off


class NGramLm:
    """Back-off model: per-order maps from token tuples to (log10 p, log10 bow)."""

    def __init__(self, order: int, entries: dict[int, dict[tuple[str, ...], NGramEntry]],
                 vocab: frozenset[str]):
        if not 1 <= order <= MAX_ORDER:
            raise LmError(f"order must be in 1..{MAX_ORDER}, got {order}")
        self.order = order
        self.entries = entries
        self.vocab = vocab  # label symbols only (no markers)

    @property
    def predicted(self) -> frozenset[str]:
        """Tokens the model assigns probability to: labels plus sentence end."""
        return self.vocab | {EOS}

    def logprob10(self, token: str, context: tuple[str, ...]) -> float:
        """Standard back-off conditional log10 probability."""
        context = context[-(self.order - 1):] if self.order > 1 else ()
        total_bow = 0.0
        while True:
            gram = context + (token,)
            entry = self.entries.get(len(gram), {}).get(gram)
            if entry is not None:
                return total_bow + entry.log10_prob
            if not context:
                raise OovError(token)
            ctx_entry = self.entries.get(len(context), {}).get(context)
            if ctx_entry is not None and ctx_entry.log10_backoff is not None:
                total_bow += ctx_entry.log10_backoff
            context = context[1:]

    def __eq__(self, other):
        return (isinstance(other, NGramLm) and self.order == other.order
                and self.vocab == other.vocab and self.entries == other.entries)


def _count_ngrams(sentences, order):
    counts: dict[int, dict[tuple[str, ...], int]] = {k: {} for k in range(1, order + 1)}
    for sent in sentences:
        tokens = [BOS, *sent, EOS]
        for i in range(len(tokens)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                gram = tuple(tokens[i - k + 1: i + 1])
                if gram[-1] == BOS:  # <s> is context only, never predicted
                    continue
                counts[k][gram] = counts[k].get(gram, 0) + 1
    return counts


def estimate_ngram(transcripts, order: int, vocab=None) -> NGramLm:
    """Witten-Bell back-off model from transcripts (sequences of symbols).

    ``vocab`` may name unseen label symbols that should still receive unigram
    mass; it defaults to the symbols observed in the corpus.
    """
    transcripts = [list(t) for t in transcripts]
    if not transcripts:
        raise LmError("cannot estimate a model from an empty corpus")
    if not 1 <= order <= MAX_ORDER:
        raise LmError(f"order must be in 1..{MAX_ORDER}, got {order}")
    seen_symbols = {sym for t in transcripts for sym in t}
    vocab = frozenset(vocab) if vocab is not None else frozenset(seen_symbols)
    if BOS in vocab or EOS in vocab:
        raise LmError("vocabulary may not contain the sentence markers")
    if not seen_symbols <= vocab:
        raise LmError(f"transcripts use symbols outside vocab: {sorted(seen_symbols - vocab)}")

    counts = _count_ngrams(transcripts, order)
    predicted = sorted(vocab) + [EOS]
    v_size = len(predicted)

    # unigrams: Witten-Bell interpolated with the uniform distribution
    uni_total = sum(counts[1].values())
    uni_types = len(counts[1])
    probs: dict[int, dict[tuple[str, ...], float]] = {1: {}}
    for w in predicted:
        c = counts[1].get((w,), 0)
        probs[1][(w,)] = (c + uni_types / v_size) / (uni_total + uni_types)

    def resolved(token, context):
        """Back-off-resolved probability using the levels built so far."""
        mult = 1.0
        while True:
            p = probs.get(len(context) + 1, {}).get(context + (token,))
            if p is not None:
                return mult * p
            mult *= backoffs.get(len(context), {}).get(context, 1.0)
            context = context[1:]

    backoffs: dict[int, dict[tuple[str, ...], float]] = {}
    for k in range(2, order + 1):
        probs[k] = {}
        backoffs[k - 1] = {}
        by_context: dict[tuple[str, ...], dict[str, int]] = {}
        for gram, c in counts[k].items():
            by_context.setdefault(gram[:-1], {})[gram[-1]] = c
        for ctx, cont in sorted(by_context.items()):
            total = sum(cont.values())
            types = len(cont)
            for w, c in cont.items():
                probs[k][ctx + (w,)] = c / (total + types)
            unseen = [w for w in predicted if w not in cont]
            if not unseen:
                # nothing to back off to: fold the reserved mass back in
                for w, c in cont.items():
                    probs[k][ctx + (w,)] = c / total
                continue
            leftover = types / (total + types)
            lower_mass = sum(resolved(w, ctx[1:]) for w in unseen)
            backoffs[k - 1][ctx] = leftover / lower_mass

    entries: dict[int, dict[tuple[str, ...], NGramEntry]] = {}
    for k in range(1, order + 1):
        entries[k] = {}
        for gram, p in probs[k].items():
            bow = backoffs.get(k, {}).get(gram)
            entries[k][gram] = NGramEntry(math.log10(p),
                                          None if bow is None else math.log10(bow))
    if order > 1:
        bos_bow = backoffs.get(1, {}).get((BOS,))
        entries[1][(BOS,)] = NGramEntry(
            BOS_LOG10, None if bos_bow is None else math.log10(bos_bow))
    else:
        entries[1][(BOS,)] = NGramEntry(BOS_LOG10, None)
    return NGramLm(order, entries, vocab)


def sentence_logprob(lm: NGramLm, labels) -> float:
    """Natural-log probability of a label sequence including begin/end markers."""
    labels = list(labels)
    for sym in labels:
        if sym not in lm.vocab:
            raise OovError(sym)
    context = (BOS,)
    total = 0.0
    for token in labels + [EOS]:
        total += lm.logprob10(token, context)
        context = (context + (token,))[-(lm.order - 1):] if lm.order > 1 else ()
    return total * LN10


# -- ARPA serialization ---------------------------------------------------------

def arpa_write(lm: NGramLm) -> str:
    lines = ["\\data\\"]
    for k in range(1, lm.order + 1):
        lines.append(f"ngram {k}={len(lm.entries.get(k, {}))}")
    for k in range(1, lm.order + 1):
        lines.append("")
        lines.append(f"\\{k}-grams:")
        for gram in sorted(lm.entries.get(k, {})):
            entry = lm.entries[k][gram]
            line = f"{entry.log10_prob:.7f}\t{' '.join(gram)}"
            if entry.log10_backoff is not None:
                line += f"\t{entry.log10_backoff:.7f}"
            lines.append(line)
    lines += ["", "\\end\\", ""]
    return "\n".join(lines)


def arpa_read(text: str) -> NGramLm:
    lines = text.splitlines()
    counts: dict[int, int] = {}
    entries: dict[int, dict[tuple[str, ...], NGramEntry]] = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            raise ArpaParseError(i + 1, f"expected \\data\\ header, got {lines[i]!r}")
        i += 1
    if i == len(lines):
        raise ArpaParseError(len(lines), "missing \\data\\ header")
    i += 1
    while i < len(lines) and lines[i].strip().startswith("ngram "):
        spec = lines[i].strip()[len("ngram "):]
        try:
            k_str, n_str = spec.split("=")
            counts[int(k_str)] = int(n_str)
        except ValueError:
            raise ArpaParseError(i + 1, f"malformed count line {lines[i]!r}") from None
        i += 1
    if not counts:
        raise ArpaParseError(i + 1, "no ngram count lines after \\data\\")
    order = max(counts)
    current_k = None
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if line == "\\end\\":
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            current_k = int(line[1:-len("-grams:")])
            if current_k not in counts:
                raise ArpaParseError(i + 1, f"section {line!r} not declared in \\data\\")
            entries[current_k] = {}
            i += 1
            continue
        if current_k is None:
            raise ArpaParseError(i + 1, f"entry before any section header: {line!r}")
        parts = line.split()
        if len(parts) == current_k + 1:
            logp, gram, bow = float(parts[0]), tuple(parts[1:]), None
        elif len(parts) == current_k + 2:
            logp, gram, bow = float(parts[0]), tuple(parts[1:-1]), float(parts[-1])
        else:
            raise ArpaParseError(
                i + 1, f"expected {current_k + 1} or {current_k + 2} fields, got {len(parts)}")
        entries[current_k][gram] = NGramEntry(logp, bow)
        i += 1
    else:
        raise ArpaParseError(len(lines), "missing \\end\\ marker")
    for k, n in counts.items():
        if len(entries.get(k, {})) != n:
            raise ArpaParseError(
                i + 1, f"\\data\\ declared {n} {k}-grams but section has {len(entries.get(k, {}))}")
    vocab = frozenset(g[0] for g in entries[1] if g[0] not in (BOS, EOS))
    return NGramLm(order, entries, vocab)


# -- FST compilation -------------------------------------------------------------

def _context_states(lm: NGramLm) -> set[tuple[str, ...]]:
    states = {()}
    for k in range(2, lm.order + 1):
        for gram in lm.entries.get(k, {}):
            states.add(gram[:-1])
    return states


def _next_context(states, context, token, order):
    ctx = (context + (token,))[-(order - 1):] if order > 1 else ()
    while ctx not in states:
        ctx = ctx[1:]
    return ctx


def lm_to_fst(lm: NGramLm, symtab: SymbolTable) -> Wfst:
    """Compile the model to an acceptor over label ids.

    States are model contexts; explicit n-grams become label arcs, back-off
    weights become epsilon arcs to the shortened context, and sentence-end
    probabilities become final weights.
    """
    missing = sorted(sym for sym in lm.vocab if sym not in symtab)
    if missing:
        raise LmError(f"symbols missing from the symbol table: {missing}")
    states = _context_states(lm)
    fst = Wfst()
    ids = {ctx: fst.add_state() for ctx in sorted(states)}
    start_ctx = (BOS,) if lm.order > 1 and (BOS,) in states else ()
    fst.set_start(ids[start_ctx])
    for k in range(1, lm.order + 1):
        for gram, entry in lm.entries.get(k, {}).items():
            ctx, token = gram[:-1], gram[-1]
            if ctx not in states:
                continue
            if token == EOS:
                fst.set_final(ids[ctx], entry.log10_prob * LN10)
            elif token != BOS:
                dst = _next_context(states, ctx, token, lm.order)
                fst.add_arc(ids[ctx], symtab.id_of(token), symtab.id_of(token),
                            entry.log10_prob * LN10, ids[dst])
    for ctx in states:
        if not ctx:
            continue
        entry = lm.entries.get(len(ctx), {}).get(ctx)
        if entry is not None and entry.log10_backoff is not None:
            target = ctx[1:]
            while target not in states:
                target = target[1:]
            fst.add_arc(ids[ctx], 0, 0, entry.log10_backoff * LN10, ids[target])
    label_ids = frozenset(symtab.id_of(sym) for sym in lm.vocab)
    fst.input_alphabet = label_ids
    fst.output_alphabet = label_ids
    return fst.freeze()


# -- denominator graph -------------------------------------------------------------

@dataclass(frozen=True)
class DenominatorGraph:
    """Topology composed with the label model: the graph whose forward pass
    yields the model-expectation side of the loss."""

    graph: Wfst
    topology: Wfst
    emission_ids: tuple[int, ...]  # blank plus label ids, ascending
    symtab: SymbolTable


def build_denominator(topology: Wfst, lm: NGramLm, symtab: SymbolTable) -> DenominatorGraph:
    topo_labels = {symtab.sym_of(i) for i in topology.output_labels()}
    if topo_labels != set(lm.vocab):
        only_topo = sorted(topo_labels - lm.vocab)
        only_lm = sorted(lm.vocab - topo_labels)
        raise LmError(
            f"vocabulary mismatch: topology-only symbols {only_topo}, model-only {only_lm}")
    graph = trim(compose(topology, lm_to_fst(lm, symtab)))
    return DenominatorGraph(
        graph=graph,
        topology=topology,
        emission_ids=tuple(sorted(topology.input_labels())),
        symtab=symtab,
    )


__all__ = [
    "ArpaParseError",
    "BOS",
    "DenominatorGraph",
    "EOS",
    "LN10",
    "LmError",
    "NGramEntry",
    "NGramLm",
    "OovError",
    "arpa_read",
    "arpa_write",
    "build_denominator",
    "estimate_ngram",
    "lm_to_fst",
    "sentence_logprob",
]
