"""Weighted finite-state transducers and the graph algorithms built on them.

Arc weights are log-domain reals (natural-log probabilities, so ordinarily
<= 0); -inf is permitted only as "absent".  Path accumulation is either
log-semiring (logaddexp over paths, used by forward-backward and language
enumeration) or tropical (max over paths, used by best-path search).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .symbols import BLANK, EPSILON

NEG_INF = float("-inf")

ENUMERATION_MAX_LEN = 12
ENUMERATION_MAX_SEQUENCES = 200_000


class FstError(Exception):
    pass


class NoPathError(FstError):
    """Raised when a machine admits no accepting path for the query."""


class EpsilonCycleError(FstError):
    """Raised when an epsilon cycle makes path summation ill-defined."""


class EnumerationOverflowError(FstError):
    """Raised when language enumeration exceeds the desk-scale cutoff."""


@dataclass(frozen=True)
class Arc:
    src: int
    ilabel: int
    olabel: int
    weight: float
    dst: int


@dataclass(frozen=True)
class PathWeight:
    """A single path: total log weight plus its epsilon-free label sequences."""

    total: float
    ilabels: tuple[int, ...]
    olabels: tuple[int, ...]


class Wfst:
    """A weighted transducer: indexed states, arcs, one start, weighted finals.

    Instances are mutated only while being built; library constructors call
    :meth:`freeze` before handing them out, after which they are safe to share
    across threads.  ``input_alphabet`` / ``output_alphabet`` optionally declare
    the label universe of each tape; when absent the arc labels define it.
    """

    def __init__(self):
        self.num_states = 0
        self.start: int | None = None
        self.arcs: list[Arc] = []
        self.finals: dict[int, float] = {}
        self.input_alphabet: frozenset[int] | None = None
        self.output_alphabet: frozenset[int] | None = None
        self._frozen = False
        self._arcs_from: list[list[Arc]] | None = None

    # -- construction ----------------------------------------------------

    def add_state(self) -> int:
        self._check_mutable()
        self.num_states += 1
        return self.num_states - 1

    def add_states(self, n: int) -> None:
        self._check_mutable()
        self.num_states += n

    def set_start(self, state: int) -> None:
        self._check_mutable()
        self._check_state(state)
        self.start = state

    def set_final(self, state: int, weight: float = 0.0) -> None:
        self._check_mutable()
        self._check_state(state)
        self.finals[state] = float(weight)

    def add_arc(self, src: int, ilabel: int, olabel: int, weight: float, dst: int) -> None:
        self._check_mutable()
        self._check_state(src)
        self._check_state(dst)
        w = float(weight)
        if not np.isfinite(w):
            raise ValueError(f"arc weight must be finite, got {weight}")
        self.arcs.append(Arc(src, ilabel, olabel, w, dst))

    def freeze(self) -> "Wfst":
        self._frozen = True
        self._arcs_from = None
        return self

    def _check_mutable(self):
        if self._frozen:
            raise FstError("cannot mutate a frozen Wfst")

    def _check_state(self, state: int):
        if not 0 <= state < self.num_states:
            raise FstError(f"state {state} out of range (num_states={self.num_states})")

    # -- inspection --------------------------------------------------------

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def arcs_from(self, state: int) -> list[Arc]:
        if self._arcs_from is None:
            index: list[list[Arc]] = [[] for _ in range(self.num_states)]
            for arc in self.arcs:
                index[arc.src].append(arc)
            self._arcs_from = index
        return self._arcs_from[state]

    def input_labels(self) -> frozenset[int]:
        """Declared input alphabet, or the non-epsilon ilabels on arcs."""
        if self.input_alphabet is not None:
            return self.input_alphabet
        return frozenset(a.ilabel for a in self.arcs if a.ilabel != EPSILON)

    def output_labels(self) -> frozenset[int]:
        if self.output_alphabet is not None:
            return self.output_alphabet
        return frozenset(a.olabel for a in self.arcs if a.olabel != EPSILON)

    def is_empty(self) -> bool:
        return self.start is None or self.num_states == 0

    def __repr__(self):
        return (
            f"Wfst(states={self.num_states}, arcs={len(self.arcs)}, "
            f"start={self.start}, finals={len(self.finals)})"
        )


def empty_fst() -> Wfst:
    return Wfst().freeze()


def linear_acceptor(labels, weight: float = 0.0, input_alphabet=None) -> Wfst:
    """Acceptor of exactly one sequence; its total weight on the final state."""
    f = Wfst()
    f.add_states(len(labels) + 1)
    f.set_start(0)
    for i, lab in enumerate(labels):
        if lab == EPSILON:
            raise ValueError("epsilon cannot appear in an accepted sequence")
        f.add_arc(i, lab, lab, 0.0, i + 1)
    f.set_final(len(labels), weight)
    if input_alphabet is not None:
        f.input_alphabet = frozenset(input_alphabet)
        f.output_alphabet = frozenset(input_alphabet)
    return f.freeze()


def logsumexp_pair(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    return float(np.logaddexp(a, b))


def logsumexp(values) -> float:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return NEG_INF
    m = arr.max()
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.exp(arr - m).sum()))


# -- composition -----------------------------------------------------------

def compose(a: Wfst, b: Wfst) -> Wfst:
    """Compose two transducers with the standard three-state epsilon filter.

    The filter admits exactly one interleaving of epsilon moves per pair of
    underlying paths, so log-semiring path sums are not double counted:
    a joint epsilon move is allowed only from filter state 0, a-side-alone
    moves keep filter state 1, b-side-alone moves keep filter state 2, and any
    real match resets to 0.
    """
    missing = sorted(a.output_labels() - b.input_labels())
    if missing:
        raise FstError(
            "compose: output alphabet of the left machine is not covered by the "
            f"input alphabet of the right machine; missing label ids {missing}"
        )
    out = Wfst()
    out.input_alphabet = a.input_alphabet
    out.output_alphabet = b.output_alphabet
    if a.is_empty() or b.is_empty():
        return out.freeze()

    b_arcs_by_ilabel: list[dict[int, list[Arc]]] = []
    for q in range(b.num_states):
        by_label: dict[int, list[Arc]] = {}
        for arc in b.arcs_from(q):
            by_label.setdefault(arc.ilabel, []).append(arc)
        b_arcs_by_ilabel.append(by_label)

    start_key = (a.start, b.start, 0)
    state_ids: dict[tuple[int, int, int], int] = {start_key: out.add_state()}
    out.set_start(0)
    stack = [start_key]
    pending: list[tuple[int, int, int, float, tuple[int, int, int]]] = []

    def state_of(key) -> int:
        sid = state_ids.get(key)
        if sid is None:
            sid = out.add_state()
            state_ids[key] = sid
            stack.append(key)
        return sid

    while stack:
        key = stack.pop()
        p, q, filt = key
        src = state_ids[key]
        if p in a.finals and q in b.finals:
            out.set_final(src, a.finals[p] + b.finals[q])
        b_by_label = b_arcs_by_ilabel[q]
        b_eps_arcs = b_by_label.get(EPSILON, [])
        for arc_a in a.arcs_from(p):
            if arc_a.olabel != EPSILON:
                for arc_b in b_by_label.get(arc_a.olabel, []):
                    dst = state_of((arc_a.dst, arc_b.dst, 0))
                    pending.append((src, arc_a.ilabel, arc_b.olabel,
                                    arc_a.weight + arc_b.weight, (arc_a.dst, arc_b.dst, 0)))
            else:
                if filt != 2:
                    state_of((arc_a.dst, q, 1))
                    pending.append((src, arc_a.ilabel, EPSILON, arc_a.weight,
                                    (arc_a.dst, q, 1)))
                if filt == 0:
                    for arc_b in b_eps_arcs:
                        state_of((arc_a.dst, arc_b.dst, 0))
                        pending.append((src, arc_a.ilabel, arc_b.olabel,
                                        arc_a.weight + arc_b.weight,
                                        (arc_a.dst, arc_b.dst, 0)))
        if filt != 1:
            for arc_b in b_eps_arcs:
                state_of((p, arc_b.dst, 2))
                pending.append((src, EPSILON, arc_b.olabel, arc_b.weight, (p, arc_b.dst, 2)))

    for src, ilabel, olabel, weight, dst_key in pending:
        out.add_arc(src, ilabel, olabel, weight, state_ids[dst_key])
    return out.freeze()


# -- trimming ----------------------------------------------------------------

def trim(f: Wfst) -> Wfst:
    """Keep only states on some start-to-final path; language is unchanged."""
    if f.is_empty():
        return empty_fst()

    fwd = {f.start}
    frontier = [f.start]
    while frontier:
        s = frontier.pop()
        for arc in f.arcs_from(s):
            if arc.dst not in fwd:
                fwd.add(arc.dst)
                frontier.append(arc.dst)

    arcs_into: list[list[int]] = [[] for _ in range(f.num_states)]
    for arc in f.arcs:
        arcs_into[arc.dst].append(arc.src)
    bwd = set(f.finals)
    frontier = list(f.finals)
    while frontier:
        s = frontier.pop()
        for src in arcs_into[s]:
            if src not in bwd:
                bwd.add(src)
                frontier.append(src)

    keep = fwd & bwd
    if f.start not in keep:
        return empty_fst()
    remap = {old: new for new, old in enumerate(sorted(keep))}
    out = Wfst()
    out.add_states(len(keep))
    out.set_start(remap[f.start])
    for arc in f.arcs:
        if arc.src in keep and arc.dst in keep:
            out.add_arc(remap[arc.src], arc.ilabel, arc.olabel, arc.weight, remap[arc.dst])
    for s, w in f.finals.items():
        if s in keep:
            out.set_final(remap[s], w)
    out.input_alphabet = f.input_alphabet
    out.output_alphabet = f.output_alphabet
    return out.freeze()


# -- epsilon handling ---------------------------------------------------------

def input_epsilon_topo_order(f: Wfst) -> list[Arc]:
    """Input-epsilon arcs sorted so every arc's src precedes its dst.

    Raises EpsilonCycleError if the input-epsilon subgraph has a cycle; path
    sums over such a machine would be ill-defined for forward-backward.
    """
    eps_arcs = [a for a in f.arcs if a.ilabel == EPSILON]
    if not eps_arcs:
        return []
    succ: dict[int, list[int]] = {}
    indeg: dict[int, int] = {}
    nodes = set()
    for a in eps_arcs:
        succ.setdefault(a.src, []).append(a.dst)
        indeg[a.dst] = indeg.get(a.dst, 0) + 1
        nodes.add(a.src)
        nodes.add(a.dst)
    order: dict[int, int] = {}
    queue = [n for n in nodes if indeg.get(n, 0) == 0]
    rank = 0
    while queue:
        n = queue.pop()
        order[n] = rank
        rank += 1
        for m in succ.get(n, []):
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if len(order) != len(nodes):
        raise EpsilonCycleError("epsilon cycle detected in input-epsilon subgraph")
    return sorted(eps_arcs, key=lambda a: order[a.src])


# -- language enumeration ------------------------------------------------------

def enumerate_language(f: Wfst, max_len: int) -> list[tuple[tuple[int, ...], float]]:
    """All accepted input sequences up to max_len with log-semiring weights.

    Sequences come out in lexicographic order (by label id, shorter prefixes
    first).  Desk-scale guards: max_len <= 12 and a hard cap on the number of
    explored sequences.
    """
    if max_len > ENUMERATION_MAX_LEN:
        raise ValueError(f"max_len {max_len} exceeds desk-scale guard {ENUMERATION_MAX_LEN}")
    if f.is_empty():
        return []
    eps_arcs = input_epsilon_topo_order(f)
    consuming: dict[int, list[Arc]] = {}
    for arc in f.arcs:
        if arc.ilabel != EPSILON:
            consuming.setdefault(arc.ilabel, []).append(arc)
    symbols = sorted(consuming)

    def closure(dist: dict[int, float]) -> dict[int, float]:
        if not eps_arcs:
            return dist
        dist = dict(dist)
        for arc in eps_arcs:
            w = dist.get(arc.src)
            if w is not None:
                dist[arc.dst] = logsumexp_pair(dist.get(arc.dst, NEG_INF), w + arc.weight)
        return dist

    results: list[tuple[tuple[int, ...], float]] = []
    explored = 0

    def visit(seq: tuple[int, ...], dist: dict[int, float]):
        nonlocal explored
        explored += 1
        if explored > ENUMERATION_MAX_SEQUENCES:
            raise EnumerationOverflowError(
                f"enumeration exceeded {ENUMERATION_MAX_SEQUENCES} sequences"
            )
        total = logsumexp([w + f.finals[s] for s, w in dist.items() if s in f.finals])
        if total != NEG_INF:
            results.append((seq, total))
        if len(seq) == max_len:
            return
        for sym in symbols:
            nxt: dict[int, float] = {}
            for arc in consuming[sym]:
                w = dist.get(arc.src)
                if w is not None:
                    nxt[arc.dst] = logsumexp_pair(nxt.get(arc.dst, NEG_INF), w + arc.weight)
            if nxt:
                visit(seq + (sym,), closure(nxt))

    visit((), closure({f.start: 0.0}))
    return results


# -- best path -----------------------------------------------------------------

# A candidate is (weight, olabels, ilabels); bigger weight wins, then the
# lexicographically smallest output sequence, then the smallest input sequence.

def _better(cand, incumbent) -> bool:
    if incumbent is None:
        return True
    if cand[0] != incumbent[0]:
        return cand[0] > incumbent[0]
    return (cand[1], cand[2]) < (incumbent[1], incumbent[2])


def _extend(value, arc: Arc, extra: float = 0.0):
    w, olabels, ilabels = value
    if arc.olabel != EPSILON:
        olabels = olabels + (arc.olabel,)
    if arc.ilabel != EPSILON:
        ilabels = ilabels + (arc.ilabel,)
    return (w + arc.weight + extra, olabels, ilabels)


def shortest_path(f: Wfst, emissions=None) -> PathWeight:
    """Max-weight (tropical) accepting path, ties broken toward the
    lexicographically smallest output sequence.

    With ``emissions`` (an object exposing ``scores`` as a T x M matrix and
    ``labels`` as the emission symbol id per column), the path must consume
    exactly T frames on non-epsilon input labels and each consumed frame adds
    its emission score.
    """
    if f.is_empty():
        raise NoPathError("empty machine")
    if emissions is None:
        return _shortest_path_free(f)
    return _shortest_path_emissions(f, emissions)


def _shortest_path_free(f: Wfst) -> PathWeight:
    best: dict[int, tuple] = {f.start: (0.0, (), ())}
    for _ in range(f.num_states + 1):
        changed = False
        for arc in f.arcs:
            src_val = best.get(arc.src)
            if src_val is None:
                continue
            cand = _extend(src_val, arc)
            if _better(cand, best.get(arc.dst)):
                best[arc.dst] = cand
                changed = True
        if not changed:
            break
    else:
        raise FstError("best-path relaxation did not converge (improving cycle)")
    final_best = None
    for s, fw in f.finals.items():
        val = best.get(s)
        if val is None:
            continue
        cand = (val[0] + fw, val[1], val[2])
        if _better(cand, final_best):
            final_best = cand
    if final_best is None:
        raise NoPathError("no accepting path")
    return PathWeight(final_best[0], final_best[2], final_best[1])


def _emission_column_index(emissions) -> dict[int, int]:
    return {lab: j for j, lab in enumerate(emissions.labels)}


def _shortest_path_emissions(f: Wfst, emissions) -> PathWeight:
    scores = np.asarray(emissions.scores, dtype=np.float64)
    col_of = _emission_column_index(emissions)
    missing = sorted(f.input_labels() - set(col_of))
    if missing:
        raise FstError(f"emission scores missing for input label ids {missing}")
    eps_arcs = input_epsilon_topo_order(f)
    consuming = [a for a in f.arcs if a.ilabel != EPSILON]

    def eps_close(level: dict[int, tuple]):
        for arc in eps_arcs:
            val = level.get(arc.src)
            if val is None:
                continue
            cand = _extend(val, arc)
            if _better(cand, level.get(arc.dst)):
                level[arc.dst] = cand

    level: dict[int, tuple] = {f.start: (0.0, (), ())}
    eps_close(level)
    for t in range(scores.shape[0]):
        nxt: dict[int, tuple] = {}
        for arc in consuming:
            val = level.get(arc.src)
            if val is None:
                continue
            cand = _extend(val, arc, extra=scores[t, col_of[arc.ilabel]])
            if _better(cand, nxt.get(arc.dst)):
                nxt[arc.dst] = cand
        eps_close(nxt)
        level = nxt
        if not level:
            raise NoPathError(f"no path survives frame {t}")
    final_best = None
    for s, fw in f.finals.items():
        val = level.get(s)
        if val is None:
            continue
        cand = (val[0] + fw, val[1], val[2])
        if _better(cand, final_best):
            final_best = cand
    if final_best is None:
        raise NoPathError("no accepting path consumes all frames")
    return PathWeight(final_best[0], final_best[2], final_best[1])


# -- text format ----------------------------------------------------------------

def write_text(f: Wfst) -> str:
    """One arc per line ``src dst ilabel olabel weight``; finals ``state weight``.

    The first line's state is the start state, so arcs leaving the start (or
    the start's final line, for arcless machines) are written first.
    """
    if f.is_empty():
        return ""
    lines: list[str] = []
    start_arcs = [a for a in f.arcs if a.src == f.start]
    rest = [a for a in f.arcs if a.src != f.start]
    if not start_arcs:
        if f.start not in f.finals:
            raise FstError("start state has no arcs and is not final; not serializable")
        lines.append(f"{f.start} {f.finals[f.start]:.17g}")
    for arc in start_arcs + rest:
        lines.append(f"{arc.src} {arc.dst} {arc.ilabel} {arc.olabel} {arc.weight:.17g}")
    for s in sorted(f.finals):
        if not start_arcs and s == f.start:
            continue
        lines.append(f"{s} {f.finals[s]:.17g}")
    return "\n".join(lines) + "\n"


def read_text(text: str) -> Wfst:
    f = Wfst()
    start: int | None = None
    arcs: list[tuple[int, int, int, int, float]] = []
    finals: list[tuple[int, float]] = []
    max_state = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 5:
            src, dst = int(parts[0]), int(parts[1])
            ilabel, olabel = int(parts[2]), int(parts[3])
            weight = float(parts[4])
            if start is None:
                start = src
            arcs.append((src, dst, ilabel, olabel, weight))
            max_state = max(max_state, src, dst)
        elif len(parts) == 2:
            state, weight = int(parts[0]), float(parts[1])
            if start is None:
                start = state
            finals.append((state, weight))
            max_state = max(max_state, state)
        else:
            raise FstError(f"fst text line {lineno}: expected 2 or 5 fields, got {len(parts)}")
    if start is None:
        return empty_fst()
    f.add_states(max_state + 1)
    f.set_start(start)
    for src, dst, ilabel, olabel, weight in arcs:
        f.add_arc(src, ilabel, olabel, weight, dst)
    for state, weight in finals:
        f.set_final(state, weight)
    return f.freeze()


__all__ = [
    "Arc",
    "BLANK",
    "EPSILON",
    "EnumerationOverflowError",
    "EpsilonCycleError",
    "FstError",
    "NEG_INF",
    "NoPathError",
    "PathWeight",
    "Wfst",
    "compose",
    "empty_fst",
    "enumerate_language",
    "input_epsilon_topo_order",
    "linear_acceptor",
    "logsumexp",
    "logsumexp_pair",
    "read_text",
    "shortest_path",
    "trim",
    "write_text",
]
