"""CTC topology: the collapsing map, its alignment lattices, and oracles.

Alignments are sequences over the emission alphabet (blank id 1 plus the
label ids >= 2); label sequences never contain blank or epsilon.  The
collapsing map first merges adjacent repeats, then deletes blanks.
"""

from __future__ import annotations

from itertools import product

from .fst import Wfst, compose, linear_acceptor, trim
from .symbols import BLANK, EPSILON

ALIGNMENT_MAX_FRAMES = 10
ALIGNMENT_MAX_CANDIDATES = 10_000_000


def check_label_seq(labels) -> tuple[int, ...]:
    labels = tuple(int(x) for x in labels)
    for lab in labels:
        if lab in (EPSILON, BLANK):
            raise ValueError(f"label sequence may not contain id {lab} (epsilon/blank)")
    return labels


def ctc_collapse(alignment) -> tuple[int, ...]:
    """Merge adjacent repeats, then drop blanks."""
    out: list[int] = []
    prev: int | None = None
    for sym in alignment:
        if sym != prev:
            out.append(sym)
        prev = sym
    return tuple(sym for sym in out if sym != BLANK)


def enumerate_alignments(labels, num_frames: int) -> list[tuple[int, ...]]:
    """Brute-force inverse of the collapsing map at a fixed frame count.

    Any alignment that collapses to ``labels`` uses only those labels plus
    blank, so the search runs over that reduced candidate alphabet.  Results
    are in lexicographic order by symbol id.
    """
    labels = check_label_seq(labels)
    if num_frames > ALIGNMENT_MAX_FRAMES:
        raise ValueError(f"num_frames {num_frames} exceeds guard {ALIGNMENT_MAX_FRAMES}")
    candidates = sorted({BLANK, *labels})
    if len(candidates) ** num_frames > ALIGNMENT_MAX_CANDIDATES:
        raise ValueError("alignment enumeration exceeds the desk-scale candidate cap")
    return [
        pi for pi in product(candidates, repeat=num_frames) if ctc_collapse(pi) == labels
    ]


def build_ctc_topology(alphabet) -> Wfst:
    """Transducer from emission sequences to their collapsed label sequences.

    One state per emission symbol plus a start state.  Self-loops consume
    repeats without emitting output; entering a label state from anywhere
    else emits that label.  All states are final with weight 0, and every
    arc is unweighted, so path structure exactly mirrors the collapse map.
    """
    alphabet = tuple(sorted(check_label_seq(alphabet)))
    if not alphabet:
        raise ValueError("alphabet must be nonempty")
    topo = Wfst()
    start = topo.add_state()
    topo.set_start(start)
    topo.set_final(start)
    state_of = {BLANK: topo.add_state()}
    for lab in alphabet:
        state_of[lab] = topo.add_state()
    for sym, state in state_of.items():
        topo.set_final(state)
        out = EPSILON if sym == BLANK else sym
        topo.add_arc(start, sym, out, 0.0, state)
        topo.add_arc(state, sym, EPSILON, 0.0, state)
        for other, other_state in state_of.items():
            if other != sym:
                other_out = EPSILON if other == BLANK else other
                topo.add_arc(state, other, other_out, 0.0, other_state)
    topo.input_alphabet = frozenset(state_of)
    topo.output_alphabet = frozenset(alphabet)
    return topo.freeze()


def numerator_graph(labels, topology: Wfst) -> Wfst:
    """Alignment lattice of one transcript: topology composed with the
    transcript's linear acceptor, trimmed.

    An empty transcript yields the lattice of all-blank alignments.
    """
    labels = check_label_seq(labels)
    missing = sorted(set(labels) - topology.output_labels())
    if missing:
        raise ValueError(f"labels {missing} not in the topology output alphabet")
    acceptor = linear_acceptor(labels, input_alphabet=topology.output_labels())
    return trim(compose(topology, acceptor))


def min_alignment_frames(labels) -> int:
    """Fewest frames any alignment of ``labels`` can occupy: one per label
    plus a separating blank per adjacent repeat."""
    labels = check_label_seq(labels)
    repeats = sum(1 for i in range(1, len(labels)) if labels[i] == labels[i - 1])
    return len(labels) + repeats


__all__ = [
    "build_ctc_topology",
    "check_label_seq",
    "ctc_collapse",
    "enumerate_alignments",
    "min_alignment_frames",
    "numerator_graph",
]
