"""Tests for the CTC topology and its alignment oracles."""

from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catdesk.fst import enumerate_language
from catdesk.symbols import BLANK
from catdesk.topology import (
    build_ctc_topology,
    ctc_collapse,
    enumerate_alignments,
    min_alignment_frames,
    numerator_graph,
)

A, B = 2, 3


def brute_force_inverse(labels, t, alphabet):
    """Independent oracle: filter all |alphabet|^t strings by a local collapse."""

    def collapse(pi):
        out = []
        for s in pi:
            if not out or out[-1] != s:
                out.append(s)
        return tuple(x for x in out if x != BLANK)

    full = sorted({BLANK, *alphabet})
    return [pi for pi in product(full, repeat=t) if collapse(pi) == tuple(labels)]


class TestCollapse:
    def test_repeats_and_blanks(self):
        assert ctc_collapse([BLANK, A, A, BLANK, B]) == (A, B)

    def test_all_blank(self):
        assert ctc_collapse([BLANK, BLANK, BLANK]) == ()

    def test_blank_separates_repeat(self):
        assert ctc_collapse([A, BLANK, A]) == (A, A)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from([A, B]), max_size=8))
    def test_identity_on_repeat_free_sequences(self, labels):
        # a blank-free sequence with no adjacent repeats is a fixed point
        dedup = [x for i, x in enumerate(labels) if i == 0 or labels[i - 1] != x]
        assert ctc_collapse(dedup) == tuple(dedup)


class TestEnumerateAlignments:
    def test_two_labels_three_frames(self):
        got = enumerate_alignments([A, B], 3)
        assert len(got) == 5
        assert got == brute_force_inverse([A, B], 3, [A, B])

    def test_single_label_single_frame(self):
        assert enumerate_alignments([A], 1) == [(A,)]

    def test_adjacent_repeat_needs_blank(self):
        assert enumerate_alignments([A, A], 2) == []
        assert enumerate_alignments([A, A], 3) == [(A, BLANK, A)]

    def test_frame_guard(self):
        with pytest.raises(ValueError):
            enumerate_alignments([A], 11)

    @settings(max_examples=100, deadline=None)
    @given(labels=st.lists(st.sampled_from([A, B]), max_size=3),
           t=st.integers(0, 6))
    def test_round_trip_and_oracle(self, labels, t):
        got = enumerate_alignments(labels, t)
        for pi in got:
            assert ctc_collapse(pi) == tuple(labels)
        assert got == brute_force_inverse(labels, t, [A, B])


class TestTopologyFst:
    def test_accepts_blank_a_blank(self):
        topo = build_ctc_topology([A])
        lang = dict(enumerate_language(topo, 3))
        assert lang[(BLANK, A, BLANK)] == 0.0

    def test_emission_alphabet_size(self):
        for k in (1, 2, 3):
            topo = build_ctc_topology(list(range(2, 2 + k)))
            assert len(topo.input_labels()) == k + 1

    def test_language_matches_alignment_oracle(self):
        topo = build_ctc_topology([A, B])
        # collect accepted inputs grouped by their output sequence via the
        # numerator lattice for each possible transcript
        for labels in [(), (A,), (B,), (A, B), (B, A), (A, A)]:
            lattice = numerator_graph(labels, topo)
            for t in range(5):
                accepted = sorted(seq for seq, _ in enumerate_language(lattice, 4)
                                  if len(seq) == t)
                assert accepted == enumerate_alignments(labels, t), (labels, t)

    def test_rejects_unseparated_repeat(self):
        topo = build_ctc_topology([A])
        lattice = numerator_graph([A, A], topo)
        assert [s for s, _ in enumerate_language(lattice, 2)] == []


class TestNumeratorGraph:
    def test_five_alignments_weight_zero(self):
        topo = build_ctc_topology([A, B])
        lattice = numerator_graph([A, B], topo)
        got = [(seq, w) for seq, w in enumerate_language(lattice, 3) if len(seq) == 3]
        assert [seq for seq, _ in got] == enumerate_alignments([A, B], 3)
        assert all(w == 0.0 for _, w in got)

    def test_empty_transcript_accepts_blank_runs(self):
        topo = build_ctc_topology([A])
        lattice = numerator_graph([], topo)
        seqs = [seq for seq, _ in enumerate_language(lattice, 4)]
        assert seqs == [tuple([BLANK] * t) for t in range(5)]

    def test_label_outside_alphabet_rejected(self):
        topo = build_ctc_topology([A])
        with pytest.raises(ValueError):
            numerator_graph([B], topo)


class TestMinFrames:
    def test_counts_repeats(self):
        assert min_alignment_frames([]) == 0
        assert min_alignment_frames([A]) == 1
        assert min_alignment_frames([A, A]) == 3
        assert min_alignment_frames([A, B, B, A]) == 5
