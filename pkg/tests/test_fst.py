"""Tests for the WFST core: composition, trimming, enumeration, best path."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catdesk.fst import (
    EPSILON,
    NEG_INF,
    EnumerationOverflowError,
    FstError,
    NoPathError,
    Wfst,
    compose,
    empty_fst,
    enumerate_language,
    linear_acceptor,
    read_text,
    shortest_path,
    trim,
    write_text,
)

A, B, C = 2, 3, 4  # label ids (0 = epsilon, 1 = blank)


def build(num_states, start, arcs, finals, in_alpha=None, out_alpha=None):
    f = Wfst()
    f.add_states(num_states)
    f.set_start(start)
    for src, ilabel, olabel, weight, dst in arcs:
        f.add_arc(src, ilabel, olabel, weight, dst)
    for state, weight in finals.items():
        f.set_final(state, weight)
    if in_alpha is not None:
        f.input_alphabet = frozenset(in_alpha)
    if out_alpha is not None:
        f.output_alphabet = frozenset(out_alpha)
    return f.freeze()


def logadd(*vals):
    out = NEG_INF
    for v in vals:
        out = np.logaddexp(out, v)
    return float(out)


# -- brute-force pair-language oracle (exact on acyclic machines) --------------

def enum_pairs(f, max_in_len):
    """All (input, output) pairs with log-summed weights, by exhaustive DFS."""
    results = {}

    def dfs(state, x, z, w):
        fw = f.finals.get(state)
        if fw is not None:
            key = (x, z)
            results[key] = logadd(results.get(key, NEG_INF), w + fw)
        for arc in f.arcs_from(state):
            nx = x + ((arc.ilabel,) if arc.ilabel != EPSILON else ())
            if len(nx) > max_in_len:
                continue
            nz = z + ((arc.olabel,) if arc.olabel != EPSILON else ())
            dfs(arc.dst, nx, nz, w + arc.weight)

    if not f.is_empty():
        dfs(f.start, (), (), 0.0)
    return results


def join_pairs(pa, pb):
    out = {}
    for (x, y), wa in pa.items():
        for (y2, z), wb in pb.items():
            if y == y2:
                key = (x, z)
                out[key] = logadd(out.get(key, NEG_INF), wa + wb)
    return out


# -- composition ----------------------------------------------------------------

class TestCompose:
    def test_identity_acceptor_preserves_language(self):
        a = build(3, 0, [(0, A, A, -1.0, 1), (0, B, B, -2.0, 1), (1, A, B, -0.5, 2)],
                  {2: -0.25})
        ident = build(1, 0, [(0, A, A, 0.0, 0), (0, B, B, 0.0, 0)], {0: 0.0})
        composed = compose(a, ident)
        assert enumerate_language(composed, 4) == enumerate_language(a, 4)

    def test_linear_against_two_string_acceptor(self):
        # "ab" intersected with {ab, ba} accepts exactly "ab" with summed weight.
        ab = build(3, 0, [(0, A, A, -1.0, 1), (1, B, B, -2.0, 2)], {2: 0.0})
        two = build(3, 0,
                    [(0, A, A, -0.5, 1), (1, B, B, -0.5, 2),
                     (0, B, B, -0.75, 1), (1, A, A, -0.75, 2)],
                    {2: 0.0})
        got = enumerate_language(compose(ab, two), 4)
        assert got == [((A, B), -1.0 - 2.0 - 0.5 - 0.5)]

    def test_topology_with_unigram_lm_matches_brute_force(self):
        # Single-label CTC topology composed with a hand-built unigram label
        # model: every alignment's weight is p^(collapsed length) * p_final.
        from catdesk.topology import build_ctc_topology, ctc_collapse

        log_half = math.log(0.5)
        topo = build_ctc_topology([A])
        lm = build(1, 0, [(0, A, A, log_half, 0)], {0: log_half})
        composed = compose(topo, lm)
        got = dict(enumerate_language(composed, 4))
        expected = {}
        from itertools import product
        for t in range(5):
            for pi in product([1, A], repeat=t):
                expected[pi] = log_half * (len(ctc_collapse(pi)) + 1)
        assert set(got) == set(expected)
        for pi, w in expected.items():
            assert got[pi] == pytest.approx(w, abs=1e-12)

    def test_alphabet_mismatch_rejected(self):
        a = build(2, 0, [(0, A, C, -1.0, 1)], {1: 0.0})
        b = build(2, 0, [(0, A, A, -1.0, 1)], {1: 0.0})
        with pytest.raises(FstError, match="missing label ids \\[4\\]"):
            compose(a, b)

    def test_declared_alphabet_overrides_arc_labels(self):
        a = build(2, 0, [(0, A, A, -1.0, 1)], {1: 0.0})
        b = build(2, 0, [(0, B, B, -1.0, 1)], {1: 0.0}, in_alpha=[A, B])
        composed = compose(a, b)  # no error: declared alphabet covers A
        assert enumerate_language(composed, 3) == []


@st.composite
def dag_transducers(draw, max_states=5, alphabet=(A, B, C), allow_eps_out=True,
                    allow_eps_in=True):
    n = draw(st.integers(2, max_states))
    num_arcs = draw(st.integers(1, 7))
    ilabels = list(alphabet) + ([EPSILON] if allow_eps_in else [])
    olabels = list(alphabet) + ([EPSILON] if allow_eps_out else [])
    arcs = []
    for _ in range(num_arcs):
        src = draw(st.integers(0, n - 2))
        dst = draw(st.integers(src + 1, n - 1))
        arcs.append((src, draw(st.sampled_from(ilabels)), draw(st.sampled_from(olabels)),
                     draw(st.floats(-4, 0, allow_nan=False)), dst))
    finals = {n - 1: draw(st.floats(-2, 0, allow_nan=False))}
    if draw(st.booleans()):
        finals[draw(st.integers(0, n - 1))] = draw(st.floats(-2, 0, allow_nan=False))
    return build(n, 0, arcs, finals, in_alpha=alphabet, out_alpha=alphabet)


class TestComposeProperty:
    @settings(max_examples=150, deadline=None)
    @given(a=dag_transducers(allow_eps_in=False), b=dag_transducers(allow_eps_out=False))
    def test_pair_language_matches_join(self, a, b):
        # a may emit output epsilons, b may consume input epsilons: the
        # composition filter must count each path pair exactly once.
        composed = compose(a, b)
        got = enum_pairs(composed, 6)
        want = join_pairs(enum_pairs(a, 6), enum_pairs(b, 6))
        want = {k: v for k, v in want.items() if len(k[0]) <= 6}
        got = {k: v for k, v in got.items() if len(k[0]) <= 6}
        assert set(got) == set(want)
        for key, w in want.items():
            assert got[key] == pytest.approx(w, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(a=dag_transducers(allow_eps_in=False, allow_eps_out=False),
           b=dag_transducers(allow_eps_in=False, allow_eps_out=False))
    def test_acceptor_intersection_adds_weights(self, a, b):
        # For epsilon-free acceptors the composed input language is the
        # weighted intersection of the two input languages.
        a_acc = build(a.num_states, a.start,
                      [(x.src, x.ilabel, x.ilabel, x.weight, x.dst) for x in a.arcs],
                      dict(a.finals), in_alpha=(A, B, C), out_alpha=(A, B, C))
        b_acc = build(b.num_states, b.start,
                      [(x.src, x.ilabel, x.ilabel, x.weight, x.dst) for x in b.arcs],
                      dict(b.finals), in_alpha=(A, B, C), out_alpha=(A, B, C))
        wa = dict(enumerate_language(a_acc, 6))
        wb = dict(enumerate_language(b_acc, 6))
        got = dict(enumerate_language(compose(a_acc, b_acc), 6))
        want = {x: wa[x] + wb[x] for x in set(wa) & set(wb)}
        assert set(got) == set(want)
        for x, w in want.items():
            assert got[x] == pytest.approx(w, abs=1e-9)


# -- trim -------------------------------------------------------------------------

class TestTrim:
    def test_unreachable_state_dropped(self):
        f = build(3, 0, [(0, A, A, -1.0, 1)], {1: 0.0})  # state 2 unreachable
        t = trim(f)
        assert t.num_states == 2
        assert enumerate_language(t, 3) == enumerate_language(f, 3)

    def test_already_trim_is_language_identical(self):
        f = build(2, 0, [(0, A, A, -1.0, 1)], {1: -0.5})
        t = trim(f)
        assert t.num_states == 2 and t.num_arcs == 1
        assert enumerate_language(t, 3) == enumerate_language(f, 3)

    def test_unreachable_final_gives_empty_machine(self):
        f = build(3, 0, [(0, A, A, -1.0, 1)], {2: 0.0})
        t = trim(f)
        assert t.is_empty()
        assert enumerate_language(t, 3) == []

    @settings(max_examples=100, deadline=None)
    @given(f=dag_transducers())
    def test_trim_preserves_language(self, f):
        assert enumerate_language(trim(f), 6) == enumerate_language(f, 6)


# -- enumeration ------------------------------------------------------------------

class TestEnumerateLanguage:
    def test_empty_fst(self):
        assert enumerate_language(empty_fst(), 4) == []

    def test_single_arc(self):
        f = build(2, 0, [(0, A, A, -1.0, 1)], {1: 0.0})
        assert enumerate_language(f, 2) == [((A,), -1.0)]

    def test_parallel_paths_logaddexp(self):
        f = build(2, 0, [(0, A, A, -1.0, 1), (0, A, A, -2.0, 1)], {1: 0.0})
        [(seq, w)] = enumerate_language(f, 2)
        assert seq == (A,)
        assert w == pytest.approx(np.logaddexp(-1.0, -2.0), abs=1e-12)

    def test_lexicographic_order(self):
        f = build(2, 0, [(0, B, B, -1.0, 1), (0, A, A, -1.0, 1), (1, A, A, -1.0, 1)],
                  {0: 0.0, 1: 0.0})
        seqs = [seq for seq, _ in enumerate_language(f, 2)]
        assert seqs == sorted(seqs)
        assert seqs[0] == ()

    def test_max_len_guard(self):
        f = build(2, 0, [(0, A, A, -1.0, 1)], {1: 0.0})
        with pytest.raises(ValueError, match="desk-scale"):
            enumerate_language(f, 13)

    def test_overflow_error(self):
        # 3 symbols, all-final loop state: 3^12 sequences blows the cap.
        f = build(1, 0, [(0, s, s, -0.1, 0) for s in (A, B, C)], {0: 0.0})
        with pytest.raises(EnumerationOverflowError):
            enumerate_language(f, 12)

    def test_no_overflow_for_extreme_log_weights(self):
        f = build(2, 0, [(0, A, A, -1e4, 1), (0, A, A, -1e4, 1)], {1: 0.0})
        [(_, w)] = enumerate_language(f, 1)
        assert math.isfinite(w)
        assert w == pytest.approx(-1e4 + math.log(2), abs=1e-9)


# -- shortest path ------------------------------------------------------------------

class FakeEmissions:
    def __init__(self, scores, labels):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.labels = tuple(labels)


class TestShortestPath:
    def test_picks_heavier_path(self):
        f = build(2, 0, [(0, A, A, -1.0, 1), (0, B, B, -3.0, 1)], {1: 0.0})
        best = shortest_path(f)
        assert best.total == -1.0
        assert best.ilabels == (A,)

    def test_tie_breaks_to_smaller_output(self):
        f = build(2, 0, [(0, A, B, -1.0, 1), (0, A, A, -1.0, 1)], {1: 0.0})
        best = shortest_path(f)
        assert best.total == -1.0
        assert best.olabels == (A,)

    def test_no_path_raises(self):
        f = build(2, 0, [(0, A, A, -1.0, 1)], {})
        with pytest.raises(NoPathError):
            shortest_path(f)

    def test_emissions_match_exhaustive_search(self):
        from catdesk.topology import build_ctc_topology

        topo = build_ctc_topology([A, B])
        rng = np.random.default_rng(7)
        scores = rng.normal(size=(3, 3))
        em = FakeEmissions(scores, labels=(1, A, B))
        best = shortest_path(topo, em)
        # exhaustive: topology is input-deterministic, so every length-3
        # emission string is one path with weight = sum of its frame scores
        col = {1: 0, A: 1, B: 2}
        from itertools import product
        want = max(sum(scores[t, col[s]] for t, s in enumerate(pi))
                   for pi in product([1, A, B], repeat=3))
        assert best.total == pytest.approx(want, abs=1e-12)
        assert len(best.ilabels) == 3

    def test_emissions_require_all_labels(self):
        f = build(2, 0, [(0, A, A, 0.0, 1)], {1: 0.0})
        em = FakeEmissions(np.zeros((1, 1)), labels=(B,))
        with pytest.raises(FstError, match="missing"):
            shortest_path(f, em)


# -- text format ---------------------------------------------------------------------

class TestTextFormat:
    def test_round_trip(self):
        f = build(3, 0, [(0, A, B, -1.25, 1), (1, EPSILON, EPSILON, -0.5, 2)],
                  {2: -0.75, 0: 0.0})
        g = read_text(write_text(f))
        key = lambda a: (a.src, a.ilabel, a.olabel, a.dst, a.weight)
        assert g.start == f.start
        assert sorted(g.arcs, key=key) == sorted(f.arcs, key=key)
        assert g.finals == f.finals

    def test_start_inferred_from_first_line(self):
        text = "1 0 2 2 -1.0\n0 0.0\n"
        f = read_text(text)
        assert f.start == 1
        assert shortest_path(f).total == -1.0

    def test_linear_acceptor_round_trip(self):
        f = linear_acceptor([A, B, A], weight=-0.5)
        g = read_text(write_text(f))
        assert enumerate_language(g, 4) == [((A, B, A), -0.5)]

    def test_bad_line_rejected(self):
        with pytest.raises(FstError, match="line 1"):
            read_text("0 1 2\n")
