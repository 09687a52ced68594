import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from htencoder.errors import ConfigError, DegenerateMaskError, EmptyContextError
from htencoder.masking import (
    CtScheme,
    build_ct_mask,
    build_layout,
    build_ut_mask,
    causal_mask,
    global_pe,
    local_pe,
    mask_to_bitstrings,
    mask_to_text,
    pad_mask,
    pe_table,
    same_utterance_mask,
    sinusoidal_pe,
)

lengths_st = st.lists(st.integers(0, 12), min_size=1, max_size=8).filter(lambda ls: sum(ls) > 0)
nonempty_st = st.lists(st.integers(1, 12), min_size=1, max_size=8)


def rows(mask):
    return [set(np.flatnonzero(r).tolist()) for r in mask]


class TestLayout:
    def test_zero_length_utterance(self):
        lay = build_layout([0, 1, 2])
        assert_array_equal(lay.utt_index, [1, 2, 2])
        assert_array_equal(lay.rel_pos, [0, 0, 1])

    def test_single(self):
        lay = build_layout([3])
        assert_array_equal(lay.utt_index, [0, 0, 0])
        assert_array_equal(lay.rel_pos, [0, 1, 2])

    def test_two_by_two(self):
        lay = build_layout([2, 2])
        assert_array_equal(lay.utt_index, [0, 0, 1, 1])
        assert_array_equal(lay.rel_pos, [0, 1, 0, 1])

    @pytest.mark.parametrize("lengths", [[], [0], [0, 0]])
    def test_empty(self, lengths):
        with pytest.raises(EmptyContextError):
            build_layout(lengths)

    def test_negative_length(self):
        with pytest.raises(ValueError):
            build_layout([2, -1])

    @settings(max_examples=200)
    @given(lengths_st)
    def test_invariants(self, lengths):
        lay = build_layout(lengths)
        assert len(lay.utt_index) == len(lay.rel_pos) == sum(lengths) == lay.total
        assert np.all(np.diff(lay.utt_index) >= 0)
        for i, n in enumerate(lengths):
            assert int((lay.utt_index == i).sum()) == n
            assert_array_equal(lay.rel_pos[lay.utt_index == i], np.arange(n))


class TestUtMask:
    def test_hand_cases(self):
        assert_array_equal(build_ut_mask(build_layout([2, 1])), [[1, 1, 0], [1, 1, 0], [0, 0, 1]])
        assert_array_equal(build_ut_mask(build_layout([1])), [[1]])
        assert_array_equal(build_ut_mask(build_layout([0, 1, 2])), [[1, 0, 0], [0, 1, 1], [0, 1, 1]])

    def test_thousand_random_layouts_match_predicate(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            lengths = rng.integers(0, 13, size=rng.integers(1, 9)).tolist()
            if sum(lengths) == 0:
                lengths[0] = 1
            lay = build_layout(lengths)
            brute = np.array([[a == b for b in lay.utt_index] for a in lay.utt_index], dtype=bool)
            assert_array_equal(build_ut_mask(lay), brute)
            assert_array_equal(same_utterance_mask(lay), brute)

    @settings(max_examples=100)
    @given(lengths_st)
    def test_symmetric_with_unit_diagonal(self, lengths):
        m = build_ut_mask(build_layout(lengths))
        assert_array_equal(m, m.T)
        assert m.diagonal().all()


class TestCtMask:
    def test_hier_example(self):
        m = build_ct_mask(build_layout([1, 2, 1]), CtScheme.HIER)
        assert rows(m) == [{0, 3}, {1, 2, 3}, {1, 2, 3}, {0, 1, 2, 3}]

    def test_hier_single_utterance(self):
        assert build_ct_mask(build_layout([4]), CtScheme.HIER).all()

    def test_hier_cls_example(self):
        m = build_ct_mask(build_layout([2, 2]), CtScheme.HIER_CLS)
        assert rows(m) == [{0, 2}, {0, 1}, {0, 2}, {2, 3}]

    def test_hier_cls_rejects_empty_utterance(self):
        with pytest.raises(ValueError, match="CLS"):
            build_ct_mask(build_layout([0, 1, 2]), CtScheme.HIER_CLS)

    @settings(max_examples=100)
    @given(lengths_st)
    def test_full_is_all_ones(self, lengths):
        assert build_ct_mask(build_layout(lengths), CtScheme.FULL).all()

    @settings(max_examples=150)
    @given(lengths_st)
    def test_hier_properties(self, lengths):
        lay = build_layout(lengths)
        ut, ct = build_ut_mask(lay), build_ct_mask(lay, CtScheme.HIER)
        assert np.all(ct[ut])
        last = lay.utt_index == lay.utt_index.max()
        assert ct[last].all() and ct[:, last].all()
        assert ct.diagonal().all()
        # nothing else: a pair outside the own block touches the last utterance
        extra = ct & ~ut
        i, j = np.nonzero(extra)
        assert np.all(last[i] | last[j])

    @settings(max_examples=150)
    @given(nonempty_st)
    def test_hier_cls_row_sums(self, lengths):
        lay = build_layout(lengths)
        ct = build_ct_mask(lay, CtScheme.HIER_CLS)
        sums = ct.sum(axis=1)
        cls = lay.rel_pos == 0
        assert np.all(sums[cls] == len(lengths))
        assert np.all(sums[~cls] == np.asarray(lengths)[lay.utt_index[~cls]])
        assert ct.diagonal().all()

    def test_scheme_parse(self):
        assert CtScheme.parse("hier-cls") is CtScheme.HIER_CLS
        assert CtScheme.parse("FULL") is CtScheme.FULL
        with pytest.raises(ConfigError):
            CtScheme.parse("diagonal")


class TestAuxMasks:
    def test_causal(self):
        assert_array_equal(causal_mask(3), [[1, 0, 0], [1, 1, 0], [1, 1, 1]])

    def test_pad_rows_keep_diagonal(self):
        m = pad_mask(np.ones((2, 2), bool), 4)
        assert m.shape == (4, 4)
        assert m[:2, :2].all() and not m[:2, 2:].any()
        assert_array_equal(m[2:], [[0, 0, 1, 0], [0, 0, 0, 1]])

    def test_text_and_bitstrings(self):
        m = build_ut_mask(build_layout([0, 1, 2]))
        assert mask_to_text(m) == "1 0 0\n0 1 1\n0 1 1"
        assert mask_to_bitstrings(m) == ["100", "011", "011"]


class TestPositionalEncoding:
    def test_position_zero(self):
        assert_array_equal(sinusoidal_pe([0], 6), [[0, 1, 0, 1, 0, 1]])

    def test_repeated_positions(self):
        pe = sinusoidal_pe([0, 0], 8)
        assert_array_equal(pe[0], pe[1])

    def test_formula(self):
        assert_allclose(sinusoidal_pe([1], 4)[0], [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)],
                        rtol=1e-15)

    def test_odd_width(self):
        with pytest.raises(ConfigError):
            sinusoidal_pe([0, 1], 5)

    def test_table_for_odd_width_truncates(self):
        assert_array_equal(pe_table(np.arange(4), 5), sinusoidal_pe(np.arange(4), 6)[:, :5])

    def test_local_restarts(self):
        pe = local_pe(build_layout([2, 2]), 8)
        assert_array_equal(pe[0], pe[2])
        assert_array_equal(pe[1], pe[3])
        pe = local_pe(build_layout([1, 1, 1]), 8)
        assert_array_equal(pe, np.tile(pe[0], (3, 1)))
        assert_array_equal(local_pe(build_layout([0, 1, 2]), 8), sinusoidal_pe([0, 0, 1], 8))

    def test_global(self):
        assert_array_equal(global_pe(1, 4), sinusoidal_pe([0], 4))
        g = global_pe(3, 4)
        assert len({tuple(r) for r in g}) == 3
        assert_array_equal(global_pe(7, 8), local_pe(build_layout([7]), 8))

    @settings(max_examples=80)
    @given(st.lists(st.integers(1, 3), min_size=2, max_size=6), st.integers(1, 6), st.randoms(use_true_random=False))
    def test_local_pe_invariant_to_equal_length_reorder(self, groups, n, rnd):
        # all utterances share one length, so any utterance order gives the same P_I
        lengths = [n] * len(groups)
        order = list(range(len(lengths)))
        rnd.shuffle(order)
        a = local_pe(build_layout(lengths), 8)
        b = local_pe(build_layout([lengths[i] for i in order]), 8)
        assert_array_equal(a, b)
