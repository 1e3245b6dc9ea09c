import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cemdcs.cemd import (CemdParams, complete_support, emd, enumerate_supports, exact_head_project,
                         exact_tail_project, is_member, log_model_size_bound, measurement_bound,
                         model_sum, predicted_count, random_signal, random_support, support_emd)
from cemdcs.cemd import _complete_by_flow
from cemdcs.core import Support, lp_norm, restrict

FIG1 = Support.from_text("0:2,5,7;1:0,6,7;2:0,5,6")
FIG2_X = np.array([[1.0, 3.0, 1.0], [0.0, 1.0, 2.0], [4.0, 2.0, 0.0]])
FIG2_OMEGA = Support([(2, 0), (2, 1), (1, 2)])


def brute_emd(a, b):
    a, b = list(a), list(b)
    return min(sum(abs(x - y) for x, y in zip(a, perm)) for perm in itertools.permutations(b))


class TestParams:
    def test_s(self):
        assert CemdParams(8, 4, 8, 3).s == 2

    def test_clamp_B(self):
        assert CemdParams(3, 2, 2, 100).B == 6

    @pytest.mark.parametrize("args", [(3, 2, 3, 1), (3, 2, 8, 1), (0, 1, 1, 0), (3, 2, 2, -1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            CemdParams(*args)


class TestEmd:
    def test_identity(self):
        assert emd({1, 3}, {1, 3}) == 0

    def test_figure(self):
        assert emd({2, 5, 7}, {0, 6, 7}) == 3
        assert emd({0, 6, 7}, {0, 5, 6}) == 2

    def test_crossed(self):
        assert emd({0, 2}, {1, 3}) == 2

    def test_unequal(self):
        with pytest.raises(ValueError):
            emd({1}, {1, 2})

    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force(self, size, seed):
        rng = np.random.default_rng(seed)
        a = rng.choice(12, size, replace=False)
        b = rng.choice(12, size, replace=False)
        assert emd(a, b) == brute_emd(a, b)

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_metric(self, size, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (rng.choice(15, size, replace=False) for _ in range(3))
        assert emd(a, b) == emd(b, a)
        assert emd(a, c) <= emd(a, b) + emd(b, c)
        assert emd(a, a) == 0
        assert (emd(a, b) == 0) == (set(a) == set(b))


class TestSupportEmd:
    def test_figure1(self):
        assert support_emd(FIG1, CemdParams(8, 3, 9, 10)) == 5

    def test_single_column(self):
        assert support_emd(Support([(0, 0), (4, 0)]), CemdParams(5, 1, 2, 0)) == 0

    def test_figure2(self):
        assert support_emd(FIG2_OMEGA, CemdParams(3, 3, 3, 1)) == 1

    def test_empty(self):
        assert support_emd(Support(), CemdParams(3, 3, 3, 1)) == 0

    def test_ragged_pads(self):
        # column 1 needs one padding row; putting it at row 4 makes both columns equal
        om = Support([(0, 0), (4, 0), (0, 1)])
        assert support_emd(om, CemdParams(5, 2, 4, 8)) == 0

    def test_missing_column_is_free(self):
        om = Support([(0, 0), (3, 2)])
        # middle column can sit anywhere between the two rows
        assert support_emd(om, CemdParams(4, 3, 3, 9)) == 3

    def test_completion_dp_matches_flow(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            h, w = int(rng.integers(2, 7)), int(rng.integers(2, 5))
            s = int(rng.integers(1, h + 1))
            om = Support.from_mask(rng.random((h, w)) < 0.35)
            if om.max_col_sparsity() > s:
                continue
            cost_dp, done = complete_support(om, h, w, s)
            cost_flow, done_flow = _complete_by_flow(om, h, w, s)
            assert cost_dp == cost_flow
            assert om <= done and om <= done_flow
            assert (done.col_sparsity(w) == s).all()
            assert support_emd(done, CemdParams(h, w, s * w, h * s * w)) == cost_dp


class TestIsMember:
    def test_empty(self):
        assert is_member(Support(), CemdParams(3, 3, 3, 0))

    def test_figure2(self):
        assert is_member(FIG2_OMEGA, CemdParams(3, 3, 3, 1))
        assert not is_member(FIG2_OMEGA, CemdParams(3, 3, 3, 0))

    def test_too_dense(self):
        assert not is_member(Support([(0, 0), (1, 0)]), CemdParams(3, 1, 1, 0))

    def test_out_of_grid(self):
        assert not is_member(Support([(3, 0)]), CemdParams(3, 1, 1, 0))

    def test_subset_of_member(self):
        # dropping entries never leaves the model, even when the padded
        # EMD at the reduced column sparsity would be larger
        full = Support.from_text("0:0,9;1:0,9")
        P = CemdParams(10, 2, 4, 0)
        assert is_member(full, P)
        sub = Support.from_text("0:0;1:9")
        assert is_member(sub, P)
        assert support_emd(sub, P) == 9

    def test_subsets_of_enumerated(self):
        P = CemdParams(4, 3, 6, 2)
        rng = np.random.default_rng(6)
        sups = list(enumerate_supports(P))
        for i in rng.choice(len(sups), 40):
            ent = sups[i].entries
            keep = [e for e in ent if rng.random() < 0.6]
            assert is_member(Support(keep), P)


class TestEnumeration:
    def test_small_counts(self):
        assert len(list(enumerate_supports(CemdParams(2, 1, 1, 0)))) == 2
        assert len(list(enumerate_supports(CemdParams(2, 2, 2, 0)))) == 2
        assert len(list(enumerate_supports(CemdParams(2, 2, 2, 1)))) == 4
        assert len(list(enumerate_supports(CemdParams(2, 2, 2, 5)))) == 4

    def test_refuses(self):
        with pytest.raises(ValueError, match=str(predicted_count(CemdParams(20, 5, 10, 3)))):
            list(enumerate_supports(CemdParams(20, 5, 10, 3)))

    def test_all_members_unique(self):
        P = CemdParams(4, 3, 6, 3)
        sups = list(enumerate_supports(P))
        assert len(set(sups)) == len(sups)
        for s in sups:
            assert (s.col_sparsity(3) == 2).all()
            assert support_emd(s, P) <= 3

    def test_deterministic(self):
        P = CemdParams(4, 3, 3, 2)
        assert list(enumerate_supports(P)) == list(enumerate_supports(P))

    @pytest.mark.parametrize("h", [1, 2, 3, 4])
    @pytest.mark.parametrize("w", [1, 2, 3])
    def test_matches_recursive_count(self, h, w):
        for s in range(1, min(h, 2) + 1):
            for B in range(0, 5):
                P = CemdParams(h, w, s * w, B)
                assert len(list(enumerate_supports(P))) == _count(h, w, s, B)


def _count(h, w, s, B):
    cols = list(itertools.combinations(range(h), s))

    def rec(prev, col, left):
        if col == w:
            return 1
        total = 0
        for c in cols:
            d = 0 if prev is None else emd(prev, c)
            if d <= left:
                total += rec(c, col + 1, left - d)
        return total

    return rec(None, 0, B)


class TestExactProjection:
    def test_figure2(self):
        P = CemdParams(3, 3, 3, 1)
        om = exact_head_project(FIG2_X, P, p=1)
        assert om == FIG2_OMEGA
        assert exact_tail_project(FIG2_X, P, p=1) == FIG2_OMEGA
        assert lp_norm(restrict(FIG2_X, om), 1) == 8
        assert lp_norm(FIG2_X - restrict(FIG2_X, om), 1) == 6

    def test_in_model_zero_tail(self):
        P = CemdParams(5, 3, 6, 2)
        rng = np.random.default_rng(7)
        for _ in range(20):
            x, _ = random_signal(P, rng)
            om = exact_tail_project(x, P)
            assert lp_norm(x - restrict(x, om), 2) == 0

    def test_zero_signal(self):
        P = CemdParams(3, 2, 2, 1)
        om = exact_head_project(np.zeros((3, 2)), P)
        assert om == next(enumerate_supports(P))

    def test_zero_tail_iff_member(self):
        P = CemdParams(4, 3, 3, 1)
        rng = np.random.default_rng(8)
        for _ in range(100):
            x = rng.standard_normal((4, 3)) * (rng.random((4, 3)) < 0.3)
            om = exact_tail_project(x, P)
            zero = lp_norm(x - restrict(x, om), 2) == 0
            assert zero == is_member(Support.from_mask(x != 0), P)


class TestModelSum:
    def test_params(self):
        assert model_sum(CemdParams(5, 2, 2, 1), CemdParams(5, 2, 2, 1)) == CemdParams(5, 2, 4, 2)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            model_sum(CemdParams(5, 2, 2, 1), CemdParams(4, 2, 2, 1))

    def test_caps_column_sparsity(self):
        assert model_sum(CemdParams(2, 2, 4, 0), CemdParams(2, 2, 4, 0)).s == 2

    def test_block_sparse_union(self):
        P = CemdParams(6, 3, 3, 0)
        a = Support.from_text("0:1;1:1;2:1")
        b = Support.from_text("0:4;1:4;2:4")
        Q = model_sum(P, P)
        assert Q == CemdParams(6, 3, 6, 0)
        assert is_member(a | b, Q)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_union_closed(self, seed):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(2, 8)), int(rng.integers(1, 5))
        P1 = CemdParams(h, w, w * int(rng.integers(1, h + 1)), int(rng.integers(0, 6)))
        P2 = CemdParams(h, w, w * int(rng.integers(1, h + 1)), int(rng.integers(0, 6)))
        a, b = random_support(P1, rng), random_support(P2, rng)
        assert is_member(a, P1) and is_member(b, P2)
        Q = model_sum(P1, P2)
        assert is_member(a | b, Q)
        if P1.s + P2.s <= h and not set(a) & set(b):
            assert support_emd(a | b, Q) <= support_emd(a, P1) + support_emd(b, P2)


class TestBounds:
    def test_B_equals_k(self):
        P = CemdParams(16, 4, 4, 4)
        expect = math.log(16) + 4 * math.log(2) + 5
        assert log_model_size_bound(P) == pytest.approx(expect)

    def test_count_below_bound(self):
        P = CemdParams(4, 2, 2, 2)
        assert len(list(enumerate_supports(P))) <= math.exp(log_model_size_bound(P))

    @given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 5), st.integers(0, 40))
    def test_monotone_in_B(self, h, w, s, B):
        if s > h:
            return
        a = log_model_size_bound(CemdParams(h, w, s * w, B))
        b = log_model_size_bound(CemdParams(h, w, s * w, B + 1))
        assert b >= a or B + 1 > s * w * h

    def test_measurement_bound(self):
        P = CemdParams(16, 4, 4, 4)
        m = measurement_bound(P, 0.5, 1.0)
        expect = math.ceil(4 * (4 * math.log(2) + log_model_size_bound(P) + 1))
        assert m == expect
        assert measurement_bound(P, 0.5, 1.0, c=2.0) >= m
        assert measurement_bound(P, 0.5, 1.0, growth=model_sum(P, P)) > m
        with pytest.raises(ValueError):
            measurement_bound(P, 1.5, 1.0)


def test_random_support_in_model():
    rng = np.random.default_rng(9)
    for _ in range(200):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        s = int(rng.integers(1, h + 1))
        P = CemdParams(h, w, s * w, int(rng.integers(0, 8)))
        om = random_support(P, rng)
        assert (om.col_sparsity(w) == s).all()
        assert support_emd(om, P) <= P.B
