import math

import numpy as np
import pytest

from cemdcs.cemd import (CemdParams, exact_tail_project, is_member, random_signal, support_emd,
                         support_table)
from cemdcs.core import Support, vec
from cemdcs.flow import (FlowNetwork, TailParams, as_tail_oracle, build_network, min_cost_flow,
                         tail_approx)

X = np.array([[1.0, 3.0], [0.0, -1.0], [2.0, 1.0]])
FIG2_X = np.array([[1.0, 3.0, 1.0], [0.0, 1.0, 2.0], [4.0, 2.0, 0.0]])


def lagrangian_min(x, P, lam, p):
    flat, emds = support_table(P)
    wts = vec(np.abs(x) ** p)
    return float(np.min(-wts[flat].sum(axis=1) + lam * emds))


def tail_of(x, om, p):
    W = np.abs(x) ** p
    return float(W[~om.mask(*x.shape)].sum())


class TestNetwork:
    def test_figure_costs(self):
        net = build_network(X, CemdParams(3, 2, 2, 2), lam=1.5, p=1)
        node_costs = {(a[1], a[2]): cost for a, b, cap, cost in net.arcs() if a[0] == "in"}
        assert [node_costs[(r, 0)] for r in range(3)] == [-1, 0, -2]
        assert [node_costs[(r, 1)] for r in range(3)] == [-3, -1, -1]
        moves = {(a[1], b[1]): cost for a, b, cap, cost in net.arcs() if a[0] == "out" and b[0] == "in"}
        assert moves[(0, 2)] == 3.0
        assert moves[(1, 1)] == 0.0

    def test_all_unit_capacity(self):
        net = build_network(X, CemdParams(3, 2, 2, 2), lam=1.0, p=2)
        arcs = list(net.arcs())
        assert all(cap == 1 for _, _, cap, _ in arcs)
        assert len(arcs) == 3 + 6 + 9 + 3

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            build_network(X, CemdParams(3, 2, 2, 2), lam=-1.0)


class TestMinCostFlow:
    def test_lambda_zero(self):
        sol = min_cost_flow(build_network(X, CemdParams(3, 2, 2, 2), 0.0, 1))
        assert sol.paths == ((2, 0),)
        assert sol.cost == -5

    def test_lambda_three(self):
        sol = min_cost_flow(build_network(X, CemdParams(3, 2, 2, 2), 3.0, 1))
        assert sol.paths == ((0, 0),)
        assert sol.cost == -4

    def test_decoupled_columns(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 4))
        sol = min_cost_flow(FlowNetwork(np.abs(x), 2, 0.0))
        expect = -np.sort(np.abs(x), axis=0)[-2:].sum()
        assert sol.cost == pytest.approx(expect, rel=1e-12)

    def test_single_column(self):
        w = np.array([[0.3], [2.0], [1.0], [0.1]])
        sol = min_cost_flow(FlowNetwork(w, 2, 1.0))
        assert sol.support == Support([(1, 0), (2, 0)])
        assert sol.cost == -3.0

    def test_saturated(self):
        rng = np.random.default_rng(1)
        wts = rng.random((4, 3))
        sol = min_cost_flow(FlowNetwork(wts, 4, 0.7))
        assert len(sol.support) == 12
        assert sol.emd == 0
        assert sol.cost == pytest.approx(-wts.sum())

    def test_infeasible_supply(self):
        with pytest.raises(ValueError):
            min_cost_flow(FlowNetwork(np.ones((2, 2)), 3, 1.0))

    def test_matches_lagrangian_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            h, w = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            s = int(rng.integers(1, min(h, 2) + 1))
            lam = float(rng.choice([0.0, 0.5, 1.0, 3.0]))
            p = int(rng.choice([1, 2]))
            x = rng.standard_normal((h, w)) * (rng.random((h, w)) < 0.8)
            P = CemdParams(h, w, s * w, s * w * h)
            sol = min_cost_flow(build_network(x, P, lam, p))
            assert sol.cost == pytest.approx(lagrangian_min(x, P, lam, p), abs=1e-9)
            # cost identity with the returned support
            W = np.abs(x) ** p
            assert sol.cost == pytest.approx(-W[sol.support.mask(h, w)].sum()
                                             + lam * support_emd(sol.support, P), abs=1e-9)

    def test_paths_do_not_cross(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            sol = min_cost_flow(FlowNetwork(rng.random((6, 5)), 3, 0.2))
            for a, b in zip(sol.paths, sol.paths[1:]):
                assert all(ra < rb for ra, rb in zip(a, b))
            covered = Support((r, c) for pth in sol.paths for c, r in enumerate(pth))
            assert covered == sol.support


class TestTailParams:
    def test_derived(self):
        assert TailParams(2.0, 0.1).c == pytest.approx(2.1)
        t = TailParams.from_quality(2.1, 0.1)
        assert t.d == pytest.approx(2.0)

    @pytest.mark.parametrize("d,delta", [(1.0, 0.1), (2.0, 0.0), (0.5, 0.1)])
    def test_invalid(self, d, delta):
        with pytest.raises(ValueError):
            TailParams(d, delta)


class TestTailApprox:
    def test_in_model_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            P = CemdParams(6, 4, 8, 3)
            x, om = random_signal(P, rng)
            out = tail_approx(x, P, TailParams(2.0, 0.1), 2)
            assert tail_of(x, out, 2) == 0
            assert support_emd(out, P) <= P.B

    def test_figure2(self):
        P = CemdParams(3, 3, 3, 1)
        out = tail_approx(FIG2_X, P, TailParams(3.0, 0.5), 1)
        tail, e = tail_of(FIG2_X, out, 1), support_emd(out, P)
        assert (1 <= e <= 3 and tail <= 6) or (e <= 1 and tail <= 12)

    def test_zero_matrix(self):
        P = CemdParams(4, 3, 3, 1)
        out = tail_approx(np.zeros((4, 3)), P)
        assert is_member(out, P)
        assert len(out) == 3

    def test_bicriterion(self):
        rng = np.random.default_rng(5)
        tp = TailParams(3.0, 0.5)
        for _ in range(200):
            h, w = int(rng.integers(2, 6)), int(rng.integers(1, 5))
            s = int(rng.integers(1, min(h, 2) + 1))
            P = CemdParams(h, w, s * w, int(rng.integers(0, 4)))
            p = int(rng.choice([1, 2]))
            x = rng.standard_normal((h, w)) * (rng.random((h, w)) < rng.random())
            out = tail_approx(x, P, tp, p)
            opt = tail_of(x, exact_tail_project(x, P, p), p)
            tail, e = tail_of(x, out, p), support_emd(out, P)
            tol = 1e-9 * max(1.0, np.sum(np.abs(x) ** p))
            case1 = P.B <= e <= tp.d * P.B and tail <= opt + tol
            case2 = e <= P.B and tail <= tp.c * opt + tol
            assert case1 or case2

    def test_probe_emd_monotone(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            P = CemdParams(6, 4, 8, 2)
            trace = []
            tail_approx(rng.standard_normal((6, 4)), P, TailParams(1.2, 0.05), 2, trace=trace)
            ordered = sorted(trace)
            for (l1, e1, _), (l2, e2, _) in zip(ordered, ordered[1:]):
                assert e2 <= e1 or l2 == l1

    def test_scale_covariant_support(self):
        rng = np.random.default_rng(7)
        P = CemdParams(5, 4, 8, 2)
        for _ in range(20):
            x = rng.standard_normal((5, 4))
            assert tail_approx(x, P) == tail_approx(8.0 * x, P)

    def test_oracle_wrapper(self):
        P = CemdParams(5, 3, 6, 2)
        T = as_tail_oracle(P, TailParams(2.0, 0.1), 2)
        assert T.quality.c_T == pytest.approx(math.sqrt(2.1))
        assert T.quality.c_T == pytest.approx(1.449, abs=1e-3)
        assert T.output_model == CemdParams(5, 3, 6, 4)
        T1 = as_tail_oracle(P, TailParams(3.0, 0.5), 1)
        assert T1.quality.c_T == pytest.approx(2.0)
        assert T1.output_model == CemdParams(5, 3, 6, 6)
        rng = np.random.default_rng(8)
        for _ in range(30):
            assert is_member(T(rng.standard_normal((5, 3))), T.output_model)
