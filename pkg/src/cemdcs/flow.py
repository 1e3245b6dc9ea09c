"""Tail approximation for the CEMD model through an EMD flow network.

The network routes ``s`` units of flow from a source through every column of
the grid to a sink.  Each cell is split into an ``in``/``out`` pair joined by
a unit-capacity arc of cost ``-|X[r, c]|^p``; moving from row ``r`` in column
``c`` to row ``r'`` in column ``c + 1`` costs ``lam * |r - r'|``.  A min-cost
flow therefore trades captured signal mass against support-EMD, and a binary
search over ``lam`` turns that Lagrangian into a bicriterion tail oracle.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .core import OracleQuality, Support, TailOracle, as_signal

__all__ = [
    "FlowNetwork",
    "FlowSolution",
    "TailParams",
    "build_network",
    "min_cost_flow",
    "tail_approx",
    "as_tail_oracle",
]


@dataclass(frozen=True)
class FlowNetwork:
    """EMD flow network for a weight grid.

    Attributes
    ----------
    weights : ndarray, shape (h, w)
        Nonnegative cell weights ``|X|^p``; node arcs cost their negation.
    s : int
        Units of flow (paths) to route.
    lam : float
        Price of one unit of vertical movement between adjacent columns.
    """

    weights: np.ndarray
    s: int
    lam: float

    def __post_init__(self):
        wts = np.asarray(self.weights, dtype=np.float64)
        if wts.ndim != 2 or np.any(wts < 0) or not np.all(np.isfinite(wts)):
            raise ValueError("weights must be a finite nonnegative (h, w) array")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        object.__setattr__(self, "weights", wts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def arcs(self) -> Iterator[tuple[tuple, tuple, int, float]]:
        """Yield ``(tail, head, capacity, cost)`` for every arc.

        Nodes are ``("source",)``, ``("sink",)``, ``("in", r, c)`` and
        ``("out", r, c)``.
        """
        h, w = self.shape
        for r in range(h):
            yield ("source",), ("in", r, 0), 1, 0.0
        for c in range(w):
            for r in range(h):
                yield ("in", r, c), ("out", r, c), 1, -float(self.weights[r, c])
            if c + 1 < w:
                for r in range(h):
                    for r2 in range(h):
                        yield ("out", r, c), ("in", r2, c + 1), 1, self.lam * abs(r - r2)
        for r in range(h):
            yield ("out", r, w - 1), ("sink",), 1, 0.0


def build_network(x, params, lam: float, p: int = 2) -> FlowNetwork:
    """Network for signal ``x`` under ``params`` (uses ``params.s`` units of flow)."""
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    x = as_signal(x, params.shape)
    return FlowNetwork(np.abs(x) ** p, params.s, float(lam))


class FlowSolution(NamedTuple):
    support: Support
    cost: float  # -head + lam * emd
    head: float  # captured weight sum
    emd: int
    paths: tuple[tuple[int, ...], ...]  # one row per column, non-crossing


class _Residual:
    """Residual graph of the split-node network with 0/1 flows."""

    def __init__(self, net: FlowNetwork):
        self.W = net.weights
        self.h, self.w = net.shape
        self.lam = net.lam
        h, w = self.h, self.w
        self.src = np.zeros(h, dtype=bool)
        self.snk = np.zeros(h, dtype=bool)
        self.used = np.zeros((h, w), dtype=bool)
        self.move = np.zeros((max(w - 1, 0), h, h), dtype=bool)
        self.source = 2 * h * w
        self.sink = self.source + 1

    def node(self, kind: int, r: int, c: int) -> int:
        return 2 * (c * self.h + r) + kind

    def unpack(self, v: int) -> tuple[int, int, int]:
        cell, kind = divmod(v, 2)
        c, r = divmod(cell, self.h)
        return kind, r, c

    def edges(self, v: int) -> Iterator[tuple[int, float, int]]:
        """Yield ``(head, cost, row)`` for residual arcs leaving ``v``."""
        h, w, lam = self.h, self.w, self.lam
        if v == self.source:
            for r in range(h):
                if not self.src[r]:
                    yield self.node(0, r, 0), 0.0, r
            return
        if v == self.sink:
            for r in range(h):
                if self.snk[r]:
                    yield self.node(1, r, w - 1), 0.0, r
            return
        kind, r, c = self.unpack(v)
        if kind == 0:
            if not self.used[r, c]:
                yield v + 1, -self.W[r, c], r
            if c == 0:
                if self.src[r]:
                    yield self.source, 0.0, -1
            else:
                for r0 in np.nonzero(self.move[c - 1, :, r])[0]:
                    yield self.node(1, int(r0), c - 1), -lam * abs(int(r0) - r), int(r0)
        else:
            if self.used[r, c]:
                yield v - 1, self.W[r, c], r
            if c + 1 < w:
                for r2 in range(h):
                    if not self.move[c, r, r2]:
                        yield self.node(0, r2, c + 1), lam * abs(r - r2), r2
            elif not self.snk[r]:
                yield self.sink, 0.0, -1

    def augment(self, path: list[int]) -> None:
        for u, v in zip(path, path[1:]):
            self._flip(u, v)

    def _flip(self, u: int, v: int) -> None:
        if u == self.source:
            self.src[self.unpack(v)[1]] ^= True
            return
        if v == self.source:
            self.src[self.unpack(u)[1]] ^= True
            return
        if v == self.sink:
            self.snk[self.unpack(u)[1]] ^= True
            return
        if u == self.sink:
            self.snk[self.unpack(v)[1]] ^= True
            return
        ku, ru, cu = self.unpack(u)
        kv, rv, cv = self.unpack(v)
        if cu == cv:  # node arc, forward (in->out) or backward
            self.used[ru, cu] ^= True
        elif cv == cu + 1:  # out(ru,cu) -> in(rv,cv) forward
            self.move[cu, ru, rv] = True
        else:  # in(ru,cu) -> out(rv,cv) cancels a move arc
            self.move[cv, rv, ru] = False


def _dag_pass(net: FlowNetwork) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Shortest distances from the source over the acyclic network.

    Returns distances to ``in`` nodes, to ``out`` nodes (both ``(h, w)``) and
    the cheapest source-sink path as a list of rows (smallest row on ties).
    """
    W, lam = net.weights, net.lam
    h, w = net.shape
    dist_in = np.zeros((h, w))
    dist_out = np.zeros((h, w))
    pred = np.zeros((h, w), dtype=np.intp)
    rows = np.arange(h)
    jump = lam * np.abs(rows[:, None] - rows[None, :])
    dist_out[:, 0] = -W[:, 0]
    for c in range(1, w):
        cand = dist_out[:, c - 1][:, None] + jump
        pred[:, c] = np.argmin(cand, axis=0)
        dist_in[:, c] = cand[pred[:, c], rows]
        dist_out[:, c] = dist_in[:, c] - W[:, c]
    r = int(np.argmin(dist_out[:, w - 1]))
    path = [r]
    for c in range(w - 1, 0, -1):
        r = int(pred[r, c])
        path.append(r)
    return dist_in, dist_out, path[::-1]


def min_cost_flow(net: FlowNetwork, check: bool = True) -> FlowSolution:
    """Integral min-cost flow of value ``s`` by successive shortest paths.

    Initial potentials come from one pass over the acyclic network, so every
    later search runs Dijkstra on nonnegative reduced costs.  Shortest-path
    ties prefer fewer hops, then smaller rows.
    """
    h, w = net.shape
    s = int(net.s)
    if not 1 <= s <= h:
        raise ValueError(f"cannot route {s} units of flow through {h} rows")
    res = _Residual(net)
    dist_in, dist_out, first = _dag_pass(net)

    # potentials indexed by node id
    pot = np.empty(2 * h * w + 2)
    pot[0:2 * h * w:2] = dist_in.ravel(order="F")
    pot[1:2 * h * w:2] = dist_out.ravel(order="F")
    pot[res.source] = 0.0
    pot[res.sink] = float(dist_out[first[-1], w - 1])

    path_nodes = [res.source]
    for c, r in enumerate(first):
        path_nodes += [res.node(0, r, c), res.node(1, r, c)]
    path_nodes.append(res.sink)
    res.augment(path_nodes)

    for _ in range(1, s):
        dist, path_nodes = _dijkstra(res, pot)
        res.augment(path_nodes)
        pot += dist

    cols = [tuple(int(r) for r in np.nonzero(res.used[:, c])[0]) for c in range(w)]
    support = Support((r, c) for c in range(w) for r in cols[c])
    head = float(net.weights[res.used].sum())
    emd_val = sum(int(np.abs(np.array(cols[c]) - np.array(cols[c + 1])).sum()) for c in range(w - 1))
    cost = -head + net.lam * emd_val
    if check:
        moves = sum(net.lam * abs(r - r2) for c in range(w - 1)
                    for r, r2 in zip(*np.nonzero(res.move[c])))
        flow_cost = -head + moves
        scale = max(1.0, abs(head), net.lam * emd_val)
        if abs(flow_cost - cost) > 1e-9 * scale:
            raise AssertionError(f"flow cost {flow_cost} != -head + lam*emd = {cost}")
    paths = tuple(tuple(cols[c][i] for c in range(w)) for i in range(s))
    return FlowSolution(support, cost, head, emd_val, paths)


def _dijkstra(res: _Residual, pot: np.ndarray) -> tuple[np.ndarray, list[int]]:
    n_nodes = pot.size
    dist = np.full(n_nodes, np.inf)
    hops = np.full(n_nodes, np.iinfo(np.int64).max)
    pred = np.full(n_nodes, -1, dtype=np.intp)
    done = np.zeros(n_nodes, dtype=bool)
    dist[res.source] = 0.0
    hops[res.source] = 0
    heap = [(0.0, 0, -1, res.source)]
    while heap:
        d, hp, _, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == res.sink:
            break
        for v, cost, row in res.edges(u):
            if done[v]:
                continue
            # clamp round-off so reduced costs stay nonnegative
            nd = d + max(cost + pot[u] - pot[v], 0.0)
            if nd < dist[v] or (nd == dist[v] and hp + 1 < hops[v]):
                dist[v] = nd
                hops[v] = hp + 1
                pred[v] = u
                heapq.heappush(heap, (nd, hp + 1, row, v))
    if not done[res.sink]:
        raise ValueError("no augmenting path left; supply exceeds capacity")
    path = [res.sink]
    while path[-1] != res.source:
        path.append(int(pred[path[-1]]))
    # unsettled nodes are at least as far as the sink, which keeps every
    # reduced cost nonnegative after the potential update
    return np.where(done, dist, dist[res.sink]), path[::-1]


@dataclass(frozen=True)
class TailParams:
    """EMD blow-up ``d > 1`` and additive slack ``delta > 0`` of the tail oracle."""

    d: float = 2.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.d > 1:
            raise ValueError(f"d must exceed 1, got {self.d}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def c(self) -> float:
        """Tail-error factor (on the p-th power) of the no-blow-up case."""
        return 1.0 + 1.0 / (self.d - 1.0) + self.delta

    @classmethod
    def from_quality(cls, c: float, delta: float) -> "TailParams":
        if not (c > 1 and 0 < delta < c - 1):
            raise ValueError(f"need c > 1 and 0 < delta < c - 1, got c={c}, delta={delta}")
        return cls(d=1.0 + 1.0 / (c - delta - 1.0), delta=delta)


@dataclass
class _Solver:
    weights: np.ndarray
    s: int
    cache: dict = field(default_factory=dict)

    def __call__(self, lam: float) -> FlowSolution:
        if lam not in self.cache:
            self.cache[lam] = min_cost_flow(FlowNetwork(self.weights, self.s, lam))
        return self.cache[lam]


def tail_approx(x, params, tail: TailParams = TailParams(), p: int = 2,
                trace: Optional[list] = None, max_probes: int = 200) -> Support:
    """Bicriterion tail projection onto ``M_{k,B}`` by Lagrangian search.

    Either the returned support has EMD in ``[B, d B]`` and tail no worse than
    the best in-model tail, or its EMD is at most ``B`` and its tail (p-th
    power) is within ``1 + 1/(d-1) + delta`` of the best.

    Parameters
    ----------
    x : array_like, shape (h, w)
    params : CemdParams
    tail : TailParams
    p : {1, 2}
    trace : list, optional
        Receives ``(lam, emd, tail)`` for every probed multiplier.
    max_probes : int
        Safety cap on binary-search steps.
    """
    from .cemd import is_member

    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    W = np.abs(as_signal(x, params.shape)) ** p
    h, w = params.shape
    total = float(W.sum())
    solve = _Solver(W, params.s)

    def probe(lam):
        sol = solve(lam)
        if trace is not None:
            trace.append((lam, sol.emd, total - sol.head))
        return sol

    if total == 0.0:
        return probe(1.0).support
    x_min = float(W[W > 0].min())
    eps = x_min * tail.delta / (w * h * h)
    lam0 = x_min / (2 * w * h * h)

    sol = probe(lam0)
    captured_all = not np.any(W[~sol.support.mask(h, w)] > 0)
    if captured_all and is_member(sol.support, params):
        return sol.support

    lam_r, lam_l = 0.0, total
    B, dB = params.B, tail.d * params.B
    for _ in range(max_probes):
        if lam_l - lam_r <= eps:
            break
        lam_m = 0.5 * (lam_l + lam_r)
        sol = probe(lam_m)
        if B <= sol.emd <= dB:
            return sol.support
        if sol.emd > B:
            lam_r = lam_m
        else:
            lam_l = lam_m
    return probe(lam_l).support


def as_tail_oracle(params, tail: TailParams = TailParams(), p: int = 2) -> TailOracle:
    """Wrap :func:`tail_approx` with its declared guarantee.

    The output model is ``M_{k, floor(d B)}`` and ``c_T = c^(1/p)``.
    """
    from .cemd import CemdParams

    c = tail.c
    if not (c > 1 and 0 < tail.delta < c - 1):
        raise ValueError(f"tail parameters out of range: c={c}, delta={tail.delta}")
    out = CemdParams(params.h, params.w, params.k, int(math.floor(tail.d * params.B)))
    q = OracleQuality(c_H=1.0, c_T=c ** (1.0 / p), p=p)
    return TailOracle(lambda x: tail_approx(x, params, tail, p), params, out, q,
                      name=f"tail-approx(d={tail.d:g},delta={tail.delta:g})")
