"""The constrained earth mover's distance (CEMD) sparsity model.

A support is in the model ``M_{k,B}`` on an ``h x w`` grid when every column
holds exactly ``s = k / w`` entries and the sum of earth mover's distances
between the row sets of adjacent columns is at most ``B``.  Subsets of model
supports (the closure) are accepted by :func:`is_member`.

Besides membership and EMD bookkeeping this module carries the brute-force
machinery (support enumeration, exact projections) that the tests and the
``oracle-check`` command use as ground truth.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

from .core import HeadOracle, OracleQuality, Support, TailOracle, as_signal, vec

__all__ = [
    "CemdParams",
    "emd",
    "complete_support",
    "support_emd",
    "is_member",
    "predicted_count",
    "support_table",
    "enumerate_supports",
    "exact_head_project",
    "exact_tail_project",
    "exact_head_oracle",
    "exact_tail_oracle",
    "model_sum",
    "log_model_size_bound",
    "measurement_bound",
    "random_support",
    "random_signal",
]

# largest per-column candidate list the completion DP will build before
# handing over to the min-cost-flow formulation
_DP_CANDIDATE_LIMIT = 400


@dataclass(frozen=True)
class CemdParams:
    """Grid shape ``(h, w)``, total sparsity ``k`` and EMD budget ``B``.

    ``B`` above ``k * h`` places no constraint (no support can exceed it)
    and is clamped to that value on construction.
    """

    h: int
    w: int
    k: int
    B: int

    def __post_init__(self):
        for name in ("h", "w", "k"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ValueError(f"{name} must be a positive integer, got {val}")
        if int(self.B) != self.B or self.B < 0:
            raise ValueError(f"B must be a nonnegative integer, got {self.B}")
        if self.k % self.w:
            raise ValueError(f"k={self.k} is not divisible by w={self.w}")
        if not 1 <= self.k // self.w <= self.h:
            raise ValueError(f"column sparsity k/w={self.k // self.w} must lie in [1, h={self.h}]")
        object.__setattr__(self, "B", int(min(self.B, self.k * self.h)))

    @property
    def s(self) -> int:
        return self.k // self.w

    @property
    def n(self) -> int:
        return self.h * self.w

    @property
    def shape(self) -> tuple[int, int]:
        return (self.h, self.w)

    @classmethod
    def from_column_sparsity(cls, h: int, w: int, s: int, B: int) -> "CemdParams":
        return cls(h=h, w=w, k=s * w, B=B)


def emd(a, b) -> int:
    """Earth mover's distance between two equal-size sets of integers.

    On a line the optimal matching pairs the sorted elements in order.
    """
    a = np.sort(np.asarray(list(a), dtype=np.int64))
    b = np.sort(np.asarray(list(b), dtype=np.int64))
    if a.size != b.size:
        raise ValueError(f"EMD needs equal cardinalities, got {a.size} and {b.size}")
    return int(np.abs(a - b).sum())


def _pairwise_emd(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # rows of P, Q are sorted index tuples of equal length
    return np.abs(P[:, None, :] - Q[None, :, :]).sum(axis=2)


def _column_candidates(rows: tuple[int, ...], h: int, target: int) -> np.ndarray:
    free = [r for r in range(h) if r not in set(rows)]
    extra = target - len(rows)
    cands = [sorted(rows + add) for add in itertools.combinations(free, extra)]
    return np.asarray(cands, dtype=np.int64).reshape(-1, target)


def complete_support(support: Support, h: int, w: int, target: int) -> tuple[int, Support]:
    """Cheapest way to pad ``support`` to exactly ``target`` entries per column.

    Returns ``(support_emd, completed)`` where ``completed`` contains
    ``support`` and has ``target`` entries in each of the ``w`` columns.
    Ties go to the lexicographically first padding in column order.
    """
    support.check_bounds(h, w)
    cols = support.columns()
    if any(len(r) > target for r in cols.values()):
        raise ValueError(f"a column already holds more than {target} entries")
    if target < 1 or target > h:
        raise ValueError(f"target column sparsity {target} outside [1, {h}]")
    if w == 1:
        return 0, _fill_single_column(cols.get(0, ()), h, target)

    n_cand = [math.comb(h - len(cols.get(c, ())), target - len(cols.get(c, ()))) for c in range(w)]
    if max(n_cand) > _DP_CANDIDATE_LIMIT:
        return _complete_by_flow(support, h, w, target)

    cands = [_column_candidates(cols.get(c, ()), h, target) for c in range(w)]
    cost = np.zeros(len(cands[0]))
    back = []
    for c in range(1, w):
        step = cost[:, None] + _pairwise_emd(cands[c - 1], cands[c])
        arg = np.argmin(step, axis=0)  # first minimum, i.e. smallest predecessor
        back.append(arg)
        cost = step[arg, np.arange(step.shape[1])]
    j = int(np.argmin(cost))
    total = int(cost[j])
    picks = [j]
    for arg in reversed(back):
        picks.append(int(arg[picks[-1]]))
    picks.reverse()
    done = Support((int(r), c) for c in range(w) for r in cands[c][picks[c]])
    return total, done


def _fill_single_column(rows, h, target) -> Support:
    rows = list(rows)
    for r in range(h):
        if len(rows) >= target:
            break
        if r not in rows:
            rows.append(r)
    return Support((r, 0) for r in rows)


def _complete_by_flow(support: Support, h: int, w: int, target: int) -> tuple[int, Support]:
    # Required cells get a weight larger than any achievable EMD, so the
    # Lagrangian optimum at lambda=1 keeps all of them and pays minimal EMD.
    from .flow import FlowNetwork, min_cost_flow

    big = float(target * h * w + 1)
    weights = np.zeros((h, w))
    weights[support.mask(h, w)] = big
    sol = min_cost_flow(FlowNetwork(weights, target, 1.0))
    return int(sol.emd), sol.support


def support_emd(support: Support, params: Optional[CemdParams] = None,
                shape: Optional[tuple[int, int]] = None) -> int:
    """Support-EMD of ``support``.

    Exactly-sparse supports sum the EMD of adjacent columns.  Ragged supports
    take the minimum over paddings of every column to the largest column
    sparsity present.
    """
    if len(support) == 0:
        return 0
    if params is not None:
        h, w = params.h, params.w
    elif shape is not None:
        h, w = shape
    else:
        h = max(r for r, _ in support) + 1
        w = max(c for _, c in support) + 1
    cols = support.columns()
    target = max(len(v) for v in cols.values())
    if len(cols) == w and all(len(v) == target for v in cols.values()):
        return sum(emd(cols[c], cols[c + 1]) for c in range(w - 1))
    return complete_support(support, h, w, target)[0]


def is_member(support: Support, params: CemdParams) -> bool:
    """True iff ``support`` is a subset of some support of ``M_{k,B}``.

    Padding is done up to the model's own column sparsity ``s``: padding
    only to the largest column present can overstate the cost of a subset
    of an in-model support.
    """
    if len(support) == 0:
        return True
    try:
        support.check_bounds(params.h, params.w)
    except ValueError:
        return False
    if support.max_col_sparsity() > params.s:
        return False
    if params.w == 1:
        return True
    return complete_support(support, params.h, params.w, params.s)[0] <= params.B


def predicted_count(params: CemdParams) -> int:
    """Number of exactly ``s``-sparse column patterns, ignoring the budget."""
    return math.comb(params.h, params.s) ** params.w


@lru_cache(maxsize=32)
def _table(params: CemdParams) -> tuple[np.ndarray, np.ndarray]:
    h, w, s, B = params.h, params.w, params.s, params.B
    combos = np.asarray(list(itertools.combinations(range(h), s)), dtype=np.int64)
    pair = _pairwise_emd(combos, combos)
    seqs = np.arange(len(combos))[:, None]
    costs = np.zeros(len(combos), dtype=np.int64)
    for _ in range(1, w):
        step = costs[:, None] + pair[seqs[:, -1]]
        i, j = np.nonzero(step <= B)  # row-major, keeps lexicographic order
        seqs = np.concatenate([seqs[i], j[:, None]], axis=1)
        costs = step[i, j]
    offsets = (np.arange(w) * h)[None, :, None]
    flat = (combos[seqs] + offsets).reshape(len(seqs), w * s)
    flat.setflags(write=False)
    costs.setflags(write=False)
    return flat, costs


def support_table(params: CemdParams, limit: int = 10**6) -> tuple[np.ndarray, np.ndarray]:
    """All model supports as a ``(N, k)`` array of flat indices plus their EMDs.

    Rows are in the same deterministic order as :func:`enumerate_supports`.
    Refuses when the unconstrained pattern count exceeds ``limit``.
    """
    count = predicted_count(params)
    if count > limit:
        raise ValueError(
            f"refusing to enumerate {count} candidate supports for {params} (limit {limit})"
        )
    return _table(params)


def enumerate_supports(params: CemdParams, limit: int = 10**6) -> Iterator[Support]:
    """Yield every support of ``M_{k,B}`` once, in lexicographic column order."""
    flat, _ = support_table(params, limit)
    for row in flat:
        yield Support.from_flat(row, params.h)


def _weights(x, params: CemdParams, p: int) -> np.ndarray:
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    return vec(np.abs(as_signal(x, params.shape)) ** p)


def exact_head_project(x, params: CemdParams, p: int = 2, limit: int = 10**6) -> Support:
    """Model support maximising ``||x_Omega||_p`` (first in enumeration order on ties)."""
    flat, _ = support_table(params, limit)
    heads = _weights(x, params, p)[flat].sum(axis=1)
    return Support.from_flat(flat[int(np.argmax(heads))], params.h)


def exact_tail_project(x, params: CemdParams, p: int = 2, limit: int = 10**6) -> Support:
    """Model support minimising ``||x - x_Omega||_p``."""
    flat, _ = support_table(params, limit)
    wts = _weights(x, params, p)
    tails = wts.sum() - wts[flat].sum(axis=1)
    return Support.from_flat(flat[int(np.argmin(tails))], params.h)


def exact_head_oracle(params: CemdParams, p: int = 2) -> HeadOracle:
    return HeadOracle(lambda x: exact_head_project(x, params, p), params, params,
                      OracleQuality(c_H=1.0, p=p), name="exact-head")


def exact_tail_oracle(params: CemdParams, p: int = 2) -> TailOracle:
    return TailOracle(lambda x: exact_tail_project(x, params, p), params, params,
                      OracleQuality(c_T=1.0, p=p), name="exact-tail")


def model_sum(p1: CemdParams, p2: CemdParams) -> CemdParams:
    """Parameters of the model holding all unions ``Omega1 | Omega2``.

    Column sparsity is capped at ``h`` since a column cannot hold more.
    """
    if (p1.h, p1.w) != (p2.h, p2.w):
        raise ValueError(f"grid mismatch: {p1.shape} vs {p2.shape}")
    k = min(p1.k + p2.k, p1.h * p1.w)
    return CemdParams(h=p1.h, w=p1.w, k=k, B=p1.B + p2.B)


def log_model_size_bound(params: CemdParams) -> float:
    """Natural log of an explicit upper bound on the number of model supports."""
    h, s, k, B = params.h, params.s, params.k, params.B
    return s * math.log(h / s) + k * math.log((B + k) / k) + (s + k)


def measurement_bound(params: CemdParams, delta: float, t: float,
                      growth: Optional[CemdParams] = None, c: float = 1.0) -> int:
    """Sub-Gaussian measurement count for model-RIP constant ``delta``.

    ``growth`` is the model the RIP must cover (defaults to ``params``) and
    ``t`` the failure-probability exponent.  ``c`` is an unspecified
    universal constant, so the result is an estimate, not a certificate.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    model = params if growth is None else growth
    bound = log_model_size_bound(model)
    return int(math.ceil(c / delta**2 * (model.k * math.log(1 / delta) + bound + t)))


def random_support(params: CemdParams, rng: np.random.Generator) -> Support:
    """Draw a support of ``M_{k,B}`` with exactly ``s`` entries per column.

    The first column is uniform; each later column starts from its
    predecessor and takes a random number of unit row moves that fits the
    remaining budget.
    """
    h, w, s = params.h, params.w, params.s
    rows = sorted(rng.choice(h, size=s, replace=False).tolist())
    cols = [rows]
    left = params.B
    for _ in range(1, w):
        cur = list(cols[-1])
        moves = int(rng.integers(0, left + 1))
        for _ in range(moves):
            i = int(rng.integers(s))
            nr = cur[i] + int(rng.choice((-1, 1)))
            if 0 <= nr < h and nr not in cur:
                cur[i] = nr
        cur.sort()
        left -= emd(cols[-1], cur)
        cols.append(cur)
    return Support.from_columns(cols)


def random_signal(params: CemdParams, rng: np.random.Generator) -> tuple[np.ndarray, Support]:
    """Gaussian amplitudes on a random model support."""
    supp = random_support(params, rng)
    x = np.zeros(params.shape)
    m = supp.mask(*params.shape)
    x[m] = rng.standard_normal(int(m.sum()))
    return x, supp
