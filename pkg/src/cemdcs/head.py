"""Greedy head approximation for the CEMD model and generic head boosting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cemd import CemdParams, complete_support, model_sum
from .core import HeadOracle, OracleQuality, Support, as_signal

__all__ = [
    "Path",
    "max_weight_path",
    "head_approx",
    "head_oracle",
    "harmonic_budget",
    "boost_head",
    "boosted_quality",
    "boost_iterations",
]


@dataclass(frozen=True)
class Path:
    """One row index per column of the grid."""

    rows: tuple[int, ...]

    @property
    def emd(self) -> int:
        r = np.asarray(self.rows)
        return int(np.abs(np.diff(r)).sum())

    def weight(self, x, p: int = 2) -> float:
        x = np.asarray(x)
        return float(sum(abs(x[r, c]) ** p for c, r in enumerate(self.rows)))

    def support(self) -> Support:
        return Support((r, c) for c, r in enumerate(self.rows))


def _max_path_weights(W: np.ndarray, budget: int) -> Path:
    h, w = W.shape
    cap = int(min(budget, (w - 1) * (h - 1)))
    nb = cap + 1
    rows = np.arange(h)
    dist = np.abs(rows[:, None] - rows[None, :])  # dist[r_prev, r_next]
    # index of the predecessor budget slot for (r_prev, r_next, b)
    prev_b = np.arange(nb)[None, None, :] - dist[:, :, None]
    valid = prev_b >= 0
    prev_b = np.where(valid, prev_b, 0)
    r_prev = np.broadcast_to(rows[:, None, None], prev_b.shape)

    best = np.full((h, nb), -np.inf)
    best[:, 0] = W[:, 0]
    preds = np.zeros((w, h, nb), dtype=np.intp)
    for c in range(1, w):
        cand = np.where(valid, best[r_prev, prev_b], -np.inf)
        arg = np.argmax(cand, axis=0)  # first max: smallest predecessor row
        best = np.take_along_axis(cand, arg[None], axis=0)[0] + W[:, c][:, None]
        preds[c] = arg
    # tie-break on the final state: smaller budget first, then smaller row
    flat = int(np.argmax(best.T.ravel()))
    b, r = divmod(flat, h)
    out = [r]
    for c in range(w - 1, 0, -1):
        rp = int(preds[c, r, b])
        b -= abs(r - rp)
        r = rp
        out.append(r)
    return Path(tuple(out[::-1]))


def max_weight_path(x, budget: int, p: int = 2) -> Path:
    """Path maximising ``sum |X[r_c, c]|^p`` subject to ``EMD(path) <= budget``.

    Exact dynamic program over (row, budget spent) states, one column at a
    time.  Among equally heavy paths the one using less budget wins, then the
    one ending in a smaller row.
    """
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    W = np.abs(as_signal(x)) ** p
    return _max_path_weights(W, int(budget))


def harmonic_budget(params: CemdParams) -> int:
    """EMD allowance ``ceil(H_s) * B`` of the greedy head output."""
    hs = sum(1.0 / i for i in range(1, params.s + 1))
    return int(math.ceil(hs - 1e-12)) * params.B


def head_approx(x, params: CemdParams, p: int = 2, paths: Optional[list] = None) -> Support:
    """Greedy head approximation over ``M_{k,B}``.

    Runs ``s`` rounds; round ``i`` takes the heaviest path with EMD at most
    ``B // i`` on the residual signal and zeroes the cells it used.  Rounds
    that reuse an already selected cell leave that column short, so the
    union is padded to exactly ``s`` entries per column at minimum EMD.

    Captures at least a quarter of the best in-model head (p-th powers) and
    has support-EMD at most ``ceil(H_s) * B``.
    """
    W = np.abs(as_signal(x, params.shape)) ** p
    resid = W.copy()
    cells = set()
    for i in range(1, params.s + 1):
        path = _max_path_weights(resid, params.B // i)
        if paths is not None:
            paths.append(path)
        for c, r in enumerate(path.rows):
            cells.add((r, c))
            resid[r, c] = 0.0
    union = Support(cells)
    if len(union) == params.k:
        return union
    return complete_support(union, params.h, params.w, params.s)[1]


def head_oracle(params: CemdParams, p: int = 2) -> HeadOracle:
    """HeadApprox with its declared guarantee ``c_H = (1/4)^(1/p)``."""
    out = CemdParams(params.h, params.w, params.k, harmonic_budget(params))
    q = OracleQuality(c_H=0.25 ** (1.0 / p), p=p)
    return HeadOracle(lambda x: head_approx(x, params, p), params, out, q, name="head-approx")


def boosted_quality(c_H: float, t: int, p: int = 2) -> float:
    return (1.0 - (1.0 - c_H**p) ** t) ** (1.0 / p)


def boost_head(H: HeadOracle, t: int) -> HeadOracle:
    """Amplify a head oracle by ``t`` rounds on the not-yet-covered signal."""
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    if t == 1:
        return H

    def project(x):
        x = np.asarray(x, dtype=np.float64)
        acc = Support()
        for _ in range(t):
            resid = x.copy()
            if len(acc):
                resid[acc.mask(*x.shape)] = 0.0
            acc = acc | H(resid)
        return acc

    out = H.output_model
    for _ in range(t - 1):
        out = model_sum(out, H.output_model)
    q = OracleQuality(c_H=boosted_quality(H.quality.c_H, t, H.quality.p), c_T=H.quality.c_T,
                      p=H.quality.p)
    return HeadOracle(project, H.input_model, out, q, name=f"boost{t}({H.name})")


def boost_iterations(c_H: float, c_T: float, delta: float, p: int = 2) -> tuple[int, float]:
    """Boosting rounds that make AM-IHT's contraction factor drop below one.

    Returns ``(t, gamma)`` where ``gamma`` is the head quality the loop needs.
    A head oracle already better than ``gamma`` needs no boosting.
    """
    if p != 2:
        raise ValueError("boosting round count is only derived for p = 2")
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    inner = 1.0 / (1.0 + c_T) - delta
    gamma = (math.sqrt(max(1.0 - inner**2, 0.0)) + delta) / (1.0 - delta)
    if gamma >= 1.0:
        raise ValueError(
            f"no boosting suffices: gamma={gamma:.4f} >= 1 for c_T={c_T}, delta={delta}"
        )
    if c_H > gamma:
        return 1, gamma
    if c_H >= 1.0:
        return 1, gamma
    t = math.ceil(math.log(1.0 - gamma**2) / math.log(1.0 - c_H**2)) + 1
    return int(t), gamma

