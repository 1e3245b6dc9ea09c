"""Measurement operators and empirical model-RIP estimation.

Operators act on flattened signals (column-major, see :mod:`cemdcs.core`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .cemd import CemdParams, random_support
from .core import Support, as_signal, mat, vec

__all__ = [
    "DenseOperator",
    "ExpanderOperator",
    "RipEstimate",
    "apply",
    "adjoint_apply",
    "restricted_least_squares",
    "median_operator",
    "estimate_model_rip",
]


class DenseOperator:
    """Dense real ``m x n`` measurement matrix.

    Use :meth:`gaussian` (entries ``N(0, 1/m)``) or :meth:`rademacher`
    (entries ``+-1/sqrt(m)``) for the random ensembles; both are
    reproducible from ``(family, m, n, seed)``.
    """

    rip_scale = 1.0

    def __init__(self, matrix, family: str = "explicit", seed: Optional[int] = None):
        M = np.array(matrix, dtype=np.float64)
        if M.ndim != 2:
            raise ValueError("measurement matrix must be 2-d")
        if not np.all(np.isfinite(M)):
            raise ValueError("measurement matrix has non-finite entries")
        M.setflags(write=False)
        self.matrix = M
        self.family = family
        self.seed = seed

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def gaussian(cls, m: int, n: int, seed=None) -> "DenseOperator":
        _check_dims(m, n)
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((m, n)) / np.sqrt(m), "gaussian", seed)

    @classmethod
    def rademacher(cls, m: int, n: int, seed=None) -> "DenseOperator":
        _check_dims(m, n)
        rng = np.random.default_rng(seed)
        signs = rng.integers(0, 2, size=(m, n)) * 2.0 - 1.0
        return cls(signs / np.sqrt(m), "rademacher", seed)

    @classmethod
    def from_matrix(cls, matrix) -> "DenseOperator":
        return cls(matrix)

    def describe(self) -> tuple:
        return (self.family, self.m, self.n, None, self.seed)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        return self.matrix.T @ u

    def columns(self, idx: np.ndarray) -> np.ndarray:
        return self.matrix[:, idx]


class ExpanderOperator:
    """Adjacency matrix of a random left-regular bipartite graph.

    Every signal coordinate (left node) has ``d`` distinct measurement
    neighbours.  ``d`` must be odd so neighbourhood medians are unique.
    """

    def __init__(self, neighbors, m: int, seed=None):
        nb = np.array(neighbors, dtype=np.intp)
        if nb.ndim != 2:
            raise ValueError("neighbors must be an (n, d) array")
        n, d = nb.shape
        if d % 2 == 0:
            raise ValueError(f"left degree must be odd, got {d}")
        if nb.min(initial=0) < 0 or nb.max(initial=0) >= m:
            raise ValueError("neighbor index out of range")
        if any(len(set(row)) != d for row in nb.tolist()):
            raise ValueError("neighbors of a left node must be distinct")
        nb.setflags(write=False)
        self.neighbors = nb
        self._m = int(m)
        self.seed = seed
        self._dense = None

    @classmethod
    def random(cls, m: int, n: int, d: int, seed=None) -> "ExpanderOperator":
        _check_dims(m, n)
        if d < 1 or d % 2 == 0:
            raise ValueError(f"left degree must be a positive odd integer, got {d}")
        if d > m:
            raise ValueError(f"left degree {d} exceeds the number of measurements {m}")
        rng = np.random.default_rng(seed)
        nb = np.stack([rng.choice(m, size=d, replace=False) for _ in range(n)])
        return cls(nb, m, seed)

    @classmethod
    def from_neighbors(cls, neighbors, m: int) -> "ExpanderOperator":
        return cls(neighbors, m)

    family = "expander"

    @property
    def m(self) -> int:
        return self._m

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    @property
    def d(self) -> int:
        return self.neighbors.shape[1]

    @property
    def rip_scale(self) -> float:
        return float(self.d)

    @property
    def matrix(self) -> np.ndarray:
        if self._dense is None:
            M = np.zeros((self.m, self.n))
            M[self.neighbors.T, np.arange(self.n)[None, :]] = 1.0
            M.setflags(write=False)
            self._dense = M
        return self._dense

    def describe(self) -> tuple:
        return (self.family, self.m, self.n, self.d, self.seed)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return np.bincount(self.neighbors.ravel(), weights=np.repeat(v, self.d),
                           minlength=self.m).astype(np.float64)

    def rmatvec(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=np.float64)[self.neighbors].sum(axis=1)

    def columns(self, idx: np.ndarray) -> np.ndarray:
        return self.matrix[:, idx]


Operator = Union[DenseOperator, ExpanderOperator]


def _check_dims(m, n):
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")


def apply(A: Operator, x) -> np.ndarray:
    """Measurements ``A vec(x)``."""
    v = vec(as_signal(x))
    if v.size != A.n:
        raise ValueError(f"signal has {v.size} entries, operator expects {A.n}")
    return A.matvec(v)


def adjoint_apply(A: Operator, y, shape: tuple[int, int]) -> np.ndarray:
    """``A^T y`` reshaped to an ``(h, w)`` signal."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.m,):
        raise ValueError(f"expected {A.m} measurements, got shape {y.shape}")
    if shape[0] * shape[1] != A.n:
        raise ValueError(f"shape {shape} does not match operator width {A.n}")
    return mat(A.rmatvec(y), *shape)


def restricted_least_squares(A: Operator, support: Support, y,
                             shape: tuple[int, int]) -> np.ndarray:
    """Least-squares fit of ``y`` using only the columns in ``support``.

    Rank-deficient column sets get the minimum-norm solution.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.m,):
        raise ValueError(f"expected {A.m} measurements, got shape {y.shape}")
    h, w = shape
    if h * w != A.n:
        raise ValueError(f"shape {shape} does not match operator width {A.n}")
    out = np.zeros(A.n)
    idx = support.flat_indices(h)
    if idx.size:
        support.check_bounds(h, w)
        z, *_ = np.linalg.lstsq(A.columns(idx), y, rcond=None)
        out[idx] = z
    return mat(out, h, w)


def median_operator(E: ExpanderOperator, u, shape: tuple[int, int]) -> np.ndarray:
    """Per-coordinate median of ``u`` over each coordinate's neighbours."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (E.m,):
        raise ValueError(f"expected {E.m} measurements, got shape {u.shape}")
    return mat(np.median(u[E.neighbors], axis=1), *shape)


@dataclass(frozen=True)
class RipEstimate:
    """Largest observed distortion over sampled model vectors.

    A lower bound on the true model-RIP constant, never a certificate.
    """

    delta_lower: float
    samples: int
    model: CemdParams
    norm: int


def estimate_model_rip(A: Operator, model: CemdParams, growth: Optional[CemdParams] = None,
                       trials: int = 100, norm: int = 2, seed=None) -> RipEstimate:
    """Sample random model vectors and report the worst norm distortion.

    For ``norm=2`` the distortion is ``| ||Ax||^2 / ||x||^2 - 1 |``; for
    ``norm=1`` it is ``| ||Ax||_1 / (scale ||x||_1) - 1 |`` with ``scale`` the
    operator's left degree (one for dense operators).  Supports come from
    ``growth`` when given, otherwise from ``model``.
    """
    if trials < 1:
        raise ValueError(f"trials must be at least 1, got {trials}")
    if norm not in (1, 2):
        raise ValueError(f"norm must be 1 or 2, got {norm}")
    space = model if growth is None else growth
    if space.n != A.n:
        raise ValueError(f"model has {space.n} coordinates, operator expects {A.n}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        supp = random_support(space, rng)
        idx = supp.flat_indices(space.h)
        v = np.zeros(A.n)
        v[idx] = rng.standard_normal(idx.size)
        if norm == 2:
            ratio = np.sum(A.matvec(v) ** 2) / np.sum(v**2) / A.rip_scale**2
        else:
            ratio = np.abs(A.matvec(v)).sum() / np.abs(v).sum() / A.rip_scale
        worst = max(worst, abs(float(ratio) - 1.0))
    return RipEstimate(worst, trials, space, norm)
