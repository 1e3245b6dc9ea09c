"""Signal/support primitives and head/tail oracle contracts.

Signals are float64 arrays of shape ``(h, w)``.  Whenever a signal has to be
viewed as a vector (measurement operators, least squares) the flattening is
column-major, so entry ``(r, c)`` maps to index ``c * h + r``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator, NamedTuple, Optional

import numpy as np

__all__ = [
    "Support",
    "OracleQuality",
    "HeadOracle",
    "TailOracle",
    "ContractCheck",
    "as_signal",
    "vec",
    "mat",
    "restrict",
    "lp_norm",
    "support_of",
    "check_head_contract",
    "check_tail_contract",
]


def as_signal(x, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Validate ``x`` as a finite real signal matrix and return a float64 copy."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 1 and shape is not None:
        arr = mat(arr, *shape)
    if arr.ndim != 2:
        raise ValueError(f"signal must be 2-d (h, w), got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"signal shape {arr.shape} != expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("signal contains NaN or infinite entries")
    return arr


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).ravel(order="F")


def mat(v: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.asarray(v).reshape((h, w), order="F")


class Support:
    """Immutable set of ``(row, col)`` grid positions.

    Iteration order is fixed to ``(col, row)`` ascending, which is also the
    order of :meth:`flat_indices` under column-major flattening.
    """

    __slots__ = ("_entries", "_hash")

    def __init__(self, entries: Iterable[tuple[int, int]] = ()):
        pairs = set()
        for r, c in entries:
            r, c = int(r), int(c)
            if r < 0 or c < 0:
                raise ValueError(f"negative index ({r}, {c}) in support")
            pairs.add((r, c))
        self._entries = tuple(sorted(pairs, key=lambda rc: (rc[1], rc[0])))
        self._hash = hash(self._entries)

    @classmethod
    def from_columns(cls, columns: dict[int, Iterable[int]] | Iterable[Iterable[int]]) -> "Support":
        """Build from per-column row sets (mapping ``col -> rows`` or a sequence)."""
        items = columns.items() if isinstance(columns, dict) else enumerate(columns)
        return cls((r, c) for c, rows in items for r in rows)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "Support":
        rows, cols = np.nonzero(np.asarray(mask))
        return cls(zip(rows.tolist(), cols.tolist()))

    @classmethod
    def from_flat(cls, indices: Iterable[int], h: int) -> "Support":
        return cls((int(i) % h, int(i) // h) for i in indices)

    @classmethod
    def from_text(cls, text: str) -> "Support":
        """Parse the ``col:row[,row...];col:...`` fixture format."""
        text = text.strip()
        if not text:
            return cls()
        entries = []
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            col, _, rows = chunk.partition(":")
            if not _:
                raise ValueError(f"malformed support chunk {chunk!r}")
            for r in rows.split(","):
                if r.strip():
                    entries.append((int(r), int(col)))
        return cls(entries)

    def to_text(self) -> str:
        return ";".join(
            f"{c}:{','.join(str(r) for r in rows)}" for c, rows in self.columns().items()
        )

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, item) -> bool:
        return tuple(item) in set(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Support):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return self._hash

    def __or__(self, other: "Support") -> "Support":
        return Support(self._entries + other._entries)

    def __le__(self, other: "Support") -> bool:
        return set(self._entries) <= set(other._entries)

    def __repr__(self) -> str:
        return f"Support({self.to_text()!r})"

    @property
    def entries(self) -> tuple[tuple[int, int], ...]:
        return self._entries

    def columns(self) -> dict[int, tuple[int, ...]]:
        """Map each non-empty column to its sorted rows (``col-supp``)."""
        cols: dict[int, list[int]] = {}
        for r, c in self._entries:
            cols.setdefault(c, []).append(r)
        return {c: tuple(rows) for c, rows in cols.items()}

    def col_supp(self, c: int) -> tuple[int, ...]:
        return tuple(r for r, cc in self._entries if cc == c)

    def col_sparsity(self, w: int) -> np.ndarray:
        counts = np.zeros(w, dtype=int)
        for _, c in self._entries:
            counts[c] += 1
        return counts

    def max_col_sparsity(self) -> int:
        cols = self.columns()
        return max((len(v) for v in cols.values()), default=0)

    def check_bounds(self, h: int, w: int) -> None:
        for r, c in self._entries:
            if r >= h or c >= w:
                raise ValueError(f"support index ({r}, {c}) outside {h}x{w} grid")

    def flat_indices(self, h: int) -> np.ndarray:
        return np.array([c * h + r for r, c in self._entries], dtype=np.intp)

    def mask(self, h: int, w: int) -> np.ndarray:
        self.check_bounds(h, w)
        m = np.zeros((h, w), dtype=bool)
        if self._entries:
            rows, cols = zip(*self._entries)
            m[list(rows), list(cols)] = True
        return m


def support_of(x: np.ndarray) -> Support:
    """Support of the nonzero entries of ``x``."""
    return Support.from_mask(np.asarray(x) != 0)


def restrict(x: np.ndarray, support: Support) -> np.ndarray:
    """Return ``x`` on ``support`` and zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    mask = support.mask(*x.shape)
    out[mask] = x[mask]
    return out


def lp_norm(x: np.ndarray, p: int = 2) -> float:
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    v = np.abs(np.asarray(x, dtype=np.float64)).ravel()
    return float(v.sum()) if p == 1 else float(np.sqrt(np.dot(v, v)))


@dataclass(frozen=True)
class OracleQuality:
    c_H: float = 1.0
    c_T: float = 1.0
    p: int = 2

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if not 0 < self.c_H <= 1:
            raise ValueError(f"c_H must lie in (0, 1], got {self.c_H}")
        if self.c_T < 1:
            raise ValueError(f"c_T must be >= 1, got {self.c_T}")


@dataclass(frozen=True)
class HeadOracle:
    """A support-valued head projection with its declared guarantee.

    ``input_model`` is the model the guarantee is stated against and
    ``output_model`` the (larger) model the returned supports live in.
    """

    project: Callable[[np.ndarray], Support]
    input_model: Any
    output_model: Any
    quality: OracleQuality
    name: str = "head"

    def __call__(self, x: np.ndarray) -> Support:
        return self.project(x)


@dataclass(frozen=True)
class TailOracle:
    project: Callable[[np.ndarray], Support]
    input_model: Any
    output_model: Any
    quality: OracleQuality
    name: str = "tail"

    def __call__(self, x: np.ndarray) -> Support:
        return self.project(x)


class ContractCheck(NamedTuple):
    ok: bool
    value: float  # oracle's head value / tail error (p-th power)
    bound: float  # the value it has to beat
    witness: Optional[Support]  # violating reference support, if any
    output: Support


def _pth(x: np.ndarray, p: int) -> np.ndarray:
    return np.abs(x) ** p


def check_head_contract(oracle: HeadOracle, x, model=None, limit: int = 10**6,
                        rtol: float = 1e-9) -> ContractCheck:
    """Brute-force check of the head guarantee on one signal.

    Compares ``||x_{H(x)}||_p`` against ``c_H`` times the best head value over
    every support of ``model`` (defaults to the oracle's input model).
    Raises ``ValueError`` if the model is too large to enumerate.
    """
    from .cemd import support_table

    model = oracle.input_model if model is None else model
    idx, _ = support_table(model, limit)
    x = as_signal(x, (model.h, model.w))
    p, c = oracle.quality.p, oracle.quality.c_H
    out = oracle(x)
    weights = vec(_pth(x, p))
    value = float(weights[out.flat_indices(model.h)].sum())
    heads = weights[idx].sum(axis=1)
    best = int(np.argmax(heads))
    # guarantee is on the p-norm, compare p-th powers
    bound = c ** p * float(heads[best])
    ok = value >= bound * (1 - rtol) - 1e-300
    witness = None if ok else Support.from_flat(idx[best], model.h)
    return ContractCheck(ok, value, bound, witness, out)


def check_tail_contract(oracle: TailOracle, x, model=None, limit: int = 10**6,
                        rtol: float = 1e-9) -> ContractCheck:
    from .cemd import support_table

    model = oracle.input_model if model is None else model
    idx, _ = support_table(model, limit)
    x = as_signal(x, (model.h, model.w))
    p, c = oracle.quality.p, oracle.quality.c_T
    out = oracle(x)
    weights = vec(_pth(x, p))
    total = float(weights.sum())
    keep = np.ones(weights.size, dtype=bool)
    keep[out.flat_indices(model.h)] = False
    value = float(weights[keep].sum())
    tails = total - weights[idx].sum(axis=1)
    best = int(np.argmin(tails))
    bound = c ** p * max(float(tails[best]), 0.0)
    ok = value <= bound * (1 + rtol) + 1e-12 * total
    witness = None if ok else Support.from_flat(idx[best], model.h)
    return ContractCheck(ok, value, bound, witness, out)
