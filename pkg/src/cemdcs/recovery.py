"""Approximate model-based recovery loops and their convergence constants.

All three loops start from the zero signal and alternate a head projection
of a gradient-like proxy with a tail projection of the updated estimate:

* :func:`am_iht` uses the adjoint ``A^T (y - A x)`` and a gradient step;
* :func:`am_cosamp` merges the head support with the current support and
  refits by least squares before the tail projection;
* :func:`am_iht_rip1` replaces the adjoint by the expander median operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cemd import CemdParams, support_emd
from .core import HeadOracle, OracleQuality, Support, TailOracle, lp_norm, restrict, support_of
from .flow import TailParams, as_tail_oracle
from .head import boost_iterations, head_oracle
from .measurement import (DenseOperator, adjoint_apply, apply, median_operator,
                          restricted_least_squares)

__all__ = [
    "RecoveryConfig",
    "IterationRecord",
    "RecoveryResult",
    "ConvergenceConstants",
    "am_iht",
    "am_cosamp",
    "am_iht_rip1",
    "recover",
    "constants",
    "zero_oracle",
    "AdversarialReport",
    "adversarial_demo",
]

ALGORITHMS = ("am_iht", "am_cosamp", "am_iht_rip1")


@dataclass(frozen=True)
class RecoveryConfig:
    algorithm: str
    head: HeadOracle
    tail: TailOracle
    max_iters: int = 50
    residual_stop: float = 0.0
    record_trajectory: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.residual_stop < 0:
            raise ValueError(f"residual_stop must be nonnegative, got {self.residual_stop}")

    @property
    def p(self) -> int:
        return self.tail.quality.p

    @property
    def shape(self) -> tuple[int, int]:
        m = self.tail.output_model
        return (m.h, m.w)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual: float  # ||y - A x^i||_p
    error: Optional[float]  # ||x - x^i||_p when the truth is known
    support_emd: int
    col_sparsity_max: int
    support: Support = field(repr=False, default_factory=Support)
    candidates: Optional[Support] = field(repr=False, default=None)  # AM-CoSaMP merge set


@dataclass
class RecoveryResult:
    x_hat: np.ndarray
    iterations: int
    trajectory: list
    stopped: str  # "max_iters", "fixed_point" or "residual_stop"

    def trajectory_rows(self) -> list[dict]:
        return [
            {"iter": r.iteration, "residual_p": r.residual, "error_p": r.error,
             "support_emd": r.support_emd, "col_sparsity_max": r.col_sparsity_max}
            for r in self.trajectory
        ]


def _record(i, x, y, A, truth, p, cfg, cand=None) -> IterationRecord:
    supp = support_of(x)
    h, w = cfg.shape
    resid = y - apply(A, x)
    rnorm = float(np.abs(resid).sum()) if p == 1 else float(np.linalg.norm(resid))
    err = None if truth is None else lp_norm(truth - x, p)
    emd_val = support_emd(supp, shape=(h, w)) if len(supp) else 0
    return IterationRecord(i, rnorm, err, emd_val, supp.max_col_sparsity(), supp, cand)


def _run(y, A, cfg: RecoveryConfig, truth, step: Callable) -> RecoveryResult:
    h, w = cfg.shape
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.m,):
        raise ValueError(f"expected {A.m} measurements, got shape {y.shape}")
    if h * w != A.n:
        raise ValueError(f"oracle grid {h}x{w} does not match operator width {A.n}")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
    p = cfg.p
    x = np.zeros((h, w))
    traj = [_record(0, x, y, A, truth, p, cfg)] if cfg.record_trajectory else []
    stopped = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        x_new, cand = step(x)
        if cfg.record_trajectory:
            traj.append(_record(it, x_new, y, A, truth, p, cfg, cand))
        if np.array_equal(x_new, x):
            # deterministic oracles: every later iterate would be identical
            stopped = "fixed_point"
            x = x_new
            break
        moved = lp_norm(x_new - x, p)
        x = x_new
        if cfg.residual_stop > 0 and moved <= cfg.residual_stop:
            stopped = "residual_stop"
            break
    return RecoveryResult(x, it, traj, stopped)


def am_iht(y, A, cfg: RecoveryConfig, truth=None) -> RecoveryResult:
    """Approximate model IHT: ``x <- T(x + H(A^T (y - A x)))``."""
    shape = cfg.shape

    def step(x):
        b = adjoint_apply(A, y - apply(A, x), shape)
        a = x + restrict(b, cfg.head(b))
        return restrict(a, cfg.tail(a)), None

    return _run(y, A, cfg, truth, step)


def am_cosamp(y, A, cfg: RecoveryConfig, truth=None) -> RecoveryResult:
    """Approximate model CoSaMP.

    The head support of the proxy is merged with the current support, the
    signal is refit on that set by least squares and then tail-projected.
    """
    shape = cfg.shape

    def step(x):
        b = adjoint_apply(A, y - apply(A, x), shape)
        cand = cfg.head(b) | support_of(x)
        z = restricted_least_squares(A, cand, y, shape)
        return restrict(z, cfg.tail(z)), cand

    return _run(y, A, cfg, truth, step)


def am_iht_rip1(y, E, cfg: RecoveryConfig, truth=None) -> RecoveryResult:
    """AM-IHT for sparse expander measurements, using neighbourhood medians."""
    shape = cfg.shape

    def step(x):
        b = median_operator(E, y - apply(E, x), shape)
        a = x + restrict(b, cfg.head(b))
        return restrict(a, cfg.tail(a)), None

    return _run(y, E, cfg, truth, step)


def recover(y, A, cfg: RecoveryConfig, truth=None) -> RecoveryResult:
    loop = {"am_iht": am_iht, "am_cosamp": am_cosamp, "am_iht_rip1": am_iht_rip1}
    return loop[cfg.algorithm](y, A, cfg, truth)


@dataclass(frozen=True)
class ConvergenceConstants:
    """Closed-form constants predicting the per-iteration error recursion.

    For the two l2 loops ``||r^{i+1}|| <= alpha ||r^i|| + beta ||e||``; for
    the RIP-1 loop ``rho`` and ``tau`` play the same roles.  ``feasible`` is
    False when the recursion does not contract, and ``reason`` says why.
    """

    variant: str
    c_H: float
    c_T: float
    delta: float
    alpha0: float = math.nan
    beta0: float = math.nan
    alpha: float = math.inf
    beta: float = math.inf
    rho0: float = math.nan
    rho: float = math.inf
    tau: float = math.inf
    gamma: Optional[float] = None
    t_boost: Optional[int] = None
    feasible: bool = False
    reason: str = ""

    @property
    def rate(self) -> float:
        return self.rho if self.variant == "am_iht_rip1" else self.alpha

    @property
    def noise_gain(self) -> float:
        return self.tau if self.variant == "am_iht_rip1" else self.beta

    def error_coefficient(self) -> float:
        """Final-error multiplier ``1 + beta / (1 - alpha)`` (inf if not contracting)."""
        if not self.feasible:
            return math.inf
        return 1.0 + self.noise_gain / (1.0 - self.rate)

    def iteration_bound(self, x_norm: float, e_norm: float) -> float:
        """Iterations after which the error reaches the noise floor."""
        if not self.feasible:
            return math.inf
        if self.rate == 0.0:
            return 1
        if e_norm <= 0.0:
            return math.inf
        if x_norm <= e_norm:
            return 0
        return int(math.ceil(math.log(x_norm / e_norm) / math.log(1.0 / self.rate)))


def constants(c_H: float, c_T: float, delta: float, variant: str = "am_iht",
              tau0: float = 4.0) -> ConvergenceConstants:
    """Evaluate the convergence constants of one recovery loop.

    Parameters
    ----------
    c_H, c_T : float
        Head and tail oracle qualities.
    delta : float
        Model-RIP constant (RIP-1 constant for ``am_iht_rip1``).
    variant : {"am_iht", "am_cosamp", "am_iht_rip1"}
    tau0 : float
        Noise gain of the median operator; no closed form exists, so this
        is a calibration input.
    """
    if variant not in ALGORITHMS:
        raise ValueError(f"unknown variant {variant!r}")
    if not (0 < c_H <= 1 and c_T >= 1 and delta >= 0):
        raise ValueError(f"need 0 < c_H <= 1, c_T >= 1, delta >= 0; got {c_H}, {c_T}, {delta}")
    base = dict(variant=variant, c_H=c_H, c_T=c_T, delta=delta)
    try:
        t_boost, gamma = boost_iterations(c_H, c_T, min(delta, 0.999)) if delta < 1 else (None, None)
    except ValueError:
        t_boost, gamma = None, None
    base.update(gamma=gamma, t_boost=t_boost)

    if variant == "am_iht_rip1":
        if delta >= 0.25:
            return ConvergenceConstants(**base, reason=f"delta={delta} >= 1/4: rho0 undefined")
        rho0 = 4 * delta / (1 - 4 * delta)
        rho = (1 + c_T) * (2 * rho0 + 1 - c_H * (1 - rho0))
        tau = (1 + c_T) * (2 + c_H) * tau0
        ok = rho < 1
        return ConvergenceConstants(**base, rho0=rho0, rho=rho, tau=tau, feasible=ok,
                                    reason="" if ok else f"rho={rho:.4g} >= 1")

    if delta >= 1:
        return ConvergenceConstants(**base, reason=f"delta={delta} >= 1")
    alpha0 = c_H * (1 - delta) - delta
    beta0 = (1 + c_H) * math.sqrt(1 + delta)
    if alpha0 <= 0:
        return ConvergenceConstants(**base, alpha0=alpha0, beta0=beta0,
                                    reason=f"alpha0={alpha0:.4g} <= 0")
    root = math.sqrt(max(1 - alpha0**2, 0.0))
    # the head term blows up as alpha0 -> 1
    head_gain = beta0 / alpha0 + (alpha0 * beta0 / root if root > 0 else math.inf)
    if variant == "am_iht":
        alpha = (1 + c_T) * (delta + root)
        beta = (1 + c_T) * (head_gain + math.sqrt(1 + delta))
    else:
        ratio = math.sqrt((1 + delta) / (1 - delta))
        alpha = (1 + c_T) * ratio * root
        beta = (1 + c_T) * (ratio * head_gain + 2 / math.sqrt(1 - delta))
    ok = alpha < 1
    return ConvergenceConstants(**base, alpha0=alpha0, beta0=beta0, alpha=alpha, beta=beta,
                                feasible=ok, reason="" if ok else f"alpha={alpha:.4g} >= 1")


def zero_oracle(params, kind: str = "tail") -> TailOracle | HeadOracle:
    """Oracle that always returns the empty support."""
    cls = TailOracle if kind == "tail" else HeadOracle
    return cls(lambda x: Support(), params, params, OracleQuality(), name="zero")


@dataclass(frozen=True)
class AdversarialReport:
    n: int
    m: int
    c: float
    seed: Optional[int]
    norm_a_sq: float  # ||A^T A e_1||^2
    threshold: float  # c^2 / (c^2 - 1)
    condition: bool  # zero output is a valid c-approximate tail at step one
    iterates_zero: bool
    errors: tuple  # ||e_1 - x^i||_2 of the plain loop
    contrast_error: Optional[float]
    contrast_recovered: Optional[bool]


def adversarial_demo(n: int = 4096, c: float = 2.0, seed=None, iters: int = 10,
                     contrast: bool = True) -> AdversarialReport:
    """Show that an approximate tail oracle alone can stall model IHT.

    With ``m = ceil(4 log n)`` Rademacher measurements of ``x = e_1``, the
    first proxy ``a = A^T A e_1`` is so spread out that the empty support is a
    ``c``-approximate tail projection of it.  An oracle that always answers
    with the empty support then keeps every iterate at zero.  The contrast
    run uses honest head and tail oracles on the same measurements.
    """
    if n < 16:
        raise ValueError(f"n must be at least 16, got {n}")
    if not c > 1:
        raise ValueError(f"c must exceed 1, got {c}")
    m = int(math.ceil(4 * math.log(n)))
    A = DenseOperator.rademacher(m, n, seed)
    shape = (n, 1)
    x = np.zeros(shape)
    x[0, 0] = 1.0
    y = apply(A, x)
    a = adjoint_apply(A, y, shape)
    norm_a_sq = float(np.sum(a**2))
    threshold = c * c / (c * c - 1)

    params = CemdParams(h=n, w=1, k=1, B=0)
    zero = zero_oracle(params)
    xi = np.zeros(shape)
    errors = []
    zero_all = True
    for _ in range(iters):
        proxy = xi + adjoint_apply(A, y - apply(A, xi), shape)
        xi = restrict(proxy, zero(proxy))
        zero_all &= not np.any(xi)
        errors.append(lp_norm(x - xi, 2))

    c_err = c_ok = None
    if contrast:
        tail = as_tail_oracle(params, TailParams(), p=2)
        from .cemd import model_sum

        head = head_oracle(model_sum(tail.output_model, params), p=2)
        cfg = RecoveryConfig("am_iht", head, tail, max_iters=50)
        res = am_iht(y, A, cfg, truth=x)
        c_err = lp_norm(res.x_hat - x, 2)
        c_ok = bool(c_err <= 1e-9)
    return AdversarialReport(n, m, c, seed, norm_a_sq, threshold, bool(norm_a_sq >= threshold),
                             bool(zero_all), tuple(errors), c_err, c_ok)
