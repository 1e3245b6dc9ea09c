"""Seeded recovery trials shared by the command line and the test-suite."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .cemd import CemdParams, exact_head_oracle, exact_tail_oracle, model_sum, random_signal
from .core import lp_norm
from .flow import TailParams, as_tail_oracle
from .head import boost_head, boost_iterations, head_oracle
from .measurement import DenseOperator, ExpanderOperator, apply, estimate_model_rip
from .recovery import RecoveryConfig, constants, recover

__all__ = ["TrialSpec", "build_oracles", "trial_seeds", "run_trial", "rip_scope"]


@dataclass(frozen=True)
class TrialSpec:
    """One grid point of a recovery experiment."""

    h: int = 8
    w: int = 4
    s: int = 1
    B: int = 4
    m: int = 64
    algo: str = "am_iht"
    noise: float = 0.0
    oracles: str = "approx"  # "approx" or "exact"
    boost: Optional[int] = None  # None picks the round count automatically
    tail_d: float = 2.0
    tail_delta: float = 0.1
    d_deg: int = 7
    max_iters: int = 50
    tol: float = 1e-6
    slack: float = 1.2
    rip_trials: int = 200

    def __post_init__(self):
        for name in ("h", "w", "s", "m", "max_iters", "d_deg", "rip_trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.B < 0:
            raise ValueError("B must be nonnegative")
        if self.s > self.h:
            raise ValueError("s must not exceed h")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.algo not in ("am_iht", "am_cosamp", "am_iht_rip1"):
            raise ValueError(f"algo must be one of am_iht, am_cosamp, am_iht_rip1, got {self.algo}")
        if self.oracles not in ("approx", "exact"):
            raise ValueError(f"oracles must be approx or exact, got {self.oracles}")
        if self.boost is not None and self.boost < 1:
            raise ValueError("boost must be positive")
        if self.algo == "am_iht_rip1" and self.d_deg % 2 == 0:
            raise ValueError("d_deg must be odd")
        if self.algo == "am_iht_rip1" and self.d_deg > self.m:
            raise ValueError("d_deg must not exceed m")
        TailParams(self.tail_d, self.tail_delta)

    @property
    def params(self) -> CemdParams:
        return CemdParams.from_column_sparsity(self.h, self.w, self.s, self.B)

    @property
    def p(self) -> int:
        return 1 if self.algo == "am_iht_rip1" else 2

    def as_dict(self) -> dict:
        return asdict(self)


def build_oracles(spec: TrialSpec):
    """Head and tail oracles whose models fit together for recovery.

    The tail projects onto the signal model; the head is asked to cover the
    sum of the tail's output model and the signal model, which is where the
    error ``x - x^i`` lives.
    """
    P, p = spec.params, spec.p
    if spec.oracles == "exact":
        tail = exact_tail_oracle(P, p)
        head = exact_head_oracle(model_sum(P, P), p)
        return head, tail
    tail = as_tail_oracle(P, TailParams(spec.tail_d, spec.tail_delta), p)
    head = head_oracle(model_sum(tail.output_model, P), p)
    t = spec.boost
    if t is None:
        t = boost_iterations(head.quality.c_H, tail.quality.c_T, 0.0)[0] if p == 2 else 1
    return boost_head(head, t), tail


def rip_scope(head, tail, P: CemdParams) -> CemdParams:
    """Model the measurement operator has to be near-isometric on."""
    return model_sum(model_sum(tail.output_model, P), head.output_model)


def trial_seeds(seed: Optional[int], trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


def run_trial(spec: TrialSpec, seed_seq: np.random.SeedSequence, oracles=None,
              keep_result: bool = False) -> dict:
    """Draw an instance, recover it and score the outcome.

    Noiseless trials succeed at relative error ``tol``.  Noisy ones succeed
    when the final error is within ``slack`` times the theoretical noise
    floor, computed from an empirical RIP estimate of the operator.
    """
    P, p = spec.params, spec.p
    head, tail = oracles if oracles is not None else build_oracles(spec)
    sig_seed, op_seed, noise_seed, rip_seed = (int(s.generate_state(1)[0]) for s in seed_seq.spawn(4))
    x, _ = random_signal(P, np.random.default_rng(sig_seed))
    if spec.algo == "am_iht_rip1":
        A = ExpanderOperator.random(spec.m, P.n, spec.d_deg, op_seed)
    else:
        A = DenseOperator.gaussian(spec.m, P.n, op_seed)
    y_clean = apply(A, x)
    e = np.zeros(spec.m)
    if spec.noise > 0:
        nrng = np.random.default_rng(noise_seed)
        if p == 1:
            # a single corrupted measurement
            e[int(nrng.integers(spec.m))] = spec.noise * np.abs(y_clean).sum()
        else:
            g = nrng.standard_normal(spec.m)
            e = g / np.linalg.norm(g) * spec.noise * np.linalg.norm(y_clean)
    y = y_clean + e
    cfg = RecoveryConfig(spec.algo, head, tail, max_iters=spec.max_iters)
    res = recover(y, A, cfg, truth=x)
    err = lp_norm(res.x_hat - x, p)
    xnorm = lp_norm(x, p)
    enorm = float(np.abs(e).sum()) if p == 1 else float(np.linalg.norm(e))
    row = {
        "h": spec.h, "w": spec.w, "s": spec.s, "B": spec.B, "m": spec.m,
        "algo": spec.algo, "noise": spec.noise,
        "iterations": res.iterations, "rel_error": err / xnorm,
        "error": err, "noise_norm": enorm,
    }
    row["delta_est"] = math.nan
    row["alpha"] = math.nan
    row["beta"] = math.nan
    if spec.noise == 0:
        row["bound"] = spec.tol * xnorm
    else:
        scope = rip_scope(head, tail, P)
        est = estimate_model_rip(A, P, scope, spec.rip_trials, norm=p, seed=rip_seed)
        cc = constants(head.quality.c_H, tail.quality.c_T, est.delta_lower, spec.algo)
        row["delta_est"] = est.delta_lower
        row["alpha"], row["beta"] = cc.rate, cc.noise_gain
        # outside the contracting regime the theory gives no error bound
        row["bound"] = spec.slack * cc.error_coefficient() * enorm if cc.feasible else math.nan
    row["success"] = int(err <= row["bound"])
    if keep_result:
        row.update(_result=res, _x=x, _A=A, _e=e, _rip_seed=rip_seed)
    return row
