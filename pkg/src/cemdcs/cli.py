"""``cemd-bench``: seeded experiments and guarantee checks for the CEMD toolkit.

Every command writes CSV to stdout (or ``-o FILE``).  The first line is a
``#`` comment holding the fully resolved configuration as JSON, so an output
file records how it was produced.  Reruns with the same seed are
byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np

from .cemd import (CemdParams, exact_tail_project, is_member, predicted_count, support_emd,
                   support_table)
from .core import HeadOracle, Support, TailOracle, check_head_contract, vec
from .experiments import TrialSpec, build_oracles, run_trial, trial_seeds
from .flow import TailParams, as_tail_oracle
from .head import harmonic_budget, head_oracle
from .measurement import DenseOperator, ExpanderOperator, estimate_model_rip
from .recovery import adversarial_demo

RECOVER_COLUMNS = ["trial", "h", "w", "s", "B", "m", "algo", "noise", "iterations",
                   "rel_error", "error", "noise_norm", "bound", "success"]
PHASE_COLUMNS = ["m", "B", "trials", "successes", "success_rate"]
ORACLE_COLUMNS = ["instance", "p", "head_value", "head_opt", "head_ok", "head_emd",
                  "tail_value", "tail_opt", "tail_case", "tail_emd", "tail_ok"]
COUNTER_COLUMNS = ["trial", "seed", "m", "norm_a_sq", "threshold", "condition",
                   "iterates_zero", "contrast_error", "contrast_recovered"]
RIP_COLUMNS = ["run", "seed", "delta_lower", "below_threshold"]


class UsageError(Exception):
    pass


def _algo(text: str) -> str:
    return text.replace("-", "_")


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (falls back to $CEMD_SEED, then 0)")
    p.add_argument("-o", "--output", default="-", help="CSV destination (default stdout)")
    p.add_argument("--config", default=None, help="key=value file; flags override it")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")


def _recovery_flags(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    p.add_argument("--h", type=int, default=8)
    p.add_argument("--w", type=int, default=4)
    p.add_argument("--s", type=int, default=1, help="entries per column (k = s*w)")
    if not sweep:
        p.add_argument("--B", type=int, default=4, help="EMD budget")
        p.add_argument("--m", type=int, default=64, help="number of measurements")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--algo", type=_algo, default="am_iht",
                   choices=["am_iht", "am_cosamp", "am_iht_rip1"],
                   help="am-iht | am-cosamp | am-iht-rip1")
    p.add_argument("--noise", type=float, default=0.0, help="||e|| / ||Ax|| (l1 for rip1)")
    p.add_argument("--oracles", choices=["approx", "exact"], default="approx")
    p.add_argument("--boost", type=int, default=None,
                   help="head boosting rounds (default: derived from oracle qualities)")
    p.add_argument("--tail-d", type=float, default=2.0)
    p.add_argument("--tail-delta", type=float, default=0.1)
    p.add_argument("--d-deg", type=int, default=7, help="expander left degree (odd)")
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--timing", action="store_true",
                   help="add a wall_time column (output no longer reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cemd-bench",
        description="Benchmarks and guarantee checks for CEMD model-based compressive sensing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", help="seeded recovery trials",
                       description="CSV columns: " + ", ".join(RECOVER_COLUMNS))
    _recovery_flags(p)
    p.add_argument("--require-success", type=float, default=None,
                   help="exit 1 if the success fraction falls below this value")
    _common(p)

    p = sub.add_parser("phase", help="success rate over an (m, B) grid",
                       description="CSV columns: " + ", ".join(PHASE_COLUMNS))
    _recovery_flags(p, sweep=True)
    p.add_argument("--m-list", type=_int_list, default=[32, 48, 64])
    p.add_argument("--B-list", type=_int_list, default=[0, 2, 4])
    _common(p)

    p = sub.add_parser("oracle-check", help="verify oracle guarantees by brute force",
                       description="CSV columns: " + ", ".join(ORACLE_COLUMNS))
    p.add_argument("--h", type=int, default=5)
    p.add_argument("--w", type=int, default=3)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--B", type=int, default=2)
    p.add_argument("--p", type=int, choices=[1, 2], default=2)
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--tail-d", type=float, default=3.0)
    p.add_argument("--tail-delta", type=float, default=0.5)
    p.add_argument("--limit", type=int, default=10**6, help="enumeration size limit")
    p.add_argument("--sabotage", choices=["none", "head", "tail"], default="none",
                   help="replace an oracle by a broken one (negative test)")
    _common(p)

    p = sub.add_parser("counterexample", help="approximate-tail-only failure demo",
                       description="CSV columns: " + ", ".join(COUNTER_COLUMNS))
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--min-rate", type=float, default=0.95)
    p.add_argument("--no-contrast", action="store_true")
    _common(p)

    p = sub.add_parser("rip-estimate", help="empirical model-RIP distortion",
                       description="CSV columns: " + ", ".join(RIP_COLUMNS))
    p.add_argument("--h", type=int, default=16)
    p.add_argument("--w", type=int, default=4)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--B", type=int, default=4)
    p.add_argument("--m", type=int, default=24)
    p.add_argument("--family", choices=["gaussian", "rademacher", "expander"], default="gaussian")
    p.add_argument("--d-deg", type=int, default=7)
    p.add_argument("--samples", type=int, default=10, help="model vectors per run")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-rate", type=float, default=None,
                   help="exit 1 if fewer runs than this fraction fall below --threshold")
    _common(p)
    return parser


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value")
            key, val = (t.strip() for t in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = _read_config(args.config)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = sub.choices[args.command]
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, val in values.items():
        if key not in known or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        act = known[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = val.lower() in ("1", "true", "yes")
        else:
            defaults[key] = act.type(val) if act.type else val
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CEMD_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CEMD_SEED must be an integer, got {env!r}")
    return 0


def _config(args) -> dict:
    skip = {"output", "config", "print_config", "jobs"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(_config(args), sort_keys=True) + "\n")
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})
    if args.output == "-":
        sys.stdout.write(buf.getvalue())
    else:
        with open(args.output, "w", newline="") as fh:
            fh.write(buf.getvalue())


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def _spec(args, m: int, B: int) -> TrialSpec:
    if m < 1:
        raise UsageError("m must be positive")
    if args.trials < 1:
        raise UsageError("trials must be positive")
    if args.jobs < 1:
        raise UsageError("jobs must be positive")
    try:
        return TrialSpec(h=args.h, w=args.w, s=args.s, B=B, m=m, algo=args.algo,
                         noise=args.noise, oracles=args.oracles, boost=args.boost,
                         tail_d=args.tail_d, tail_delta=args.tail_delta, d_deg=args.d_deg,
                         max_iters=args.max_iters)
    except ValueError as exc:
        raise UsageError(str(exc))


def _trial_job(job):
    spec, idx, seq, timing = job
    t0 = time.perf_counter()
    row = run_trial(spec, seq)
    row["trial"] = idx
    if timing:
        row["wall_time"] = time.perf_counter() - t0
    return row


def _run_trials(spec: TrialSpec, seed: int, trials: int, jobs: int, timing: bool) -> list[dict]:
    seqs = trial_seeds(seed, trials)
    jobs_in = [(spec, i, s, timing) for i, s in enumerate(seqs)]
    if jobs <= 1:
        oracles = build_oracles(spec)
        rows = []
        for spec_, i, s, tm in jobs_in:
            t0 = time.perf_counter()
            row = run_trial(spec_, s, oracles)
            row["trial"] = i
            if tm:
                row["wall_time"] = time.perf_counter() - t0
            rows.append(row)
        return rows
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        rows = list(pool.map(_trial_job, jobs_in))
    return sorted(rows, key=lambda r: r["trial"])


def cmd_recover(args) -> int:
    seed = _resolve_seed(args)
    args.seed = seed
    spec = _spec(args, args.m, args.B)
    rows = _run_trials(spec, seed, args.trials, args.jobs, args.timing)
    cols = RECOVER_COLUMNS + (["wall_time"] if args.timing else [])
    _emit(args, cols, rows)
    rate = sum(r["success"] for r in rows) / len(rows)
    print(f"success {sum(r['success'] for r in rows)}/{len(rows)} = {rate:.3f}", file=sys.stderr)
    if args.require_success is not None and rate < args.require_success:
        return 1
    return 0


def cmd_phase(args) -> int:
    seed = _resolve_seed(args)
    args.seed = seed
    rows = []
    for m in args.m_list:
        for B in args.B_list:
            spec = _spec(args, m, B)
            trials = _run_trials(spec, seed, args.trials, args.jobs, False)
            ok = sum(r["success"] for r in trials)
            rows.append({"m": m, "B": B, "trials": len(trials), "successes": ok,
                         "success_rate": ok / len(trials)})
    _emit(args, PHASE_COLUMNS, rows)
    return 0


def _sabotaged_head(H: HeadOracle) -> HeadOracle:
    return HeadOracle(lambda x: Support(), H.input_model, H.output_model, H.quality, "zero-head")


def _sabotaged_tail(T: TailOracle) -> TailOracle:
    # the worst model support instead of the best one
    P, p = T.input_model, T.quality.p

    def worst(x):
        flat, _ = support_table(P)
        heads = vec(np.abs(x) ** p)[flat].sum(axis=1)
        return Support.from_flat(flat[int(np.argmin(heads))], P.h)

    return TailOracle(worst, P, T.output_model, T.quality, "worst-tail")


def cmd_oracle_check(args) -> int:
    seed = _resolve_seed(args)
    args.seed = seed
    try:
        P = CemdParams.from_column_sparsity(args.h, args.w, args.s, args.B)
        tp = TailParams(args.tail_d, args.tail_delta)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.instances < 1:
        raise UsageError("instances must be positive")
    count = predicted_count(P)
    if count > args.limit:
        raise UsageError(f"refusing to enumerate {count} supports (limit {args.limit}); "
                         "use a smaller instance")
    p = args.p
    H = head_oracle(P, p)
    T = as_tail_oracle(P, tp, p)
    if args.sabotage == "head":
        H = _sabotaged_head(H)
    elif args.sabotage == "tail":
        T = _sabotaged_tail(T)
    rng = np.random.default_rng(seed)
    rows, failures = [], []
    for i in range(args.instances):
        x = rng.standard_normal(P.shape) * (rng.random(P.shape) < rng.uniform(0.3, 1.0))
        hc = check_head_contract(H, x, P, limit=args.limit)
        h_emd = support_emd(hc.output, P)
        head_ok = hc.ok and is_member(hc.output, H.output_model) and h_emd <= harmonic_budget(P)
        W = np.abs(x) ** p
        total = float(W.sum())
        t_out = T(x)
        t_val = total - float(W[t_out.mask(*P.shape)].sum())
        opt_s = exact_tail_project(x, P, p)
        t_opt = total - float(W[opt_s.mask(*P.shape)].sum())
        t_emd = support_emd(t_out, P)
        tol = 1e-9 * max(total, 1e-300)
        case = 0
        if P.B <= t_emd <= tp.d * P.B and t_val <= t_opt + tol:
            case = 1
        elif t_emd <= P.B and t_val <= tp.c * t_opt + tol:
            case = 2
        tail_ok = case > 0 and len(t_out) == P.k and is_member(t_out, T.output_model)
        rows.append({"instance": i, "p": p, "head_value": hc.value, "head_opt": hc.bound / H.quality.c_H ** p,
                     "head_ok": head_ok, "head_emd": h_emd, "tail_value": t_val, "tail_opt": t_opt,
                     "tail_case": case, "tail_emd": t_emd, "tail_ok": tail_ok})
        if not head_ok:
            failures.append(f"instance {i}: head violation, output {hc.output.to_text()!r} "
                            f"value {hc.value:.6g} < bound {hc.bound:.6g}; witness "
                            f"{hc.witness.to_text() if hc.witness else None!r}")
        if not tail_ok:
            failures.append(f"instance {i}: tail violation, output {t_out.to_text()!r} "
                            f"tail {t_val:.6g}, emd {t_emd}; witness {opt_s.to_text()!r} "
                            f"with tail {t_opt:.6g}")
    _emit(args, ORACLE_COLUMNS, rows)
    for msg in failures:
        print(msg, file=sys.stderr)
    print(f"{len(rows)} instances, {len(failures)} violations", file=sys.stderr)
    return 1 if failures else 0


def cmd_counterexample(args) -> int:
    seed = _resolve_seed(args)
    args.seed = seed
    if args.n < 16:
        raise UsageError("n must be at least 16")
    if not args.c > 1:
        raise UsageError("c must exceed 1")
    if args.trials < 1:
        raise UsageError("trials must be positive")
    seeds = np.random.SeedSequence(seed).generate_state(args.trials).tolist()
    rows = []
    for i, sd in enumerate(seeds):
        rep = adversarial_demo(args.n, args.c, int(sd), contrast=not args.no_contrast)
        rows.append({"trial": i, "seed": int(sd), "m": rep.m, "norm_a_sq": rep.norm_a_sq,
                     "threshold": rep.threshold, "condition": rep.condition,
                     "iterates_zero": rep.iterates_zero, "contrast_error": rep.contrast_error,
                     "contrast_recovered": rep.contrast_recovered})
    _emit(args, COUNTER_COLUMNS, rows)
    n = len(rows)
    cond = sum(r["condition"] for r in rows) / n
    zero = all(r["iterates_zero"] for r in rows)
    msg = f"condition {cond:.3f}, iterates stay zero: {zero}"
    ok = cond >= args.min_rate and zero
    if not args.no_contrast:
        rec = sum(bool(r["contrast_recovered"]) for r in rows) / n
        msg += f", contrast recovery {rec:.3f}"
        ok = ok and rec >= args.min_rate
    print(msg, file=sys.stderr)
    return 0 if ok else 1


def cmd_rip_estimate(args) -> int:
    seed = _resolve_seed(args)
    args.seed = seed
    if args.m < 1:
        raise UsageError("m must be positive")
    if args.runs < 1 or args.samples < 1:
        raise UsageError("runs and samples must be positive")
    try:
        P = CemdParams.from_column_sparsity(args.h, args.w, args.s, args.B)
    except ValueError as exc:
        raise UsageError(str(exc))
    norm = 1 if args.family == "expander" else 2
    seeds = np.random.SeedSequence(seed).generate_state(args.runs).tolist()
    rows = []
    for i, sd in enumerate(seeds):
        sd = int(sd)
        try:
            if args.family == "expander":
                A = ExpanderOperator.random(args.m, P.n, args.d_deg, sd)
            elif args.family == "rademacher":
                A = DenseOperator.rademacher(args.m, P.n, sd)
            else:
                A = DenseOperator.gaussian(args.m, P.n, sd)
        except ValueError as exc:
            raise UsageError(str(exc))
        est = estimate_model_rip(A, P, None, args.samples, norm=norm, seed=sd + 1)
        rows.append({"run": i, "seed": sd, "delta_lower": est.delta_lower,
                     "below_threshold": est.delta_lower < args.threshold})
    _emit(args, RIP_COLUMNS, rows)
    rate = sum(r["below_threshold"] for r in rows) / len(rows)
    print(f"{rate:.3f} of runs below delta={args.threshold}", file=sys.stderr)
    if args.min_rate is not None and rate < args.min_rate:
        return 1
    return 0


COMMANDS = {
    "recover": cmd_recover,
    "phase": cmd_phase,
    "oracle-check": cmd_oracle_check,
    "counterexample": cmd_counterexample,
    "rip-estimate": cmd_rip_estimate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _apply_config(parser, argv)
        if args.print_config:
            args.seed = _resolve_seed(args)
            for k, v in _config(args).items():
                print(f"{k}={v}")
            return 0
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cemd-bench {argv[0] if argv else ''}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cemd-bench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
