"""Command-line entry point: ``train | sample | eval | reproduce | theory``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .experiments import (
    METHODS,
    STUDIES,
    ResultRow,
    RunFileError,
    StudyOptions,
    checkpoint_name,
    evaluate_model,
    load_run_file,
    method_configs,
    parse_run_file,
    reproduce,
    run_cell,
    train_cached,
    write_results,
    write_samples,
    write_trajectories,
)
from .network import load_checkpoint
from .report import format_report, theory_report, write_report


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _run_file(args):
    """Resolve ``--config`` or ``--case`` into a RunFile, then apply CLI overrides."""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"run file not found: {path}")
        rf = load_run_file(path)
    elif args.case is not None:
        obj = {"case": args.case}
        if getattr(args, "d", None) is not None:
            obj["d"] = args.d
        rf = parse_run_file(obj, ".")
    else:
        raise UsageError("give a run file with --config or a built-in problem with --case")
    if getattr(args, "method", None):
        rf.method = args.method
    if args.seed is not None:
        rf.seeds = [args.seed]
    if args.out is not None:
        rf.out = Path(args.out)
    n = getattr(args, "n", None)
    if n is not None:
        if n < 1:
            raise UsageError(f"number of samples must be >= 1, got {n}")
        rf.sample = replace(rf.sample, n_samples=n)
    return rf


def cmd_train(args) -> int:
    rf = _run_file(args)
    tcfg, _ = method_configs(rf.method, rf.train, rf.sample)
    for seed in rf.seeds:
        _, secs, path = train_cached(rf.problem, tcfg, seed, rf.out, _log)
        print(f"{path}  ({secs:.1f}s)")
    return 0


def _model_for(rf, seed, checkpoint):
    if checkpoint:
        return load_checkpoint(checkpoint)
    tcfg, _ = method_configs(rf.method, rf.train, rf.sample)
    p, _, _ = train_cached(rf.problem, tcfg, seed, rf.out, _log)
    return p


def cmd_sample(args) -> int:
    rf = _run_file(args)
    _, scfg = method_configs(rf.method, rf.train, rf.sample)
    scfg = replace(scfg, record_trajectories=args.dump_trajectories)
    rf.out.mkdir(parents=True, exist_ok=True)
    for seed in rf.seeds:
        p = _model_for(rf, seed, args.checkpoint)
        rep, samples, traj = evaluate_model(p, rf.problem, scfg, seed, rf.n_reference)
        stem = f"{rf.label}_{rf.method}_s{seed}"
        print(write_samples(rf.out / f"{stem}_samples.csv", samples, rf.problem.constraint))
        if traj is not None:
            print(write_trajectories(rf.out / f"{stem}_trajectories.csv", traj))
    return 0


def cmd_eval(args) -> int:
    rf = _run_file(args)
    methods = args.method_list or [rf.method]
    rows = []
    rf.out.mkdir(parents=True, exist_ok=True)
    for seed in rf.seeds:
        for method in methods:
            if args.checkpoint:
                p = load_checkpoint(args.checkpoint)
                _, scfg = method_configs(method, rf.train, rf.sample)
                rep, _, traj = evaluate_model(
                    p, rf.problem, replace(scfg, record_trajectories=args.dump_trajectories), seed, rf.n_reference
                )
                rows.append(
                    ResultRow(rf.label, method, seed, rep.violation_rate_pct, rep.avg_violation, rep.mmd_e3, 0.0)
                )
                if traj is not None:
                    print(write_trajectories(rf.out / f"{rf.label}_{method}_s{seed}_trajectories.csv", traj))
            else:
                rows.append(
                    run_cell(rf.problem, method, seed, rf.train, rf.sample, rf.out, rf.n_reference, rf.timing, log=_log)
                )
                if args.dump_trajectories:
                    p = _model_for(replace(rf, method=method), seed, None)
                    _, scfg = method_configs(method, rf.train, rf.sample)
                    _, _, traj = evaluate_model(
                        p, rf.problem, replace(scfg, record_trajectories=True), seed, rf.n_reference
                    )
                    print(write_trajectories(rf.out / f"{rf.label}_{method}_s{seed}_trajectories.csv", traj))
    path = write_results(rf.out / f"{rf.label}_results.csv", rows)
    print(path)
    for r in rows:
        print(",".join(r.cells()))
    return 0


def cmd_reproduce(args) -> int:
    obj = None
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"run file not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise RunFileError(f"{path}: not valid JSON ({e})") from None
    opts = StudyOptions.from_run_file(obj)
    if args.seed is not None:
        opts.seeds = (args.seed,)
    out = Path(args.out or "runs")
    rows, summary, path = reproduce(args.study, out, opts, log=_log)
    print(path)
    for s in summary:
        print(f"{s['case_study']:>10} {s['method']:<28} viol% {s['viol_rate_pct_mean']:.3f} +- {s['viol_rate_pct_std']:.3f}")
    return 0


def cmd_theory(args) -> int:
    rf = _run_file(args)
    seed = rf.seeds[0]
    if args.checkpoint:
        p = load_checkpoint(args.checkpoint)
        tag = Path(args.checkpoint).stem
    else:
        p = _model_for(rf, seed, None)
        tcfg, _ = method_configs(rf.method, rf.train, rf.sample)
        tag = checkpoint_name(rf.label, tcfg, seed)
    eta = rf.sample.eta_max if rf.sample.eta_max > 0 else rf.problem.eta_max
    report = theory_report(p, rf.problem, eta_max=eta, t0=rf.sample.t0, seed=seed)
    path = write_report(report, rf.out / f"theory_{tag}.json")
    print(format_report(report))
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="constrained-flow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, method=True):
        sp.add_argument("--config", help="JSON run file")
        sp.add_argument("--case", type=int, choices=(1, 2, 3, 4), help="built-in case study")
        sp.add_argument("--d", type=int, help="dimension for case 4")
        sp.add_argument("--seed", type=int, help="run a single seed")
        sp.add_argument("--out", help="output directory")
        if method:
            sp.add_argument("--method", choices=METHODS)

    sp = sub.add_parser("train", help="train a vector field and write a checkpoint")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="write generated samples (and trajectories)")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("-n", type=int, help="number of samples")
    sp.add_argument("--dump-trajectories", action="store_true")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="score methods and write a results CSV")
    common(sp, method=False)
    sp.add_argument("--method", dest="method_list", action="append", choices=METHODS)
    sp.add_argument("--checkpoint")
    sp.add_argument("-n", type=int, help="number of samples")
    sp.add_argument("--dump-trajectories", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("reproduce", help="run a study grid")
    sp.add_argument("study", choices=STUDIES)
    sp.add_argument("--config", help="JSON run file with grid overrides")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="output directory (default: runs)")
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("theory", help="run the numerical theory checks")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RunFileError as e:
        print(f"error: invalid run file: {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
