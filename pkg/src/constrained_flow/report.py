"""Theory report: runs every numerical check against one trained field and problem."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .constraints import Conjunction
from .distributions import CaseStudy, make_rng
from .metrics import contaminate, mmd
from .network import VectorFieldParams, velocity
from .sampling import SampleConfig, euler_integrate, eta_schedule, integrate_pair
from .theory import (
    certified_descent_run,
    check_gronwall,
    check_monotone,
    check_one_step_bound,
    check_violation_derivative,
    count_excluded_steps,
    find_spurious_equilibria,
    residual_ratio_test,
    trajectory_constants,
)

CHECKS = (
    "violation_rate_lemma",
    "monotone_descent",
    "one_step_bound",
    "gronwall_envelope",
    "mmd_support_mismatch",
)

# rng streams under the report seed, one per probe
_LEMMA, _MONO, _STEP, _GRON, _GRON_K, _MMD = 5, 6, 7, 8, 9, 10


def _usable(c, x):
    return (c.violation(x) > 0) & (np.linalg.norm(c.gradient(x), axis=1) > 0)


def lemma_check(p, cs: CaseStudy, eta_max, t0, seed, n=500, ks=(100, 200, 400)):
    x0 = make_rng(seed, _LEMMA).standard_normal((n, cs.dim))
    res, excluded = {}, {}
    for K in ks:
        _, traj = euler_integrate(p, x0, cs.constraint, K=K, eta_max=eta_max, t0=t0, record=True)
        res[K] = check_violation_derivative(traj, p, cs.constraint, eta_max, t0)
        excluded[str(K)] = dict(zip(("kink", "near_centre"), count_excluded_steps(traj, cs.constraint)))
    ok, ratios = residual_ratio_test(res)
    return {
        "passed": ok,
        "max_residual": {str(k): v for k, v in res.items()},
        "ratios": ratios,
        "excluded_steps": excluded,
        "criterion": "residual ratio in [0.25, 0.75] per doubling of K, or both at rounding level",
    }


def violating_states(p, cs: CaseStudy, t0, K, n, seed):
    """``n`` violating states at the first grid time after ``t0``.

    Taken from unadjusted trajectories of the model, topped up with uniform
    draws from their bounding box when the model violates too rarely.
    """
    c = cs.constraint
    rng = make_rng(seed, _MONO)
    x = rng.standard_normal((4 * n, cs.dim))
    for k in range(int(np.floor(t0 * K)) + 1):
        x = x + velocity(p, x, k / K) / K
    picked = x[_usable(c, x)][:n]
    lo, hi = x.min(axis=0) - 1.0, x.max(axis=0) + 1.0
    for _ in range(100):
        if len(picked) >= n:
            break
        cand = rng.uniform(lo, hi, size=(10 * n, cs.dim))
        picked = np.concatenate([picked, cand[_usable(c, cand)]])[:n]
    return picked


def monotone_check(p, cs: CaseStudy, eta_max, t0, seed, n=100, K=100, margin=0.1):
    starts = violating_states(p, cs, t0, K, n, seed)
    traj = certified_descent_run(p, cs.constraint, starts, K=K, eta_max=eta_max, t0=t0, margin=margin)
    holds, worst, n_checked, n_kink = check_monotone(traj, cs.constraint, tol=1e-8)
    return {
        "passed": holds and len(starts) == n,
        "n_trajectories": int(len(starts)),
        "worst_step_increase": worst,
        "steps_checked": n_checked,
        "kink_steps_skipped": n_kink,
        "margin": margin,
    }


def one_step_check(p, cs: CaseStudy, eta_max, t0, seed, n_probe=10_000, K=100):
    """Probe the bound at trajectory states, with violating states drawn first."""
    c = cs.constraint
    rng = make_rng(seed, _STEP)
    cfg = SampleConfig(K=K, eta_max=eta_max, t0=t0, n_samples=2000, seed=seed, record_trajectories=True)
    x0 = rng.standard_normal((cfg.n_samples, cs.dim))
    _, traj = euler_integrate(p, x0, c, K=K, eta_max=eta_max, t0=t0, record=True)
    ks = np.repeat(np.arange(K), cfg.n_samples)
    states = traj.x[:K].reshape(-1, cs.dim)
    viol = c.violation(states) > 0
    order = np.concatenate([rng.permutation(np.flatnonzero(viol)), rng.permutation(np.flatnonzero(~viol))])
    idx = order[:n_probe]
    t = ks[idx] / K
    lhs = np.empty(len(idx))
    rhs = np.empty(len(idx))
    holds = np.empty(len(idx), dtype=bool)
    kink = np.empty(len(idx), dtype=bool)
    # group by time so each call sees a single t and eta
    for k in np.unique(ks[idx]):
        sel = ks[idx] == k
        tk = k / K
        out = check_one_step_bound(states[idx[sel]], p, tk, c, eta_schedule(tk, eta_max, t0), 1.0 / K)
        lhs[sel], rhs[sel], holds[sel], kink[sel] = out
    ok = ~kink
    gap = rhs[ok] - lhs[ok]
    return {
        "passed": bool(np.all(holds[ok])),
        "n_probes": int(len(idx)),
        "n_violating_probes": int(viol[idx].sum()),
        "n_checked": int(ok.sum()),
        "kink_steps_skipped": int(kink.sum()),
        "min_slack": float(gap.min()) if gap.size else 0.0,
        "t_range": [float(t.min()), float(t.max())],
    }


def gronwall_check(p, cs: CaseStudy, eta_max, t0, seed, n_trials=50, K=100):
    passed = 0
    worst_ratio = 0.0
    constants = []
    for i in range(n_trials):
        x0 = make_rng(seed, _GRON, i).standard_normal((1, cs.dim))
        cfg = SampleConfig(K=K, eta_max=eta_max, t0=t0, n_samples=1, seed=seed)
        base, adj = integrate_pair(p, cs.constraint, cfg, x0=x0)
        k = trajectory_constants(p, cs.constraint, base, adj, make_rng(seed, _GRON_K, i))
        dev, env, holds = check_gronwall(base, adj, eta_max, t0, k)
        passed += holds
        pos = env > 0
        if np.any(pos):
            worst_ratio = max(worst_ratio, float(np.max(dev[pos, 0] / env[pos])))
        constants.append((k.L_v, k.L_l, k.G))
    arr = np.array(constants)
    return {
        "passed": passed == n_trials,
        "trials_passed": int(passed),
        "n_trials": n_trials,
        "worst_deviation_to_envelope": worst_ratio,
        "L_v_range": [float(arr[:, 0].min()), float(arr[:, 0].max())],
        "G": float(arr[0, 2]),
        "constants_method": "Lipschitz quotients, Jacobian norms and matched trajectory pairs x 1.5",
    }


def mmd_probe(cs: CaseStudy, seed, n=1000, n_seeds=10, fraction=0.25, depth=0.5):
    clean_vals, dirty_vals = [], []
    for s in range(n_seeds):
        rng = make_rng(seed, _MMD, s)
        ref = cs.sample_target(n, rng)
        clean = cs.sample_target(n, rng)
        dirty = contaminate(clean, cs.constraint, fraction, depth, rng)
        clean_vals.append(mmd(clean, ref))
        dirty_vals.append(mmd(dirty, ref))
    return {
        "passed": float(np.mean(dirty_vals)) > float(np.mean(clean_vals)),
        "clean_mmd_mean": float(np.mean(clean_vals)),
        "contaminated_mmd_mean": float(np.mean(dirty_vals)),
        "fraction": fraction,
        "depth": depth,
        "n_seeds": n_seeds,
    }


def spurious_diagnostic(cs: CaseStudy, lo=(-5.0, -5.0), hi=(5.0, 5.0), n_grid=301):
    c = cs.constraint
    if not isinstance(c, Conjunction) or c.dim != 2:
        return {"applicable": False}
    pts = find_spurious_equilibria(c, lo, hi, n_grid=n_grid)
    return {"applicable": True, "n_found": int(len(pts)), "points": pts[:20].tolist()}


def theory_report(p: VectorFieldParams, cs: CaseStudy, eta_max=None, t0=0.3, seed=0, n_gronwall=50) -> dict:
    """Run all checks; the returned dict is JSON-serialisable."""
    if p.d != cs.dim:
        raise ValueError(f"checkpoint dimension {p.d} does not match problem dimension {cs.dim}")
    eta_max = cs.eta_max if eta_max is None else eta_max
    checks = {
        "violation_rate_lemma": lemma_check(p, cs, eta_max, t0, seed),
        "monotone_descent": monotone_check(p, cs, eta_max, t0, seed),
        "one_step_bound": one_step_check(p, cs, eta_max, t0, seed),
        "gronwall_envelope": gronwall_check(p, cs, eta_max, t0, seed, n_trials=n_gronwall),
        "mmd_support_mismatch": mmd_probe(cs, seed),
    }
    return {
        "problem": cs.name,
        "eta_max": eta_max,
        "t0": t0,
        "seed": seed,
        "checks": checks,
        "all_passed": all(ch["passed"] for ch in checks.values()),
        "spurious_equilibria": spurious_diagnostic(cs),
    }


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, default=float) + "\n")
    return path


def format_report(report: dict) -> str:
    lines = [f"theory report: {report['problem']} (eta_max={report['eta_max']}, t0={report['t0']})"]
    for name in CHECKS:
        ch = report["checks"][name]
        extras = ", ".join(f"{k}={v}" for k, v in ch.items() if k != "passed" and not isinstance(v, (dict, list)))
        lines.append(f"  {'PASS' if ch['passed'] else 'FAIL'}  {name}: {extras}")
    sp = report["spurious_equilibria"]
    if sp.get("applicable"):
        lines.append(f"  info  spurious_equilibria: {sp['n_found']} grid points")
    return "\n".join(lines)
