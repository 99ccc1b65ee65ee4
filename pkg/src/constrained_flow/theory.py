"""Numerical checks of the descent and stability properties of adjusted sampling.

All checks operate on Euler trajectories, so they budget for discretisation
error explicitly: first-order residuals for the instantaneous violation rate,
a 5% slack on the Gronwall envelope, and exclusion of steps that cross a hinge
boundary or pass close to a ball centre (hinges are only piecewise smooth, and
``|x - c|`` has unbounded curvature at ``c``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (
    Annulus,
    Conjunction,
    Constraint,
    HalfSpace,
    InsideBall,
    OutsideBall,
    leaves,
)
from .network import VectorFieldParams, forward, velocity
from .sampling import Trajectory, eta_schedule, time_grid

LIPSCHITZ_SAFETY = 1.5
SMOOTHNESS_SAFETY = 2.0
GRONWALL_SLACK = 0.05
BOUND_TOL = 1e-10
# segments closer than this to a ball centre are outside the smooth region
CENTRE_RADIUS = 0.05


@dataclass
class TheoryConstants:
    L_v: float
    L_l: float
    G: float
    notes: dict = field(default_factory=dict)


# Hinge geometry helpers --------------------------------------------------------

def active_pattern(c: Constraint, x) -> np.ndarray:
    """Boolean matrix, one column per hinge piece, marking where each piece is active."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = []
    for leaf in leaves(c):
        cols.append(leaf._violation(x) > 0.0)
        if isinstance(leaf, Annulus):
            cols.append(np.linalg.norm(x - leaf.c, axis=1) > leaf.r_max)
    return np.stack(cols, axis=1)


def crosses_kink(c: Constraint, x, y) -> np.ndarray:
    """True where the straight segment from x to y changes the set of active hinge pieces.

    Endpoints are compared, plus a midpoint test for ball-type pieces, whose
    active region can be entered and left within one segment.
    """
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    out = np.any(active_pattern(c, x) != active_pattern(c, y), axis=1)
    for leaf in leaves(c):
        if isinstance(leaf, HalfSpace):
            continue
        dmin = _segment_min_dist(x, y, leaf.c)
        if isinstance(leaf, OutsideBall):
            radii = [leaf.r]
        elif isinstance(leaf, InsideBall):
            radii = [leaf.r]
        else:
            radii = [leaf.r_min, leaf.r_max]
        dx = np.linalg.norm(x - leaf.c, axis=1)
        dy = np.linalg.norm(y - leaf.c, axis=1)
        for r in radii:
            # the distance dips below r inside the segment while both ends are above it
            out |= (dmin < r) & (dx >= r) & (dy >= r)
    return out


def near_centre(c: Constraint, x, y, radius: float = CENTRE_RADIUS) -> np.ndarray:
    """True where the segment from x to y comes within ``radius`` of a ball-type centre."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    out = np.zeros(len(x), dtype=bool)
    for leaf in leaves(c):
        if not isinstance(leaf, HalfSpace):
            out |= _segment_min_dist(x, y, leaf.c) < radius
    return out


def _segment_min_dist(x, y, center) -> np.ndarray:
    d = y - x
    dd = np.sum(d * d, axis=1)
    s = np.where(dd > 0, np.sum((center - x) * d, axis=1) / np.where(dd > 0, dd, 1.0), 0.0)
    s = np.clip(s, 0.0, 1.0)
    closest = x + s[:, None] * d
    return np.linalg.norm(closest - center, axis=1)


def segment_smoothness(c: Constraint, x, y, safety: float = SMOOTHNESS_SAFETY) -> np.ndarray:
    """Upper bound on the gradient Lipschitz constant of ``c`` along each segment.

    Half-space pieces are linear (0). A radial piece ``+-(|x - c| - r)`` has
    Hessian norm ``1 / |x - c|``, bounded by the segment's closest approach to
    the centre. The sum over pieces is multiplied by ``safety``.
    """
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    total = np.zeros(x.shape[0])
    for leaf in leaves(c):
        if isinstance(leaf, HalfSpace):
            continue
        dmin = _segment_min_dist(x, y, leaf.c)
        with np.errstate(divide="ignore"):
            total = total + np.where(dmin > 0, 1.0 / dmin, np.inf)
    return safety * total


def analytic_gradient_bound(c: Constraint) -> float | None:
    if isinstance(c, HalfSpace):
        return float(np.linalg.norm(c.a))
    if isinstance(c, (OutsideBall, InsideBall, Annulus)):
        return 1.0
    if isinstance(c, Conjunction):
        parts = [analytic_gradient_bound(ch) for ch in c.children]
        return None if any(p is None for p in parts) else float(sum(parts))
    return None


# Instantaneous violation rate ----------------------------------------------------

def violation_rate_residuals(
    traj: Trajectory,
    p: VectorFieldParams,
    c: Constraint,
    eta_max: float,
    t0: float,
    min_violation: float = 1e-3,
    eta_fn=None,
    centre_radius: float = CENTRE_RADIUS,
) -> np.ndarray:
    """Residuals ``|K (l(x_{k+1}) - l(x_k)) - (grad l . v - eta |grad l|^2)|`` at eligible states.

    Eligible steps start with ``l > min_violation``, cross no hinge boundary and
    keep ``centre_radius`` away from ball centres. ``eta_fn(t)`` overrides the
    regular ``(eta_max, t0)`` schedule when given.
    """
    K = traj.K
    res = []
    for k in range(K):
        xk, xn = traj.x[k], traj.x[k + 1]
        lk = c.violation(xk)
        ok = (lk > min_violation) & ~crosses_kink(c, xk, xn) & ~near_centre(c, xk, xn, centre_radius)
        if not np.any(ok):
            continue
        xk, xn = xk[ok], xn[ok]
        t = traj.t[k]
        g = c.gradient(xk)
        v = velocity(p, xk, t)
        eta = eta_fn(t) if eta_fn is not None else eta_schedule(t, eta_max, t0)
        rhs = np.sum(g * v, axis=1) - eta * np.sum(g * g, axis=1)
        fd = (c.violation(xn) - lk[ok]) * K
        res.append(np.abs(fd - rhs))
    return np.concatenate(res) if res else np.zeros(0)


def check_violation_derivative(
    traj, p, c, eta_max, t0, min_violation=1e-3, eta_fn=None, centre_radius=CENTRE_RADIUS
) -> float:
    """Max residual between the Euler difference quotient of l and its predicted rate.

    Returns 0 when no state qualifies (e.g. a trajectory that stays feasible).
    The residual is O(1/K) for curved hinges and zero up to rounding for
    half-spaces, where l is exactly linear along each step.
    """
    r = violation_rate_residuals(traj, p, c, eta_max, t0, min_violation, eta_fn, centre_radius)
    return float(r.max()) if r.size else 0.0


def count_excluded_steps(traj, c, min_violation=1e-3, centre_radius=CENTRE_RADIUS) -> tuple[int, int]:
    """``(kink crossings, near-centre steps)`` among steps starting with ``l > min_violation``."""
    kinks = near = 0
    for k in range(traj.K):
        xk, xn = traj.x[k], traj.x[k + 1]
        live = c.violation(xk) > min_violation
        kink = crosses_kink(c, xk, xn) & live
        kinks += int(kink.sum())
        near += int((near_centre(c, xk, xn, centre_radius) & live & ~kink).sum())
    return kinks, near


def residual_ratio_test(residuals: dict[int, float], band=(0.25, 0.75), exact_tol=1e-9):
    """First-order convergence check over a doubling sequence of step counts.

    ``residuals`` maps K to the max residual. Each doubling must shrink the
    residual to within 50% of one half. Residuals that are already at rounding
    level (``exact_tol``) count as passing.
    """
    ks = sorted(residuals)
    ratios = []
    ok = True
    for a, b in zip(ks[:-1], ks[1:]):
        ra, rb = residuals[a], residuals[b]
        if ra <= exact_tol and rb <= exact_tol:
            ratios.append(None)
            continue
        ratio = rb / ra if ra > 0 else np.inf
        ratios.append(ratio)
        ok &= band[0] <= ratio <= band[1]
    return bool(ok), ratios


# Monotone decrease ----------------------------------------------------------------

def sufficient_eta(x, p: VectorFieldParams, t, c: Constraint):
    """Smallest non-negative ``eta`` making ``grad l . (v - eta grad l) <= 0`` at ``x``.

    Accepts one point or a batch. Rows that are feasible return 0. A violating
    point with a vanishing gradient cannot be certified and raises ``ValueError``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    viol = c.violation(xb)
    g = c.gradient(xb)
    gg = np.sum(g * g, axis=1)
    bad = (viol > 0) & (gg == 0)
    if np.any(bad):
        raise ValueError("violating point with zero constraint gradient: cannot certify descent")
    v = velocity(p, xb, t)
    thr = np.where(viol > 0, np.sum(g * v, axis=1) / np.where(gg > 0, gg, 1.0), 0.0)
    thr = np.maximum(thr, 0.0)
    return float(thr[0]) if single else thr


def certified_descent_run(
    p: VectorFieldParams,
    c: Constraint,
    x_start,
    K: int = 100,
    eta_max: float = 0.0,
    t0: float = 0.3,
    margin: float = 0.1,
) -> Trajectory:
    """Euler integration from ``t0`` to 1 with ``eta`` raised to ``sufficient_eta + margin``.

    Starts at the first grid time after ``t0``. At each step ``eta`` is the larger
    of the regular schedule and the certified threshold plus ``margin``.
    """
    x = np.array(np.atleast_2d(x_start), dtype=np.float64)
    k0 = int(np.floor(t0 * K)) + 1
    ts = time_grid(K)[k0:]
    dt = 1.0 / K
    states = [x.copy()]
    for k in range(k0, K):
        t = k * dt
        v = velocity(p, x, t)
        g = c.gradient(x)
        eta = np.maximum(eta_schedule(t, eta_max, t0), sufficient_eta(x, p, t, c) + margin)
        x = x + dt * (v - eta[:, None] * g)
        states.append(x.copy())
    return Trajectory(ts, np.stack(states))


def check_monotone(traj: Trajectory, c: Constraint, tol: float = 1e-8, skip_kinks: bool = True):
    """Per-step check that ``l`` does not grow from any violating state.

    Steps whose segment crosses a hinge boundary are left out when ``skip_kinks``
    is set (``l`` is not differentiable there) and counted separately.
    Returns ``(holds, worst_increase, n_checked, n_kink)``.
    """
    worst = -np.inf
    n = 0
    n_kink = 0
    for k in range(traj.K):
        xk, xn = traj.x[k], traj.x[k + 1]
        lk = c.violation(xk)
        ln = c.violation(xn)
        mask = lk > 0
        if skip_kinks:
            kink = mask & crosses_kink(c, xk, xn)
            n_kink += int(kink.sum())
            mask &= ~kink
        if np.any(mask):
            worst = max(worst, float(np.max(ln[mask] - lk[mask])))
            n += int(mask.sum())
    holds = bool(worst <= tol) if n else True
    return holds, (worst if n else 0.0), n, n_kink


# One-step bound ---------------------------------------------------------------------

def check_one_step_bound(x_k, p: VectorFieldParams, t_k, c: Constraint, eta_k, dt, L_l=None):
    """Evaluate both sides of the smoothness-based one-step bound after an Euler update.

    ``L_l`` defaults to the segment-local smoothness bound. Returns
    ``(lhs, rhs, holds, kink)``; rows with ``kink`` set crossed a hinge boundary
    and fall outside the bound's assumptions (``holds`` is reported regardless).
    """
    x = np.atleast_2d(np.asarray(x_k, dtype=np.float64))
    v = velocity(p, x, t_k)
    g = c.gradient(x)
    eta_k = np.broadcast_to(np.asarray(eta_k, dtype=np.float64), (x.shape[0],))
    step = v - eta_k[:, None] * g
    x_next = x + dt * step
    if L_l is None:
        L_l = segment_smoothness(c, x, x_next)
    lhs = c.violation(x_next)
    rhs = (
        c.violation(x)
        + dt * np.sum(g * v, axis=1)
        - eta_k * dt * np.sum(g * g, axis=1)
        + 0.5 * L_l * dt**2 * np.sum(step * step, axis=1)
    )
    holds = lhs <= rhs + BOUND_TOL
    kink = crosses_kink(c, x, x_next)
    return lhs, rhs, holds, kink


# Gronwall deviation bound ----------------------------------------------------------------

def input_jacobian_norms(p: VectorFieldParams, x, t, chunk: int = 256) -> np.ndarray:
    """Spectral norms of ``d v / d x`` at each row of ``x`` (exact for the ReLU MLP)."""
    x = np.atleast_2d(x)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    d = p.d
    out = np.empty(x.shape[0])
    w1 = p.weights[0][:, :d]
    for s in range(0, x.shape[0], chunk):
        _, trace = forward(p, x[s : s + chunk], t[s : s + chunk])
        m1 = (trace.pre[0] > 0)[:, :, None] * w1[None]
        m2 = np.einsum("ij,njk->nik", p.weights[1], m1)
        m2 = (trace.pre[1] > 0)[:, :, None] * m2
        jac = np.einsum("ij,njk->nik", p.weights[2], m2)
        out[s : s + chunk] = np.linalg.norm(jac, ord=2, axis=(1, 2))
    return out


def probe_region(states: np.ndarray, n: int, rng, inflate: float = 0.1) -> np.ndarray:
    """Random points in the convex hull of ``states`` inflated by ``inflate`` about its centroid."""
    states = np.asarray(states).reshape(-1, states.shape[-1])
    centre = states.mean(axis=0)
    i = rng.integers(states.shape[0], size=n)
    j = rng.integers(states.shape[0], size=n)
    w = rng.uniform(size=(n, 1))
    pts = w * states[i] + (1 - w) * states[j]
    return centre + (1.0 + inflate) * (pts - centre)


def estimate_constants(
    p: VectorFieldParams,
    c: Constraint,
    region_samples,
    rng=None,
    times=None,
    pairs=None,
    n_probe: int | None = None,
) -> TheoryConstants:
    """Empirical ``L_v``, ``L_l`` and ``G`` on the probe region.

    ``L_v`` is the largest of the pairwise difference quotients, the exact
    Jacobian norms at the probe points and any explicitly supplied
    ``pairs = (x, y, t)``, times ``LIPSCHITZ_SAFETY``. ``G`` and ``L_l`` use
    closed forms where available.
    """
    region = np.asarray(region_samples, dtype=np.float64)
    region = region.reshape(-1, region.shape[-1])
    if region.shape[0] < 1000:
        raise ValueError(f"need at least 1000 probe points, got {region.shape[0]}")
    rng = np.random.default_rng(0) if rng is None else rng
    n_probe = region.shape[0] if n_probe is None else n_probe
    times = np.linspace(0.0, 1.0, 101) if times is None else np.asarray(times)

    x = probe_region(region, n_probe, rng)
    y = probe_region(region, n_probe, rng)
    t = rng.choice(times, size=n_probe)
    vx = velocity(p, x, t)
    vy = velocity(p, y, t)
    dist = np.linalg.norm(x - y, axis=1)
    keep = dist > 1e-12
    quot = np.linalg.norm(vx - vy, axis=1)[keep] / dist[keep]
    lv_pairs = float(quot.max()) if quot.size else 0.0
    lv_jac = float(input_jacobian_norms(p, x, t).max())
    lv_explicit = 0.0
    if pairs is not None:
        px, py, pt = pairs
        dd = np.linalg.norm(px - py, axis=1)
        keep = dd > 0
        if np.any(keep):
            q = np.linalg.norm(velocity(p, px[keep], pt[keep]) - velocity(p, py[keep], pt[keep]), axis=1)
            lv_explicit = float(np.max(q / dd[keep]))
    L_v = LIPSCHITZ_SAFETY * max(lv_pairs, lv_jac, lv_explicit)

    notes = {
        "L_v_method": f"max(pair quotients, Jacobian norms, trajectory pairs) x {LIPSCHITZ_SAFETY}",
        "L_v_raw": {"pairs": lv_pairs, "jacobian": lv_jac, "explicit": lv_explicit},
        "n_probe": int(n_probe),
    }
    G = analytic_gradient_bound(c)
    if G is None:
        G = float(np.max(np.linalg.norm(c.gradient(x), axis=1)))
        notes["G_method"] = "max |grad l| over probes"
    else:
        notes["G_method"] = "analytic"

    if all(isinstance(leaf, HalfSpace) for leaf in leaves(c)):
        L_l = 0.0
        notes["L_l_method"] = "analytic (piecewise linear)"
    else:
        act = c.violation(x) > 0
        L_l = 0.0
        if act.sum() >= 2:
            xa = x[act]
            ga = c.gradient(xa)
            i = rng.integers(len(xa), size=4 * len(xa))
            j = rng.integers(len(xa), size=4 * len(xa))
            dd = np.linalg.norm(xa[i] - xa[j], axis=1)
            keep = dd > 1e-12
            q = np.linalg.norm(ga[i] - ga[j], axis=1)[keep] / dd[keep]
            L_l = SMOOTHNESS_SAFETY * float(q.max()) if q.size else 0.0
        notes["L_l_method"] = f"pairwise gradient quotients on active probes x {SMOOTHNESS_SAFETY}"
    return TheoryConstants(L_v, L_l, G, notes)


def gronwall_envelope(ts, eta_max, t0, L_v, G) -> np.ndarray:
    """Left-Riemann discretisation of ``int_{t0}^{t} exp(L_v (t - s)) eta(s) G ds`` on the grid."""
    ts = np.asarray(ts)
    dt = ts[1] - ts[0]
    eta = eta_schedule(ts, eta_max, t0)
    env = np.zeros_like(ts)
    for k in range(1, len(ts)):
        s = ts[:k]
        env[k] = np.sum(np.exp(L_v * (ts[k] - s)) * eta[:k]) * G * dt
    return env


def check_gronwall(base: Trajectory, adjusted: Trajectory, eta_max, t0, constants: TheoryConstants):
    """Per-step deviation between the two trajectories against the envelope.

    Returns ``(deviation, envelope, holds)``; deviation has shape ``(K + 1, n)``.
    """
    dev = np.linalg.norm(adjusted.x - base.x, axis=2)
    env = gronwall_envelope(base.t, eta_max, t0, constants.L_v, constants.G)
    holds = bool(np.all(dev <= env[:, None] * (1.0 + GRONWALL_SLACK) + 1e-12))
    return dev, env, holds


def trajectory_constants(p, c, base: Trajectory, adjusted: Trajectory, rng=None, n_probe=2000):
    """Estimate constants on the hull of both trajectories, including the matched state pairs."""
    states = np.concatenate([base.x.reshape(-1, base.x.shape[-1]), adjusted.x.reshape(-1, base.x.shape[-1])])
    if states.shape[0] < 1000:
        reps = int(np.ceil(1000 / states.shape[0]))
        states = np.tile(states, (reps, 1))
    K = base.K
    tt = np.repeat(base.t[:K], base.n)
    px = adjusted.x[:K].reshape(-1, base.x.shape[-1])
    py = base.x[:K].reshape(-1, base.x.shape[-1])
    return estimate_constants(p, c, states, rng=rng, times=base.t, pairs=(px, py, tt), n_probe=n_probe)


# Spurious equilibria -------------------------------------------------------------------

def find_spurious_equilibria(c: Constraint, lo, hi, n_grid: int = 301, tol: float = 1e-3) -> np.ndarray:
    """Grid points where two or more violated pieces have gradients that cancel.

    Such points stall the gradient correction although the conjunction is
    violated. ``lo``/``hi`` bound a 2-d grid box.
    """
    if not isinstance(c, Conjunction):
        raise TypeError("spurious-equilibrium scan needs a conjunction")
    if c.dim != 2:
        raise ValueError("grid scan is implemented for 2-d constraints")
    gx = np.linspace(lo[0], hi[0], n_grid)
    gy = np.linspace(lo[1], hi[1], n_grid)
    X, Y = np.meshgrid(gx, gy, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    grads = [leaf._gradient(pts) for leaf in leaves(c)]
    n_active = sum((np.linalg.norm(g, axis=1) > 0).astype(int) for g in grads)
    total = np.linalg.norm(sum(grads), axis=1)
    return pts[(n_active >= 2) & (total < tol)]
