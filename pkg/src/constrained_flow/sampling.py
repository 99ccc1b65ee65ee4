"""Euler sampling of the learned ODE with a late-time constraint-gradient correction.

The integrated field is ``v(x, t) - eta(t) * grad l(x)`` where ``eta`` is zero up
to ``t0`` and then ramps quadratically to ``eta_max`` at ``t = 1``. Velocities
are evaluated at the left end of each step on the grid ``t_k = k / K``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import Constraint
from .distributions import make_rng
from .network import VectorFieldParams, velocity


@dataclass
class SampleConfig:
    K: int = 100
    eta_max: float = 0.0
    t0: float = 0.3
    n_samples: int = 2000
    seed: int = 0
    record_trajectories: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.t0 < 1.0:
            raise ValueError("t0 must lie in [0, 1)")
        if self.eta_max < 0:
            raise ValueError("eta_max must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class Trajectory:
    """States ``x[k]`` at times ``t[k] = k / K``; ``x`` has shape ``(K + 1, n, d)``."""

    t: np.ndarray
    x: np.ndarray

    @property
    def K(self) -> int:
        return len(self.t) - 1

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def single(self, i: int) -> "Trajectory":
        return Trajectory(self.t, self.x[:, i : i + 1])


def eta_schedule(t, eta_max: float, t0: float = 0.3):
    t = np.asarray(t, dtype=np.float64)
    ramp = eta_max * ((t - t0) / (1.0 - t0)) ** 2
    out = np.where(t > t0, ramp, 0.0)
    return float(out) if out.ndim == 0 else out


def time_grid(K: int) -> np.ndarray:
    return np.arange(K + 1, dtype=np.float64) / K


def euler_integrate(
    p: VectorFieldParams,
    x0: np.ndarray,
    c: Constraint | None = None,
    K: int = 100,
    eta_max: float = 0.0,
    t0: float = 0.3,
    record: bool = False,
):
    """Integrate from ``x0`` (shape ``(n, d)``) over ``[0, 1]``.

    Returns the final states, plus a :class:`Trajectory` when ``record`` is set.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    if x.ndim != 2 or x.shape[1] != p.d:
        raise ValueError(f"x0 must have shape (n, {p.d}), got {x.shape}")
    if c is not None and c.dim != p.d:
        raise ValueError(f"constraint dimension {c.dim} != field dimension {p.d}")
    ts = time_grid(K)
    dt = 1.0 / K
    states = [x.copy()] if record else None
    for k in range(K):
        t = k * dt
        v = velocity(p, x, t)
        if c is not None and t > t0 and eta_max > 0:
            eta = eta_max * ((t - t0) / (1.0 - t0)) ** 2
            v = v - eta * c.gradient(x)
        # overflow is caught just below with the step index
        with np.errstate(over="ignore", invalid="ignore"):
            x = x + dt * v
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite state after Euler step {k}")
        if record:
            states.append(x.copy())
    if record:
        return x, Trajectory(ts, np.stack(states))
    return x


def base_samples(cfg: SampleConfig, d: int) -> np.ndarray:
    return make_rng(cfg.seed, 2).standard_normal((cfg.n_samples, d))


def sample(p: VectorFieldParams, c: Constraint | None, cfg: SampleConfig, x0=None):
    """Generate ``cfg.n_samples`` points; returns ``(samples, trajectory or None)``."""
    if x0 is None:
        x0 = base_samples(cfg, p.d)
    out = euler_integrate(p, x0, c, cfg.K, cfg.eta_max, cfg.t0, record=cfg.record_trajectories)
    if cfg.record_trajectories:
        return out
    return out, None


def integrate_pair(p: VectorFieldParams, c: Constraint, cfg: SampleConfig, x0=None):
    """Unadjusted and adjusted trajectories from the same starting points."""
    if x0 is None:
        x0 = base_samples(cfg, p.d)
    _, base = euler_integrate(p, x0, c, cfg.K, 0.0, cfg.t0, record=True)
    _, adjusted = euler_integrate(p, x0, c, cfg.K, cfg.eta_max, cfg.t0, record=True)
    return base, adjusted
