"""Violation rate, average violation and Gaussian-kernel MMD."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .constraints import Constraint, HalfSpace


@dataclass
class MetricsReport:
    violation_rate_pct: float
    avg_violation: float
    mmd: float
    n_samples: int
    seed: int

    @property
    def mmd_e3(self) -> float:
        return 1e3 * self.mmd

    def as_dict(self):
        return asdict(self)


def _nonempty(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) sample array")
    return x


def violation_rate(samples, c: Constraint) -> float:
    """Percentage of samples with strictly positive violation."""
    x = _nonempty(samples)
    return 100.0 * np.count_nonzero(c.violation(x) > 0.0) / x.shape[0]


def avg_violation(samples, c: Constraint) -> float:
    """Mean violation over all samples (feasible ones count as zero).

    The sum is correctly rounded, so the value does not depend on summation order.
    """
    x = _nonempty(samples)
    return math.fsum(c.violation(x)) / len(x)


def _gram(a, b, sigma):
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * sigma**2))


def mmd_squared(a, b, sigma: float = 1.0) -> float:
    """Biased (V-statistic) squared MMD with ``k(x, y) = exp(-|x - y|^2 / (2 sigma^2))``.

    The cross term is averaged over both orientations of the Gram matrix, so the
    estimate is exactly symmetric in ``a`` and ``b``.
    """
    a = _nonempty(a)
    b = _nonempty(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    k_ab = _gram(a, b, sigma)
    cross = 0.5 * (np.mean(k_ab) + np.mean(np.ascontiguousarray(k_ab.T)))
    k_aa = np.mean(_gram(a, a, sigma))
    k_bb = np.mean(_gram(b, b, sigma))
    return float((k_aa + k_bb) - 2.0 * cross)


def mmd(a, b, sigma: float = 1.0) -> float:
    """Square root of the biased squared MMD, clipped at zero."""
    return float(np.sqrt(max(mmd_squared(a, b, sigma), 0.0)))


def evaluate_samples(samples, reference, c: Constraint, sigma: float = 1.0, seed: int = 0):
    samples = _nonempty(samples)
    return MetricsReport(
        violation_rate(samples, c),
        avg_violation(samples, c),
        mmd(samples, reference, sigma),
        samples.shape[0],
        seed,
    )


def contaminate_halfspace(samples, c: HalfSpace, fraction: float, depth: float, rng):
    """Reflect a random ``fraction`` of rows across the half-space boundary.

    Reflected points are pushed further if needed so that each lies at least
    ``depth`` (Euclidean) inside the infeasible side.
    """
    if not isinstance(c, HalfSpace):
        raise TypeError("contamination is defined for half-space constraints")
    x = np.array(samples, dtype=np.float64, copy=True)
    n_move = int(round(fraction * x.shape[0]))
    if n_move == 0:
        return x
    idx = rng.choice(x.shape[0], size=n_move, replace=False)
    unit = c.a / np.linalg.norm(c.a)
    signed = (x[idx] @ c.a - c.b) / np.linalg.norm(c.a)  # distance into the feasible side
    reflected = x[idx] - 2.0 * signed[:, None] * unit
    depth_now = -(reflected @ c.a - c.b) / np.linalg.norm(c.a)
    extra = np.maximum(0.0, depth - depth_now)
    x[idx] = reflected - extra[:, None] * unit
    return x


def support_mismatch_probe(feasible, contaminated, reference, c: Constraint, sigma: float = 1.0):
    """MMD of the clean and contaminated sets against a feasible reference."""
    ref = _nonempty(reference)
    if np.any(c.violation(ref) > 0):
        raise ValueError("reference set must be entirely feasible")
    return mmd(feasible, ref, sigma), mmd(contaminated, ref, sigma)


def contaminate(samples, c: Constraint, fraction: float, depth: float, rng, max_rounds: int = 200):
    """Move a random ``fraction`` of rows to points with violation at least ``depth``.

    Half-spaces use :func:`contaminate_halfspace`. Other constraints replace the
    chosen rows with uniform draws from the samples' bounding box (padded by 1)
    that are at least ``depth`` deep in the infeasible set.
    """
    if isinstance(c, HalfSpace):
        return contaminate_halfspace(samples, c, fraction, depth, rng)
    x = np.array(samples, dtype=np.float64, copy=True)
    n_move = int(round(fraction * x.shape[0]))
    if n_move == 0:
        return x
    idx = rng.choice(x.shape[0], size=n_move, replace=False)
    lo, hi = x.min(axis=0) - 1.0, x.max(axis=0) + 1.0
    found = []
    have = 0
    for _ in range(max_rounds):
        cand = rng.uniform(lo, hi, size=(4 * n_move, x.shape[1]))
        cand = cand[c.violation(cand) >= depth]
        found.append(cand)
        have += len(cand)
        if have >= n_move:
            x[idx] = np.concatenate(found)[:n_move]
            return x
    raise RuntimeError(f"no infeasible region of depth {depth} found near the samples")
