"""Base/target distributions and the built-in case studies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .constraints import Annulus, Constraint, Conjunction, HalfSpace, OutsideBall
from .network import hidden_width_for


def make_rng(seed, *stream: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream...)``; streams never overlap."""
    return np.random.default_rng([int(seed), *map(int, stream)])


@dataclass(eq=False)
class GaussianMixture:
    """Mixture of isotropic Gaussians; weights are normalized on construction."""

    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        k = self.means.shape[0]
        self.sigmas = np.broadcast_to(np.asarray(self.sigmas, dtype=np.float64), (k,)).copy()
        self.weights = np.broadcast_to(np.asarray(self.weights, dtype=np.float64), (k,)).copy()
        if np.any(self.sigmas <= 0):
            raise ValueError("mixture sigmas must be > 0")
        if np.any(self.weights < 0) or self.weights.sum() <= 0:
            raise ValueError("mixture weights must be non-negative with positive sum")
        self.weights = self.weights / self.weights.sum()

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng: np.random.Generator, return_labels: bool = False):
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        x = self.means[labels] + self.sigmas[labels, None] * noise
        return (x, labels) if return_labels else x

    def to_config(self) -> dict[str, Any]:
        return {
            "means": self.means.tolist(),
            "sigmas": self.sigmas.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_config(cls, cfg) -> "GaussianMixture":
        means = cfg["means"]
        sig = cfg.get("sigmas", cfg.get("sigma"))
        if sig is None:
            raise ValueError("mixture config needs 'sigma' or 'sigmas'")
        weights = cfg.get("weights", np.ones(len(means)))
        return cls(means, sig, weights)


def sample_base(n: int, d: int, seed) -> np.ndarray:
    """``n`` i.i.d. draws from N(0, I_d)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, d))


def sample_mixture(m: GaussianMixture, n: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return m.sample(n, rng)


def sample_feasible(
    m: GaussianMixture, c: Constraint, n: int, rng: np.random.Generator, max_rounds: int = 1000
) -> np.ndarray:
    """Draw ``n`` mixture samples conditioned on satisfying ``c`` (rejection)."""
    out = []
    have = 0
    for _ in range(max_rounds):
        x = m.sample(max(n - have, 16) * 2, rng)
        x = x[c.violation(x) <= 0.0]
        out.append(x)
        have += len(x)
        if have >= n:
            return np.concatenate(out)[:n]
    raise RuntimeError("rejection sampling failed: feasible region has too little mass")


@dataclass(eq=False)
class CaseStudy:
    name: str
    target: GaussianMixture
    constraint: Constraint
    truncate: bool = True  # data restricted to the feasible set
    hidden: int = 128
    lambda_max: float = 10.0
    eta_max: float = 0.5
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.target.dim

    def sample_target(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.truncate:
            return sample_feasible(self.target, self.constraint, n, rng)
        return self.target.sample(n, rng)

    def check_means_feasible(self) -> None:
        v = self.constraint.violation(self.target.means)
        if np.any(v > 0):
            raise ValueError(f"{self.name}: mixture means violate the constraint: {v}")


# inner/outer mode radii for the ring study, chosen so the unconstrained
# baseline violates at both boundaries at a rate of roughly 5-6%
RING_MODE_RADII = (1.65, 2.3)
CS4_DIMS = (10, 25, 50, 100)
_CS4_MASTER_SEED = 20240604
CS4_MARGIN = 0.75


def _cs4_mixture(d: int, margin: float) -> GaussianMixture:
    # every mean ends at least ``margin`` (Euclidean) inside x . 1 >= 0
    rng = np.random.default_rng([_CS4_MASTER_SEED, d])
    means = rng.standard_normal((4, d))
    target_sum = margin * np.sqrt(d)
    deficit = np.maximum(0.0, target_sum - means.sum(axis=1))
    means = means + deficit[:, None] / d
    return GaussianMixture(means, 0.5, np.ones(4))


def builtin_case_study(
    case_id: int, d: int | None = None, ring_radii=RING_MODE_RADII, cs4_margin: float | None = None
) -> CaseStudy:
    """The four reference problems: half-plane, ring, three obstacles, high-dim half-space.

    ``ring_radii`` sets the (inner, outer) mode radii of case 2; modes alternate
    between them at 0, 90, 180 and 270 degrees.
    """
    case_id = int(case_id)
    if case_id == 1:
        cs = CaseStudy(
            "linear",
            GaussianMixture([[-1.5, 2.0], [2.0, 0.5]], 0.4, [1, 1]),
            HalfSpace([1.0, 1.0], 0.0),
            lambda_max=10.0,
            eta_max=0.5,
        )
    elif case_id == 2:
        r_min, r_max = 1.5, 2.8
        r_in, r_out = ring_radii
        radii = [r_in, r_out, r_in, r_out]
        angles = np.deg2rad([0.0, 90.0, 180.0, 270.0])
        means = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        cs = CaseStudy(
            "ring",
            GaussianMixture(means, 0.45, np.ones(4)),
            Annulus([0.0, 0.0], r_min, r_max),
            lambda_max=15.0,
            eta_max=1.0,
        )
    elif case_id == 3:
        obstacles = Conjunction(
            (
                OutsideBall([0.0, 0.5], 1.2),
                OutsideBall([-1.8, -0.8], 0.9),
                OutsideBall([1.2, 1.8], 0.8),
            )
        )
        cs = CaseStudy(
            "obstacles",
            GaussianMixture([[-2.5, -2.0], [2.5, 2.5], [2.0, -1.5]], 0.4, np.ones(3)),
            obstacles,
            lambda_max=15.0,
            eta_max=1.5,
        )
    elif case_id == 4:
        if d is None:
            raise ValueError("case study 4 needs a dimension d")
        d = int(d)
        if d < 1:
            raise ValueError("d must be >= 1")
        cs = CaseStudy(
            f"highdim_d{d}",
            _cs4_mixture(d, CS4_MARGIN if cs4_margin is None else cs4_margin),
            HalfSpace(np.ones(d), 0.0),
            hidden=hidden_width_for(d),
            lambda_max=10.0,
            eta_max=0.5,
        )
    else:
        raise ValueError(f"unknown case study id {case_id!r} (expected 1-4)")
    cs.meta["id"] = case_id
    cs.check_means_feasible()
    return cs
