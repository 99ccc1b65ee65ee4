"""Conditional flow matching with a time-weighted constraint penalty, trained with Adam."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .constraints import Constraint
from .distributions import make_rng
from .network import VectorFieldParams, backward, forward, init_params

log = logging.getLogger(__name__)

LOGIC_MODES = ("interpolant", "endpoint_predictive")


@dataclass
class TrainConfig:
    lambda_max: float = 10.0
    alpha: float = 1.0
    learning_rate: float = 3e-3
    batch_size: int = 256
    iterations: int = 8000
    logic_mode: str = "endpoint_predictive"
    seed: int = 0
    hidden: int = 128

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.logic_mode not in LOGIC_MODES:
            raise ValueError(f"logic_mode must be one of {LOGIC_MODES}, got {self.logic_mode!r}")


@dataclass
class TrainingBatch:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        n = self.x0.shape[0]
        if self.x1.shape != self.x0.shape or self.t.shape != (n,):
            raise ValueError("x0, x1 and t must describe the same number of samples")

    @property
    def xt(self) -> np.ndarray:
        return (1.0 - self.t)[:, None] * self.x0 + self.t[:, None] * self.x1

    @property
    def ut(self) -> np.ndarray:
        return self.x1 - self.x0

    def __len__(self):
        return self.x0.shape[0]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: VectorFieldParams, **kw) -> "AdamState":
        arrays = p.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kw)


@dataclass
class TrainHistory:
    loss_fm: list[float] = field(default_factory=list)
    loss_logic: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.loss_fm)

    def rows(self):
        for i, (a, b) in enumerate(zip(self.loss_fm, self.loss_logic)):
            yield i, a, b


def lambda_schedule(t, lambda_max: float, alpha: float = 1.0):
    return lambda_max * np.power(t, alpha)


def flow_matching_loss_and_grads(p: VectorFieldParams, batch: TrainingBatch):
    """Mean squared regression of ``v(x_t, t)`` onto ``x1 - x0`` and its parameter gradient."""
    v, trace = forward(p, batch.xt, batch.t)
    resid = v - batch.ut
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    grads, _ = backward(p, trace, 2.0 * resid / len(batch))
    return loss, grads


def logic_loss_and_grads(p: VectorFieldParams, batch: TrainingBatch, c: Constraint, cfg: TrainConfig):
    """Time-weighted penalty ``mean(lambda(t) * l(.))``.

    ``interpolant`` scores the straight-line point x_t itself, which does not
    depend on the parameters, so the gradient is exactly zero. ``endpoint_predictive``
    scores the one-step endpoint estimate ``x_t + (1 - t) v(x_t, t)``.
    """
    lam = lambda_schedule(batch.t, cfg.lambda_max, cfg.alpha)
    if cfg.logic_mode == "interpolant":
        loss = float(np.mean(lam * c.violation(batch.xt)))
        return loss, p.zeros_like()
    v, trace = forward(p, batch.xt, batch.t)
    return _endpoint_penalty(p, batch, c, lam, v, trace)


def _endpoint_penalty(p, batch, c, lam, v, trace):
    tail = 1.0 - batch.t
    x_hat = batch.xt + tail[:, None] * v
    loss = float(np.mean(lam * c.violation(x_hat)))
    up = (tail * lam / len(batch))[:, None] * c.gradient(x_hat)
    grads, _ = backward(p, trace, up)
    return loss, grads


def combined_loss_and_grads(p, batch, c, cfg):
    """Both objectives with a single forward/backward pass."""
    xt, ut = batch.xt, batch.ut
    v, trace = forward(p, xt, batch.t)
    resid = v - ut
    loss_fm = float(np.mean(np.sum(resid**2, axis=1)))
    up = 2.0 * resid / len(batch)
    loss_logic = 0.0
    if c is not None:
        lam = lambda_schedule(batch.t, cfg.lambda_max, cfg.alpha)
        if cfg.logic_mode == "interpolant":
            loss_logic = float(np.mean(lam * c.violation(xt)))
        elif cfg.lambda_max > 0:
            tail = 1.0 - batch.t
            x_hat = xt + tail[:, None] * v
            loss_logic = float(np.mean(lam * c.violation(x_hat)))
            up = up + (tail * lam / len(batch))[:, None] * c.gradient(x_hat)
    grads, _ = backward(p, trace, up)
    return loss_fm, loss_logic, grads


def adam_step(state: AdamState, p: VectorFieldParams, grads: VectorFieldParams, lr: float):
    """In-place bias-corrected Adam update of ``p``; returns ``(state, p)``."""
    g_arrays = grads.arrays()
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise FloatingPointError(f"non-finite gradient at optimizer step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for w, g, m, v in zip(p.arrays(), g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, p


def draw_batch(rng: np.random.Generator, sample_target, d: int, batch_size: int) -> TrainingBatch:
    x1 = sample_target(batch_size, rng)
    x0 = rng.standard_normal((batch_size, d))
    t = rng.uniform(0.0, 1.0, size=batch_size)
    return TrainingBatch(x0, x1, t)


def train(cfg: TrainConfig, target, c: Constraint | None = None, callback=None):
    """Run ``cfg.iterations`` Adam steps; returns ``(params, history)``.

    ``target`` is either a distribution with ``.sample(n, rng)`` and ``.dim`` or a
    :class:`~constrained_flow.distributions.CaseStudy` (whose ``sample_target``
    restricts data to the feasible set). Training is a deterministic function of
    ``cfg``.
    """
    if hasattr(target, "sample_target"):
        sample_target = target.sample_target
    else:
        sample_target = target.sample
    d = target.dim
    if c is not None and c.dim != d:
        raise ValueError(f"constraint dimension {c.dim} != target dimension {d}")

    p = init_params(cfg.seed, d, cfg.hidden)
    state = AdamState.for_params(p)
    rng = make_rng(cfg.seed, 1)
    hist = TrainHistory()
    for it in range(cfg.iterations):
        batch = draw_batch(rng, sample_target, d, cfg.batch_size)
        loss_fm, loss_logic, grads = combined_loss_and_grads(p, batch, c, cfg)
        if not (np.isfinite(loss_fm) and np.isfinite(loss_logic)):
            raise FloatingPointError(f"training diverged at iteration {it}")
        adam_step(state, p, grads, cfg.learning_rate)
        hist.loss_fm.append(loss_fm)
        hist.loss_logic.append(loss_logic)
        if callback is not None:
            callback(it, p, loss_fm, loss_logic)
    log.debug("trained %d iterations, final fm loss %.4f", cfg.iterations, hist.loss_fm[-1])
    return p, hist
