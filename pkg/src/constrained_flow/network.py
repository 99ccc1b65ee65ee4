"""Time-conditioned MLP vector field ``v(x, t)`` with hand-written backprop.

Architecture: ``[x; t] -> Linear -> ReLU -> Linear -> ReLU -> Linear``, i.e.
three affine layers with widths ``(d+1) -> h -> h -> d``. Weights are stored
as ``(out, in)`` matrices. All arithmetic is float64.

Every function accepts a batch of points ``x`` with shape ``(n, d)`` and a
time array ``t`` of shape ``(n,)`` (a scalar is broadcast). Single points
``(d,)`` are also accepted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class VectorFieldParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def h(self) -> int:
        return self.weights[0].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W1, b1, W2, b2, W3, b3]`` (views, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays, seed=None) -> "VectorFieldParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2], seed)

    def copy(self) -> "VectorFieldParams":
        return VectorFieldParams.from_arrays([a.copy() for a in self.arrays()], self.seed)

    def zeros_like(self) -> "VectorFieldParams":
        return VectorFieldParams.from_arrays([np.zeros_like(a) for a in self.arrays()], self.seed)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class ForwardTrace:
    inputs: np.ndarray  # (n, d+1)
    pre: list[np.ndarray] = field(default_factory=list)  # hidden pre-activations
    act: list[np.ndarray] = field(default_factory=list)  # hidden activations


def hidden_width_for(d: int) -> int:
    """Default hidden width: 128, widened to ``min(256, 4d)`` for larger inputs."""
    return max(128, min(256, 4 * d))


def init_params(seed: int, d: int, h: int = 128) -> VectorFieldParams:
    """Glorot-uniform weights, zero biases; a deterministic function of ``seed``."""
    if d < 1 or h < 1:
        raise ValueError(f"need d >= 1 and h >= 1, got d={d}, h={h}")
    rng = np.random.default_rng(seed)
    widths = [d + 1, h, h, d]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return VectorFieldParams(weights, biases, seed)


def _inputs(p: VectorFieldParams, x, t) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != p.d:
        raise ValueError(f"expected x with {p.d} columns, got shape {x.shape}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t))):
        raise FloatingPointError("non-finite input to vector field")
    return np.concatenate([x, t[:, None]], axis=1), single


def forward(p: VectorFieldParams, x, t) -> tuple[np.ndarray, ForwardTrace]:
    z, single = _inputs(p, x, t)
    trace = ForwardTrace(inputs=z)
    a = z
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        pre = a @ w.T + b
        a = np.maximum(pre, 0.0)
        trace.pre.append(pre)
        trace.act.append(a)
    v = a @ p.weights[-1].T + p.biases[-1]
    return (v[0] if single else v), trace


def velocity(p: VectorFieldParams, x, t) -> np.ndarray:
    return forward(p, x, t)[0]


def backward(
    p: VectorFieldParams, trace: ForwardTrace, upstream
) -> tuple[VectorFieldParams, np.ndarray]:
    """Gradients of ``sum_i upstream_i . v(x_i, t_i)`` w.r.t. all parameters and inputs.

    Parameter gradients are summed over the batch; the input gradient has one
    row per sample with ``d + 1`` columns (space then time).
    """
    g = np.asarray(upstream, dtype=np.float64)
    n = trace.inputs.shape[0]
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (n, p.d):
        raise ValueError(f"upstream shape {g.shape} does not match output ({n}, {p.d})")

    n_layers = len(p.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    layer_in = [trace.inputs] + trace.act
    for i in reversed(range(n_layers)):
        gw[i] = g.T @ layer_in[i]
        gb[i] = g.sum(axis=0)
        g = g @ p.weights[i]
        if i > 0:
            # ReLU derivative taken as 0 at exactly 0.
            g = g * (trace.pre[i - 1] > 0.0)
    grads = VectorFieldParams(gw, gb, p.seed)
    return grads, g


# Checkpoints -----------------------------------------------------------------

def params_to_dict(p: VectorFieldParams) -> dict:
    layers = []
    for w, b in zip(p.weights, p.biases):
        layers.append(
            {
                "rows": int(w.shape[0]),
                "cols": int(w.shape[1]),
                "weights": [float(v) for v in w.ravel()],
                "bias": [float(v) for v in b],
            }
        )
    return {"d": p.d, "h": p.h, "seed": p.seed, "layers": layers}


def params_from_dict(obj: dict) -> VectorFieldParams:
    weights, biases = [], []
    for layer in obj["layers"]:
        rows, cols = int(layer["rows"]), int(layer["cols"])
        w = np.asarray(layer["weights"], dtype=np.float64)
        if w.size != rows * cols:
            raise ValueError(f"layer declares {rows}x{cols} but has {w.size} weights")
        b = np.asarray(layer["bias"], dtype=np.float64)
        if b.shape != (rows,):
            raise ValueError(f"bias length {b.size} does not match {rows} rows")
        weights.append(w.reshape(rows, cols))
        biases.append(b)
    p = VectorFieldParams(weights, biases, obj.get("seed"))
    if len(weights) != 3 or p.d != int(obj["d"]) or p.h != int(obj["h"]):
        raise ValueError("checkpoint layer shapes do not match its declared d/h")
    if weights[0].shape[1] != p.d + 1 or weights[1].shape != (p.h, p.h):
        raise ValueError("checkpoint layers do not chain (d+1) -> h -> h -> d")
    return p


def save_checkpoint(p: VectorFieldParams, path, extra: dict | None = None) -> Path:
    path = Path(path)
    obj = params_to_dict(p)
    if extra:
        obj["meta"] = extra
    path.parent.mkdir(parents=True, exist_ok=True)
    # repr-style floats round-trip exactly
    path.write_text(json.dumps(obj, indent=1) + "\n")
    return path


def load_checkpoint(path) -> VectorFieldParams:
    return params_from_dict(json.loads(Path(path).read_text()))
