"""Dense numeric kernels: one-hidden-layer MLPs with explicit backprop, Adam,
softmax cross-entropy and a central-difference gradient checker.

Everything works on float64 numpy arrays and is pure: no function mutates its
inputs, and the optimizer returns fresh arrays and a fresh state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


def check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {what}")
    return a


def l2_norm(x) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(x, dtype=np.float64)))))


def relu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, 0.0)


def relu_grad(pre: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return np.where(pre > 0, d_out, 0.0)


@dataclass
class MLPParams:
    """Weights of ``relu(X @ W1 + b1) @ W2 + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        d_in, d_hidden = self.W1.shape
        if self.b1.shape != (d_hidden,) or self.W2.shape[0] != d_hidden:
            raise ValueError("inconsistent hidden width in MLPParams")
        if self.b2.shape != (self.W2.shape[1],):
            raise ValueError("inconsistent output width in MLPParams")

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    @classmethod
    def zeros(cls, d_in: int, d_hidden: int, d_out: int) -> "MLPParams":
        return cls(
            np.zeros((d_in, d_hidden)),
            np.zeros(d_hidden),
            np.zeros((d_hidden, d_out)),
            np.zeros(d_out),
        )


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out > 0 else 0.0
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int) -> MLPParams:
    return MLPParams(
        glorot_uniform(rng, d_in, d_hidden),
        np.zeros(d_hidden),
        glorot_uniform(rng, d_hidden, d_out),
        np.zeros(d_out),
    )


@dataclass
class MLPCache:
    X: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray


def mlp_forward(p: MLPParams, X: np.ndarray) -> tuple[np.ndarray, MLPCache]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.d_in:
        raise ValueError(f"mlp input has shape {X.shape}, expected (*, {p.d_in})")
    pre = X @ p.W1 + p.b1
    hidden = relu(pre)
    Y = hidden @ p.W2 + p.b2
    return Y, MLPCache(X, pre, hidden)


def mlp_backward(p: MLPParams, cache: MLPCache, dY: np.ndarray) -> tuple[np.ndarray, MLPParams]:
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != (cache.X.shape[0], p.d_out):
        raise ValueError(f"mlp upstream gradient has shape {dY.shape}, expected {(cache.X.shape[0], p.d_out)}")
    dW2 = cache.hidden.T @ dY
    db2 = dY.sum(axis=0)
    dpre = relu_grad(cache.pre, dY @ p.W2.T)
    dW1 = cache.X.T @ dpre
    db1 = dpre.sum(axis=0)
    dX = dpre @ p.W1.T
    return dX, MLPParams(dW1, db1, dW2, db2)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, label: int) -> tuple[float, np.ndarray]:
    logits = check_finite(np.asarray(logits, dtype=np.float64), "logits")
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("softmax_cross_entropy needs a vector of at least 2 logits")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    logp = log_softmax(logits)
    d = np.exp(logp)
    d[label] -= 1.0
    return float(-logp[label]), d


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[Dict[str, np.ndarray], AdamState]:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if set(params) != set(grads):
        raise ValueError("params and grads have different keys")
    if not state.m:
        state = AdamState.for_params(params)
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {k!r}")
        m = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(t, new_m, new_v)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest coordinate-wise ``|a-b| / max(1e-12, |a|+|b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1e-12, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))


def numeric_gradient(
    f: Callable[[Dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> Dict[str, np.ndarray]:
    if h <= 0:
        raise ValueError("step h must be positive")
    work = {k: np.array(a, dtype=np.float64, copy=True) for k, a in params.items()}
    out = {}
    for k, a in work.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(work)
            flat[i] = orig - h
            fm = f(work)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"objective is non-finite near {k}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * h)
        out[k] = g
    return out


def grad_check(
    f: Callable[[Dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``f``."""
    numeric = numeric_gradient(f, params, h)
    err = 0.0
    for k in params:
        err = max(err, relative_error(analytic[k], numeric[k]))
    return err
