# Docstring for src/numerics module
"""
numerics.py

Deterministic dense-vector math used by every other module: stable probability
functions, the SGD-with-momentum optimizer, the seeded random-number contract
and the central-difference gradient oracle.

Design goals
------------
- 64-bit floats everywhere; no global random state.
- Every logarithm is taken after clamping at eps_log, so one-hot inputs stay finite.
- Functions are pure: optimizer state and generators are returned or owned
  explicitly by the caller.

Public API
----------
- softmax(logits, temperature=1.0) -> np.ndarray
- softmax_rows(logits) -> np.ndarray
- safe_log(values, eps=eps_log) -> np.ndarray
- cross_entropy(p, q) -> float
- kl_divergence(p, q) -> float
- entropy(p) -> float
- cosine_similarity(a, b) -> float
- normalize(v) -> np.ndarray
- OptimizerState / sgd_momentum_step(params, grads, state) -> (params, state)
- finite_diff_gradient(f, x, h=1e-5) -> np.ndarray
- Rng(seed).child(stream) / Rng.generator
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ..config import NUMERICS_CONFIG
from .validators import NumericFaultError, require_finite, require_non_empty, require_same_length

EPS_LOG = NUMERICS_CONFIG.eps_log
NORM_FLOOR = NUMERICS_CONFIG.norm_floor


def _as_vec(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}.")
    return arr


# --- Probability functions ---------------------------------------------------------

def softmax(logits, temperature: float = 1.0) -> np.ndarray:

    """

    Numerically stable softmax of a single logit vector.

    Args:
        logits:
            Non-empty real vector.
        temperature:
            Positive divisor applied to the logits before exponentiation.

    Returns:
        Probability vector with the same length as `logits`.

    Raises:
        ValueError: empty logits or temperature <= 0.

    """

    z = _as_vec(logits, "logits")
    require_non_empty(z, "logits")
    if not temperature > 0:
        raise ValueError(f"Invalid temperature: {temperature}. Expected temperature > 0.")

    z = z / temperature
    # max-subtraction keeps exp() in range
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax (temperature 1) of an (N, C) logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def safe_log(values, eps: float = EPS_LOG) -> np.ndarray:
    return np.log(np.maximum(np.asarray(values, dtype=np.float64), eps))


def cross_entropy(p, q) -> float:

    """

    -sum_i p_i log q_i, with q clamped at eps_log and 0 * log(.) = 0.

    """

    p = _as_vec(p, "p")
    q = _as_vec(q, "q")
    require_same_length(p, q, "p", "q")
    terms = np.where(p > 0, p * safe_log(q), 0.0)
    return float(-terms.sum())


def kl_divergence(p, q) -> float:

    """

    sum_i p_i log(p_i / q_i), both arguments clamped at eps_log.

    """

    p = _as_vec(p, "p")
    q = _as_vec(q, "q")
    require_same_length(p, q, "p", "q")
    terms = np.where(p > 0, p * (safe_log(p) - safe_log(q)), 0.0)
    return float(terms.sum())


def entropy(p) -> float:
    p = _as_vec(p, "p")
    terms = np.where(p > 0, p * safe_log(p), 0.0)
    return float(-terms.sum())


# --- Geometry on vectors --------------------------------------------------------------

def cosine_similarity(a, b) -> float:

    """

    a.b / (|a| |b|) clamped to [-1, 1].

    Returns 0 when either norm is below the zero-norm floor, so a degenerate
    feature contributes a neutral style-loss term of 1.

    """

    a = _as_vec(a, "a")
    b = _as_vec(b, "b")
    require_same_length(a, b, "a", "b")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def normalize(v) -> np.ndarray:
    v = _as_vec(v, "v")
    n = float(np.linalg.norm(v))
    if n < NORM_FLOOR:
        return np.zeros_like(v)
    return v / n


# --- Optimizer --------------------------------------------------------------------------

@dataclass
class OptimizerState:

    """

    Heavy-ball SGD state for one flat parameter vector.

    velocity starts at zeros; use `OptimizerState.zeros(n, lr, momentum)`.

    """

    velocity: np.ndarray
    learning_rate: float
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError(f"Invalid learning_rate: {self.learning_rate}. Expected > 0.")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"Invalid momentum: {self.momentum}. Expected 0 <= momentum < 1.")
        self.velocity = np.asarray(self.velocity, dtype=np.float64)

    @classmethod
    def zeros(cls, size: int, learning_rate: float, momentum: float = 0.9) -> "OptimizerState":
        return cls(velocity=np.zeros(size, dtype=np.float64), learning_rate=learning_rate, momentum=momentum)


def sgd_momentum_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: OptimizerState,
) -> tuple[np.ndarray, OptimizerState]:

    """

    One SGD step with momentum: v' = m v + g; params' = params - lr v'.

    No dampening, no Nesterov. Inputs are not modified.

    Raises:
        ValueError: length mismatch between params, grads and velocity.
        NumericFaultError: a gradient entry is NaN/Inf (index reported).

    """

    params = _as_vec(params, "params")
    grads = _as_vec(grads, "grads")
    require_same_length(params, grads, "params", "grads")
    require_same_length(params, state.velocity, "params", "velocity")

    require_finite(grads, "gradient")

    velocity = state.momentum * state.velocity + grads
    new_params = params - state.learning_rate * velocity
    return new_params, OptimizerState(
        velocity=velocity, learning_rate=state.learning_rate, momentum=state.momentum
    )


# --- Gradient oracle -----------------------------------------------------------------------

def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x,
    h: float = NUMERICS_CONFIG.fd_step,
) -> np.ndarray:

    """

    Central-difference gradient of a scalar function.

    grad_i = (f(x + h e_i) - f(x - h e_i)) / (2h)

    Raises:
        NumericFaultError: f is non-finite at a perturbed point (coordinate reported).

    """

    x = _as_vec(x, "x").copy()
    if not h > 0:
        raise ValueError(f"Invalid step h: {h}. Expected h > 0.")

    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        f_plus = float(f(x.copy()))
        x[i] = orig - h
        f_minus = float(f(x.copy()))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericFaultError("Non-finite value in finite-difference gradient", index=i)
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


# --- Random numbers -----------------------------------------------------------------------

@dataclass
class Rng:

    """

    Seeded generator: NumPy's PCG64 behind numpy.random.Generator.

    `child(stream)` derives an independent sub-stream from the same seed through
    SeedSequence(seed, spawn_key=(stream,)), so each pipeline stage owns its
    own reproducible stream regardless of how much another stage consumed.

    """

    seed: int
    spawn_key: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"Invalid seed: {self.seed}. Expected an unsigned 64-bit integer.")
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def child(self, stream: int) -> "Rng":
        return Rng(self.seed, spawn_key=(*self.spawn_key, int(stream)))
