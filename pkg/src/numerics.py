"""
Small dense kernels shared by design and simulation.

Every propagation between events goes through a matrix exponential of an
augmented generator, so flows carry no time-stepping error.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import expm

from .errors import NumericsError
from .models import ExpSum

logger = logging.getLogger(__name__)

DEGENERATE_RATE = 1e-12
FLOW_CHUNK = 4096


def _square(m: ArrayLike, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {m.shape}")
    return m


def _input_matrix(a: np.ndarray, b: ArrayLike) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise NumericsError(f"B must have {a.shape[0]} rows, got shape {b.shape}")
    return b


def matexp(m: ArrayLike, t: float = 1.0) -> np.ndarray:
    """exp(m t) by scaling and squaring with a Pade approximant."""
    return expm(_square(m) * t)


def zoh_flow(
    a: ArrayLike, b: ArrayLike, x0: ArrayLike, u: ArrayLike, dt: float
) -> np.ndarray:
    """State after holding input u for dt seconds, from the augmented exponential."""
    a = _square(a, "A")
    b = _input_matrix(a, b)
    x0 = np.asarray(x0, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    n = a.shape[0]
    if x0.shape != (n,) or u.shape != (b.shape[1],):
        raise NumericsError(
            f"expected x0 of length {n} and u of length {b.shape[1]}, "
            f"got {x0.shape[0]} and {u.shape[0]}"
        )
    if dt < 0:
        raise NumericsError(f"flow duration must be nonnegative, got {dt}")

    generator = np.zeros((n + 1, n + 1))
    generator[:n, :n] = a
    generator[:n, n] = b @ u
    flow = expm(generator * dt)
    return flow[:n, :n] @ x0 + flow[:n, n]


def eval_expsum(env: ExpSum, t: float | ArrayLike) -> float | np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    total = np.zeros_like(t_arr)
    for coefficient, rate in env.terms:
        total = total + coefficient * np.exp(-rate * (t_arr - env.offset_time))
    return float(total) if total.ndim == 0 else total


def exp_envelope_integral(
    theta: float, env: ExpSum, a: float, b: float | ArrayLike
) -> float | np.ndarray:
    """
    Integral of exp(theta (b - tau)) env(tau) over [a, b].

    Each term is integrated in closed form; `b` may be an array of upper limits.
    """
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr < a):
        raise NumericsError(f"integration interval reversed: a={a} > b={b_arr.min()}")

    length = b_arr - a
    total = np.zeros_like(b_arr)
    for coefficient, rate in env.terms:
        k = theta + rate
        scale = coefficient * np.exp(-rate * (b_arr - env.offset_time))
        if abs(k) < DEGENERATE_RATE:
            total = total + scale * length
        else:
            total = total + scale * np.expm1(k * length) / k
    return float(total) if total.ndim == 0 else total


class FlowTable:
    """
    Powers of the augmented ZOH transition for one fixed step.

    Power k maps [x(t); u] to [x(t + k*step); u] for any input u held over the
    whole span, so one table serves every agent sharing (A, B).
    """

    def __init__(self, a: ArrayLike, b: ArrayLike, step: float):
        a = _square(a, "A")
        b = _input_matrix(a, b)
        if step <= 0:
            raise NumericsError(f"flow step must be positive, got {step}")
        self.n, self.m = b.shape
        self.step = step
        generator = np.zeros((self.n + self.m, self.n + self.m))
        generator[: self.n, : self.n] = a
        generator[: self.n, self.n :] = b
        self._unit = expm(generator * step)
        self._powers = np.eye(self.n + self.m)[np.newaxis]

    def powers(self, count: int) -> np.ndarray:
        """Stack of transitions for k = 0..count, grown by doubling."""
        while self._powers.shape[0] <= count:
            top = self._powers[-1] @ self._unit
            self._powers = np.concatenate([self._powers, self._powers @ top])
        return self._powers[: count + 1]

    def transitions(self, count: int) -> np.ndarray:
        """exp(A k step) for k = 0..count."""
        return self.powers(count)[:, : self.n, : self.n]

    def propagate(self, states: ArrayLike, inputs: ArrayLike, count: int) -> np.ndarray:
        """
        States at k = 0..count steps for several trajectories at once.

        `states` is (agents, n) and `inputs` is (agents, m); the result is
        (count + 1, agents, n).
        """
        x = np.atleast_2d(np.asarray(states, dtype=float))
        u = np.atleast_2d(np.asarray(inputs, dtype=float))
        n = self.n
        blocks = [x[np.newaxis]]
        done = 0
        while done < count:
            size = min(count - done, FLOW_CHUNK - 1)
            p = self.powers(size)[1:]
            block = np.einsum("kij,aj->kai", p[:, :n, :n], x) + np.einsum(
                "kij,aj->kai", p[:, :n, n:], u
            )
            blocks.append(block)
            x = block[-1]
            done += size
        return np.concatenate(blocks)
