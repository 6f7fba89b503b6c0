"""Adaptive embedded Runge-Kutta (Dormand-Prince 4/5) for complex ODEs.

The unknown may be any complex ndarray (a vectorized density matrix, a
propagator matrix, or a batch of states); the right-hand side must return
an array of the same shape.  Steps never cross the requested endpoint, so
marching a grid segment-by-segment lands on grid points exactly and short
drive pulses cannot be stepped over.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegrationError

# Dormand-Prince 5(4) tableau, FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B5 - _B4  # weights of the embedded error estimate

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray,
                rtol: float, atol: float) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def integrate_to(rhs, t0: float, t1: float, y0: np.ndarray,
                 rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                 max_step: float | None = None,
                 first_step: float | None = None) -> np.ndarray:
    """Integrate dy/dt = rhs(t, y) from t0 to t1 (t1 >= t0), return y(t1).

    Raises IntegrationError when the controller underflows the step size
    (stiffness) instead of silently returning an inaccurate result.
    """
    span = t1 - t0
    if span < 0.0:
        raise IntegrationError("backward integration is not supported")
    y = np.asarray(y0, dtype=complex)
    if span == 0.0:
        return y.copy()

    h_abs = first_step if first_step is not None else span / 16.0
    if max_step is not None:
        h_abs = min(h_abs, max_step)
    h_abs = min(h_abs, span)
    min_step = max(span, abs(t0), abs(t1)) * 1e-14

    t = t0
    k1 = np.asarray(rhs(t, y))
    stages = [None] * 7
    while True:
        remaining = t1 - t
        if remaining <= min_step:
            # endpoint reached to within time resolution
            break
        h = min(h_abs, remaining)
        if h < min_step:
            raise IntegrationError(
                f"step size underflow at t={t:.6g} (h={h:.3g}): problem too stiff "
                "for the embedded RK45 controller")
        stages[0] = k1
        for i in range(1, 7):
            yi = y + h * sum(a * stages[j] for j, a in enumerate(_A[i]))
            stages[i] = np.asarray(rhs(t + _C[i] * h, yi))
        y_new = y + h * sum(b * stages[j] for j, b in enumerate(_B5) if b != 0.0)
        err = h * sum(e * stages[j] for j, e in enumerate(_E) if e != 0.0)
        norm = _error_norm(err, y, y_new, rtol, atol)
        if norm <= 1.0:
            t = t + h
            y = y_new
            k1 = stages[6]  # FSAL: last stage is the first of the next step
            factor = _MAX_FACTOR if norm == 0.0 else min(
                _MAX_FACTOR, _SAFETY * norm ** -0.2)
            h_abs = h * factor
        else:
            h_abs = h * max(_MIN_FACTOR, _SAFETY * norm ** -0.2)
        if max_step is not None:
            h_abs = min(h_abs, max_step)
    return y


def propagator(generator, t0: float, t1: float, dim: int,
               rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
               max_step: float | None = None,
               first_step: float | None = None) -> np.ndarray:
    """Time-ordered exponential of a linear generator over [t0, t1].

    generator(t) returns the (dim x dim) matrix G(t); the result U solves
    dU/dt = G(t) U, U(t0) = I.  Applying U advances any solution of the
    same linear ODE, so one propagator serves a whole batch of states.
    """
    eye = np.eye(dim, dtype=complex)
    return integrate_to(lambda t, u: generator(t) @ u, t0, t1, eye,
                        rtol=rtol, atol=atol, max_step=max_step,
                        first_step=first_step)
