"""Adaptive Dormand-Prince 5(4) stepper with quartic dense output.

One core function is compiled two ways: through numba for right-hand sides
that are themselves jitted (the bundled models), and as plain Python for
arbitrary callables.  Both paths execute the same source, so results agree
to the last bit whenever the floating-point semantics match.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from numba.core.dispatcher import Dispatcher

__all__ = ["step_dense", "is_jitted", "STATUS_OK", "STATUS_UNDERFLOW",
           "STATUS_NONFINITE", "STATUS_MAXSTEPS"]

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAXSTEPS = 3

# Dormand & Prince (1980) coefficients, plus the Shampine quartic
# interpolant used for dense output.
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                                49.0 / 176.0, -5103.0 / 18656.0)
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                                -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

_P = np.array([
    [1.0, -2.8535800653862835, 3.0717434641059005, -1.1270175653862835],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 4.023133379230305, -6.249321565289, 2.675424484351598],
    [0.0, -3.7324019615885042, 10.068970589843675, -5.685526961588504],
    [0.0, 2.5548038301849423, -6.399112377351017, 3.5219323679207912],
    [0.0, -1.3744241142186024, 3.272657752246729, -1.7672812570757455],
    [0.0, 1.3824689317781436, -3.764937863556287, 2.382468931778144],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _core(rhs, t0, t1, y0, theta, ctx, rtol, atol, t_eval, y_out, i_start, max_steps):
    """Advance from t0 to t1, writing dense-output rows of ``y_out`` for every
    ``t_eval`` point in (t0, t1].  Returns (next_eval_index, status, t, y)."""
    n = y0.shape[0]
    n_eval = t_eval.shape[0]
    t = t0
    y = y0.copy()
    k = np.empty((7, n))
    f0 = rhs(t, y, theta, ctx)
    for j in range(n):
        if not np.isfinite(f0[j]):
            return i_start, STATUS_NONFINITE, t, y

    # Hairer-style cheap first-step guess.
    d0 = 0.0
    d1 = 0.0
    for j in range(n):
        sc = atol + rtol * abs(y[j])
        d0 += (y[j] / sc) ** 2
        d1 += (f0[j] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6 * (t1 - t0)
    else:
        h = 0.01 * d0 / d1
    if h > t1 - t0:
        h = t1 - t0

    ie = i_start
    nsteps = 0
    while t < t1:
        nsteps += 1
        if nsteps > max_steps:
            return ie, STATUS_MAXSTEPS, t, y
        if t + h > t1:
            h = t1 - t
        if h <= abs(t) * 1e-15 or h <= 1e-300:
            return ie, STATUS_UNDERFLOW, t, y

        k[0] = f0
        k[1] = rhs(t + _C2 * h, y + h * (_A21 * k[0]), theta, ctx)
        k[2] = rhs(t + _C3 * h, y + h * (_A31 * k[0] + _A32 * k[1]), theta, ctx)
        k[3] = rhs(t + _C4 * h, y + h * (_A41 * k[0] + _A42 * k[1] + _A43 * k[2]), theta, ctx)
        k[4] = rhs(t + _C5 * h, y + h * (_A51 * k[0] + _A52 * k[1] + _A53 * k[2] + _A54 * k[3]),
                   theta, ctx)
        k[5] = rhs(t + h, y + h * (_A61 * k[0] + _A62 * k[1] + _A63 * k[2] + _A64 * k[3]
                                   + _A65 * k[4]), theta, ctx)
        y_new = y + h * (_B1 * k[0] + _B3 * k[2] + _B4 * k[3] + _B5 * k[4] + _B6 * k[5])
        t_new = t + h
        k[6] = rhs(t_new, y_new, theta, ctx)

        err = 0.0
        finite = True
        for j in range(n):
            if not np.isfinite(y_new[j]) or not np.isfinite(k[6, j]):
                finite = False
                break
            e = h * (_E1 * k[0, j] + _E3 * k[2, j] + _E4 * k[3, j]
                     + _E5 * k[4, j] + _E6 * k[5, j] + _E7 * k[6, j])
            sc = atol + rtol * max(abs(y[j]), abs(y_new[j]))
            err += (e / sc) ** 2
        if not finite:
            h *= _MIN_FACTOR
            continue
        err = np.sqrt(err / n)

        if err <= 1.0:
            while ie < n_eval and t_eval[ie] <= t_new + 1e-14 * max(1.0, abs(t_new)):
                x = (t_eval[ie] - t) / h
                x2 = x * x
                x3 = x2 * x
                x4 = x3 * x
                for j in range(n):
                    q1 = 0.0
                    q2 = 0.0
                    q3 = 0.0
                    q4 = 0.0
                    for s in range(7):
                        q1 += k[s, j] * _P[s, 0]
                        q2 += k[s, j] * _P[s, 1]
                        q3 += k[s, j] * _P[s, 2]
                        q4 += k[s, j] * _P[s, 3]
                    y_out[ie, j] = y[j] + h * (q1 * x + q2 * x2 + q3 * x3 + q4 * x4)
                ie += 1
            t = t_new
            y = y_new
            f0 = k[6].copy()  # FSAL: must copy, k is overwritten next step
            if err == 0.0:
                h *= _MAX_FACTOR
            else:
                h *= min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err ** -0.2))
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
    return ie, STATUS_OK, t, y


_core_nb = njit(cache=True)(_core)


def is_jitted(fn) -> bool:
    return isinstance(fn, Dispatcher)


def step_dense(rhs, t0, t1, y0, theta, ctx, rtol, atol, t_eval, y_out, i_start,
               max_steps=200_000):
    """Dispatch to the numba core when ``rhs`` is jitted, else run in Python."""
    core = _core_nb if is_jitted(rhs) else _core
    return core(rhs, float(t0), float(t1), np.asarray(y0, dtype=float),
                np.asarray(theta, dtype=float), ctx, float(rtol), float(atol),
                t_eval, y_out, i_start, max_steps)
