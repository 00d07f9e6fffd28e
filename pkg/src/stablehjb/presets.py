"""Named drift and cost presets with declared norms and Lipschitz constants.

Every preset carries the sup-norm bound (and for drifts the Lipschitz
constant) that the problem invariants need, so configurations stay honest
without symbolic differentiation.
"""

import numpy as np

from .ou import TestFunction
from .state import DriftFunction


def _tanh_drift(n_modes, amplitude=0.25, width=1.0):
    def func(x):
        return amplitude * np.tanh(x / width)
    return DriftFunction(func=func, lipschitz=amplitude / width,
                         bound=amplitude * np.sqrt(n_modes), name="tanh")


def _zero_drift(n_modes):
    def func(x):
        return np.zeros_like(np.asarray(x, dtype=float))
    return DriftFunction(func=func, lipschitz=0.0, bound=0.0, name="zero")


def _constant_drift(n_modes, value=0.0):
    value = np.broadcast_to(np.asarray(value, dtype=float), (n_modes,)).copy()

    def func(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(value, x.shape).copy()
    return DriftFunction(func=func, lipschitz=0.0,
                         bound=float(np.linalg.norm(value)), name="constant")


DRIFT_PRESETS = {
    "zero": _zero_drift,
    "constant": _constant_drift,
    "tanh": _tanh_drift,
}


def drift_preset(name, n_modes, **params):
    if name not in DRIFT_PRESETS:
        raise ValueError(f"unknown drift preset {name!r}; "
                         f"choose from {sorted(DRIFT_PRESETS)}")
    return DRIFT_PRESETS[name](n_modes, **params)


def _zero(n_modes):
    def ev(x):
        return np.zeros(np.asarray(x, dtype=float).shape[:-1])

    def gr(x):
        return np.zeros_like(np.asarray(x, dtype=float))
    return TestFunction(eval=ev, grad=gr, bound=0.0, name="zero")


def _constant(n_modes, value=1.0):
    value = float(value)

    def ev(x):
        return np.full(np.asarray(x, dtype=float).shape[:-1], value)

    def gr(x):
        return np.zeros_like(np.asarray(x, dtype=float))
    return TestFunction(eval=ev, grad=gr, bound=abs(value), name="constant")


def _gaussian_bump(n_modes, amplitude=1.0, width=1.0, center=0.0):
    center = np.broadcast_to(np.asarray(center, dtype=float), (n_modes,))

    def ev(x):
        d = np.asarray(x, dtype=float) - center
        return amplitude * np.exp(-0.5 * np.sum(d ** 2, axis=-1) / width ** 2)

    def gr(x):
        d = np.asarray(x, dtype=float) - center
        return ev(x)[..., None] * (-d / width ** 2)
    return TestFunction(eval=ev, grad=gr, bound=abs(amplitude), name="gaussian-bump")


def _smoothed_ramp(n_modes, amplitude=1.0, width=1.0):
    # coordinatewise smoothed ramp, averaged so the bound stays at amplitude
    def ev(x):
        return amplitude * np.mean(np.tanh(np.asarray(x, dtype=float) / width), axis=-1)

    def gr(x):
        x = np.asarray(x, dtype=float)
        return amplitude / (n_modes * width) / np.cosh(x / width) ** 2
    return TestFunction(eval=ev, grad=gr, bound=abs(amplitude), name="smoothed-ramp")


def _sigmoid(n_modes, amplitude=1.0, width=1.0, coord=0):
    # steep single-coordinate sigmoid; width -> 0 approaches a sign function
    def ev(x):
        return amplitude * np.tanh(np.asarray(x, dtype=float)[..., coord] / width)

    def gr(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        out[..., coord] = amplitude / width / np.cosh(x[..., coord] / width) ** 2
        return out
    return TestFunction(eval=ev, grad=gr, bound=abs(amplitude),
                        active_coords=(coord,), name="sigmoid")


def _mollifier(n_modes, amplitude=1.0, support=2.0, coord=0):
    # smooth bump of one coordinate, compactly supported on |x_coord| < support
    def _core(r):
        inside = np.abs(r) < 1.0
        safe = np.where(inside, r, 0.0)
        return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe ** 2)), 0.0)

    def ev(x):
        r = np.asarray(x, dtype=float)[..., coord] / support
        return amplitude * _core(r)

    def gr(x):
        x = np.asarray(x, dtype=float)
        r = x[..., coord] / support
        inside = np.abs(r) < 1.0
        safe = np.where(inside, r, 0.0)
        deriv = np.where(inside,
                         _core(safe) * (-2.0 * safe) / (1.0 - safe ** 2) ** 2 / support,
                         0.0)
        out = np.zeros_like(x)
        out[..., coord] = amplitude * deriv
        return out
    return TestFunction(eval=ev, grad=gr, bound=abs(amplitude),
                        active_coords=(coord,), name="mollifier")


def _linear(n_modes, coefficients=None):
    # unbounded; used where closed-form gradients are wanted (bound undeclared)
    if coefficients is None:
        coefficients = np.zeros(n_modes)
        coefficients[0] = 1.0
    coefficients = np.broadcast_to(np.asarray(coefficients, dtype=float), (n_modes,))

    def ev(x):
        return np.sum(np.asarray(x, dtype=float) * coefficients, axis=-1)

    def gr(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(coefficients, x.shape).copy()
    return TestFunction(eval=ev, grad=gr, bound=None, name="linear")


SCALAR_PRESETS = {
    "zero": _zero,
    "constant": _constant,
    "gaussian-bump": _gaussian_bump,
    "smoothed-ramp": _smoothed_ramp,
    "sigmoid": _sigmoid,
    "mollifier": _mollifier,
    "linear": _linear,
}


def scalar_preset(name, n_modes, **params):
    if name not in SCALAR_PRESETS:
        raise ValueError(f"unknown scalar preset {name!r}; "
                         f"choose from {sorted(SCALAR_PRESETS)}")
    return SCALAR_PRESETS[name](n_modes, **params)
