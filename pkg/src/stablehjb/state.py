"""Pathwise solver for the controlled mild state equation.

Noise enters through exact convolution increments (one stable draw per mode
per cell), so the only discretization is the exponential-integrator
treatment of the drift and control: semigroup factors are applied exactly
per mode and the integrand is frozen at the left endpoint of each cell.
Given the frozen noise, the time-grid map is a contraction whenever the
drift Lipschitz constant times the interval length is small, and Picard
iteration on the whole grid converges geometrically; longer intervals are
split into sub-blocks solved in sequence.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import AdmissibilityError, PicardDivergenceError
from .ou import TestFunction
from .stable import RngStream, _as_generator, kernel_scale, sample_standard
from .validation import as_point, check_positive

# whole-interval Picard below this contraction budget, sub-blocks of at most
# _BLOCK_BUDGET above it
_WHOLE_INTERVAL_LIMIT = 0.5
_BLOCK_BUDGET = 0.25


@dataclass(frozen=True)
class DriftFunction:
    """Drift with declared Lipschitz constant and sup-norm bound.

    ``func`` must be vectorized over (..., N) arrays.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    bound: float
    name: str = "custom"

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    """Control-problem data: drift, costs, control radius and horizon."""

    drift: DriftFunction
    running_cost: TestFunction
    terminal_cost: TestFunction
    radius: float
    horizon: float

    def __post_init__(self):
        check_positive(self.radius, "radius")
        check_positive(self.horizon, "horizon")

    @property
    def hamiltonian_lipschitz(self):
        """Lipschitz constant of the Hamiltonian in the gradient slot, R + ||F||_0."""
        return self.radius + self.drift.bound

    def validate(self, n_modes, rng=None, n_probes=32, box=3.0):
        """Spot-check the declared drift constants and the cost functions."""
        if rng is None:
            rng = RngStream(0, 981)
        gen = _as_generator(rng)
        xs = gen.uniform(-box, box, size=(n_probes, n_modes))
        ys = gen.uniform(-box, box, size=(n_probes, n_modes))
        fx = np.asarray(self.drift(xs), dtype=float)
        fy = np.asarray(self.drift(ys), dtype=float)
        norms = np.linalg.norm(fx, axis=-1)
        if np.any(norms > self.drift.bound * (1 + 1e-9) + 1e-12):
            raise ValueError(f"drift {self.drift.name!r} exceeds its declared bound "
                             f"{self.drift.bound}")
        gaps = np.linalg.norm(fx - fy, axis=-1)
        dist = np.linalg.norm(xs - ys, axis=-1)
        if np.any(gaps > self.drift.lipschitz * dist * (1 + 1e-9) + 1e-12):
            raise ValueError(f"drift {self.drift.name!r} violates its declared Lipschitz "
                             f"constant {self.drift.lipschitz}")
        self.running_cost.validate(n_modes, rng.derive("g"))
        self.terminal_cost.validate(n_modes, rng.derive("h"))


@dataclass(frozen=True)
class OpenLoopControl:
    """Piecewise-constant open-loop control on a time grid.

    ``values[j]`` applies on [times[j], times[j+1]); queries before the first
    knot use the first value, queries after the last use the last.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != times.size:
            raise ValueError("values must have shape (len(times), n_modes)")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def control(self, s, x):
        idx = int(np.clip(np.searchsorted(self.times, s, side="right") - 1,
                          0, self.times.size - 1))
        value = self.values[idx]
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.broadcast_to(value, x.shape).copy()
        return value.copy()


@dataclass(frozen=True)
class StatePath:
    """One realized trajectory of the controlled state on a time grid."""

    times: np.ndarray
    states: np.ndarray
    control_values: np.ndarray
    picard_residuals: tuple = ()
    n_sweeps: int = 0


def _cell_weights(model, step):
    # exact per-mode weights of int_0^step exp(-gamma (step - r)) dr
    x = model.gammas * step
    safe = np.where(x > 1e-8, model.gammas, 1.0)
    return np.where(x > 1e-8, -np.expm1(-x) / safe, step * (1.0 - 0.5 * x))


def _admissible(controls, radius, where):
    norms = np.linalg.norm(controls, axis=-1)
    limit = radius * (1.0 + 1e-9) + 1e-12
    if np.any(norms > limit):
        worst = float(np.max(norms))
        raise AdmissibilityError(
            f"policy returned |a| = {worst:.6g} > R = {radius} at {where}")
    over = norms > radius
    if np.any(over):
        controls = controls.copy()
        controls[over] *= (radius / norms[over])[..., None]
    return controls


def solve_paths_batch(model, problem, policy, t0, x0, step, z_std,
                      picard_tol=1e-10, picard_max=40):
    """Solve a batch of state paths sharing the grid, one per row of z_std.

    ``z_std`` holds standard stable draws of shape (n_paths, n_cells, N); the
    caller owns the stream, which is what makes common-random-number
    comparisons across policies possible.  Returns (times, states, controls,
    residual_blocks, n_sweeps) with states and controls of shape
    (n_paths, n_cells + 1, N).
    """
    n_paths, n_cells, n_modes = z_std.shape
    T = problem.horizon
    times = t0 + step * np.arange(n_cells + 1)
    f = np.exp(-model.gammas * step)
    w = _cell_weights(model, step)
    scales = kernel_scale(model.gammas, model.betas, model.alpha, step)
    inc = scales * z_std

    lip = problem.drift.lipschitz
    span = n_cells * step
    if lip * span < _WHOLE_INTERVAL_LIMIT:
        blocks = [(0, n_cells)]
    else:
        n_blocks = max(1, math.ceil(lip * span / _BLOCK_BUDGET))
        per = max(1, math.ceil(n_cells / n_blocks))
        blocks = [(k0, min(k0 + per, n_cells)) for k0 in range(0, n_cells, per)]

    states = np.empty((n_paths, n_cells + 1, n_modes))
    states[:, 0] = x0
    controls = np.empty((n_paths, n_cells + 1, n_modes))
    residual_blocks = []
    total_sweeps = 0
    xb = np.array(x0, dtype=float)

    for (k0, k1) in blocks:
        K = k1 - k0
        Wb = np.zeros((n_paths, K + 1, n_modes))
        for kk in range(K):
            Wb[:, kk + 1] = f * Wb[:, kk] + inc[:, k0 + kk]
        powers = f[None, :] ** np.arange(K + 1)[:, None]
        Y = powers[None, :, :] * xb[:, None, :]
        res_hist = []
        converged = False
        for _ in range(picard_max):
            X = Y + Wb
            A = np.empty((n_paths, K, n_modes))
            for j in range(K):
                a = np.asarray(policy.control(times[k0 + j], X[:, j]), dtype=float)
                A[:, j] = _admissible(a, problem.radius, f"s = {times[k0 + j]:.6g}")
            G = problem.drift(X[:, :-1]) + A
            Ynew = np.empty_like(Y)
            Ynew[:, 0] = xb
            V = np.zeros((n_paths, n_modes))
            for kk in range(K):
                V = f * V + w * G[:, kk]
                Ynew[:, kk + 1] = powers[kk + 1] * xb + V
            res = float(np.max(np.abs(Ynew - Y))) if Y.size else 0.0
            res_hist.append(res)
            Y = Ynew
            total_sweeps += 1
            if res < picard_tol:
                converged = True
                break
        if not converged:
            raise PicardDivergenceError(
                f"state Picard iteration did not reach tol {picard_tol:.3g} within "
                f"{picard_max} sweeps; drift Lipschitz x block width = {lip * K * step:.4g}",
                empirical_factor=(res_hist[-1] / res_hist[-2]
                                  if len(res_hist) > 1 and res_hist[-2] > 0 else None),
                analytic_factor=lip * K * step,
                residuals=res_hist)
        residual_blocks.append(tuple(res_hist))
        Xb = Y + Wb
        states[:, k0:k1 + 1] = Xb
        for j in range(K):
            controls[:, k0 + j] = _admissible(
                np.asarray(policy.control(times[k0 + j], Xb[:, j]), dtype=float),
                problem.radius, "final pass")
        xb = Xb[:, -1]

    controls[:, n_cells] = _admissible(
        np.asarray(policy.control(times[n_cells], states[:, n_cells]), dtype=float),
        problem.radius, "terminal time")
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("state path contains non-finite values")
    return times, states, controls, tuple(residual_blocks), total_sweeps


def solve_state_path(model, problem, policy, t0, x, step, noise_rng,
                     picard_tol=1e-10, picard_max=40):
    """Solve one state path on [t0, T] by per-block Picard iteration.

    The noise is drawn cell by cell from ``noise_rng`` (an RngStream or an
    already-instantiated numpy Generator, which keeps its state, so a solve
    on [t0, t1] followed by a solve on [t1, T] with the same Generator
    consumes the same draws as a single solve on [t0, T]).
    """
    x = as_point(x, model.n_modes)
    T = problem.horizon
    if not 0.0 <= t0 < T:
        raise ValueError(f"t0 must lie in [0, T), got {t0}")
    check_positive(step, "step")
    n_cells = int(round((T - t0) / step))
    if n_cells < 1 or abs(n_cells * step - (T - t0)) > 1e-9 * max(1.0, T):
        raise ValueError(f"step {step} does not divide T - t0 = {T - t0}")
    step = (T - t0) / n_cells
    gen = _as_generator(noise_rng)
    z = np.empty((1, n_cells, model.n_modes))
    for k in range(n_cells):
        z[0, k] = sample_standard(model.alpha, gen, size=model.n_modes)
    times, states, controls, residual_blocks, n_sweeps = solve_paths_batch(
        model, problem, policy, t0, x[None, :], step, z,
        picard_tol=picard_tol, picard_max=picard_max)
    return StatePath(times=times, states=states[0], control_values=controls[0],
                     picard_residuals=residual_blocks, n_sweeps=n_sweeps)
