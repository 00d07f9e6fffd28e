"""Cost-functional Monte Carlo, feedback extraction, and value-function verification.

The verification hinges on the identity relating the solved value function
u, the cost J of an arbitrary admissible policy, and the expected pathwise
bracket

    inf_{|l| <= R} (<l, Du> + |l|^2/2) - |a|^2/2 - <Du, a>,

which is nonpositive for every policy and vanishes along the feedback
extracted from u.  The bracket is evaluated with the same interpolated Du
the feedback uses, so its vanishing at the extracted policy is an identity
up to interpolation, not a Monte Carlo statement.
"""

from dataclasses import dataclass

import numpy as np

from .hjb import argmin_control, hamiltonian_inf
from .stable import RngStream, _as_generator, sample_standard
from .state import solve_paths_batch
from .validation import as_point, check_positive_int


class FeedbackPolicy:
    """Admissible policy with values in the control ball.

    Three kinds: ``from_solution`` plays argmin_control(Du(T - s, x), R)
    with the gradient interpolated in space and snapped to the nearest time
    level; ``constant`` plays a fixed vector; ``custom`` wraps a callable
    (s, x) -> a.  Outputs are projected onto the ball; projections that
    exceed the numerical slack 1e-12 are counted in ``clip_count``.
    """

    def __init__(self, kind, radius, solution=None, value=None, func=None):
        if kind not in ("from_solution", "constant", "custom"):
            raise ValueError(f"unknown policy kind {kind!r}")
        self.kind = kind
        self.radius = float(radius)
        self.solution = solution
        self.value = None if value is None else np.asarray(value, dtype=float)
        self.func = func
        self.clip_count = 0
        self.eval_count = 0
        self.grid_clip_count = 0

    @classmethod
    def from_solution(cls, solution):
        return cls("from_solution", solution.radius, solution=solution)

    @classmethod
    def constant(cls, value, radius):
        value = np.asarray(value, dtype=float)
        if np.linalg.norm(value) > radius * (1 + 1e-9) + 1e-12:
            raise ValueError(f"constant control |a| = {np.linalg.norm(value):.6g} "
                             f"lies outside the ball of radius {radius}")
        return cls("constant", radius, value=value)

    @classmethod
    def custom(cls, func, radius):
        return cls("custom", radius, func=func)

    def reset_counters(self):
        self.clip_count = 0
        self.eval_count = 0
        self.grid_clip_count = 0

    def _project(self, a):
        norms = np.linalg.norm(a, axis=-1)
        self.eval_count += a.shape[0] if a.ndim == 2 else 1
        over = norms > self.radius
        if np.any(over):
            self.clip_count += int(np.count_nonzero(norms > self.radius * (1 + 1e-12)))
            a = np.array(a, dtype=float)
            scale = self.radius / norms[over]
            if a.ndim == 2:
                a[over] *= scale[..., None]
            else:
                a = a * scale
        return a

    def control(self, s, x):
        x = np.asarray(x, dtype=float)
        batch = x.ndim == 2
        if self.kind == "constant":
            out = np.broadcast_to(self.value, x.shape).copy() if batch else self.value.copy()
            return self._project(out)
        if self.kind == "custom":
            out = np.asarray(self.func(s, x), dtype=float)
            if batch and out.ndim == 1:
                out = np.broadcast_to(out, x.shape).copy()
            return self._project(out)
        # feedback from the solved value function
        sol = self.solution
        T = sol.horizon
        if s < -1e-12 or s > T + 1e-12:
            raise ValueError(f"feedback queried at s = {s}, outside [0, {T}]")
        tau = min(max(T - s, 0.0), T)
        level = sol.grid_fn.nearest_level(tau)
        pts = x if batch else x[None, :]
        du, n_clipped = sol.grid_fn.gradient_at_level(level, pts)
        self.grid_clip_count += n_clipped
        out = argmin_control(du, self.radius)
        return self._project(out if batch else out[0])

    @property
    def clipped_fraction(self):
        return self.grid_clip_count / max(self.eval_count, 1)


@dataclass(frozen=True)
class CostEstimate:
    """Monte Carlo estimate of the cost functional for one policy."""

    mean: float
    std_error: float
    n_paths: int
    clipped_fraction: float

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ValueError("cost mean must be finite")
        if self.std_error < 0.0:
            raise ValueError("std_error must be >= 0")


@dataclass(frozen=True)
class FundamentalResidual:
    """Pieces of the fundamental identity u(T - t0, x) = J + E[integral of bracket]."""

    lhs: float
    rhs: CostEstimate
    bracket_mean: float
    bracket_std_error: float


def _draw_noise(model, n_paths, n_cells, rng):
    gen = _as_generator(rng)
    return sample_standard(model.alpha, gen,
                           size=(n_paths, n_cells, model.n_modes))


def _trapezoid_weights(n_nodes, step):
    w = np.full(n_nodes, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _n_cells(problem, t0, step):
    n = int(round((problem.horizon - t0) / step))
    if n < 1 or abs(n * step - (problem.horizon - t0)) > 1e-9 * max(1.0, problem.horizon):
        raise ValueError(f"step {step} does not divide T - t0 = {problem.horizon - t0}")
    return n


def _run_paths(model, problem, policy, t0, x, step, z):
    policy.reset_counters()
    times, states, controls, _, _ = solve_paths_batch(
        model, problem, policy, t0, x, step, z)
    return times, states, controls


def _cost_from_paths(problem, times, states, controls, policy, n_paths):
    step = times[1] - times[0]
    g_vals = np.asarray(problem.running_cost.eval(states), dtype=float)
    run = g_vals + 0.5 * np.sum(controls ** 2, axis=-1)
    w = _trapezoid_weights(times.size, step)
    totals = run @ w + np.asarray(problem.terminal_cost.eval(states[:, -1]), dtype=float)
    mean = float(np.mean(totals))
    se = float(np.std(totals, ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return CostEstimate(mean=mean, std_error=se, n_paths=n_paths,
                        clipped_fraction=policy.clipped_fraction)


def cost_of_policy(model, problem, policy, t0, x, step, n_paths, rng):
    """Monte Carlo cost of a policy: trapezoid-in-time running cost plus terminal cost."""
    check_positive_int(n_paths, "n_paths")
    x = as_point(x, model.n_modes)
    n_cells = _n_cells(problem, t0, step)
    z = _draw_noise(model, n_paths, n_cells, rng)
    times, states, controls = _run_paths(model, problem, policy, t0,
                                         x[None, :], step, z)
    return _cost_from_paths(problem, times, states, controls, policy, n_paths)


def extract_feedback(solution):
    """Feedback policy argmin_control(Du(T - s, x), R) from a converged solution."""
    if not solution.converged:
        raise ValueError("cannot extract feedback from a non-converged solution")
    return FeedbackPolicy.from_solution(solution)


def _bracket_along_paths(solution, times, states, controls):
    """Pathwise bracket integrated over time with the same Du the feedback uses."""
    sol = solution
    T = sol.horizon
    step = times[1] - times[0]
    n_paths, n_nodes, _ = states.shape
    vals = np.empty((n_paths, n_nodes))
    for k in range(n_nodes):
        level = sol.grid_fn.nearest_level(min(max(T - times[k], 0.0), T))
        du, _ = sol.grid_fn.gradient_at_level(level, states[:, k])
        a = controls[:, k]
        vals[:, k] = (hamiltonian_inf(du, sol.radius)
                      - 0.5 * np.sum(a ** 2, axis=-1)
                      - np.sum(du * a, axis=-1))
    w = _trapezoid_weights(n_nodes, step)
    return vals @ w


def fundamental_residual(model, problem, solution, policy, t0, x, step, n_paths, rng):
    """Evaluate the pieces of the fundamental identity at (t0, x) under a policy.

    Returns lhs = u(T - t0, x), rhs = the policy's Monte Carlo cost, and the
    expected time-integrated bracket; the identity asserts
    lhs = rhs.mean + bracket_mean up to grid and Monte Carlo error.  The
    bracket is an exact pathwise upper bound: it is nonpositive for every
    admissible policy and vanishes for the extracted feedback.
    """
    if not solution.converged:
        raise ValueError("verification requires a converged solution")
    x = as_point(x, model.n_modes)
    n_cells = _n_cells(problem, t0, step)
    z = _draw_noise(model, n_paths, n_cells, rng)
    times, states, controls = _run_paths(model, problem, policy, t0,
                                         x[None, :], step, z)
    rhs = _cost_from_paths(problem, times, states, controls, policy, n_paths)
    brackets = _bracket_along_paths(solution, times, states, controls)
    bracket_mean = float(np.mean(brackets))
    bracket_se = (float(np.std(brackets, ddof=1) / np.sqrt(n_paths))
                  if n_paths > 1 else 0.0)
    lhs = float(solution.value_at(problem.horizon - t0, x))
    return FundamentalResidual(lhs=lhs, rhs=rhs, bracket_mean=bracket_mean,
                               bracket_std_error=bracket_se)


def brute_force_value(model, problem, t0, x, policy_family, step, n_paths, rng):
    """Minimum Monte Carlo cost over a finite policy family, common random numbers.

    Every policy sees the same noise array, so comparisons are
    variance-reduced and duplicated policies produce bitwise-identical
    costs.  Ties break toward the lowest index.
    """
    if not policy_family:
        raise ValueError("policy family must be nonempty")
    x = as_point(x, model.n_modes)
    n_cells = _n_cells(problem, t0, step)
    z = _draw_noise(model, n_paths, n_cells, rng)
    costs = []
    for policy in policy_family:
        times, states, controls = _run_paths(model, problem, policy, t0,
                                             x[None, :], step, z)
        costs.append(_cost_from_paths(problem, times, states, controls,
                                      policy, n_paths))
    best_index = int(np.argmin([c.mean for c in costs]))
    return costs[best_index], best_index


def constant_policy_family(n_policies, radius, n_modes, include_zero=True):
    """Deterministic family of constant controls spread over the ball.

    One dimension: evenly spaced values on [-R, R].  Higher dimensions: the
    origin plus seeded directions at radii R/2 and R.
    """
    check_positive_int(n_policies, "n_policies")
    if n_modes == 1:
        values = np.linspace(-radius, radius, n_policies)[:, None]
    else:
        gen = np.random.default_rng(20240)
        values = [np.zeros(n_modes)] if include_zero else []
        radii = [0.5 * radius, radius]
        i = 0
        while len(values) < n_policies:
            direction = gen.normal(size=n_modes)
            direction /= np.linalg.norm(direction)
            values.append(radii[i % 2] * direction)
            i += 1
        values = np.asarray(values[:n_policies])
    return [FeedbackPolicy.constant(v, radius) for v in values]
