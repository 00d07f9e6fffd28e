"""Scikit-learn style front end for the HJB fixed-point solver.

Wraps :func:`stablehjb.hjb.picard_solve` in an estimator so the solver
composes with the wider ecosystem: constructor parameters are stored
verbatim (``get_params`` / ``set_params`` / ``clone`` work as usual),
``fit`` runs the Picard iteration, and the fitted value function is queried
through ``predict`` / ``evaluate`` / ``gradient``.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .hjb import GridSpec, MCSpec, argmin_control, picard_solve
from .validation import as_batch


class MildHJBSolver(BaseEstimator):
    """Fixed-point solver for the mild HJB equation on a tensor grid.

    Parameters
    ----------
    model : SpectralModel
        Truncated operator and noise schedules.
    problem : ProblemSpec
        Drift, costs, control radius and horizon.
    box_halfwidth, nodes_per_axis, time_levels
        Tensor-grid geometry.
    n_mc, seed
        Monte Carlo budget per semigroup evaluation and the base seed of the
        frozen random field.
    tol, max_iter
        Sup-norm Picard stopping rule.
    workers
        Thread count for the independent per-sweep evaluations; the result
        is bitwise independent of it.

    Attributes (after ``fit``)
    --------------------------
    solution_ : HJBSolution
    residual_history_ : ndarray of per-sweep sup-norm residuals
    c1gamma_norm_ : float
    n_sweeps_ : int
    """

    def __init__(self, model=None, problem=None, box_halfwidth=4.0,
                 nodes_per_axis=65, time_levels=16, n_mc=20000, seed=0,
                 tol=1e-4, max_iter=25, workers=1):
        self.model = model
        self.problem = problem
        self.box_halfwidth = box_halfwidth
        self.nodes_per_axis = nodes_per_axis
        self.time_levels = time_levels
        self.n_mc = n_mc
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter
        self.workers = workers

    def fit(self, X=None, y=None):
        """Solve the fixed point; X and y are ignored (the data is the problem)."""
        if self.model is None or self.problem is None:
            raise ValueError("MildHJBSolver requires both model and problem")
        grid = GridSpec(box_halfwidth=self.box_halfwidth,
                        nodes_per_axis=self.nodes_per_axis,
                        time_levels=self.time_levels)
        self.solution_ = picard_solve(self.model, self.problem, grid,
                                      MCSpec(n_mc=self.n_mc, seed=self.seed),
                                      tol=self.tol, max_iter=self.max_iter,
                                      workers=self.workers)
        self.residual_history_ = self.solution_.residual_history
        self.c1gamma_norm_ = self.solution_.c1gamma_norm
        self.n_sweeps_ = int(self.residual_history_.size)
        return self

    def evaluate(self, t, X):
        """Value function u(t, x) at remaining time t for each row of X."""
        check_is_fitted(self, "solution_")
        X = as_batch(X, self.model.n_modes, "X")
        return np.asarray([self.solution_.value_at(t, x) for x in X])

    def predict(self, X):
        """Value at the full horizon, u(T, x)."""
        check_is_fitted(self, "solution_")
        return self.evaluate(self.solution_.horizon, X)

    def gradient(self, t, X):
        """Interpolated spatial gradient Du at the level nearest to t."""
        check_is_fitted(self, "solution_")
        X = as_batch(X, self.model.n_modes, "X")
        level = self.solution_.grid_fn.nearest_level(float(t))
        grad, _ = self.solution_.grid_fn.gradient_at_level(level, X)
        return grad

    def optimal_control(self, t, X):
        """Feedback control argmin over the ball at remaining time t."""
        return argmin_control(self.gradient(t, X), self.solution_.radius)

    def feedback_policy(self):
        """The extracted feedback policy as a control-module object."""
        check_is_fitted(self, "solution_")
        from .control import extract_feedback
        return extract_feedback(self.solution_)
