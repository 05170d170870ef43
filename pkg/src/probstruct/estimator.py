"""scikit-learn style front end.

``X`` is a sequence of constraints: :class:`MixtureConstraint` objects or
dicts in the constraint-file layout. Fitting estimates the point
coordinates and their covariance::

    est = ConstraintStructureEstimator(mode="pipeline", random_state=3)
    est.fit(constraints)
    est.coords_              # (N, 3) mean positions
    est.covariance_          # (3N, 3N)
    est.predict([(0, 5)])    # fitted distance between points 0 and 5
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ekf import satisfaction_errors, solve_unimodal
from .exceptions import InvalidArgumentError
from .io import constraints_from_list
from .metrics import rmsd_superposed
from .mixture import run_pipeline, solve_multicomponent
from .model import MixtureConstraint, SolverConfig, StateEstimate, collapse_mixture
from .synth import random_start

MODES = ("unimodal", "multicomponent", "pipeline")


def check_constraint_input(X) -> list:
    """Coerce ``X`` to a non-empty list of :class:`MixtureConstraint`."""
    if isinstance(X, MixtureConstraint):
        X = [X]
    X = list(X)
    if not X:
        raise InvalidArgumentError("X must contain at least one constraint")
    if all(isinstance(c, MixtureConstraint) for c in X):
        return X
    if all(isinstance(c, dict) for c in X):
        return constraints_from_list(X)
    raise InvalidArgumentError(
        "X must hold MixtureConstraint objects or constraint-file dicts")


def check_pairs(X, n_points: int) -> np.ndarray:
    """Validate an ``(k, 2)`` integer array of point pairs, or a constraint list."""
    if len(X) and isinstance(X[0], (MixtureConstraint, dict)):
        X = [(c.i, c.j) for c in check_constraint_input(X)]
    pairs = np.asarray(X)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise InvalidArgumentError(f"expected (k, 2) point pairs, got shape {pairs.shape}")
    if not np.issubdtype(pairs.dtype, np.integer):
        if not np.all(np.mod(pairs, 1) == 0):
            raise InvalidArgumentError("point indices must be integers")
        pairs = pairs.astype(int)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_points):
        raise InvalidArgumentError(f"point index out of range for {n_points} points")
    return pairs


def _infer_n_points(constraints) -> int:
    return 1 + max(max(c.i, c.j) for c in constraints)


class ConstraintStructureEstimator(BaseEstimator):
    """Estimate point coordinates and covariance from distance constraints.

    Parameters mirror :class:`probstruct.model.SolverConfig`; ``random_state``
    seeds the random starting structure. ``mode`` selects the unimodal
    solver (mixtures are collapsed first), the mixture solver, or the
    warm-start pipeline that chains the two.

    Attributes set by ``fit``: ``state_``, ``coords_``, ``mean_``,
    ``covariance_``, ``n_points_``, ``trace_`` and, in pipeline mode,
    ``warm_trace_`` and ``warm_state_``.
    """

    def __init__(self, mode: str = "pipeline", n_points: Optional[int] = None,
                 batch_size: int = 20, branch_cap: int = 64, max_cycles: int = 40,
                 warm_cycles: int = 15, convergence_tol: float = 1e-3,
                 reheat_threshold: float = 0.5, reheat_policy: str = "stall",
                 cycle_restart: bool = True,
                 initial_variance: float = 100.0, coordinate_range: float = 100.0,
                 random_state: int = 0, n_jobs: int = 1):
        self.mode = mode
        self.n_points = n_points
        self.batch_size = batch_size
        self.branch_cap = branch_cap
        self.max_cycles = max_cycles
        self.warm_cycles = warm_cycles
        self.convergence_tol = convergence_tol
        self.reheat_threshold = reheat_threshold
        self.reheat_policy = reheat_policy
        self.cycle_restart = cycle_restart
        self.initial_variance = initial_variance
        self.coordinate_range = coordinate_range
        self.random_state = random_state
        self.n_jobs = n_jobs

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            batch_size=self.batch_size,
            branch_cap=self.branch_cap,
            max_cycles=self.max_cycles,
            convergence_tol=self.convergence_tol,
            reheat_threshold=self.reheat_threshold,
            initial_variance=self.initial_variance,
            coordinate_range=self.coordinate_range,
            rng_seed=self.random_state,
            n_jobs=self.n_jobs,
            reheat_policy=self.reheat_policy,
            cycle_restart=self.cycle_restart,
        )

    def fit(self, X, y=None, init: Optional[StateEstimate] = None, reference=None):
        """Solve for the structure. ``y`` is ignored.

        ``init`` overrides the random starting structure; ``reference``
        coordinates, when given, add per-cycle RMSD to the trace.
        """
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        constraints = check_constraint_input(X)
        config = self.solver_config()
        n_points = self.n_points or (init.n_points if init is not None
                                     else _infer_n_points(constraints))
        if init is None:
            init = random_start(n_points, config)
        elif init.n_points != n_points:
            raise InvalidArgumentError("init has a different number of points than n_points")

        self.warm_trace_ = None
        self.warm_state_ = None
        if self.mode == "unimodal":
            collapsed = [collapse_mixture(c) for c in constraints]
            state, trace = solve_unimodal(init, collapsed, config, reference)
        elif self.mode == "multicomponent":
            state, trace = solve_multicomponent(init, constraints, config, reference)
        else:
            result = run_pipeline(init, constraints, config, self.warm_cycles, reference)
            state, trace = result.state, result.trace
            self.warm_trace_ = result.warm_trace
            self.warm_state_ = result.warm_state

        self.state_ = state
        self.trace_ = trace
        self.n_points_ = state.n_points
        self.mean_ = state.mean
        self.coords_ = state.coords
        self.covariance_ = state.cov
        return self

    def predict(self, X) -> np.ndarray:
        """Fitted distances for point pairs (``(k, 2)`` indices or constraints)."""
        check_is_fitted(self, "state_")
        pairs = check_pairs(X, self.n_points_)
        xyz = self.coords_
        return np.linalg.norm(xyz[pairs[:, 0]] - xyz[pairs[:, 1]], axis=1)

    def transform(self, X) -> np.ndarray:
        """Per-constraint satisfaction error (SD units) at the fitted structure."""
        check_is_fitted(self, "state_")
        constraints = check_constraint_input(X)
        check_pairs([(c.i, c.j) for c in constraints], self.n_points_)
        return satisfaction_errors(self.state_, constraints)

    def fit_transform(self, X, y=None, **fit_params) -> np.ndarray:
        return self.fit(X, y, **fit_params).transform(X)

    def score(self, X, y=None) -> float:
        """Negative average satisfaction error; with ``y`` coordinates, negative RMSD."""
        check_is_fitted(self, "state_")
        if y is not None:
            return -rmsd_superposed(self.coords_, y, allow_reflection=True).rmsd
        return -float(self.transform(X).mean())
