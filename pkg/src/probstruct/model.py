"""Domain types and the pairwise-distance measurement model.

A structure of ``N`` points is described by a mean coordinate vector laid
out as ``x1 y1 z1 x2 y2 z2 ... xN yN zN`` together with its full
``3N x 3N`` covariance. Constraints relate two points through their
Euclidean distance; the distance noise is a mixture of one or more
Gaussian components.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DegenerateGeometryError, InvalidArgumentError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
DEGENERATE_DISTANCE = 1e-8
WEIGHT_TOL = 1e-9
PSD_JITTER = 1e-10


@dataclass(frozen=True, eq=False)
class StateEstimate:
    """Mean coordinates (Å) and covariance (Å²) of ``n_points`` points."""

    mean: np.ndarray
    cov: np.ndarray
    n_points: int = field(default=None)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n_points = self.n_points
        if n_points is None:
            if mean.size % 3:
                raise InvalidArgumentError(
                    f"mean length {mean.size} is not a multiple of 3")
            n_points = mean.size // 3
        n_points = int(n_points)
        if n_points < 1 or mean.size != 3 * n_points:
            raise InvalidArgumentError(
                f"mean length {mean.size} does not match n_points={n_points}")
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError(
                f"cov shape {cov.shape} does not match mean length {mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise InvalidArgumentError("state contains non-finite values")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "n_points", n_points)

    @classmethod
    def isotropic(cls, mean, variance):
        mean = np.asarray(mean, dtype=float).reshape(-1)
        return cls(mean, float(variance) * np.eye(mean.size))

    @property
    def coords(self) -> np.ndarray:
        """Mean positions as an ``(N, 3)`` array."""
        return self.mean.reshape(self.n_points, 3)

    def with_cov(self, cov) -> "StateEstimate":
        return StateEstimate(self.mean, cov, self.n_points)

    def point_cov(self, k: int) -> np.ndarray:
        s = slice(3 * k, 3 * k + 3)
        return self.cov[s, s]


@dataclass(frozen=True)
class GaussianComponent:
    """One ``(weight, mean, variance)`` branch of a constraint's noise density."""

    weight: float
    mean: float
    variance: float

    def __post_init__(self):
        weight = float(self.weight)
        if not weight > 0.0:
            raise InvalidArgumentError(f"component weight must be > 0, got {weight}")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", max(float(self.variance), VARIANCE_FLOOR))

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


@dataclass(frozen=True)
class MixtureConstraint:
    """Distance constraint between points ``i`` and ``j``.

    A unimodal constraint is the single-component case.
    """

    i: int
    j: int
    components: tuple

    def __post_init__(self):
        i, j = int(self.i), int(self.j)
        if i == j:
            raise InvalidArgumentError(f"constraint joins point {i} to itself")
        if i < 0 or j < 0:
            raise InvalidArgumentError("point indices must be non-negative")
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgumentError("constraint needs at least one component")
        comps = tuple(c if isinstance(c, GaussianComponent) else GaussianComponent(*c)
                      for c in comps)
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InvalidArgumentError(
                f"component weights for ({i}, {j}) sum to {total!r}, not 1")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "components", comps)

    @classmethod
    def unimodal(cls, i, j, mean, variance) -> "MixtureConstraint":
        return cls(i, j, (GaussianComponent(1.0, mean, variance),))

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def is_unimodal(self) -> bool:
        return len(self.components) == 1

    def select(self, k: int) -> "MixtureConstraint":
        """Unimodal constraint made of component ``k`` alone, at weight 1."""
        c = self.components[k]
        return MixtureConstraint(self.i, self.j, (GaussianComponent(1.0, c.mean, c.variance),))


REHEAT_POLICIES = ("stall", "always", "never")


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs shared by the unimodal and mixture solvers.

    ``reheat_policy`` decides when the covariance is reset to
    ``initial_variance * I`` at a cycle boundary: ``"stall"`` when the
    average error is above ``reheat_threshold`` and improved by less than
    ``convergence_tol``; ``"always"`` whenever it is above the threshold;
    ``"never"`` disables reheating. With ``cycle_restart`` each cycle starts
    from the covariance the solver was given rather than the previous
    cycle's contracted one.
    """

    batch_size: int = 20
    branch_cap: int = 64
    max_cycles: int = 40
    convergence_tol: float = 1e-3
    reheat_threshold: float = 0.5
    initial_variance: float = 100.0
    coordinate_range: float = 100.0
    rng_seed: int = 0
    n_jobs: int = 1
    reheat_policy: str = "stall"
    cycle_restart: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.branch_cap < 1:
            raise InvalidArgumentError("branch_cap must be >= 1")
        if self.max_cycles < 1:
            raise InvalidArgumentError("max_cycles must be >= 1")
        if not self.initial_variance > 0:
            raise InvalidArgumentError("initial_variance must be > 0")
        if not self.coordinate_range > 0:
            raise InvalidArgumentError("coordinate_range must be > 0")
        if self.n_jobs < 1:
            raise InvalidArgumentError("n_jobs must be >= 1")
        if self.reheat_policy not in REHEAT_POLICIES:
            raise InvalidArgumentError(
                f"reheat_policy must be one of {REHEAT_POLICIES}, got {self.reheat_policy!r}")


def _check_pair(mean, i, j):
    n = mean.size // 3
    if i == j:
        raise InvalidArgumentError(f"distance between point {i} and itself")
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidArgumentError(f"point index out of range for {n} points: ({i}, {j})")


def distance_h(mean, i: int, j: int) -> float:
    """Euclidean distance between points ``i`` and ``j`` of a mean vector."""
    mean = np.asarray(mean, dtype=float).reshape(-1)
    _check_pair(mean, i, j)
    dx, dy, dz = mean[3 * i:3 * i + 3] - mean[3 * j:3 * j + 3]
    # Same operation order as the vectorized pair distances in ``ekf``.
    return float(np.sqrt(dx * dx + dy * dy + dz * dz))


def distance_jacobian(mean, i: int, j: int) -> np.ndarray:
    """Gradient of ``distance_h`` with respect to the full mean vector.

    Only the six entries belonging to points ``i`` and ``j`` are non-zero:
    the unit vector from ``j`` to ``i`` in the ``i`` slot and its negation
    in the ``j`` slot.
    """
    mean = np.asarray(mean, dtype=float).reshape(-1)
    _check_pair(mean, i, j)
    diff = mean[3 * i:3 * i + 3] - mean[3 * j:3 * j + 3]
    d = distance_h(mean, i, j)
    if d < DEGENERATE_DISTANCE:
        raise DegenerateGeometryError(
            f"points {i} and {j} coincide (d={d:.3g}); Jacobian undefined")
    row = np.zeros(mean.size)
    unit = diff / d
    row[3 * i:3 * i + 3] = unit
    row[3 * j:3 * j + 3] = -unit
    return row


def collapse_mixture(c: MixtureConstraint) -> MixtureConstraint:
    """Single Gaussian with the same first and second moments as ``c``."""
    if c.is_unimodal:
        comp = c.components[0]
        return MixtureConstraint(c.i, c.j, (GaussianComponent(1.0, comp.mean, comp.variance),))
    w = np.array([comp.weight for comp in c.components])
    mu = np.array([comp.mean for comp in c.components])
    var = np.array([comp.variance for comp in c.components])
    m = float(w @ mu)
    # Central form of sum w (var + mu^2) - m^2; avoids cancellation for large means.
    v = float(w @ (var + (mu - m) ** 2))
    return MixtureConstraint(c.i, c.j, (GaussianComponent(1.0, m, v),))


def check_constraints(constraints: Sequence[MixtureConstraint], n_points: int) -> None:
    """Raise if any constraint references a point outside ``range(n_points)``."""
    for k, c in enumerate(constraints):
        if c.i >= n_points or c.j >= n_points:
            raise InvalidArgumentError(
                f"constraint {k} references ({c.i}, {c.j}) but the structure has "
                f"{n_points} points")


def symmetrize_psd(cov: np.ndarray) -> np.ndarray:
    """Symmetrize ``cov`` and clamp any negative eigenvalues to zero.

    A jittered Cholesky factorization serves as the cheap PSD probe; the
    eigendecomposition (and rebuild) only happens when it fails.
    """
    cov = 0.5 * (cov + cov.T)
    probe = cov.copy()
    probe[np.diag_indices_from(probe)] += PSD_JITTER
    try:
        np.linalg.cholesky(probe)
        return cov
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)
