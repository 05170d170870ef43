"""Unimodal solver: batched extended Kalman measurement updates.

Constraints are introduced in batches, each batch linearized at the mean
current when the batch starts. A cycle introduces every constraint once,
least satisfied first, starting from the refined mean of the previous
cycle. Cycles repeat until the average satisfaction error stops
improving; when it stalls above a threshold the covariance is reset to its
initial value ("reheated") while the refined mean is kept.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import InvalidArgumentError, NumericalFailureError
from .model import (
    DEGENERATE_DISTANCE,
    MixtureConstraint,
    SolverConfig,
    StateEstimate,
    check_constraints,
    distance_h,
    distance_jacobian,
    symmetrize_psd,
)

logger = logging.getLogger(__name__)

UpdateBatch = Sequence[MixtureConstraint]

TRACE_COLUMNS = ("cycle", "avg_error_sd", "max_error_sd", "rmsd_angstrom", "reheated")


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    avg_error: float
    max_error: float
    rmsd: Optional[float]
    reheated: bool


@dataclass
class ConvergenceTrace:
    """Per-cycle error record of a solver run.

    ``initial_avg_error`` and ``initial_max_error`` describe the state handed
    to the solver, before the first cycle.
    """

    records: List[CycleRecord] = field(default_factory=list)
    initial_avg_error: float = float("nan")
    initial_max_error: float = float("nan")
    best_cycle: int = 0

    def append(self, record: CycleRecord) -> None:
        if self.records and record.cycle <= self.records[-1].cycle:
            raise InvalidArgumentError("cycle indices must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def avg_errors(self) -> np.ndarray:
        return np.array([r.avg_error for r in self.records])

    @property
    def max_errors(self) -> np.ndarray:
        return np.array([r.max_error for r in self.records])

    @property
    def n_reheats(self) -> int:
        return sum(r.reheated for r in self.records)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in self.records:
            writer.writerow([
                r.cycle,
                repr(r.avg_error),
                repr(r.max_error),
                "" if r.rmsd is None else repr(r.rmsd),
                int(r.reheated),
            ])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceTrace":
        trace = cls()
        for row in csv.DictReader(io.StringIO(text)):
            trace.append(CycleRecord(
                cycle=int(row["cycle"]),
                avg_error=float(row["avg_error_sd"]),
                max_error=float(row["max_error_sd"]),
                rmsd=float(row["rmsd_angstrom"]) if row["rmsd_angstrom"] else None,
                reheated=bool(int(row["reheated"])),
            ))
        return trace


@dataclass(frozen=True)
class Linearization:
    """Distance model linearized at a state mean for a list of point pairs.

    Every branch of a fan stage shares one linearization; only the
    component means and variances differ between them.
    """

    state: StateEstimate
    pairs: tuple
    H: np.ndarray
    h: np.ndarray
    HC: np.ndarray
    HCHt: np.ndarray


def linearize(state: StateEstimate, pairs) -> Linearization:
    pairs = tuple((int(i), int(j)) for i, j in pairs)
    mean = state.mean
    H = np.empty((len(pairs), mean.size))
    h = np.empty(len(pairs))
    for r, (i, j) in enumerate(pairs):
        H[r] = distance_jacobian(mean, i, j)
        h[r] = distance_h(mean, i, j)
    HC = H @ state.cov
    return Linearization(state, pairs, H, h, HC, HC @ H.T)


def update_linearized(lin: Linearization, z, variances) -> StateEstimate:
    """Kalman measurement update for measurements ``z`` with noise ``variances``."""
    state = lin.state
    S = lin.HCHt.copy()
    S[np.diag_indices_from(S)] += np.asarray(variances, dtype=float)
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        pairs = ", ".join(f"({i},{j})" for i, j in lin.pairs)
        raise NumericalFailureError(
            f"innovation matrix not positive definite for batch [{pairs}]") from exc
    # K^T = S^-1 H C, using the symmetry of C.
    gain_t = cho_solve(factor, lin.HC)
    new_mean = state.mean + gain_t.T @ (np.asarray(z, dtype=float) - lin.h)
    new_cov = symmetrize_psd(state.cov - gain_t.T @ lin.HC)
    return StateEstimate(new_mean, new_cov, state.n_points)


def kalman_update(state: StateEstimate, batch: UpdateBatch) -> StateEstimate:
    """One simultaneous measurement update with ``k`` single-component constraints.

    The gain is ``K = C H^T (H C H^T + R)^-1`` with ``H`` the stacked distance
    Jacobians at the current mean and ``R`` the diagonal of component
    variances. The posterior covariance is symmetrized and PSD-clamped.
    """
    if len(batch) == 0:
        raise InvalidArgumentError("empty update batch")
    for c in batch:
        if not c.is_unimodal:
            raise InvalidArgumentError(
                f"batch constraint ({c.i}, {c.j}) has {c.n_components} components")
    lin = linearize(state, [(c.i, c.j) for c in batch])
    return update_linearized(lin, [c.components[0].mean for c in batch],
                             [c.components[0].variance for c in batch])


def constraint_error(state: StateEstimate, c: MixtureConstraint) -> float:
    """Satisfaction error of a single-component constraint in SD units."""
    if not c.is_unimodal:
        raise InvalidArgumentError("constraint_error expects a single-component constraint")
    comp = c.components[0]
    return abs(comp.mean - distance_h(state.mean, c.i, c.j)) / comp.sd


def _pair_arrays(constraints):
    i = np.fromiter((c.i for c in constraints), dtype=int, count=len(constraints))
    j = np.fromiter((c.j for c in constraints), dtype=int, count=len(constraints))
    return i, j


def pair_distances(state: StateEstimate, constraints: Sequence[MixtureConstraint]) -> np.ndarray:
    """Vectorized ``distance_h`` for every constraint."""
    i, j = _pair_arrays(constraints)
    diff = state.coords[i] - state.coords[j]
    dx, dy, dz = diff[:, 0], diff[:, 1], diff[:, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def satisfaction_errors(state: StateEstimate,
                        constraints: Sequence[MixtureConstraint]) -> np.ndarray:
    """Per-constraint error: distance to the nearest component mean, in that component's SDs.

    Reduces to :func:`constraint_error` for single-component constraints.
    """
    d = pair_distances(state, constraints)
    out = np.empty(len(constraints))
    for k, c in enumerate(constraints):
        if c.is_unimodal:
            comp = c.components[0]
            out[k] = abs(comp.mean - d[k]) / comp.sd
        else:
            out[k] = min(abs(comp.mean - d[k]) / comp.sd for comp in c.components)
    return out


def reorder_constraints(state: StateEstimate, constraints: Sequence[MixtureConstraint],
                        errors: Optional[np.ndarray] = None) -> list:
    """Constraints sorted by descending satisfaction error, stable on ties."""
    if errors is None:
        errors = satisfaction_errors(state, constraints)
    order = np.argsort(-np.asarray(errors), kind="stable")
    return [constraints[k] for k in order]


def reheat(state: StateEstimate, config: SolverConfig) -> StateEstimate:
    """Reset the covariance to ``initial_variance * I``; the mean is untouched."""
    n = state.mean.size
    return StateEstimate(state.mean, config.initial_variance * np.eye(n), state.n_points)


def degenerate_mask(state: StateEstimate, constraints: Sequence[MixtureConstraint]) -> np.ndarray:
    return pair_distances(state, constraints) < DEGENERATE_DISTANCE


def apply_batch(state: StateEstimate, batch: UpdateBatch) -> StateEstimate:
    """``kalman_update`` after dropping constraints whose points coincide."""
    bad = degenerate_mask(state, batch)
    if bad.any():
        logger.warning("skipping %d degenerate constraint(s) in batch: %s", int(bad.sum()),
                       [(c.i, c.j) for c, b in zip(batch, bad) if b])
        batch = [c for c, b in zip(batch, bad) if not b]
        if not batch:
            return state
    return kalman_update(state, batch)


def _unimodal_sweep(state, ordered, config, cycle):
    bs = config.batch_size
    for b, start in enumerate(range(0, len(ordered), bs)):
        try:
            state = apply_batch(state, ordered[start:start + bs])
        except NumericalFailureError as exc:
            raise NumericalFailureError(str(exc), cycle=cycle, batch=b) from exc
    return state


def run_cycles(init: StateEstimate, constraints: Sequence[MixtureConstraint],
               config: SolverConfig, sweep: Callable, reference=None):
    """Shared outer loop of both solvers.

    ``sweep(state, ordered_constraints, config, cycle)`` introduces every
    constraint once and returns the new state. Returns the best state seen
    (lowest average error, the initial state included) and the trace.
    """
    from .metrics import rmsd_superposed

    constraints = list(constraints)
    if not constraints:
        raise InvalidArgumentError("at least one constraint is required")
    check_constraints(constraints, init.n_points)
    ref = None if reference is None else np.asarray(reference, dtype=float).reshape(-1, 3)
    if ref is not None and ref.shape[0] != init.n_points:
        raise InvalidArgumentError("reference has a different number of points")

    trace = ConvergenceTrace()
    errors = satisfaction_errors(init, constraints)
    prev_avg = float(errors.mean())
    trace.initial_avg_error = prev_avg
    trace.initial_max_error = float(errors.max())
    best_state, best_avg = init, prev_avg

    state = init
    reheated = False
    for cycle in range(1, config.max_cycles + 1):
        if cycle > 1 and config.cycle_restart and not reheated:
            # Each pass starts again from the entry covariance, so repeated
            # passes over the same constraints do not compound their information.
            state = state.with_cov(init.cov)
        ordered = reorder_constraints(state, constraints, errors)
        state = sweep(state, ordered, config, cycle)
        errors = satisfaction_errors(state, constraints)
        avg, mx = float(errors.mean()), float(errors.max())
        rmsd = None
        if ref is not None:
            rmsd = rmsd_superposed(state.coords, ref, allow_reflection=True).rmsd
        if avg < best_avg:
            best_state, best_avg = state, avg
            trace.best_cycle = cycle
        stalled = prev_avg - avg < config.convergence_tol
        hot = avg > config.reheat_threshold and cycle < config.max_cycles
        if config.reheat_policy == "always":
            reheated = hot
        elif config.reheat_policy == "stall":
            reheated = hot and stalled
        else:
            reheated = False
        if reheated:
            logger.debug("cycle %d: reheating at average error %.3g", cycle, avg)
            state = reheat(state, config)
        trace.append(CycleRecord(cycle, avg, mx, rmsd, reheated))
        logger.debug("cycle %d: avg %.4g max %.4g", cycle, avg, mx)
        prev_avg = avg
        if stalled and not reheated:
            break
    return best_state, trace


def solve_unimodal(init: StateEstimate, constraints: Sequence[MixtureConstraint],
                   config: SolverConfig = SolverConfig(), reference=None):
    """Iterate batched Kalman updates over single-component constraints.

    Returns ``(best_state, trace)``.
    """
    constraints = list(constraints)
    for c in constraints:
        if not c.is_unimodal:
            raise InvalidArgumentError(
                f"solve_unimodal received a {c.n_components}-component constraint "
                f"({c.i}, {c.j}); collapse it first")
    return run_cycles(init, constraints, config, _unimodal_sweep, reference)
