"""Mixture solver: fan, solve unimodal branches, recombine.

Each cycle walks the constraints (least satisfied first) in small groups.
A group is fanned into every combination of one component per constraint;
each combination is a unimodal subproblem solved by one Kalman batch
update from the group-entry state. Branch solutions are weighted by Bayes'
rule and collapsed back to a single Gaussian state by moment matching
before the next group is taken.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .ekf import (
    degenerate_mask,
    linearize,
    run_cycles,
    satisfaction_errors,
    solve_unimodal,
    update_linearized,
)
from .exceptions import DegenerateGeometryError, InvalidArgumentError, NumericalFailureError
from .model import (
    VARIANCE_FLOOR,
    MixtureConstraint,
    SolverConfig,
    StateEstimate,
    collapse_mixture,
    distance_h,
    distance_jacobian,
    symmetrize_psd,
)

logger = logging.getLogger(__name__)

Assignment = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Branch:
    """One path through a fan stage.

    ``assignment`` pairs each constraint's position in the fanned group with
    the component chosen for it; ``state`` is the branch's solved estimate.
    """

    prior_weight: float
    assignment: Assignment
    state: Optional[StateEstimate] = None


def fan_group_size(pending: Sequence[MixtureConstraint], branch_cap: int,
                   max_size: Optional[int] = None) -> int:
    """Length of the longest prefix of ``pending`` whose branch count fits ``branch_cap``.

    At least one constraint is always taken.
    """
    if not pending:
        return 0
    limit = len(pending) if max_size is None else min(max_size, len(pending))
    size, product = 1, pending[0].n_components
    while size < limit:
        nxt = product * pending[size].n_components
        if nxt > branch_cap:
            break
        product = nxt
        size += 1
    return size


def fan(constraint_group: Sequence[MixtureConstraint], branch_cap: Optional[int] = None,
        max_size: Optional[int] = None) -> List[Branch]:
    """Enumerate component choices over a group of constraints.

    With ``branch_cap`` set, only the longest prefix of ``constraint_group``
    that fits is fanned; the number of constraints consumed is
    ``len(branches[0].assignment)``. Branch prior weights are products of
    component weights and sum to one.
    """
    if not constraint_group:
        raise InvalidArgumentError("cannot fan an empty constraint group")
    if branch_cap is None:
        group = list(constraint_group)
    else:
        group = list(constraint_group[:fan_group_size(constraint_group, branch_cap, max_size)])
        if group[0].n_components > branch_cap:
            logger.info("constraint (%d, %d) has %d components, above branch cap %d; "
                        "fanning fully", group[0].i, group[0].j, group[0].n_components,
                        branch_cap)
    choices = [range(c.n_components) for c in group]
    branches = []
    for combo in itertools.product(*choices):
        w = 1.0
        for c, k in zip(group, combo):
            w *= c.components[k].weight
        branches.append(Branch(w, tuple(enumerate(combo))))
    return branches


def _predicted_measurement(state: StateEstimate, c: MixtureConstraint):
    h = distance_h(state.mean, c.i, c.j)
    row = distance_jacobian(state.mean, c.i, c.j)
    idx = np.flatnonzero(row)
    var = float(row[idx] @ state.cov[np.ix_(idx, idx)] @ row[idx])
    return h, max(var, VARIANCE_FLOOR)


def _log_fit(h, pred_var, comp):
    return (-0.5 * math.log(2.0 * math.pi * pred_var)
            - 0.5 * (comp.mean - h) ** 2 / pred_var
            - 0.5 * comp.variance / pred_var)


def branch_fit_likelihood(state: StateEstimate, c: MixtureConstraint,
                          component_index: int) -> float:
    """How well the state's predicted distance fits one component.

    The predicted distance is Gaussian with mean ``h(x)`` and variance
    ``H C H^T``; the value is that density at the component mean, damped by
    ``exp(-var_component / (2 var_predicted))``.
    """
    if not 0 <= component_index < c.n_components:
        raise InvalidArgumentError(
            f"component {component_index} does not exist on a "
            f"{c.n_components}-component constraint")
    h, pred_var = _predicted_measurement(state, c)
    return math.exp(_log_fit(h, pred_var, c.components[component_index]))


def _log_fit_table(state, group):
    table = []
    for c in group:
        try:
            h, pred_var = _predicted_measurement(state, c)
        except DegenerateGeometryError:
            # Coincident points carry no information about which component fits.
            table.append([0.0] * c.n_components)
            continue
        table.append([_log_fit(h, pred_var, comp) for comp in c.components])
    return table


def posterior_weights(prior_state: StateEstimate, branches: Sequence[Branch],
                      group: Sequence[MixtureConstraint]) -> np.ndarray:
    """Bayes-normalized branch weights.

    Each branch's prior weight is multiplied by the fit likelihood of every
    component it assigns, all evaluated against ``prior_state``. Products
    are formed in the log domain; if every branch still comes out
    non-finite the prior weights are returned unchanged.
    """
    priors = np.array([b.prior_weight for b in branches], dtype=float)
    if len(branches) == 1:
        return np.ones(1)
    table = _log_fit_table(prior_state, group)
    logw = np.log(priors)
    for n, b in enumerate(branches):
        for pos, k in b.assignment:
            logw[n] += table[pos][k]
    finite = np.isfinite(logw)
    if not finite.any():
        logger.warning("all branch likelihoods underflowed; falling back to prior weights")
        return priors / priors.sum()
    logw[~finite] = -np.inf
    w = np.exp(logw - logsumexp(logw[finite]))
    return w / w.sum()


def recombine(branches: Sequence[Branch], weights) -> StateEstimate:
    """Collapse weighted branch states into one Gaussian by moment matching.

    ``mean = sum w_i m_i`` and ``cov = sum w_i (C_i + (m_i - mean)(m_i - mean)^T)``,
    accumulated in branch order.
    """
    weights = np.asarray(weights, dtype=float)
    if len(branches) == 0 or len(weights) != len(branches):
        raise InvalidArgumentError("need one weight per branch")
    states = [b.state for b in branches]
    dim = states[0].mean.size
    for s in states:
        if s.mean.size != dim:
            raise InvalidArgumentError("branch states differ in dimension")
    dominant = np.flatnonzero(weights == 1.0)
    if len(states) == 1 or (dominant.size == 1 and np.count_nonzero(weights) == 1):
        return states[0] if len(states) == 1 else states[int(dominant[0])]

    mean = np.zeros(dim)
    for w, s in zip(weights, states):
        mean += w * s.mean
    cov = np.zeros((dim, dim))
    for w, s in zip(weights, states):
        if w == 0.0:
            continue
        d = s.mean - mean
        cov += w * (s.cov + np.outer(d, d))
    return StateEstimate(mean, symmetrize_psd(cov), states[0].n_points)


def multicomponent_error(state: StateEstimate, c: MixtureConstraint) -> float:
    """Distance from ``h(x)`` to the nearest component mean, in that component's SDs."""
    d = distance_h(state.mean, c.i, c.j)
    return min(abs(comp.mean - d) / comp.sd for comp in c.components)


class StageLog:
    """Collects per-stage branch weights for the optional JSON debug log."""

    def __init__(self):
        self.stages = []

    def __call__(self, cycle, stage, branches, weights):
        self.stages.append({
            "cycle": cycle,
            "stage": stage,
            "branch_count": len(branches),
            "prior_weights": [b.prior_weight for b in branches],
            "posterior_weights": [float(w) for w in weights],
        })


def solve_stage(entry: StateEstimate, group: Sequence[MixtureConstraint],
                branches: Sequence[Branch], executor=None):
    """Solve every branch of a fan stage and recombine.

    Returns ``(state, branches_with_states, weights)``. A branch whose
    update fails numerically is dropped; the failure propagates only when
    no branch survives. Constraints whose points coincide at ``entry`` are
    left out of every branch update.
    """
    live = [pos for pos, bad in enumerate(degenerate_mask(entry, group)) if not bad]
    if len(live) < len(group):
        logger.warning("skipping %d degenerate constraint(s) in fan stage",
                       len(group) - len(live))
    lin = linearize(entry, [(group[pos].i, group[pos].j) for pos in live]) if live else None

    def run(branch):
        if lin is None:
            return entry
        chosen = dict(branch.assignment)
        comps = [group[pos].components[chosen[pos]] for pos in live]
        try:
            return update_linearized(lin, [c.mean for c in comps],
                                     [c.variance for c in comps])
        except NumericalFailureError as exc:
            return exc

    if executor is not None and len(branches) > 1:
        results = list(executor.map(run, branches))
    else:
        results = [run(b) for b in branches]

    solved = []
    failure = None
    for b, r in zip(branches, results):
        if isinstance(r, NumericalFailureError):
            failure = r
            logger.warning("dropping branch %s: %s", b.assignment, r)
            continue
        solved.append(Branch(b.prior_weight, b.assignment, r))
    if not solved:
        raise failure
    if len(solved) < len(branches):
        total = sum(b.prior_weight for b in solved)
        solved = [Branch(b.prior_weight / total, b.assignment, b.state) for b in solved]
    weights = posterior_weights(entry, solved, group)
    return recombine(solved, weights), solved, weights


def _make_sweep(on_stage: Optional[Callable], executor):
    def sweep(state, ordered, config, cycle):
        pos = stage = 0
        while pos < len(ordered):
            size = fan_group_size(ordered[pos:], config.branch_cap, config.batch_size)
            group = ordered[pos:pos + size]
            branches = fan(group)
            try:
                state, solved, weights = solve_stage(state, group, branches, executor)
            except NumericalFailureError as exc:
                raise NumericalFailureError(str(exc), cycle=cycle, batch=stage) from exc
            if on_stage is not None:
                on_stage(cycle, stage, solved, weights)
            pos += size
            stage += 1
        return state
    return sweep


def solve_multicomponent(init: StateEstimate, constraints: Sequence[MixtureConstraint],
                         config: SolverConfig = SolverConfig(), reference=None,
                         on_stage: Optional[Callable] = None):
    """Branch-and-recombine solver for mixture constraints.

    Cycling, reheating and best-state selection match
    :func:`probstruct.ekf.solve_unimodal`; errors use the nearest-component
    measure. ``on_stage(cycle, stage, branches, weights)`` is called after
    every recombination. Returns ``(best_state, trace)``.
    """
    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as pool:
            return run_cycles(init, constraints, config, _make_sweep(on_stage, pool), reference)
    return run_cycles(init, constraints, config, _make_sweep(on_stage, None), reference)


def warm_start(constraints: Sequence[MixtureConstraint], init: StateEstimate,
               config: SolverConfig = SolverConfig(), reference=None,
               return_trace: bool = False):
    """Rough structure from the unimodal solver run on collapsed mixtures.

    Returns the best state, or ``(state, trace)`` with ``return_trace``.
    """
    collapsed = [collapse_mixture(c) for c in constraints]
    state, trace = solve_unimodal(init, collapsed, config, reference)
    return (state, trace) if return_trace else state


@dataclass
class PipelineResult:
    state: StateEstimate
    warm_state: StateEstimate
    warm_trace: object
    trace: object

    @property
    def n_cycles(self) -> int:
        return len(self.warm_trace) + len(self.trace)


def run_pipeline(init: StateEstimate, constraints: Sequence[MixtureConstraint],
                 config: SolverConfig = SolverConfig(), warm_cycles: int = 15,
                 reference=None, on_stage: Optional[Callable] = None) -> PipelineResult:
    """Warm start on collapsed constraints, then refine with the mixture solver.

    ``config.max_cycles`` bounds the two phases together; the warm start
    gets at most ``warm_cycles`` of them and the mixture solver the rest.
    """
    if config.max_cycles < 2:
        raise InvalidArgumentError("the pipeline needs max_cycles >= 2")
    warm_cycles = max(1, min(warm_cycles, config.max_cycles - 1))
    warm_state, warm_trace = warm_start(constraints, init, replace(config, max_cycles=warm_cycles),
                                        reference, return_trace=True)
    rest = replace(config, max_cycles=config.max_cycles - len(warm_trace))
    state, trace = solve_multicomponent(warm_state, constraints, rest, reference, on_stage)
    return PipelineResult(state, warm_state, warm_trace, trace)
