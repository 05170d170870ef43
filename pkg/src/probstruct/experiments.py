"""End-to-end synthetic experiment runs used by the CLI and acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

from .ekf import ConvergenceTrace, solve_unimodal
from .metrics import component_identification_rate, error_summary, rmsd_superposed
from .mixture import PipelineResult, run_pipeline
from .model import MixtureConstraint, SolverConfig, StateEstimate, collapse_mixture
from .synth import (
    GroundTruth,
    exact_constraints,
    experiment_spec,
    generate_ground_truth,
    random_start,
    synthesize_constraints,
)

N_POINTS = 21


@dataclass
class ExperimentData:
    truth: GroundTruth
    constraints: List[MixtureConstraint]
    answer_key: List[int]

    @property
    def collapsed(self) -> List[MixtureConstraint]:
        return [collapse_mixture(c) for c in self.constraints]


@dataclass
class RunReport:
    seed: int
    avg_error: float
    max_error: float
    rmsd: float
    rmsd_proper: float
    rmsd_mirror: float
    identification_rate: Optional[float]
    state: StateEstimate
    trace: ConvergenceTrace
    warm_trace: Optional[ConvergenceTrace] = None
    warm_rmsd: Optional[float] = None


def make_experiment(name: str, seed: int, n_points: int = N_POINTS) -> ExperimentData:
    truth = generate_ground_truth(n_points, seed)
    constraints, key = synthesize_constraints(truth, experiment_spec(name, seed))
    return ExperimentData(truth, constraints, key)


def _report(seed, state, constraints, truth, key, trace, warm=None) -> RunReport:
    summary = error_summary(state, constraints)
    sup = rmsd_superposed(state.coords, truth.coords, allow_reflection=True)
    rate = None if key is None else component_identification_rate(state, constraints, key)
    report = RunReport(seed, summary.average, summary.maximum, sup.rmsd, sup.proper_rmsd,
                       sup.mirror_rmsd, rate, state, trace)
    if warm is not None:
        report.warm_trace = warm.warm_trace
        report.warm_rmsd = rmsd_superposed(warm.warm_state.coords, truth.coords).rmsd
    return report


def run_pipeline_experiment(name: str, seed: int, config: Optional[SolverConfig] = None,
                            warm_cycles: int = 15) -> RunReport:
    """Random start, warm start on collapsed constraints, mixture refinement."""
    config = replace(config or SolverConfig(), rng_seed=seed)
    data = make_experiment(name, seed)
    init = random_start(data.truth.n_points, config)
    result: PipelineResult = run_pipeline(init, data.constraints, config, warm_cycles,
                                          reference=data.truth.coords)
    return _report(seed, result.state, data.constraints, data.truth, data.answer_key,
                   result.trace, warm=result)


def run_collapsed_experiment(name: str, seed: int,
                             config: Optional[SolverConfig] = None) -> RunReport:
    """Unimodal solver alone on the collapsed constraints."""
    config = replace(config or SolverConfig(), rng_seed=seed)
    data = make_experiment(name, seed)
    init = random_start(data.truth.n_points, config)
    collapsed = data.collapsed
    state, trace = solve_unimodal(init, collapsed, config, reference=data.truth.coords)
    return _report(seed, state, collapsed, data.truth, None, trace)


def run_exact_experiment(seed: int, config: Optional[SolverConfig] = None,
                         n_points: int = N_POINTS, variance: float = 1e-4) -> RunReport:
    """Unimodal solver on every exact pairwise distance."""
    config = replace(config or SolverConfig(), rng_seed=seed)
    truth = generate_ground_truth(n_points, seed)
    constraints = exact_constraints(truth, variance)
    state, trace = solve_unimodal(random_start(n_points, config), constraints, config,
                                  reference=truth.coords)
    return _report(seed, state, constraints, truth, None, trace)
