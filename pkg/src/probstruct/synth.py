"""Synthetic ground truth and experiment constraint sets.

Every draw comes from a ``numpy`` generator derived from an explicit seed,
so a ``(truth seed, spec)`` pair fully determines the output.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from .exceptions import GenerationError, InvalidArgumentError
from .model import (
    VARIANCE_FLOOR,
    GaussianComponent,
    MixtureConstraint,
    SolverConfig,
    StateEstimate,
)

BOND_LENGTH = 3.8
MIN_NONBONDED = 2.0
MAX_ATTEMPTS = 10_000


class Provenance(str, enum.Enum):
    GENERATED_CHAIN = "generated_chain"
    LOADED_FILE = "loaded_file"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    coords: np.ndarray
    provenance: Provenance = Provenance.GENERATED_CHAIN
    seed: int = 0

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.coords.reshape(-1)


@dataclass(frozen=True)
class ExperimentSpec:
    """Parameters of a synthetic multicomponent constraint set."""

    real_weight_min: float = 0.5
    real_weight_max: float = 1.0
    real_variance: float = 0.1
    noise_count_min: int = 0
    noise_count_max: int = 3
    noise_mean_range: Tuple[float, float] = (0.0, 50.0)
    noise_variance_range: Tuple[float, float] = (0.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.real_weight_min <= self.real_weight_max <= 1:
            raise InvalidArgumentError(
                "need 0 < real_weight_min <= real_weight_max <= 1, got "
                f"{self.real_weight_min}, {self.real_weight_max}")
        if not 0 <= self.noise_count_min <= self.noise_count_max:
            raise InvalidArgumentError("need 0 <= noise_count_min <= noise_count_max")
        for name in ("noise_mean_range", "noise_variance_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidArgumentError(f"{name} is empty: ({lo}, {hi})")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if not self.real_variance > 0:
            raise InvalidArgumentError("real_variance must be > 0")


# Built-in experiments: real-component weight ranges.
EXPERIMENTS = {
    "exp1": ExperimentSpec(real_weight_min=0.5, real_weight_max=1.0),
    "exp2a": ExperimentSpec(real_weight_min=0.3, real_weight_max=1.0),
    "exp2b": ExperimentSpec(real_weight_min=0.1, real_weight_max=1.0),
}


def experiment_spec(name: str, seed: int) -> ExperimentSpec:
    try:
        return replace(EXPERIMENTS[name], seed=seed)
    except KeyError:
        raise InvalidArgumentError(
            f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}") from None


def _streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _unit_vector(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def generate_ground_truth(n_points: int, seed: int) -> GroundTruth:
    """Self-avoiding random-walk chain with 3.8 Å steps.

    A step is rejected when it brings the new point within 2 Å of any
    earlier point other than its bonded predecessor.
    """
    if n_points < 2:
        raise InvalidArgumentError(f"need at least 2 points, got {n_points}")
    (rng,) = _streams(seed, 1)
    coords = np.zeros((n_points, 3))
    for k in range(1, n_points):
        for _ in range(MAX_ATTEMPTS):
            step = BOND_LENGTH * _unit_vector(rng)
            cand = coords[k - 1] + step
            if k < 2 or np.min(np.linalg.norm(coords[:k - 1] - cand, axis=1)) >= MIN_NONBONDED:
                coords[k] = cand
                break
        else:
            raise GenerationError(f"could not place point {k} after {MAX_ATTEMPTS} attempts")
    return GroundTruth(coords, Provenance.GENERATED_CHAIN, seed)


def ground_truth_from_coords(coords, seed: int = 0) -> GroundTruth:
    coords = np.asarray(coords, dtype=float).reshape(-1, 3)
    return GroundTruth(coords, Provenance.LOADED_FILE, seed)


def synthesize_constraints(truth: GroundTruth,
                           spec: ExperimentSpec) -> Tuple[List[MixtureConstraint], List[int]]:
    """One mixture constraint per unordered point pair, plus the answer key.

    The real component sits at the true distance; noise components share the
    remaining weight equally. Component order is shuffled, and the returned
    key gives the real component's index for each constraint.
    """
    weight_rng, count_rng, noise_rng, order_rng = _streams(spec.seed, 4)
    xyz = truth.coords
    n = truth.n_points
    constraints, key = [], []
    for i in range(n):
        for j in range(i + 1, n):
            true_d = float(np.linalg.norm(xyz[i] - xyz[j]))
            n_noise = int(count_rng.integers(spec.noise_count_min, spec.noise_count_max + 1))
            real_w = float(weight_rng.uniform(spec.real_weight_min, spec.real_weight_max))
            if n_noise == 0:
                real_w = 1.0
            means = noise_rng.uniform(*spec.noise_mean_range, size=n_noise)
            variances = np.maximum(noise_rng.uniform(*spec.noise_variance_range, size=n_noise),
                                   VARIANCE_FLOOR)
            comps = [(real_w, true_d, spec.real_variance)]
            if n_noise:
                noise_w = (1.0 - real_w) / n_noise
                comps += [(noise_w, float(m), float(v)) for m, v in zip(means, variances)]
            perm = order_rng.permutation(len(comps))
            comps = [comps[p] for p in perm]
            total = sum(c[0] for c in comps)
            constraints.append(MixtureConstraint(
                i, j, tuple(GaussianComponent(w / total, m, v) for w, m, v in comps)))
            key.append(int(np.flatnonzero(perm == 0)[0]))
    return constraints, key


def exact_constraints(truth: GroundTruth, variance: float = 1e-4) -> List[MixtureConstraint]:
    """Unimodal constraints at the exact distances of every pair."""
    xyz = truth.coords
    n = truth.n_points
    return [MixtureConstraint.unimodal(i, j, float(np.linalg.norm(xyz[i] - xyz[j])), variance)
            for i in range(n) for j in range(i + 1, n)]


def true_component_constraints(constraints, answer_key) -> List[MixtureConstraint]:
    """Each mixture reduced to its answer-key component at weight 1."""
    return [c.select(k) for c, k in zip(constraints, answer_key)]


def random_start(n_points: int, config: SolverConfig = SolverConfig()) -> StateEstimate:
    """Uniform random coordinates in ``[0, coordinate_range)`` with isotropic covariance."""
    if n_points < 1:
        raise InvalidArgumentError("need at least one point")
    rng = np.random.default_rng(config.rng_seed)
    mean = rng.uniform(0.0, config.coordinate_range, size=3 * n_points)
    return StateEstimate(mean, config.initial_variance * np.eye(3 * n_points), n_points)


def real_is_max_weight_fraction(constraints, answer_key) -> float:
    """Fraction of constraints whose real component carries the largest weight."""
    hits = [c.components[k].weight >= max(comp.weight for comp in c.components)
            for c, k in zip(constraints, answer_key)]
    return float(np.mean(hits))


def real_is_majority_fraction(constraints, answer_key) -> float:
    """Fraction of constraints whose real component carries more than half the weight."""
    return float(np.mean([c.components[k].weight > 0.5
                          for c, k in zip(constraints, answer_key)]))
