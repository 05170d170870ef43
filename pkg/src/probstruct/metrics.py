"""Structure comparison and error summaries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .ekf import satisfaction_errors
from .exceptions import AlignmentError, InvalidArgumentError
from .model import MixtureConstraint, StateEstimate, distance_h


@dataclass(frozen=True)
class Superposition:
    rmsd: float
    proper_rmsd: float
    mirror_rmsd: float
    reflected: bool


@dataclass(frozen=True)
class ErrorSummary:
    average: float
    maximum: float
    per_constraint: np.ndarray


def _as_points(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        if a.size % 3:
            raise InvalidArgumentError("flat coordinate vector length must be a multiple of 3")
        a = a.reshape(-1, 3)
    if a.ndim != 2 or a.shape[1] != 3:
        raise InvalidArgumentError(f"expected (N, 3) coordinates, got shape {a.shape}")
    return a


def rmsd_superposed(a, b, allow_reflection: bool = True) -> Superposition:
    """RMSD between two point sets after optimal rigid superposition.

    Uses the SVD solution of the orthogonal Procrustes problem. With
    ``allow_reflection`` the mirror-image superposition is also considered
    and the smaller of the two RMSDs is reported in ``rmsd``.
    """
    a, b = _as_points(a), _as_points(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 3:
        raise AlignmentError(f"need at least 3 points to superpose, got {n}")
    p = a - a.mean(axis=0)
    q = b - b.mean(axis=0)
    for name, x in (("first", p), ("second", q)):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
            raise AlignmentError(f"{name} point set is collinear or collapsed")

    u, _, vt = np.linalg.svd(p.T @ q)
    # Rotation mapping p onto q is (u @ vt); flip the last axis to change handedness.
    det_sign = np.sign(np.linalg.det(u @ vt)) or 1.0

    def residual(sign):
        flip = np.diag([1.0, 1.0, sign])
        rot = u @ flip @ vt
        diff = p @ rot - q
        return float(np.sqrt(np.sum(diff * diff) / n))

    proper = residual(det_sign)
    mirror = residual(-det_sign)
    if allow_reflection and mirror < proper:
        return Superposition(mirror, proper, mirror, True)
    return Superposition(proper, proper, mirror, False)


def error_summary(state: StateEstimate, constraints: Sequence[MixtureConstraint]) -> ErrorSummary:
    """Average and maximum satisfaction error over ``constraints``.

    Single-component constraints use the plain SD-normalized residual;
    mixtures use the distance to the nearest component.
    """
    errs = satisfaction_errors(state, list(constraints))
    if errs.size == 0:
        return ErrorSummary(0.0, 0.0, errs)
    return ErrorSummary(float(errs.mean()), float(errs.max()), errs)


def nearest_components(state: StateEstimate, constraints: Sequence[MixtureConstraint]) -> np.ndarray:
    out = np.empty(len(constraints), dtype=int)
    for k, c in enumerate(constraints):
        d = distance_h(state.mean, c.i, c.j)
        out[k] = int(np.argmin([abs(comp.mean - d) / comp.sd for comp in c.components]))
    return out


def component_identification_rate(state: StateEstimate, constraints: Sequence[MixtureConstraint],
                                  answer_key: Union[Sequence[int], Mapping[int, int]]) -> float:
    """Fraction of constraints whose nearest component is the answer-key component."""
    constraints = list(constraints)
    if isinstance(answer_key, Mapping):
        key = [answer_key.get(k, answer_key.get(str(k))) for k in range(len(constraints))]
    else:
        key = list(answer_key)
    if len(key) != len(constraints) or any(k is None for k in key):
        raise InvalidArgumentError(
            f"answer key covers {sum(k is not None for k in key)} entries for "
            f"{len(constraints)} constraints")
    for idx, (c, k) in enumerate(zip(constraints, key)):
        if not 0 <= int(k) < c.n_components:
            raise InvalidArgumentError(
                f"answer key entry {idx} names component {k} of a "
                f"{c.n_components}-component constraint")
    if not constraints:
        return 1.0
    hits = nearest_components(state, constraints) == np.asarray(key, dtype=int)
    return float(hits.mean())


def ellipsoids(state: StateEstimate, n_sd: float = 2.0) -> list:
    """Per-point uncertainty ellipsoids as plain data.

    Each principal axis carries its covariance eigenvalue, unit eigenvector
    and semi-axis length at ``n_sd`` standard deviations.
    """
    out = []
    for k in range(state.n_points):
        block = state.point_cov(k)
        vals, vecs = np.linalg.eigh(block)
        vals = np.clip(vals, 0.0, None)
        out.append({
            "point": k,
            "mean": state.coords[k].tolist(),
            "cov_block": block.tolist(),
            "axes": [
                {
                    "eigenvalue": float(vals[a]),
                    "eigenvector": vecs[:, a].tolist(),
                    "semi_axis": float(n_sd * np.sqrt(vals[a])),
                }
                for a in range(3)
            ],
        })
    return out
