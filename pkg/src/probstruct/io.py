"""JSON/CSV file formats.

Structure file::

    {"n_points": N, "mean": [x1, y1, z1, ...], "cov": [[...], ...]}   # cov optional

Constraint file::

    [{"i": 0, "j": 1, "components": [{"weight": w, "mean": m, "variance": v}, ...]}, ...]

Answer key::

    {"0": 2, "1": 0, ...}      # constraint index -> real component index

Output is written with sorted keys and ``repr`` floats so identical inputs
give byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import InvalidArgumentError
from .model import GaussianComponent, MixtureConstraint, StateEstimate


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None


def structure_to_dict(state: StateEstimate, include_cov: bool = True) -> dict:
    out = {"n_points": state.n_points, "mean": state.mean.tolist()}
    if include_cov:
        out["cov"] = state.cov.tolist()
    return out


def structure_from_dict(obj, default_variance: Optional[float] = None) -> StateEstimate:
    """Parse a structure object; a missing ``cov`` becomes ``default_variance * I`` (or zeros)."""
    if not isinstance(obj, dict) or "mean" not in obj:
        raise InvalidArgumentError("structure must be an object with a 'mean' array")
    mean = np.asarray(obj["mean"], dtype=float).reshape(-1)
    n = obj.get("n_points")
    if n is not None and 3 * int(n) != mean.size:
        raise InvalidArgumentError(
            f"structure declares n_points={n} but mean has {mean.size} entries")
    if obj.get("cov") is not None:
        cov = np.asarray(obj["cov"], dtype=float)
    else:
        cov = (default_variance or 0.0) * np.eye(mean.size)
    return StateEstimate(mean, cov, n)


def save_structure(path, state: StateEstimate, include_cov: bool = True) -> None:
    write_json(path, structure_to_dict(state, include_cov))


def load_structure(path, default_variance: Optional[float] = None) -> StateEstimate:
    return structure_from_dict(read_json(path), default_variance)


def constraints_to_list(constraints: Sequence[MixtureConstraint]) -> list:
    return [
        {
            "i": c.i,
            "j": c.j,
            "components": [
                {"weight": comp.weight, "mean": comp.mean, "variance": comp.variance}
                for comp in c.components
            ],
        }
        for c in constraints
    ]


def constraints_from_list(items) -> List[MixtureConstraint]:
    if not isinstance(items, list):
        raise InvalidArgumentError("constraint file must hold a JSON array")
    out = []
    for k, item in enumerate(items):
        try:
            comps = tuple(GaussianComponent(float(c["weight"]), float(c["mean"]),
                                            float(c["variance"]))
                          for c in item["components"])
            out.append(MixtureConstraint(int(item["i"]), int(item["j"]), comps))
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"constraint {k}: malformed entry ({exc!r})") from None
        except InvalidArgumentError as exc:
            raise InvalidArgumentError(f"constraint {k}: {exc}") from None
    return out


def save_constraints(path, constraints: Sequence[MixtureConstraint]) -> None:
    write_json(path, constraints_to_list(constraints))


def load_constraints(path) -> List[MixtureConstraint]:
    return constraints_from_list(read_json(path))


def save_answer_key(path, key: Sequence[int]) -> None:
    write_json(path, {str(k): int(v) for k, v in enumerate(key)})


def load_answer_key(path) -> List[int]:
    obj = read_json(path)
    if isinstance(obj, list):
        return [int(v) for v in obj]
    if not isinstance(obj, dict):
        raise InvalidArgumentError("answer key must be an object or array")
    try:
        return [int(obj[str(k)]) for k in range(len(obj))]
    except KeyError as exc:
        raise InvalidArgumentError(f"answer key is missing index {exc}") from None


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def checksums(paths: Dict[str, os.PathLike]) -> Dict[str, str]:
    return {name: sha256(p) for name, p in sorted(paths.items())}
