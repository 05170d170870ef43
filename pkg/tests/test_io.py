import json

import numpy as np
import pytest

from probstruct import io as pio
from probstruct.exceptions import InvalidArgumentError
from probstruct.model import StateEstimate
from probstruct.synth import experiment_spec, generate_ground_truth, synthesize_constraints


def test_structure_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(9, 9))
    state = StateEstimate(rng.normal(size=9) * 1e3, a @ a.T)
    pio.save_structure(tmp_path / "s.json", state)
    back = pio.load_structure(tmp_path / "s.json")
    assert back.mean.tobytes() == state.mean.tobytes()
    assert back.cov.tobytes() == state.cov.tobytes()


def test_structure_without_cov(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"mean": [0, 0, 0, 1, 2, 3]}))
    assert np.all(pio.load_structure(path).cov == 0)
    np.testing.assert_array_equal(pio.load_structure(path, 100.0).cov, 100 * np.eye(6))


def test_structure_declared_size_checked():
    with pytest.raises(InvalidArgumentError):
        pio.structure_from_dict({"n_points": 3, "mean": [0.0] * 6})
    with pytest.raises(InvalidArgumentError):
        pio.structure_from_dict([1, 2, 3])


def test_constraints_and_key_round_trip(tmp_path):
    truth = generate_ground_truth(7, seed=1)
    cons, key = synthesize_constraints(truth, experiment_spec("exp2a", 1))
    pio.save_constraints(tmp_path / "c.json", cons)
    pio.save_answer_key(tmp_path / "k.json", key)
    assert pio.load_constraints(tmp_path / "c.json") == cons
    assert pio.load_answer_key(tmp_path / "k.json") == key


def test_identical_inputs_give_identical_bytes(tmp_path):
    truth = generate_ground_truth(7, seed=2)
    cons, _ = synthesize_constraints(truth, experiment_spec("exp1", 2))
    pio.save_constraints(tmp_path / "a.json", cons)
    pio.save_constraints(tmp_path / "b.json", cons)
    assert pio.sha256(tmp_path / "a.json") == pio.sha256(tmp_path / "b.json")


def test_malformed_constraint_entries():
    with pytest.raises(InvalidArgumentError, match="constraint 0"):
        pio.constraints_from_list([{"i": 0, "components": []}])
    with pytest.raises(InvalidArgumentError, match="constraint 1"):
        pio.constraints_from_list([
            {"i": 0, "j": 1, "components": [{"weight": 1, "mean": 1, "variance": 1}]},
            {"i": 0, "j": 1, "components": [{"weight": 0.3, "mean": 1, "variance": 1}]},
        ])
    with pytest.raises(InvalidArgumentError):
        pio.constraints_from_list({"i": 0})


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.json"):
        pio.read_json(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidArgumentError):
        pio.read_json(bad)


def test_answer_key_gaps_rejected(tmp_path):
    path = tmp_path / "k.json"
    path.write_text(json.dumps({"0": 1, "2": 0}))
    with pytest.raises(InvalidArgumentError):
        pio.load_answer_key(path)
