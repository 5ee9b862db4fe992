import copy
import json

import numpy as np
import pytest

from dynretarget.model import (ModelInvariantError, ModelParseError, dump_model, load_model,
                               model_from_dict, model_to_dict, reference_model, validate_model)

from conftest import box_doc


def _humanoid_doc():
    return json.loads(dump_model(reference_model("mini-humanoid")))


def test_mini_humanoid_dimensions(humanoid):
    assert humanoid.n_q == 12
    assert humanoid.m == 8
    assert humanoid.nq_config == 19 and humanoid.nv == 18
    assert len(humanoid.contact_points) == 8
    assert {len(v) for v in humanoid.contact_groups.values()} == {4}
    assert set(humanoid.keypoint_names) == {"pelvis", "torso", "left_shoulder", "right_shoulder",
                                            "left_hand", "right_hand", "left_foot", "right_foot"}


def test_planar_biped_dimensions(biped):
    assert (biped.n_q, biped.m, len(biped.contact_points)) == (4, 4, 2)
    assert biped.base_joint == "planar"


def test_parent_after_child_is_tree_error():
    doc = _humanoid_doc()
    doc["links"][2]["parent"] = 5
    with pytest.raises(ModelInvariantError, match="tree structure"):
        model_from_dict(doc)


def test_zero_mass_names_mass_rule():
    doc = _humanoid_doc()
    doc["links"][3]["mass"] = 0.0
    with pytest.raises(ModelInvariantError, match="mass"):
        model_from_dict(doc)


def test_parse_error_has_location():
    with pytest.raises(ModelParseError, match="line 1"):
        load_model('{"name": ')
    doc = _humanoid_doc()
    doc["links"][1]["mass"] = "heavy"
    with pytest.raises(ModelParseError, match=r"links\[1\]\.mass"):
        model_from_dict(doc)


def test_valid_models_have_no_violations(humanoid, biped, box):
    for m in (humanoid, biped, box):
        assert validate_model(m).violations == []


def test_negative_inertia_eigenvalue_is_one_violation():
    doc = _humanoid_doc()
    doc["links"][1]["inertia"] = [1.0, 1.0, -0.1, 0, 0, 0]
    report = validate_model(model_from_dict(doc, check=False))
    assert len(report.violations) == 1
    assert "inertia not SPD" in report.violations[0]


def test_duplicate_edge_is_one_violation():
    doc = _humanoid_doc()
    a, b = doc["adjacency"][0]
    doc["adjacency"].append([b, a])
    report = validate_model(model_from_dict(doc, check=False))
    assert len(report.violations) == 1
    assert "duplicate edge" in report.violations[0]


def test_validate_does_not_mutate(humanoid):
    before = copy.deepcopy(model_to_dict(humanoid))
    validate_model(humanoid)
    assert model_to_dict(humanoid) == before


def test_round_trip_is_identity(humanoid, biped, box):
    for m in (humanoid, biped, box):
        again = load_model(dump_model(m))
        assert model_to_dict(again) == model_to_dict(m)
        assert validate_model(again).ok


def test_quaternion_normalized_on_load():
    doc = box_doc()
    doc["links"].append({"name": "arm", "parent": "box", "axis": [0, 0, 2.0],
                         "origin": {"xyz": [0, 0, 0.1], "quat": [2.0, 0, 0, 0]},
                         "mass": 0.1, "inertia": [1e-4, 1e-4, 1e-4, 0, 0, 0]})
    doc["joints"] = [{"name": "j", "link": "arm", "lower": -1, "upper": 1, "velocity": 1, "effort": 1}]
    m = model_from_dict(doc)
    np.testing.assert_allclose(m.links[1].origin_quat, [1, 0, 0, 0])
    np.testing.assert_allclose(m.links[1].axis, [0, 0, 1])


def test_joint_limits_ordered():
    doc = _humanoid_doc()
    doc["joints"][0]["lower"], doc["joints"][0]["upper"] = 1.0, -1.0
    with pytest.raises(ModelInvariantError, match="lower >= upper"):
        model_from_dict(doc)


def test_self_loop_and_bad_index():
    doc = _humanoid_doc()
    doc["adjacency"].append([2, 2])
    doc["adjacency"].append([0, 99])
    violations = validate_model(model_from_dict(doc, check=False)).violations
    assert any("self-loop" in v for v in violations)
    assert any("invalid adjacency index" in v for v in violations)


def test_unknown_reference_model():
    with pytest.raises(KeyError):
        reference_model("h1")
