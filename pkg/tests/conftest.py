"""Shared small models for the test suite."""

import numpy as np
import pytest

from dynretarget.model import model_from_dict, reference_model


def box_doc(mass=2.0, size=(0.4, 0.3, 0.2), friction=0.8):
    a, b, c = size
    I = mass / 12.0 * np.array([b * b + c * c, a * a + c * c, a * a + b * b])
    corners = [(sx * a / 2, sy * b / 2, -c / 2) for sx in (1, -1) for sy in (1, -1)]
    return {
        "name": "box", "gravity": [0, 0, -9.81], "friction": friction,
        "links": [{"name": "box", "parent": None, "joint": "floating", "mass": mass,
                   "com": [0, 0, 0], "inertia": [*I.tolist(), 0, 0, 0]}],
        "joints": [],
        "keypoints": [{"name": "center", "link": "box", "offset": [0, 0, 0]},
                      {"name": "top", "link": "box", "offset": [0, 0, c / 2]}],
        "adjacency": [[0, 1]],
        "contacts": [{"name": f"c{i}", "link": "box", "offset": list(p), "group": "bottom"}
                     for i, p in enumerate(corners)],
    }


def pendulum_doc(mass=1.0, length=1.0, effort=5.0):
    """Point-like bob on a massless-ish rod, hinge about y at the origin, hanging along -z."""
    return {
        "name": "pendulum", "gravity": [0, 0, -9.81], "friction": 1.0,
        "links": [
            {"name": "mount", "parent": None, "joint": "fixed", "mass": 1.0, "com": [0, 0, 0],
             "inertia": [0.01, 0.01, 0.01, 0, 0, 0]},
            {"name": "rod", "parent": "mount", "axis": [0, 1, 0], "mass": mass,
             "com": [0, 0, -length], "inertia": [1e-6, 1e-6, 1e-6, 0, 0, 0]},
        ],
        "joints": [{"name": "hinge", "link": "rod", "lower": -4.0, "upper": 4.0, "velocity": 20.0,
                    "effort": effort}],
        "keypoints": [{"name": "bob", "link": "rod", "offset": [0, 0, -length]}],
        "adjacency": [],
        "contacts": [],
    }


@pytest.fixture(scope="session")
def humanoid():
    return reference_model("mini-humanoid")


@pytest.fixture(scope="session")
def biped():
    return reference_model("planar-biped")


@pytest.fixture(scope="session")
def box():
    return model_from_dict(box_doc())


@pytest.fixture(scope="session")
def pendulum():
    return model_from_dict(pendulum_doc())


def random_config(model, rng, joint_scale=0.8):
    """Random valid configuration: any base pose, joints inside their limits."""
    q = model.neutral_configuration()
    q[0:3] = rng.normal(0, 0.5, 3)
    quat = rng.normal(size=4)
    q[3:7] = quat / np.linalg.norm(quat)
    a = model.arrays
    mid, half = 0.5 * (a.lower + a.upper), 0.5 * (a.upper - a.lower)
    q[7:] = mid + joint_scale * half * rng.uniform(-1, 1, model.n_q)
    return q


# --- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion, printed at the end of the session."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
