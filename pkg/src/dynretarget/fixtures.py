"""Synthetic reference motions for the mini-humanoid.

A clean motion is authored in joint space and placed so the stance feet stay
planted; its keypoints are then corrupted the way monocular video estimates tend
to be: per-frame jitter, feet that float a few centimeters off the floor for short
stretches, and (for "drift") a slow lateral drift of the whole body. Ground-truth
contact labels come from the clean motion by the 2 cm rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .feasibility import ContactSequence, estimate_contacts
from .kinematics import KeypointTrajectory, contacts_along, fk_trajectory
from .model import RobotModel, reference_model

FIXTURES = ("squat", "drift", "one-foot")
DT = 0.02
FRAMES = 100
SEED = 7

J = {name: i for i, name in enumerate([
    "left_hip_roll", "left_hip_pitch", "left_knee", "left_ankle_pitch",
    "right_hip_roll", "right_hip_pitch", "right_knee", "right_ankle_pitch",
    "left_shoulder_pitch", "left_elbow", "right_shoulder_pitch", "right_elbow"])}


@dataclass
class Fixture:
    name: str
    clean: Trajectory
    reference: KeypointTrajectory
    truth: ContactSequence


def _smooth_pulse(t, start, width):
    """0 -> 1 -> 0 raised-cosine bump on [start, start + width]."""
    u = np.clip((t - start) / width, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * u))


def _smooth_ramp(t, start, width):
    u = np.clip((t - start) / width, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


def _plant(model: RobotModel, joints: np.ndarray, anchor: str) -> np.ndarray:
    """Configurations whose ``anchor`` foot keeps the position it has in frame 0, resting on z = 0."""
    T = joints.shape[0]
    Q = np.zeros((T, model.nq_config))
    Q[:, 3] = 1.0
    Q[:, 7:] = joints
    idx = model.contact_groups[anchor]
    X = contacts_along(model, Q)[:, idx]
    centroid = X.mean(axis=1)
    target = centroid[0].copy()
    Q[:, 0:2] = target[None, :2] - centroid[:, :2]
    Q[:, 2] = -X[:, :, 2].min(axis=1)
    return Q


def _squat_joints(t: np.ndarray, n_q: int, depth: float = 0.6, period: float = 1.0) -> np.ndarray:
    th = depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / period))
    q = np.zeros((t.size, n_q))
    for side in ("left", "right"):
        q[:, J[f"{side}_hip_pitch"]] = -th
        q[:, J[f"{side}_knee"]] = 2.0 * th
        q[:, J[f"{side}_ankle_pitch"]] = -th
        q[:, J[f"{side}_shoulder_pitch"]] = -1.2 * th
        q[:, J[f"{side}_elbow"]] = -0.8 * th
    return q


def _one_foot_joints(t: np.ndarray, n_q: int) -> np.ndarray:
    q = np.zeros((t.size, n_q))
    shift = 0.12 * (_smooth_ramp(t, 0.1, 0.4) - _smooth_ramp(t, 1.5, 0.4))
    q[:, J["left_hip_roll"]] = shift
    q[:, J["right_hip_roll"]] = shift
    lift = _smooth_pulse(t, 0.55, 0.9)
    q[:, J["left_hip_pitch"]] = -0.5 * lift
    q[:, J["left_knee"]] = 1.0 * lift
    q[:, J["left_ankle_pitch"]] = -0.5 * lift
    q[:, J["left_shoulder_pitch"]] = -0.4 * lift
    q[:, J["right_shoulder_pitch"]] = 0.3 * lift
    return q


def _corrupt(model: RobotModel, x: KeypointTrajectory, rng: np.random.Generator, t: np.ndarray,
             drift: float = 0.0, float_height: float = 0.035, jitter: float = 0.006) -> KeypointTrajectory:
    frames = x.frames.copy()
    feet = [model.keypoint_index("left_foot"), model.keypoint_index("right_foot")]
    # both feet float together: a depth error the body cannot follow without jumping
    lift = float_height * (_smooth_pulse(t, 0.35, 0.3) + _smooth_pulse(t, 1.25, 0.3))
    frames[:, feet, 2] += lift[:, None]
    frames[:, :, 1] += drift * _smooth_ramp(t, 0.0, t[-1])[:, None]
    frames += rng.normal(0.0, jitter, frames.shape)
    return KeypointTrajectory(frames, x.dt, x.adjacency, x.names)


def make_fixture(name: str, model: RobotModel | None = None, seed: int = SEED,
                 frames: int = FRAMES, dt: float = DT) -> Fixture:
    """Build a fixture from scratch; deterministic for a given seed."""
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    model = model or reference_model("mini-humanoid")
    t = np.arange(frames) * dt
    rng = np.random.default_rng(seed)
    if name == "one-foot":
        Q = _plant(model, _one_foot_joints(t, model.n_q), "right_foot")
        clean = Trajectory(Q, None, dt)
        ref = _corrupt(model, fk_trajectory(model, clean), rng, t, float_height=0.0)
    else:
        Q = _plant(model, _squat_joints(t, model.n_q), "left_foot")
        clean = Trajectory(Q, None, dt)
        ref = _corrupt(model, fk_trajectory(model, clean), rng, t, drift=0.10 if name == "drift" else 0.0)
    truth = estimate_contacts(model, clean, dt=dt)
    return Fixture(name, clean, ref, truth)


def fixture_dir() -> Path:
    return Path(str(resources.files("dynretarget.data").joinpath("fixtures")))


def write_fixtures(out: Path | None = None) -> list[Path]:
    """Regenerate the shipped fixture files."""
    from . import io

    out = Path(out) if out is not None else fixture_dir()
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in FIXTURES:
        fx = make_fixture(name)
        for suffix, writer, obj in (("keypoints.txt", io.write_keypoints, fx.reference),
                                    ("contacts.txt", io.write_contacts, fx.truth)):
            p = out / f"{name}.{suffix}"
            writer(p, obj)
            written.append(p)
        p = out / f"{name}.clean.txt"
        io.write_trajectory(p, fx.clean, "mini-humanoid")
        written.append(p)
    return written


def load_fixture(name: str) -> Fixture:
    """Read a shipped fixture (reference keypoints, truth labels and the clean motion)."""
    from . import io

    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    d = fixture_dir()
    clean, _ = io.read_trajectory(d / f"{name}.clean.txt")
    return Fixture(name, clean, io.read_keypoints(d / f"{name}.keypoints.txt"),
                   io.read_contacts(d / f"{name}.contacts.txt"))
