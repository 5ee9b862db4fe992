"""Evaluation metrics: contact accuracy, success, tracking errors, foot slip, reward terms."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels as K
from .dynamics import State, Trajectory
from .feasibility import ContactSequence
from .kinematics import KeypointTrajectory, align_reference, contacts_along, fk_trajectory
from .model import RobotModel
from .retarget_cost import laplacian_errors

SUCCESS_THRESHOLD = 0.5  # m of pelvis deviation


def _flags(c) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(c, "flags", c), dtype=bool))


def contact_error_rate(estimated, truth) -> float:
    """Fraction of (timestep, group) flags that disagree."""
    a, b = _flags(estimated), _flags(truth)
    if a.shape != b.shape:
        raise ValueError(f"contact sequences differ in shape: {a.shape} vs {b.shape}")
    return float(np.count_nonzero(a != b)) / a.size


def _configs(Q) -> np.ndarray:
    return Q.q if isinstance(Q, Trajectory) else np.atleast_2d(np.asarray(Q, float))


def pelvis_trace(model: RobotModel, Q, keypoint: str = "pelvis") -> np.ndarray:
    k = model.keypoint_index(keypoint)
    a = model.arrays
    return K.points_along(a.parent, a.axis, a.trans, a.rot, np.ascontiguousarray(_configs(Q)),
                          a.klinks[k:k + 1], a.koffsets[k:k + 1])[:, 0]


def success_from_trace(pelvis, pelvis_ref, threshold: float = SUCCESS_THRESHOLD) -> bool:
    p, r = np.asarray(pelvis, float), np.asarray(pelvis_ref, float)
    if p.shape != r.shape:
        raise ValueError(f"pelvis traces differ in length: {p.shape} vs {r.shape}")
    return bool(np.max(np.linalg.norm(p - r, axis=-1), initial=0.0) <= threshold)


def success(model: RobotModel, Q, pelvis_ref, threshold: float = SUCCESS_THRESHOLD,
            keypoint: str = "pelvis") -> bool:
    """False iff the pelvis strays more than ``threshold`` from its reference at any frame."""
    return success_from_trace(pelvis_trace(model, Q, keypoint), pelvis_ref, threshold)


def _kp(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), float)


def tracking_errors(Q, Q_ref, x, x_ref, L) -> tuple[float, float, float]:
    """(joint RMSE rad, mean keypoint distance m, mean Laplacian error m).

    Means are taken jointly over all frames and keypoints (or joints).
    """
    qa, qb = _configs(Q)[:, 7:], _configs(Q_ref)[:, 7:]
    if qa.shape != qb.shape:
        raise ValueError(f"joint trajectories differ in shape: {qa.shape} vs {qb.shape}")
    xa, xb = _kp(x), _kp(x_ref)
    if xa.shape != xb.shape:
        raise ValueError(f"keypoint trajectories differ in shape: {xa.shape} vs {xb.shape}")
    rmse = float(np.sqrt(np.mean((qa - qb) ** 2)))
    pos = float(np.mean(np.linalg.norm(xa - xb, axis=2)))
    lap = float(np.mean(laplacian_errors(xa, xb, L)))
    return rmse, pos, lap


def foot_slip(model: RobotModel, Q, contacts) -> float:
    """Summed horizontal travel of each group's centroid between consecutive in-contact frames."""
    flags = _flags(contacts)
    q = _configs(Q)
    groups = list(model.contact_groups.values())
    if flags.shape != (q.shape[0], len(groups)):
        raise ValueError("contact flags do not match trajectory length and contact groups")
    X = contacts_along(model, q)
    total = 0.0
    for g, idx in enumerate(groups):
        c = X[:, idx, :2].mean(axis=1)
        both = flags[1:, g] & flags[:-1, g]
        total += float(np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)[both]))
    return total


# --------------------------------------------------------------------------
# reward terms


@dataclass(frozen=True)
class RewardWeights:
    joint_position: tuple[float, float] = (0.5, 2.0)  # (weight, scale)
    joint_velocity: tuple[float, float] = (0.1, 10.0)
    root_pose: tuple[float, float] = (0.15, 0.45)
    root_velocity: tuple[float, float] = (0.1, 1.0)
    end_effector: tuple[float, float] = (0.15, 0.32)
    root_orientation_factor: float = 0.1
    root_angular_factor: float = 0.1
    joint_acceleration: float = -1e-7
    joint_torque: float = -1e-7
    action_rate: float = -0.1
    joint_velocity_penalty: float = -0.005
    foot_slip: float = -0.2
    force_threshold: float = 5.0  # N


@dataclass
class RewardBreakdown:
    joint_position: float
    joint_velocity: float
    root_pose: float
    root_velocity: float
    end_effector: float
    joint_acceleration: float
    joint_torque: float
    action_rate: float
    joint_velocity_penalty: float
    foot_slip: float

    @property
    def total(self) -> float:
        return float(sum(getattr(self, f.name) for f in fields(self)))


def _sq(x) -> float:
    x = np.asarray(x, float)
    return float(x.ravel() @ x.ravel())


def reward_terms(
    state: State,
    ref_state: State,
    action,
    prev_action,
    foot_contact_forces=(),
    *,
    ee: np.ndarray | None = None,
    ee_ref: np.ndarray | None = None,
    joint_acc=None,
    torques=None,
    foot_velocities=None,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Imitation reward rows for one timestep.

    ``foot_velocities`` holds one world velocity per foot and ``foot_contact_forces``
    the matching normal forces; a foot counts toward slip when its force exceeds
    the threshold. Omitted penalty inputs contribute zero.
    """
    q, v = np.asarray(state.q, float), np.asarray(state.v, float)
    qr, vr = np.asarray(ref_state.q, float), np.asarray(ref_state.v, float)
    if q.shape != qr.shape or v.shape != vr.shape:
        raise ValueError("state and reference dimensions differ")
    action = np.asarray(action, float)
    prev_action = np.asarray(prev_action, float)
    if action.shape != prev_action.shape:
        raise ValueError("action dimensions differ")
    w = weights

    def track(pair, err_sq):
        weight, scale = pair
        return weight * math.exp(-err_sq / scale ** 2)

    dtheta = float(np.linalg.norm(K.quat_log(K.quat_mul(K.quat_conj(qr[3:7]), q[3:7]))))
    if ee is None:
        ee_err = 0.0
    else:
        ee_a, ee_b = np.asarray(ee, float), np.asarray(ee_ref, float)
        if ee_a.shape != ee_b.shape:
            raise ValueError("end-effector dimensions differ")
        ee_err = _sq(ee_a - ee_b)
    slip = 0.0
    if foot_velocities is not None:
        fv = np.atleast_2d(np.asarray(foot_velocities, float))
        fc = np.atleast_1d(np.asarray(foot_contact_forces, float))
        if fv.shape[0] != fc.shape[0]:
            raise ValueError("one contact force per foot velocity required")
        slip = float(np.sum(np.linalg.norm(fv[:, :2], axis=1) * (fc > w.force_threshold)))
    return RewardBreakdown(
        joint_position=track(w.joint_position, _sq(q[7:] - qr[7:])),
        joint_velocity=track(w.joint_velocity, _sq(v[6:] - vr[6:])),
        root_pose=track(w.root_pose, _sq(q[0:3] - qr[0:3]) + w.root_orientation_factor * dtheta ** 2),
        root_velocity=track(w.root_velocity,
                            _sq(v[0:3] - vr[0:3]) + w.root_angular_factor * _sq(v[3:6] - vr[3:6])),
        end_effector=track(w.end_effector, ee_err),
        joint_acceleration=w.joint_acceleration * (0.0 if joint_acc is None else _sq(joint_acc)),
        joint_torque=w.joint_torque * (0.0 if torques is None else _sq(torques)),
        action_rate=w.action_rate * _sq(action - prev_action),
        joint_velocity_penalty=w.joint_velocity_penalty * _sq(v[6:]),
        foot_slip=w.foot_slip * slip,
    )


# --------------------------------------------------------------------------
# reports


SCALAR_FIELDS = ("contact_error_rate", "joints_rmse", "mean_position_error", "mean_laplacian_error",
                 "foot_slip", "infeasible_fraction")


@dataclass
class MetricsReport:
    contact_error_rate: float
    success: bool
    joints_rmse: float
    mean_position_error: float
    mean_laplacian_error: float
    foot_slip: float
    infeasible_fraction: float = math.nan
    distance_to_reference: float = math.nan

    def __post_init__(self):
        for name in ("contact_error_rate", "infeasible_fraction"):
            val = getattr(self, name)
            if not math.isnan(val) and not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AggregateReport:
    n: int
    success_rate: float
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)  # population std

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_seeds(reports: list[MetricsReport]) -> AggregateReport:
    """Per-field mean and population standard deviation, plus the success rate."""
    if not reports:
        raise ValueError("no reports to aggregate")
    names = SCALAR_FIELDS + ("distance_to_reference",)
    mean, std = {}, {}
    for name in names:
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        mean[name] = float(vals.mean())
        std[name] = float(vals.std())
    rate = sum(bool(r.success) for r in reports) / len(reports)
    return AggregateReport(len(reports), rate, mean, std)


def evaluate(model: RobotModel, Q: Trajectory, Q_ref, x_ref: KeypointTrajectory, L,
             truth: ContactSequence | None, estimated: ContactSequence,
             infeasible_fraction: float = math.nan, x: KeypointTrajectory | None = None,
             distance: float = math.nan) -> MetricsReport:
    """Assemble a report for one retargeted trajectory."""
    x = x if x is not None else fk_trajectory(model, Q)
    frames, _ = align_reference(model, x_ref)
    rmse, pos, lap = tracking_errors(Q, Q_ref, x, frames, L)
    k = model.keypoint_index("pelvis") if "pelvis" in model.keypoint_names else 0
    ok = success_from_trace(x.frames[:, k], frames[:, k])
    cer = contact_error_rate(estimated, truth) if truth is not None else math.nan
    slip = foot_slip(model, Q, estimated)
    return MetricsReport(cer, ok, rmse, pos, lap, slip, infeasible_fraction, distance)
