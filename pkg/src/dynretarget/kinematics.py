"""Forward kinematics of keypoints, Jacobians, and per-frame IK retargeting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import Trajectory
from .model import RobotModel
from .retarget_cost import build_laplacian


@dataclass
class Configuration:
    """Structured view of a configuration vector; most functions take the flat vector."""

    base_position: np.ndarray
    base_orientation: np.ndarray
    joints: np.ndarray

    @classmethod
    def from_vector(cls, q) -> "Configuration":
        q = np.asarray(q, float)
        return cls(q[0:3].copy(), q[3:7].copy(), q[7:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.base_position, self.base_orientation, self.joints]).astype(float)


def as_config(q) -> np.ndarray:
    if isinstance(q, Configuration):
        q = q.to_vector()
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q[3:7]) - 1.0) > 1e-9:
        raise ValueError("base quaternion must have unit norm")
    if not np.all(np.isfinite(q)):
        raise ValueError("configuration must be finite")
    return q


@dataclass
class KeypointTrajectory:
    frames: np.ndarray  # (T, m, 3), meters, world frame
    dt: float
    adjacency: list[tuple[int, int]] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim == 2:
            self.frames = self.frames[None]
        if self.frames.ndim != 3 or self.frames.shape[2] != 3 or self.frames.shape[0] < 1:
            raise ValueError(f"keypoint frames must be (T >= 1, m, 3), got {self.frames.shape}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("keypoint frames must be finite")
        self.adjacency = [tuple(map(int, e)) for e in self.adjacency]
        if self.names is not None and len(self.names) != self.m:
            raise ValueError("one name per keypoint required")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def m(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.T

    def concat(self, other: "KeypointTrajectory") -> "KeypointTrajectory":
        return KeypointTrajectory(np.concatenate([self.frames, other.frames]), self.dt, self.adjacency, self.names)

    def window(self, start: int, length: int) -> np.ndarray:
        """Frames [start, start + length), holding the last frame past the end."""
        idx = np.minimum(np.arange(start, start + length), self.T - 1)
        return self.frames[idx]


def keypoint_positions(model: RobotModel, q) -> np.ndarray:
    """World positions (m x 3) of the model keypoints."""
    a = model.arrays
    return K.points_along(a.parent, a.axis, a.trans, a.rot, as_config(q)[None], a.klinks, a.koffsets)[0]


def contact_positions(model: RobotModel, q) -> np.ndarray:
    a = model.arrays
    return K.points_along(a.parent, a.axis, a.trans, a.rot, as_config(q)[None], a.clinks, a.coffsets)[0]


def _rows(Q) -> tuple[np.ndarray, float | None]:
    if isinstance(Q, Trajectory):
        return Q.q, Q.dt
    return np.atleast_2d(np.asarray(Q, dtype=float)), None


def keypoints_along(model: RobotModel, Q) -> np.ndarray:
    """(T, m, 3) keypoint positions for a trajectory or a stack of configurations."""
    q, _ = _rows(Q)
    a = model.arrays
    return K.points_along(a.parent, a.axis, a.trans, a.rot, np.ascontiguousarray(q), a.klinks, a.koffsets)


def contacts_along(model: RobotModel, Q) -> np.ndarray:
    q, _ = _rows(Q)
    a = model.arrays
    return K.points_along(a.parent, a.axis, a.trans, a.rot, np.ascontiguousarray(q), a.clinks, a.coffsets)


def fk_trajectory(model: RobotModel, Q, dt: float | None = None) -> KeypointTrajectory:
    """Map a robot trajectory to its keypoint trajectory, frame by frame."""
    q, traj_dt = _rows(Q)
    dt = traj_dt if dt is None else dt
    if dt is None:
        raise ValueError("dt required for a bare configuration stack")
    return KeypointTrajectory(keypoints_along(model, q), dt, list(model.keypoint_adjacency), model.keypoint_names)


def keypoint_jacobian(model: RobotModel, q, k: int) -> np.ndarray:
    """3 x (6 + n_q) Jacobian of keypoint ``k``.

    Columns follow the velocity convention: base linear velocity in the world frame,
    base angular velocity in the base (body) frame, then joint rates.
    """
    if not 0 <= k < model.m:
        raise IndexError(f"keypoint {k} out of range")
    a = model.arrays
    return K.points_jacobian(a.parent, a.axis, a.trans, a.rot, as_config(q), a.klinks[k:k + 1], a.koffsets[k:k + 1])[0]


def place_on_ground(model: RobotModel, q, ground: float = 0.0) -> np.ndarray:
    """Shift the base vertically so the lowest contact point (or keypoint) touches the ground."""
    q = as_config(q).copy()
    pts = contact_positions(model, q) if model.contact_points else keypoint_positions(model, q)
    q[2] += ground - pts[:, 2].min()
    return q


# --------------------------------------------------------------------------
# geometric retargeting


@dataclass
class IkOptions:
    w_p: float = 1.0
    w_l: float = 1.0
    keypoint_weights: Sequence[float] | None = None
    damping: float = 1e-3
    max_iters: int = 50
    tol: float = 1e-8
    max_backtracks: int = 8
    ground_weight: float = 10.0  # 0 disables the ground-penetration penalty
    ground_height: float = 0.0
    keypoint_map: Mapping[str, str] | None = None  # reference name -> model keypoint name
    initial: np.ndarray | None = None


@dataclass
class IkDiagnostics:
    costs: np.ndarray  # final cost per frame
    iterations: np.ndarray
    histories: list[list[float]]


def reference_index(model: RobotModel, x_ref: KeypointTrajectory, keypoint_map=None) -> np.ndarray:
    """For each model keypoint, the column of ``x_ref`` it tracks (-1 if untracked)."""
    idx = -np.ones(model.m, dtype=int)
    if keypoint_map:
        if x_ref.names is None:
            raise ValueError("a keypoint map needs named reference keypoints")
        for j, name in enumerate(x_ref.names):
            target = keypoint_map.get(name)
            if target is not None:
                idx[model.keypoint_index(target)] = j
        return idx
    if x_ref.names is not None and set(x_ref.names) >= set(model.keypoint_names):
        for k, name in enumerate(model.keypoint_names):
            idx[k] = x_ref.names.index(name)
        return idx
    if x_ref.m != model.m:
        raise ValueError(f"reference has {x_ref.m} keypoints, model {model.name!r} has {model.m}")
    return np.arange(model.m)


def align_reference(model: RobotModel, x_ref: KeypointTrajectory, keypoint_map=None) -> tuple[np.ndarray, np.ndarray]:
    """Reference frames reordered to model keypoints, plus a mask of tracked keypoints."""
    idx = reference_index(model, x_ref, keypoint_map)
    mask = idx >= 0
    frames = np.zeros((x_ref.T, model.m, 3))
    frames[:, mask] = x_ref.frames[:, idx[mask]]
    return frames, mask


class _FrameProblem:
    def __init__(self, model: RobotModel, opts: IkOptions, mask: np.ndarray):
        self.model = model
        self.a = model.arrays
        m = model.m
        w = np.ones(m) if opts.keypoint_weights is None else np.asarray(opts.keypoint_weights, float)
        w = np.where(mask, w, 0.0)
        self.sp = np.sqrt(opts.w_p * w)[:, None]
        self.sl = np.sqrt(opts.w_l / m)
        self.sg = np.sqrt(opts.ground_weight)
        self.ground = opts.ground_height
        self.mask = mask
        self.L = build_laplacian(model.keypoint_adjacency, m)
        self.free = model.free_dofs

    def residual(self, q, target, with_jac=False):
        a = self.a
        P, J = K.points_and_jacobian(a.parent, a.axis, a.trans, a.rot, q, a.klinks, a.koffsets)
        d = np.where(self.mask[:, None], P - target, 0.0)
        below = np.minimum(P[:, 2] - self.ground, 0.0)
        r = np.concatenate([(self.sp * d).ravel(), (self.sl * (self.L @ d)).ravel(), self.sg * below])
        if not with_jac:
            return r, None
        Jd = np.where(self.mask[:, None, None], J, 0.0)[:, :, self.free]
        Jp = (self.sp[:, :, None] * Jd).reshape(-1, len(self.free))
        Jl = self.sl * np.einsum("jk,kcv->jcv", self.L, Jd).reshape(-1, len(self.free))
        Jg = self.sg * np.where((below < 0)[:, None], J[:, 2, self.free], 0.0)
        return r, np.vstack([Jp, Jl, Jg])


def _apply_step(model: RobotModel, q: np.ndarray, delta_free: np.ndarray) -> np.ndarray:
    dv = np.zeros(model.nv)
    dv[model.free_dofs] = delta_free
    out = K.integrate_config(q, dv, 1.0)
    a = model.arrays
    out[7:] = np.clip(out[7:], a.lower, a.upper)
    return out


def solve_frame(problem: _FrameProblem, q: np.ndarray, target: np.ndarray, opts: IkOptions):
    """Damped least squares with backtracking; returns (q, cost history).

    The damping starts at ``opts.damping`` and adapts: it shrinks after a full
    step is accepted and grows when the step had to be halved.
    """
    r, J = problem.residual(q, target, with_jac=True)
    cost = float(r @ r)
    history = [cost]
    n = J.shape[1]
    lam = opts.damping
    a = problem.model.arrays
    jcol = np.flatnonzero(problem.free >= 6)  # columns of the actuated joints
    for _ in range(opts.max_iters):
        g = J.T @ r
        H = J.T @ J + lam * np.eye(n)
        # joints resting on a limit and pushed outward are frozen, then the step is re-solved
        active = np.zeros(n, dtype=bool)
        for _ in range(n + 1):
            keep = ~active
            delta = np.zeros(n)
            delta[keep] = -np.linalg.solve(H[np.ix_(keep, keep)], g[keep])
            qj = q[7:][problem.free[jcol] - 6]
            dj = delta[jcol]
            lo, hi = a.lower[problem.free[jcol] - 6], a.upper[problem.free[jcol] - 6]
            push = ((qj <= lo) & (dj < 0)) | ((qj >= hi) & (dj > 0))
            if not push.any():
                break
            active[jcol[push]] = True
        accepted = False
        for halvings in range(opts.max_backtracks + 1):
            q_new = _apply_step(problem.model, q, delta)
            r_new, _ = problem.residual(q_new, target)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                accepted = True
                break
            delta = 0.5 * delta
        if not accepted:
            break
        lam = max(lam * 0.1, 1e-10) if halvings == 0 else min(lam * 10.0, 1e3)
        change = abs(np.sqrt(cost) - np.sqrt(cost_new))
        q = q_new
        cost = cost_new
        history.append(cost)
        if change < opts.tol:
            break
        r, J = problem.residual(q, target, with_jac=True)
    return q, history


def initial_guess(model: RobotModel, frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Neutral pose translated so tracked keypoints match the first reference frame on average."""
    q = model.neutral_configuration()
    if mask.any():
        zero = keypoint_positions(model, q)
        q[0:3] += (frames[0, mask] - zero[mask]).mean(axis=0)
    return q


def geometric_retarget_with_diagnostics(
    model: RobotModel, x_ref: KeypointTrajectory, opts: IkOptions | None = None
) -> tuple[Trajectory, IkDiagnostics]:
    opts = opts or IkOptions()
    frames, mask = align_reference(model, x_ref, opts.keypoint_map)
    problem = _FrameProblem(model, opts, mask)
    q = as_config(opts.initial).copy() if opts.initial is not None else initial_guess(model, frames, mask)
    Q = np.empty((x_ref.T, model.nq_config))
    costs = np.empty(x_ref.T)
    iters = np.empty(x_ref.T, dtype=int)
    histories = []
    for t in range(x_ref.T):
        q, hist = solve_frame(problem, q, frames[t], opts)
        Q[t] = q
        costs[t] = hist[-1]
        iters[t] = len(hist) - 1
        histories.append(hist)
    return Trajectory(Q, None, x_ref.dt), IkDiagnostics(costs, iters, histories)


def geometric_retarget(model: RobotModel, x_ref: KeypointTrajectory, opts: IkOptions | None = None) -> Trajectory:
    """Per-frame IK fit of the model to the reference keypoints, warm-started frame to frame."""
    return geometric_retarget_with_diagnostics(model, x_ref, opts)[0]
