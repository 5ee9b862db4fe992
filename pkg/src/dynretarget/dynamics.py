"""Forward simulation (the rollout map) and inverse-dynamics kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _kernels as K
from .model import RobotModel

CONTROL_MODES = ("torque", "target")


class DynamicsError(RuntimeError):
    """Simulation produced a non-finite quantity."""


@dataclass(frozen=True)
class State:
    q: np.ndarray
    v: np.ndarray


@dataclass
class Trajectory:
    """Configurations ``q`` (T x (7 + n_q)) and velocities ``v`` (T x (6 + n_q)) at a fixed period."""

    q: np.ndarray
    v: np.ndarray
    dt: float

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        if self.v is None:
            self.v = np.zeros((self.q.shape[0], self.q.shape[1] - 1))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.q.shape[0] != self.v.shape[0]:
            raise ValueError("configuration and velocity rows differ")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self) -> int:
        return self.q.shape[0]

    @property
    def states(self) -> Iterator[State]:
        for q, v in zip(self.q, self.v):
            yield State(q, v)

    @property
    def joints(self) -> np.ndarray:
        return self.q[:, 7:]

    def final_state(self) -> State:
        return State(self.q[-1].copy(), self.v[-1].copy())

    def concat(self, other: "Trajectory") -> "Trajectory":
        """Append ``other`` whose first row repeats this trajectory's last row."""
        return Trajectory(np.vstack([self.q, other.q[1:]]), np.vstack([self.v, other.v[1:]]), self.dt)


@dataclass
class ControlSequence:
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if not np.all(np.isfinite(self.controls)):
            raise ValueError("controls must be finite")

    def __len__(self) -> int:
        return self.controls.shape[0]


@dataclass(frozen=True)
class ContactModelParams:
    stiffness: float = 2e4
    damping: float = 500.0
    ground_height: float = 0.0
    regularization_velocity: float = 0.05
    friction: float | None = None  # None -> model friction coefficient

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("contact stiffness must be positive")
        if self.damping < 0:
            raise ValueError("contact damping must be non-negative")
        if not self.regularization_velocity > 0:
            raise ValueError("regularization velocity must be positive")

    def mu(self, model: RobotModel) -> float:
        return model.friction_coefficient if self.friction is None else self.friction


NO_CONTACT = None


@dataclass
class DynamicsConfig:
    """Control interpretation and integration settings shared by rollouts and the planner."""

    mode: str = "target"
    control_dt: float = 0.02
    substeps: int = 10
    kp: float | Sequence[float] | None = None
    kd: float | Sequence[float] | None = None
    contact: ContactModelParams | None = field(default_factory=ContactModelParams)

    def __post_init__(self):
        if self.mode not in CONTROL_MODES:
            raise ValueError(f"mode must be one of {CONTROL_MODES}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not 0 < self.control_dt / self.substeps <= 0.01:
            raise ValueError("physics dt must lie in (0, 0.01] s")

    def gains(self, model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
        kp0, kd0 = default_pd_gains(model)
        kp = kp0 if self.kp is None else np.broadcast_to(np.asarray(self.kp, float), (model.n_q,)).copy()
        kd = kd0 if self.kd is None else np.broadcast_to(np.asarray(self.kd, float), (model.n_q,)).copy()
        return kp, kd


def default_pd_gains(model: RobotModel) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness proportional to the torque limit (saturates at 0.25 rad error), kd = kp / 40."""
    effort = model.arrays.effort
    kp = 4.0 * effort
    return kp, kp / 40.0


def _mode_code(mode: str) -> int:
    return CONTROL_MODES.index(mode)


# --------------------------------------------------------------------------
# kernels


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    a = model.arrays
    return K.mass_matrix(a.parent, a.axis, a.trans, a.rot, a.mass, a.com, a.inertia, np.asarray(q, float))


def inverse_dynamics(
    model: RobotModel,
    q: np.ndarray,
    v: np.ndarray,
    a: np.ndarray,
    contact_forces: Sequence[tuple[int, np.ndarray]] = (),
) -> np.ndarray:
    """Generalized force needed to realize acceleration ``a`` given external contact forces.

    The first six entries are the base wrench (force in world, moment in the base frame)
    that no actuator can supply; the remaining ``n_q`` are joint torques.
    """
    ar = model.arrays
    q = np.asarray(q, float)
    tau = K.rnea(ar.parent, ar.axis, ar.trans, ar.rot, ar.mass, ar.com, ar.inertia, ar.gravity,
                 q, np.asarray(v, float), np.asarray(a, float))
    if len(contact_forces):
        idx = np.array([i for i, _ in contact_forces], dtype=np.int64)
        J = K.points_jacobian(ar.parent, ar.axis, ar.trans, ar.rot, q, ar.clinks[idx], ar.coffsets[idx])
        for Jk, (_, f) in zip(J, contact_forces):
            tau = tau - Jk.T @ np.asarray(f, float)
    return tau


def bias_forces(model: RobotModel, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms: inverse dynamics at zero acceleration."""
    return inverse_dynamics(model, q, v, np.zeros(model.nv))


def forward_dynamics(model: RobotModel, q: np.ndarray, v: np.ndarray, tau_full: np.ndarray) -> np.ndarray:
    """Contact-free acceleration ``M^-1 (tau - bias)`` restricted to the model's free coordinates."""
    M = mass_matrix(model, q)
    rhs = np.asarray(tau_full, float) - bias_forces(model, q, v)
    free = model.free_dofs
    a = np.zeros(model.nv)
    a[free] = np.linalg.solve(M[np.ix_(free, free)], rhs[free])
    return a


def kinetic_energy(model: RobotModel, q: np.ndarray, v: np.ndarray) -> float:
    return 0.5 * float(v @ mass_matrix(model, q) @ v)


def potential_energy(model: RobotModel, q: np.ndarray) -> float:
    a = model.arrays
    R, P = K.link_poses(a.parent, a.axis, a.trans, a.rot, np.asarray(q, float))
    coms = P + np.einsum("lij,lj->li", R, a.com)
    return -float(np.sum(a.mass * (coms @ a.gravity)))


# --------------------------------------------------------------------------
# simulation


_NONFINITE = {
    K.STATUS_NONFINITE_FORCE: "generalized force",
    K.STATUS_NONFINITE_VELOCITY: "velocity",
    K.STATUS_NONFINITE_CONFIGURATION: "configuration",
}


def _contact_args(model: RobotModel, contact: ContactModelParams | None):
    a = model.arrays
    if contact is None:
        # contact-free: no contact sites and any parameters
        return a.clinks[:0], a.coffsets[:0], 1.0, 0.0, 0.0, 1.0, 1.0
    return (a.clinks, a.coffsets, contact.stiffness, contact.damping, contact.ground_height,
            contact.mu(model), contact.regularization_velocity)


def step(
    model: RobotModel,
    s: State,
    u: np.ndarray,
    dt: float,
    contact: ContactModelParams | None,
    *,
    mode: str = "torque",
    kp: np.ndarray | None = None,
    kd: np.ndarray | None = None,
    return_torque: bool = False,
):
    """Advance one physics step with control ``u`` held constant.

    Contact forces come from the current state (spring-damper normal clamped at zero,
    regularized Coulomb friction); velocities are updated first, with contact damping
    treated linearly-implicitly, then positions. Joints are clamped to their limits.
    """
    if not 0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01] s")
    a = model.arrays
    if kp is None or kd is None:
        kp0, kd0 = default_pd_gains(model)
        kp = kp0 if kp is None else kp
        kd = kd0 if kd is None else kd
    clinks, coffsets, k, c, g, mu, vreg = _contact_args(model, contact)
    q1, v1, tau, status = K.step(
        a.parent, a.axis, a.trans, a.rot, a.mass, a.com, a.inertia, a.gravity,
        a.lower, a.upper, a.effort, a.free_idx, clinks, coffsets,
        np.asarray(s.q, float), np.asarray(s.v, float), np.asarray(u, float),
        _mode_code(mode), np.asarray(kp, float), np.asarray(kd, float), float(dt),
        k, c, g, mu, vreg,
    )
    if status != K.STATUS_OK:
        raise DynamicsError(f"non-finite {_NONFINITE[status]} after step")
    assert np.all(np.abs(tau) <= a.effort + 1e-12)
    out = State(q1, v1)
    return (out, tau) if return_torque else out


def continue_rollout(
    model: RobotModel,
    s0: State,
    U: ControlSequence | np.ndarray,
    config: DynamicsConfig | None = None,
) -> Trajectory:
    """Roll out from an arbitrary state; returns len(U) + 1 states including ``s0``."""
    config = config or DynamicsConfig()
    controls = U.controls if isinstance(U, ControlSequence) else np.atleast_2d(np.asarray(U, float))
    if controls.shape[1] != model.n_q:
        raise ValueError(f"controls have {controls.shape[1]} columns, model has {model.n_q} joints")
    a = model.arrays
    kp, kd = config.gains(model)
    clinks, coffsets, k, c, g, mu, vreg = _contact_args(model, config.contact)
    Q, V, status, t = K.rollout(
        a.parent, a.axis, a.trans, a.rot, a.mass, a.com, a.inertia, a.gravity,
        a.lower, a.upper, a.effort, a.free_idx, clinks, coffsets,
        np.asarray(s0.q, float), np.asarray(s0.v, float), np.ascontiguousarray(controls),
        _mode_code(config.mode), kp, kd, float(config.control_dt), int(config.substeps),
        k, c, g, mu, vreg,
    )
    if status != K.STATUS_OK:
        raise DynamicsError(f"non-finite {_NONFINITE[status]} at control step {t}")
    return Trajectory(Q, V, config.control_dt)


def rollout(
    model: RobotModel,
    q0: np.ndarray,
    U: ControlSequence | np.ndarray,
    contact: ContactModelParams | None = ContactModelParams(),
    substeps: int = 10,
    *,
    mode: str = "torque",
    kp=None,
    kd=None,
) -> Trajectory:
    """The rollout map: integrate from ``q0`` at rest under the control sequence."""
    dt = U.dt if isinstance(U, ControlSequence) else 0.02
    cfg = DynamicsConfig(mode=mode, control_dt=dt, substeps=substeps, kp=kp, kd=kd, contact=contact)
    return continue_rollout(model, State(np.asarray(q0, float), np.zeros(model.nv)), U, cfg)


# --------------------------------------------------------------------------
# differentiation of configuration sequences


def _config_rows(Q) -> np.ndarray:
    return Q.q if isinstance(Q, Trajectory) else np.atleast_2d(np.asarray(Q, float))


def _half_step_velocities(q: np.ndarray, dt: float) -> np.ndarray:
    """(q_{t+1} - q_t) / dt in velocity coordinates; base rotation in the body frame."""
    T = q.shape[0]
    out = np.empty((T - 1, q.shape[1] - 1))
    out[:, 0:3] = (q[1:, 0:3] - q[:-1, 0:3]) / dt
    out[:, 6:] = (q[1:, 7:] - q[:-1, 7:]) / dt
    for t in range(T - 1):
        rel = K.quat_mul(K.quat_conj(q[t, 3:7]), q[t + 1, 3:7])
        out[t, 3:6] = K.quat_log(rel) / dt
    return out


def finite_difference_derivatives(Q, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Velocities (central, one-sided at the ends) and accelerations (second differences).

    Accelerations are differences of consecutive half-step velocities, exact on
    quadratics at every interior sample; the end samples copy their neighbours.
    """
    q = _config_rows(Q)
    T = q.shape[0]
    if T < 3:
        raise ValueError("need at least 3 configurations to differentiate")
    half = _half_step_velocities(q, dt)
    v = np.empty((T, half.shape[1]))
    v[0] = half[0]
    v[-1] = half[-1]
    v[1:-1] = 0.5 * (half[:-1] + half[1:])
    a = np.empty_like(v)
    a[1:-1] = (half[1:] - half[:-1]) / dt
    a[0] = a[1]
    a[-1] = a[-2]
    return v, a
