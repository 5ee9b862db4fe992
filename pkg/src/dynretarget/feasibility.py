"""Physical-feasibility verification of configuration trajectories.

Contacts are estimated from foot heights. At each timestep a small QP looks for
joint torques within limits and rigid contact forces inside a friction pyramid
that reproduce the finite-difference accelerations. This path uses its own rigid
contact model and shares nothing with the compliant contacts of the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import Trajectory, finite_difference_derivatives
from .model import RobotModel
from .qp import QpProblem, QpSolution, solve_qp

DEFAULT_CONTACT_THRESHOLD = 0.02  # m


@dataclass
class ContactSequence:
    flags: np.ndarray  # (T, n_groups) bool
    dt: float
    groups: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.flags = np.atleast_2d(np.asarray(self.flags, dtype=bool))
        if self.groups and len(self.groups) != self.flags.shape[1]:
            raise ValueError("one group name per column required")

    @property
    def T(self) -> int:
        return self.flags.shape[0]

    def __len__(self) -> int:
        return self.T


@dataclass(frozen=True)
class FeasibilityTolerances:
    eps_dyn: float | None = None  # N; None means 1e-2 x model weight
    eps_dyn_relative: float = 1e-2
    pyramid: str = "inner"  # "inner" uses mu / sqrt(2) per tangent, "outer" uses mu
    qp_tol: float = 1e-9
    qp_max_iter: int = 100

    def resolve(self, model: RobotModel) -> float:
        return self.eps_dyn if self.eps_dyn is not None else self.eps_dyn_relative * model.weight


@dataclass
class FeasibilityVerdict:
    feasible: bool
    residual: float  # N (or N*m), norm of the unmet generalized force
    torque_margin: float  # min over joints of limit - |tau|
    cone_margin: float  # min over active points of the pyramid slack (inf with no contact)
    indeterminate: bool = False
    torques: np.ndarray | None = None
    forces: np.ndarray | None = None  # (n_active, 3)
    qp: QpSolution | None = None


@dataclass
class FeasibilityReport:
    verdicts: list[FeasibilityVerdict]
    contacts: ContactSequence
    eps_dyn: float

    @property
    def T(self) -> int:
        return len(self.verdicts)

    @property
    def feasible(self) -> np.ndarray:
        return np.array([v.feasible for v in self.verdicts], dtype=bool)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([v.residual for v in self.verdicts])

    @property
    def infeasible_fraction(self) -> float:
        return float(np.count_nonzero(~self.feasible)) / self.T

    @property
    def indeterminate_count(self) -> int:
        return sum(v.indeterminate for v in self.verdicts)

    @property
    def worst(self) -> tuple[float, int]:
        r = self.residuals
        t = int(np.argmax(r))
        return float(r[t]), t


def estimate_contacts(model: RobotModel, Q, threshold: float = DEFAULT_CONTACT_THRESHOLD,
                      ground: float = 0.0, dt: float | None = None) -> ContactSequence:
    """Group flag is set when its lowest contact point is below ``threshold`` above the ground."""
    if threshold <= 0:
        raise ValueError("contact threshold must be positive")
    q = Q.q if isinstance(Q, Trajectory) else np.atleast_2d(np.asarray(Q, float))
    dt = Q.dt if isinstance(Q, Trajectory) and dt is None else (dt or 0.0)
    a = model.arrays
    X = K.points_along(a.parent, a.axis, a.trans, a.rot, np.ascontiguousarray(q), a.clinks, a.coffsets)
    heights = X[:, :, 2] - ground
    groups = model.contact_groups
    flags = np.zeros((q.shape[0], len(groups)), dtype=bool)
    for g, idx in enumerate(groups.values()):
        flags[:, g] = heights[:, idx].min(axis=1) < threshold
    return ContactSequence(flags, dt, list(groups))


def active_points(model: RobotModel, flags_t: np.ndarray) -> list[int]:
    """All contact points of the groups flagged in contact."""
    out = []
    for on, idx in zip(flags_t, model.contact_groups.values()):
        if on:
            out.extend(idx)
    return sorted(out)


def check_timestep_feasibility(
    model: RobotModel,
    q: np.ndarray,
    v: np.ndarray,
    a: np.ndarray,
    contacts=(),
    tol: FeasibilityTolerances = FeasibilityTolerances(),
) -> FeasibilityVerdict:
    """Least unmet generalized force over admissible torques and contact forces.

    Solves min ||M a + h - S'tau - sum J_c' lambda_c||^2 over the free base rows and
    all joint rows, with |tau| <= effort, lambda_z >= 0 and a 4-sided pyramid on
    the tangential components.
    """
    arr = model.arrays
    q = np.asarray(q, float)
    pts = np.asarray(list(contacts), dtype=np.int64)
    need = K.rnea(arr.parent, arr.axis, arr.trans, arr.rot, arr.mass, arr.com, arr.inertia,
                  arr.gravity, q, np.asarray(v, float), np.asarray(a, float))
    free = model.free_dofs
    nq, nc = model.n_q, len(pts)
    W = model.weight  # scale forces to O(1)
    B = np.zeros((model.nv, nq + 3 * nc))
    B[6:, :nq] = np.eye(nq)
    if nc:
        J = K.points_jacobian(arr.parent, arr.axis, arr.trans, arr.rot, q, arr.clinks[pts], arr.coffsets[pts])
        for c in range(nc):
            B[:, nq + 3 * c:nq + 3 * c + 3] = J[c].T
    B = B[free]
    rhs = need[free] / W

    mu = model.friction_coefficient / (math.sqrt(2.0) if tol.pyramid == "inner" else 1.0)
    G = np.zeros((5 * nc, nq + 3 * nc))
    for c in range(nc):
        o = nq + 3 * c
        r = 5 * c
        G[r + 0, o + 0], G[r + 0, o + 2] = 1.0, -mu
        G[r + 1, o + 0], G[r + 1, o + 2] = -1.0, -mu
        G[r + 2, o + 1], G[r + 2, o + 2] = 1.0, -mu
        G[r + 3, o + 1], G[r + 3, o + 2] = -1.0, -mu
        G[r + 4, o + 2] = -1.0
    lim = np.concatenate([arr.effort / W, np.full(3 * nc, np.inf)])
    prob = QpProblem(B.T @ B, -B.T @ rhs, G=G, h=np.zeros(5 * nc), lb=-lim, ub=lim)
    sol = solve_qp(prob, tol=tol.qp_tol, max_iter=tol.qp_max_iter)
    x = sol.x
    residual = W * float(np.linalg.norm(B @ x - rhs))
    tau = W * x[:nq]
    lam = W * x[nq:].reshape(nc, 3)
    torque_margin = float(np.min(arr.effort - np.abs(tau), initial=math.inf))
    if nc:
        cone = np.minimum(mu * lam[:, 2] - np.abs(lam[:, 0]), mu * lam[:, 2] - np.abs(lam[:, 1]))
        cone_margin = float(min(cone.min(), lam[:, 2].min()))
    else:
        cone_margin = math.inf
    eps = tol.resolve(model)
    indeterminate = not sol.converged
    feasible = (not indeterminate) and residual <= eps
    return FeasibilityVerdict(feasible, residual, torque_margin, cone_margin, indeterminate, tau, lam, sol)


def check_trajectory_feasibility(
    model: RobotModel,
    Q,
    dt: float | None = None,
    threshold: float = DEFAULT_CONTACT_THRESHOLD,
    tol: FeasibilityTolerances = FeasibilityTolerances(),
    contacts: ContactSequence | None = None,
) -> FeasibilityReport:
    """Per-timestep verdicts for a configuration sequence.

    Velocities and accelerations come from finite differences of the configurations
    alone, so the check never sees the simulator state.
    """
    q = Q.q if isinstance(Q, Trajectory) else np.atleast_2d(np.asarray(Q, float))
    if dt is None:
        if not isinstance(Q, Trajectory):
            raise ValueError("dt required for a bare configuration stack")
        dt = Q.dt
    v, acc = finite_difference_derivatives(q, dt)
    seq = contacts if contacts is not None else estimate_contacts(model, q, threshold, dt=dt)
    if seq.flags.shape != (q.shape[0], len(model.contact_groups)):
        raise ValueError("contact sequence does not match the trajectory")
    verdicts = [
        check_timestep_feasibility(model, q[t], v[t], acc[t], active_points(model, seq.flags[t]), tol)
        for t in range(q.shape[0])
    ]
    return FeasibilityReport(verdicts, seq, tol.resolve(model))
