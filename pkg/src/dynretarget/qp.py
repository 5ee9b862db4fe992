"""Dense convex QP by a primal-dual interior-point method (Mehrotra predictor-corrector).

    minimize    1/2 x'Px + q'x
    subject to  A x = b,  G x <= h,  lb <= x <= ub

Problems here are small (tens of variables), so every Newton system is solved densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, float))
        self.q = np.atleast_1d(np.asarray(self.q, float))
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-9 * (1.0 + np.abs(self.P).max(initial=0.0)):
            raise ValueError("P must be symmetric")
        self.A, self.b = _rows(self.A, self.b, n, "A", "b")
        self.G, self.h = _rows(self.G, self.h, n, "G", "h")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequality rows G x <= h, with finite bounds appended."""
        eye = np.eye(self.n)
        up = np.isfinite(self.ub)
        lo = np.isfinite(self.lb)
        G = np.vstack([self.G, eye[up], -eye[lo]])
        h = np.concatenate([self.h, self.ub[up], -self.lb[lo]])
        return G, h


def _rows(M, v, n, name_m, name_v):
    if M is None:
        return np.zeros((0, n)), np.zeros(0)
    M = np.atleast_2d(np.asarray(M, float))
    v = np.atleast_1d(np.asarray(v, float))
    if M.shape[1] != n or M.shape[0] != v.shape[0]:
        raise ValueError(f"{name_m}/{name_v} dimensions inconsistent with {n} variables")
    return M, v


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    status: str  # "converged" or "max_iterations"
    iterations: int
    y: np.ndarray  # equality multipliers
    z: np.ndarray  # inequality multipliers (rows of QpProblem.inequalities)
    primal_residual: float
    dual_residual: float
    complementarity: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def kkt_residuals(p: QpProblem, x, y, z) -> tuple[float, float, float]:
    """Max-norm primal infeasibility, stationarity error and complementarity."""
    G, h = p.inequalities()
    slack = h - G @ x
    primal = max(np.max(np.abs(p.A @ x - p.b), initial=0.0), np.max(-slack, initial=0.0))
    dual = float(np.max(np.abs(p.P @ x + p.q + p.A.T @ y + G.T @ z), initial=0.0))
    comp = float(np.max(np.abs(z * np.maximum(slack, 0.0)), initial=0.0))
    return float(primal), dual, comp


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(p: QpProblem, tol: float = 1e-9, max_iter: int = 100) -> QpSolution:
    """Solve ``p``; the status is "converged" once all KKT residuals are below ``tol``."""
    n = p.n
    G, h = p.inequalities()
    A, b = p.A, p.b
    P, q = p.P, p.q
    mi, me = G.shape[0], A.shape[0]

    # start from the regularized unconstrained minimizer, slacks pushed inside
    x = np.linalg.lstsq(P + 1e-8 * np.eye(n), -q, rcond=None)[0] if n else np.zeros(0)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(mi)
    y = np.zeros(me)
    reg = 1e-12 * (1.0 + np.abs(P).max(initial=0.0))

    status = "max_iterations"
    it = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z) / mi if mi else 0.0
        if (max(np.max(np.abs(rp), initial=0.0), np.max(np.abs(ri), initial=0.0)) < tol
                and np.max(np.abs(rd), initial=0.0) < tol and mu < tol):
            status = "converged"
            break
        w = z / s
        H = P + G.T @ (w[:, None] * G) + reg * np.eye(n)
        K = np.block([[H, A.T], [A, -reg * np.eye(me)]]) if me else H
        try:
            lu = _Factor(K)
        except np.linalg.LinAlgError:
            break

        def direction(rc):
            # rc is the target for s*z; eliminate ds and dz
            rhs_x = -rd - G.T @ ((-rc + z * ri) / s)
            sol = lu.solve(np.concatenate([rhs_x, -rp]))
            dx, dy = sol[:n], sol[n:]
            ds = -ri - G @ dx
            dz = (-rc - z * ds) / s
            return dx, dy, ds, dz

        # predictor
        dx, dy, ds, dz = direction(s * z)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi if mi else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, dy, ds, dz = direction(s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
    primal, dual, comp = kkt_residuals(p, x, y, z)
    return QpSolution(x, p.objective(x), status, it, y, z, primal, dual, comp)


class _Factor:
    def __init__(self, K):
        self.K = K
        if not np.all(np.isfinite(K)):
            raise np.linalg.LinAlgError("non-finite KKT matrix")

    def solve(self, rhs):
        try:
            return np.linalg.solve(self.K, rhs)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(self.K, rhs, rcond=None)[0]
