"""Cross-entropy search over spline-parameterized controls, run in a receding horizon.

Each candidate is a set of knots; knots are interpolated into a control sequence,
rolled out through the simulator from the current state, and scored by the
keypoint distance to the target window. Only the first few controls of the best
plan are executed before replanning.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .dynamics import (ControlSequence, DynamicsConfig, DynamicsError, State, Trajectory,
                       _NONFINITE, _contact_args, _mode_code)
from .kinematics import KeypointTrajectory, align_reference, as_config
from .model import RobotModel
from .retarget_cost import CostWeights


class CemError(RuntimeError):
    pass


@dataclass(frozen=True)
class CemConfig:
    population: int = 64
    elites: int = 8
    iterations: int = 4
    init_std: float | None = None  # None: 2.0 N*m in torque mode, 0.3 rad in target mode
    std_floor: float = 0.05
    alpha: float = 1.0  # 1.0 replaces the mean by the elite mean
    knot_spacing: int = 4
    horizon: int = 25
    replan_stride: int = 1
    seed: int = 0
    effort_weight: float = 1e-4
    workers: int = 1
    execute: str = "best"  # "best" sample or the refit "mean"

    def __post_init__(self):
        if not 1 <= self.elites < self.population:
            raise ValueError("need 1 <= elites < population")
        if not 1 <= self.replan_stride <= self.horizon:
            raise ValueError("need 1 <= replan_stride <= horizon")
        if self.iterations < 1 or self.knot_spacing < 1:
            raise ValueError("iterations and knot_spacing must be >= 1")
        if self.std_floor <= 0 or (self.init_std is not None and self.init_std <= 0):
            raise ValueError("standard deviations must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.execute not in ("best", "mean"):
            raise ValueError("execute must be 'best' or 'mean'")
        if self.effort_weight < 0 or self.workers < 1:
            raise ValueError("effort_weight must be >= 0 and workers >= 1")

    def std_for(self, mode: str) -> float:
        if self.init_std is not None:
            return self.init_std
        return 2.0 if mode == "torque" else 0.3

    @property
    def n_knots(self) -> int:
        return math.ceil(self.horizon / self.knot_spacing) + 1


PROFILES = {
    "fast": dict(population=32, elites=6, iterations=5, horizon=15, knot_spacing=5, replan_stride=2,
                 init_std=0.1, execute="mean"),
    "thorough": dict(population=64, elites=8, iterations=4, horizon=25, knot_spacing=4, replan_stride=1),
}


def profile(name: str, **overrides) -> CemConfig:
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return CemConfig(**{**PROFILES[name], **overrides})


def spline_to_controls(knots: np.ndarray, H: int, s: int) -> np.ndarray:
    """Piecewise-linear interpolation of knots placed every ``s`` control steps."""
    knots = np.asarray(knots, dtype=float)
    K_ = math.ceil(H / s) + 1
    if knots.ndim != 2 or knots.shape[0] != K_:
        raise ValueError(f"expected {K_} knots for H={H}, s={s}, got shape {knots.shape}")
    pos = np.arange(H) / s
    i0 = np.floor(pos).astype(int)
    frac = (pos - i0)[:, None]
    i1 = np.minimum(i0 + 1, K_ - 1)
    return (1.0 - frac) * knots[i0] + frac * knots[i1]


# --------------------------------------------------------------------------
# cross-entropy method


@dataclass
class CemResult:
    best: np.ndarray
    best_cost: float
    mean: np.ndarray
    std: np.ndarray
    best_history: list[float]  # best-so-far after each iteration
    elite_mean_costs: list[float]
    std_norms: list[float]
    evaluations: int


def _sample_rng(seed: int, key: Sequence[int], it: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key, it, i]))


def cem_optimize(
    objective: Callable[[np.ndarray], float],
    init_mean: np.ndarray,
    init_std,
    cfg: CemConfig,
    key: Sequence[int] = (),
    executor: Executor | None = None,
) -> CemResult:
    """Minimize ``objective`` over arrays shaped like ``init_mean``.

    Sample ``i`` of iteration ``it`` draws from its own stream seeded by
    (cfg.seed, *key, it, i), so results do not depend on evaluation order or on the
    executor. Iteration 0 evaluates the initial mean as sample 0; later iterations
    carry the best-so-far candidate in slot 0 so it competes for the elite set.
    """
    mean = np.array(init_mean, dtype=float)
    std = np.broadcast_to(np.asarray(init_std, dtype=float), mean.shape).copy()
    if np.any(std <= 0):
        raise ValueError("initial std must be positive")
    N, E = cfg.population, cfg.elites
    best, best_cost = None, math.inf
    hist, elite_costs, std_norms = [], [], []
    evals = 0
    for it in range(cfg.iterations):
        cands = np.empty((N,) + mean.shape)
        for i in range(N):
            cands[i] = mean + std * _sample_rng(cfg.seed, key, it, i).standard_normal(mean.shape)
        if it == 0:
            cands[0] = mean
        elif best is not None:
            cands[0] = best
        todo = list(range(N)) if it == 0 or best is None else list(range(1, N))
        if executor is None:
            vals = [objective(cands[i]) for i in todo]
        else:
            vals = list(executor.map(objective, [cands[i] for i in todo]))
        evals += len(todo)
        costs = np.full(N, math.inf)
        if len(todo) < N:
            costs[0] = best_cost
        for i, c in zip(todo, vals):
            c = float(c)
            costs[i] = c if math.isfinite(c) else math.inf
        if not np.isfinite(costs).any():
            raise CemError("objective everywhere invalid")
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best = cands[order[0]].copy()
        elite = order[:E]
        elite = elite[np.isfinite(costs[elite])]
        pts = cands[elite]
        mean = (1.0 - cfg.alpha) * mean + cfg.alpha * pts.mean(axis=0)
        std = np.maximum((1.0 - cfg.alpha) * std + cfg.alpha * pts.std(axis=0), cfg.std_floor)
        hist.append(best_cost)
        elite_costs.append(float(costs[elite].mean()))
        std_norms.append(float(np.linalg.norm(std)))
    return CemResult(best, best_cost, mean, std, hist, elite_costs, std_norms, evals)


# --------------------------------------------------------------------------
# receding horizon


@dataclass
class PlanDiagnostics:
    best_costs: list[list[float]] = field(default_factory=list)  # per replan, per iteration
    elite_mean_costs: list[list[float]] = field(default_factory=list)
    std_norms: list[list[float]] = field(default_factory=list)
    replan_steps: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    rollouts: int = 0

    def final_best(self) -> np.ndarray:
        return np.array([h[-1] for h in self.best_costs])


class _HorizonObjective:
    """Keypoint distance of a horizon rollout from a fixed state; pure in the knots."""

    def __init__(self, model, dyn: DynamicsConfig, cem: CemConfig, weights: CostWeights,
                 L: np.ndarray, kp_weights: np.ndarray):
        self.model = model
        self.a = model.arrays
        self.dyn = dyn
        self.cem = cem
        self.mode = _mode_code(dyn.mode)
        self.kp, self.kd = dyn.gains(model)
        self.contact = _contact_args(model, dyn.contact)
        self.w_p = weights.w_p
        self.w_l = weights.w_l / model.m
        self.kw = kp_weights[None, :]
        self.L = L
        self.state = None
        self.target = None
        self.nominal = None

    def rollout(self, state: State, U: np.ndarray):
        a = self.a
        clinks, coffsets, k, c, g, mu, vreg = self.contact
        return K.rollout(a.parent, a.axis, a.trans, a.rot, a.mass, a.com, a.inertia, a.gravity,
                         a.lower, a.upper, a.effort, a.free_idx, clinks, coffsets,
                         state.q, state.v, U, self.mode, self.kp, self.kd,
                         self.dyn.control_dt, self.dyn.substeps, k, c, g, mu, vreg)

    def __call__(self, knots: np.ndarray) -> float:
        U = np.ascontiguousarray(spline_to_controls(knots, self.cem.horizon, self.cem.knot_spacing))
        Q, _, status, _ = self.rollout(self.state, U)
        if status != K.STATUS_OK:
            return math.inf
        a = self.a
        X = K.points_along(a.parent, a.axis, a.trans, a.rot, Q[1:], a.klinks, a.koffsets)
        d = X - self.target
        cost = self.w_p * float(np.sum(self.kw * np.einsum("tkc,tkc->tk", d, d)))
        if self.w_l:
            r = np.einsum("jk,tkc->tjc", self.L, d)
            cost += self.w_l * float(np.sum(r * r))
        if self.cem.effort_weight:
            du = U - self.nominal
            cost += self.cem.effort_weight * float(np.sum(du * du))
        return cost


def plan_receding_horizon(
    model: RobotModel,
    x_target: KeypointTrajectory,
    q0,
    L: np.ndarray,
    weights: CostWeights = CostWeights(),
    cem: CemConfig = CemConfig(),
    dyn: DynamicsConfig = DynamicsConfig(),
    *,
    keypoint_map=None,
    executor: Executor | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> tuple[Trajectory, ControlSequence, PlanDiagnostics]:
    """Track ``x_target`` with the simulator in the loop.

    The executed trajectory has one state per target frame, starting at rest in
    ``q0``; frame t+1 is reached by executing control t. At each replan the
    horizon states t+1 .. t+H are compared to the matching target frames, with the
    last target frame held past the end of the clip.
    """
    if executor is None and cem.workers > 1:
        # rollout kernels release the GIL, so threads run in parallel
        with ThreadPoolExecutor(cem.workers) as pool:
            return plan_receding_horizon(model, x_target, q0, L, weights, cem, dyn, keypoint_map=keypoint_map,
                                         executor=pool, progress=progress)
    if abs(x_target.dt - dyn.control_dt) > 1e-12:
        raise ValueError(f"target dt {x_target.dt} differs from control dt {dyn.control_dt}")
    frames, mask = align_reference(model, x_target, keypoint_map)
    kw = np.ones(model.m) if weights.keypoint_weights is None else np.asarray(weights.keypoint_weights, float)
    kw = np.where(mask, kw, 0.0)
    if L.shape != (model.m, model.m):
        raise ValueError("Laplacian does not match the model keypoints")
    H, R, s = cem.horizon, cem.replan_stride, cem.knot_spacing
    T = x_target.T
    obj = _HorizonObjective(model, dyn, cem, weights, np.asarray(L, float), kw)
    state = State(as_config(q0).copy(), np.zeros(model.nv))
    std0 = cem.std_for(dyn.mode)
    if dyn.mode == "target":
        mean = np.repeat(state.q[7:][None], cem.n_knots, axis=0)
    else:
        mean = np.zeros((cem.n_knots, model.n_q))

    Q = np.empty((T, model.nq_config))
    V = np.empty((T, model.nv))
    Q[0], V[0] = state.q, state.v
    controls = np.empty((max(T - 1, 0), model.n_q))
    diag = PlanDiagnostics()
    t0 = time.perf_counter()
    t, replan = 0, 0
    while t < T - 1:
        idx = np.minimum(np.arange(t + 1, t + H + 1), T - 1)
        obj.state = state
        obj.target = np.where(mask[None, :, None], frames[idx], 0.0)
        obj.nominal = state.q[7:] if dyn.mode == "target" else 0.0
        res = cem_optimize(obj, mean, std0, cem, key=(replan,), executor=executor)
        diag.best_costs.append(res.best_history)
        diag.elite_mean_costs.append(res.elite_mean_costs)
        diag.std_norms.append(res.std_norms)
        diag.replan_steps.append(t)
        diag.rollouts += res.evaluations

        n_exec = min(R, T - 1 - t)
        plan = res.best if cem.execute == "best" else res.mean
        U = spline_to_controls(plan, H, s)[:n_exec]
        Qe, Ve, status, k = obj.rollout(state, np.ascontiguousarray(U))
        if status != K.STATUS_OK:
            raise DynamicsError(f"non-finite {_NONFINITE[status]} at control step {t + k} (replan {replan})")
        Q[t + 1:t + 1 + n_exec] = Qe[1:]
        V[t + 1:t + 1 + n_exec] = Ve[1:]
        controls[t:t + n_exec] = U
        state = State(Qe[-1].copy(), Ve[-1].copy())
        t += n_exec
        replan += 1
        mean = _shift_knots(plan, R, s, H)
        if progress is not None:
            progress(t, T - 1)
    diag.wall_time = time.perf_counter() - t0
    return Trajectory(Q, V, dyn.control_dt), ControlSequence(controls, dyn.control_dt), diag


def _shift_knots(knots: np.ndarray, R: int, s: int, H: int) -> np.ndarray:
    """Warm start: the plan advanced by R controls, holding the last knot."""
    Kn = knots.shape[0]
    pos = (np.arange(Kn) * s + R) / s
    i0 = np.minimum(np.floor(pos).astype(int), Kn - 1)
    i1 = np.minimum(i0 + 1, Kn - 1)
    frac = np.where(i0 < Kn - 1, pos - i0, 0.0)[:, None]
    return (1.0 - frac) * knots[i0] + frac * knots[i1]
