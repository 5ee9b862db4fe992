"""End-to-end acceptance checks, one test per criterion.

The heavy pipeline runs are shared through session fixtures. Each test records a
PASS/FAIL line that is echoed in the terminal summary.
"""

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from dynretarget import _kernels as K
from dynretarget import io
from dynretarget.cem_mpc import CemConfig, cem_optimize, plan_receding_horizon, profile
from dynretarget.dynamics import finite_difference_derivatives, forward_dynamics, inverse_dynamics, mass_matrix
from dynretarget.feasibility import (FeasibilityTolerances, check_timestep_feasibility, estimate_contacts)
from dynretarget.kinematics import fk_trajectory, keypoint_jacobian, keypoint_positions, place_on_ground
from dynretarget.metrics import aggregate_seeds, reward_terms, success_from_trace
from dynretarget.dynamics import State, Trajectory
from dynretarget.pipeline import PipelineConfig, report, run
from dynretarget.qp import QpProblem, solve_qp
from dynretarget.retarget_cost import build_laplacian, laplacian_cost, spatial_cost

from conftest import random_config
from test_qp import _enumerate_active_sets, _random_qp

SEEDS = [0, 1, 2, 3, 4]


def _timed_run(out, reference, method, seeds=SEEDS):
    t0 = time.perf_counter()
    arts = run(PipelineConfig(model="mini-humanoid", reference=reference, method=method, seeds=list(seeds),
                              out=str(out)))
    return arts, time.perf_counter() - t0


@pytest.fixture(scope="session")
def drift_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("drift")
    return out, {m: _timed_run(out, "drift", m) for m in ("gr", "ddr", "idr")}


@pytest.fixture(scope="session")
def squat_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("squat")
    return {m: _timed_run(out, "squat", m) for m in ("gr", "ddr")}


# --- 1 ------------------------------------------------------------------------

def _jacobian_gap(model, q, h=1e-6):
    worst = 0.0
    for j in range(model.nv):
        dv = np.zeros(model.nv)
        dv[j] = h
        fd = (keypoint_positions(model, K.integrate_config(q, dv, 1.0))
              - keypoint_positions(model, K.integrate_config(q, -dv, 1.0))) / (2 * h)
        for k in range(model.m):
            worst = max(worst, np.max(np.abs(keypoint_jacobian(model, q, k)[:, j] - fd[k])))
    return worst


def _grid_residual(need, effort, step=1e-3):
    taus = np.linspace(-effort, effort, int(round(2 * effort / step)) + 1)
    return float(np.min(np.abs(need - taus)))


def test_criterion_1_kernel_oracles(humanoid, pendulum, verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    jac = max(_jacobian_gap(humanoid, random_config(humanoid, rng)) for _ in range(3))

    roundtrip, sym, min_eig = 0.0, 0.0, np.inf
    for _ in range(100):
        q = random_config(humanoid, rng)
        v = rng.normal(size=humanoid.nv)
        tau = rng.normal(scale=20.0, size=humanoid.nv)
        back = inverse_dynamics(humanoid, q, v, forward_dynamics(humanoid, q, v, tau))
        roundtrip = max(roundtrip, np.linalg.norm(back - tau) / np.linalg.norm(tau))
        M = mass_matrix(humanoid, q)
        sym = max(sym, np.max(np.abs(M - M.T)))
        min_eig = min(min_eig, np.linalg.eigvalsh(0.5 * (M + M.T)).min())

    # joint 0 and base x follow a quadratic, so central differences are exact
    dt, T = 0.05, 9
    t = np.arange(T) * dt
    Q = np.repeat(humanoid.neutral_configuration()[None], T, 0)
    Q[:, 7] = 0.2 + 0.4 * t - 0.85 * t * t
    Q[:, 0] = -0.1 + 1.3 * t * t
    vel, acc = finite_difference_derivatives(Q, dt)
    fd_gap = max(np.max(np.abs(vel[1:-1, 6] - (0.4 - 1.7 * t[1:-1]))), np.max(np.abs(acc[1:-1, 6] + 1.7)),
                 np.max(np.abs(vel[1:-1, 0] - 2.6 * t[1:-1])), np.max(np.abs(acc[1:-1, 0] - 2.6)))

    qp_gap = 0.0
    for seed in range(20):
        P, qv, G, h = _random_qp(np.random.default_rng(100 + seed))
        sol = solve_qp(QpProblem(P, qv, G=G, h=h))
        qp_gap = max(qp_gap, abs(sol.objective - _enumerate_active_sets(P, qv, G, h)))

    tol = FeasibilityTolerances()
    eps = tol.resolve(pendulum)
    zero = np.zeros(pendulum.nv)
    mismatches = 0
    for theta in np.linspace(-1.6, 1.6, 33):
        q = pendulum.neutral_configuration()
        q[7] = theta
        v = check_timestep_feasibility(pendulum, q, zero, zero, tol=tol)
        oracle = _grid_residual(inverse_dynamics(pendulum, q, zero, zero)[6], 5.0)
        mismatches += v.feasible != (oracle <= eps)

    elapsed = time.perf_counter() - t0
    ok = (jac < 1e-5 and roundtrip < 1e-6 and sym < 1e-9 and min_eig > 0 and fd_gap < 1e-9
          and qp_gap < 1e-5 and mismatches == 0 and elapsed < 60)
    verdict(1, ok, f"jac {jac:.1e}, id/fd {roundtrip:.1e}, M sym {sym:.1e} min eig {min_eig:.2e}, "
                   f"fd {fd_gap:.1e}, qp gap {qp_gap:.1e}, pendulum mismatches {mismatches}, {elapsed:.1f}s")
    assert ok


# --- 2 ------------------------------------------------------------------------

def test_criterion_2_cost_suite(humanoid, verdict):
    x, xt = np.zeros((1, 2, 3)), np.zeros((1, 2, 3))
    x[0, 1, 2] = 1.0
    hand = laplacian_cost(x, xt, build_laplacian([(0, 1)], 2))

    L = build_laplacian(humanoid.keypoint_adjacency, humanoid.m)
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(2, 6, humanoid.m, 3))
    shift = np.array([0.7, -1.3, 2.1])
    invariance = abs(laplacian_cost(a + shift, b, L) - laplacian_cost(a, b, L))
    row_sums = np.abs(L.sum(axis=1)).max()

    one = np.zeros((1, 1, 3))
    unit = one.copy()
    unit[0, 0, 2] = 1.0
    two_frames, offsets = np.zeros((2, 1, 3)), np.zeros((2, 1, 3))
    offsets[0, 0] = (1.0, 0.0, 0.0)
    offsets[1, 0] = (0.0, 2.0, 0.0)
    additive = (spatial_cost(one, unit), spatial_cost(two_frames, offsets), spatial_cost(a, a))

    ok = hand == 1.0 and invariance < 1e-12 and row_sums == 0.0 and additive == (1.0, 5.0, 0.0)
    verdict(2, ok, f"hand example {hand}, translation gap {invariance:.1e}, max |row sum| {row_sums}, "
                   f"E_p examples {additive}")
    assert ok


# --- 3 ------------------------------------------------------------------------

def test_criterion_3_cem_suite(humanoid, verdict):
    res = cem_optimize(lambda u: float(np.sum((u - 0.3) ** 2)), np.zeros(1), 1.0,
                       CemConfig(population=64, elites=8, iterations=20, seed=0))
    quad = abs(res.best[0] - 0.3)

    q0 = place_on_ground(humanoid, humanoid.neutral_configuration())
    x = fk_trajectory(humanoid, np.repeat(q0[None], 24, axis=0), dt=0.02)
    L = build_laplacian(humanoid.keypoint_adjacency, humanoid.m)
    plans = [plan_receding_horizon(humanoid, x, q0, L, cem=profile("fast", seed=4, workers=w)) for w in (1, 4)]
    monotone = all(all(b <= a for a, b in zip(h, h[1:])) for h in plans[0][2].best_costs)
    identical = plans[0][0].q.tobytes() == plans[1][0].q.tobytes()

    cfg = CemConfig(population=24, elites=4, iterations=5, seed=3)
    objective = lambda u: float(np.sum(np.cos(3 * u) + u * u))  # noqa: E731
    serial = cem_optimize(objective, np.zeros(6), 1.0, cfg)
    with ThreadPoolExecutor(4) as pool:
        pooled = cem_optimize(objective, np.zeros(6), 1.0, cfg, executor=pool)
    identical = identical and serial.best.tobytes() == pooled.best.tobytes()

    ok = quad < 1e-3 and monotone and identical
    verdict(3, ok, f"quadratic error {quad:.1e}, best-so-far monotone {monotone}, "
                   f"1 vs 4 workers bit-identical {identical}")
    assert ok


# --- 4 ------------------------------------------------------------------------

def test_criterion_4_feasibility_direction(drift_runs, verdict):
    _, runs = drift_runs
    gr = runs["gr"][0][0].metrics.infeasible_fraction
    ddr = [a.metrics.infeasible_fraction for a in runs["ddr"][0]]
    times = {m: t for m, (_, t) in runs.items()}
    ok = gr >= 0.10 and max(ddr) <= 0.05 and max(times.values()) <= 300
    verdict(4, ok, f"drift GR infeasible {100 * gr:.1f}%, DDR worst seed {100 * max(ddr):.1f}% "
                   f"(mean {100 * np.mean(ddr):.1f}%), runtime " +
            ", ".join(f"{m} {t:.0f}s" for m, t in times.items()))
    assert ok


# --- 5 ------------------------------------------------------------------------

def test_criterion_5_distance_bound(drift_runs, verdict):
    _, runs = drift_runs
    ddr = np.mean([a.metrics.distance_to_reference for a in runs["ddr"][0]])
    idr = np.mean([a.metrics.distance_to_reference for a in runs["idr"][0]])
    ok = ddr <= 1.10 * idr
    verdict(5, ok, f"mean combined distance over {len(SEEDS)} seeds: DDR {ddr:.3f}, IDR {idr:.3f} "
                   f"(bound {1.10 * idr:.3f})")
    assert ok


# --- 6 ------------------------------------------------------------------------

def test_criterion_6_contact_direction(squat_runs, verdict):
    gr = squat_runs["gr"][0][0].metrics.contact_error_rate
    ddr = np.mean([a.metrics.contact_error_rate for a in squat_runs["ddr"][0]])
    ok = ddr <= gr and ddr <= 0.10
    verdict(6, ok, f"squat contact error: GR {100 * gr:.1f}%, DDR {100 * ddr:.1f}% (mean of {len(SEEDS)} seeds)")
    assert ok


# --- 7 ------------------------------------------------------------------------

def test_criterion_7_metric_exactness(humanoid, verdict):
    ref = np.zeros((20, 3))
    over = ref.copy()
    over[7, 0] = 0.51
    traces = [(over, False), (ref + [0.0, 0.49, 0.0], True), (ref + [0.5, 0.0, 0.0], True), (ref, True)]
    success_ok = all(success_from_trace(tr, ref) is expect for tr, expect in traces)

    stance = place_on_ground(humanoid, humanoid.neutral_configuration())
    contact_ok = True
    for height, expect in ((0.019, True), (0.021, False), (0.0, True)):
        q = stance.copy()
        q[2] += height
        flags = estimate_contacts(humanoid, Trajectory(q[None], None, 0.02)).flags[0]
        contact_ok &= bool(np.all(flags == expect))

    n_q = 4
    q = np.zeros(7 + n_q)
    q[3] = 1.0
    s, r = State(q.copy(), np.zeros(6 + n_q)), State(q.copy(), np.zeros(6 + n_q))
    s.q[7:] = [2.0, 0.0, 0.0, 0.0]
    s.v[6:] = [0.5, -1.0, 0.0, 2.0]
    terms = reward_terms(s, r, np.zeros(n_q), np.zeros(n_q), ee=np.zeros((2, 3)), ee_ref=np.ones((2, 3)),
                         joint_acc=np.ones(n_q), torques=np.full(n_q, 3.0), foot_velocities=np.zeros((2, 3)),
                         foot_contact_forces=[50.0, 50.0])
    dv = s.v[6:] @ s.v[6:]
    rows = {
        "joint_position": 0.5 * math.exp(-1.0),
        "joint_velocity": 0.1 * math.exp(-dv / 100.0),
        "root_pose": 0.15,
        "root_velocity": 0.1,
        "end_effector": 0.15 * math.exp(-6.0 / 0.32 ** 2),
        "joint_acceleration": -1e-7 * n_q,
        "joint_torque": -1e-7 * 9.0 * n_q,
        "joint_velocity_penalty": -0.005 * dv,
    }
    reward_gap = max(abs(getattr(terms, k) - v) for k, v in rows.items())
    ok = success_ok and contact_ok and reward_gap <= 1e-12 and \
        abs(terms.joint_position - 0.18393972058572117) <= 1e-12
    verdict(7, ok, f"success rule exact {success_ok}, contact rule exact {contact_ok}, "
                   f"reward rows max gap {reward_gap:.1e}")
    assert ok


# --- 8 ------------------------------------------------------------------------

def test_criterion_8_reproducibility(drift_runs, tmp_path, verdict):
    out, runs = drift_runs
    again, _ = _timed_run(tmp_path, "drift", "ddr", seeds=[2])
    first = (out / "ddr" / "seed-2" / "trajectory.txt").read_bytes()
    second = (again[0].directory / "trajectory.txt").read_bytes()
    identical = first == second

    rep = report([out / "ddr", out / "idr", out / "gr"])
    exact = True
    for method, (arts, _) in runs.items():
        row = rep["methods"][method]
        stored = json.loads((out / method / "aggregate.json").read_text())
        per_seed = [json.loads((a.directory / "metrics.json").read_text()) for a in arts]
        exact &= row["mean"] == stored["mean"] and row["std"] == stored["std"]
        exact &= row == {"seeds": [a.seed for a in arts], **aggregate_seeds([a.metrics for a in arts]).to_dict()}
        for key in ("infeasible_fraction", "distance_to_reference", "contact_error_rate"):
            values = [m[key] for m in per_seed]
            exact &= row["mean"][key] == pytest.approx(float(np.mean(values)), rel=1e-15, abs=0)
    reread, _ = io.read_trajectory(again[0].directory / "trajectory.txt")
    exact &= reread.q.tobytes() == again[0].trajectory.q.tobytes()

    ok = identical and exact
    verdict(8, ok, f"same-seed trajectory files bit-identical {identical}, report matches artifacts {exact}")
    assert ok
