import numpy as np
import pytest

from dynretarget import _kernels as K
from dynretarget.dynamics import (ContactModelParams, ControlSequence, DynamicsConfig, DynamicsError, State,
                                  Trajectory, continue_rollout, finite_difference_derivatives, forward_dynamics,
                                  inverse_dynamics, kinetic_energy, mass_matrix, potential_energy, rollout, step)
from dynretarget.kinematics import place_on_ground

from conftest import box_doc, random_config


def test_single_box_mass_matrix(box):
    q = random_config(box, np.random.default_rng(0))
    M = mass_matrix(box, q)
    link = box.links[0]
    np.testing.assert_allclose(M[:3, :3], link.mass * np.eye(3), atol=1e-12)
    # angular velocity is in the body frame, so the rotational block is the body inertia
    np.testing.assert_allclose(M[3:, 3:], link.inertia, atol=1e-12)
    np.testing.assert_allclose(M[:3, 3:], 0.0, atol=1e-12)


def test_offset_com_box_mass_matrix():
    from dynretarget.model import model_from_dict

    doc = box_doc()
    c = np.array([0.1, -0.05, 0.02])
    doc["links"][0]["com"] = c.tolist()
    m = model_from_dict(doc)
    q = random_config(m, np.random.default_rng(1))
    R = K.quat_to_rot(q[3:7])
    M = mass_matrix(m, q)
    mass = m.links[0].mass
    Sc = np.array([[0, -c[2], c[1]], [c[2], 0, -c[0]], [-c[1], c[0], 0]])
    # com velocity v + R (w x c) = v - R [c]x w
    np.testing.assert_allclose(M[:3, 3:], -mass * R @ Sc, atol=1e-12)
    np.testing.assert_allclose(M[3:, 3:], m.links[0].inertia - mass * Sc @ Sc, atol=1e-12)


def test_mass_matrix_symmetric_positive_definite(humanoid):
    rng = np.random.default_rng(2)
    for _ in range(100):
        q = random_config(humanoid, rng)
        M = mass_matrix(humanoid, q)
        assert np.max(np.abs(M - M.T)) < 1e-9
        x = rng.normal(size=humanoid.nv)
        assert x @ M @ x > 0


def test_static_pendulum_torque(pendulum):
    for theta in (0.3, np.pi / 2, -1.1):
        q = pendulum.neutral_configuration()
        q[7] = theta
        tau = inverse_dynamics(pendulum, q, np.zeros(pendulum.nv), np.zeros(pendulum.nv))
        assert tau[6] == pytest.approx(1.0 * 9.81 * 1.0 * np.sin(theta), abs=1e-12)


def test_free_fall_needs_no_force(humanoid):
    q = random_config(humanoid, np.random.default_rng(3))
    a = np.zeros(humanoid.nv)
    a[0:3] = humanoid.gravity
    tau = inverse_dynamics(humanoid, q, np.zeros(humanoid.nv), a)
    assert np.max(np.abs(tau)) < 1e-8


def test_inverse_forward_roundtrip(humanoid):
    rng = np.random.default_rng(4)
    for _ in range(100):
        q = random_config(humanoid, rng)
        v = rng.normal(size=humanoid.nv)
        tau = rng.normal(scale=20.0, size=humanoid.nv)
        a = forward_dynamics(humanoid, q, v, tau)
        back = inverse_dynamics(humanoid, q, v, a)
        assert np.linalg.norm(back - tau) <= 1e-6 * np.linalg.norm(tau)


def test_contact_forces_enter_through_jacobian_transpose(box):
    q = box.neutral_configuration()
    f = np.array([0.0, 0.0, box.weight / 4])
    tau = inverse_dynamics(box, q, np.zeros(6), np.zeros(6), [(i, f) for i in range(4)])
    np.testing.assert_allclose(tau, 0.0, atol=1e-12)


def test_free_fall_matches_ballistic(box):
    q0 = box.neutral_configuration()
    q0[2] = 10.0
    s = State(q0, np.zeros(6))
    for _ in range(100):
        s = step(box, s, np.zeros(0), 0.002, ContactModelParams())
    t = 100 * 0.002
    assert q0[2] - s.q[2] == pytest.approx(0.5 * 9.81 * t * t, rel=0.02)


def test_box_rests_at_penetration_equilibrium(box):
    params = ContactModelParams()
    q = place_on_ground(box, box.neutral_configuration())
    q[2] -= box.weight / (params.stiffness * 4)  # mg = k * delta shared by 4 corners
    s = State(q, np.zeros(6))
    vmax = 0.0
    for _ in range(500):
        s = step(box, s, np.zeros(0), 0.002, params)
        vmax = max(vmax, np.abs(s.v).max())
    assert vmax < 1e-3


def test_zero_gravity_fixed_point(humanoid):
    from dataclasses import replace

    m = replace(humanoid, gravity=np.zeros(3))
    q = random_config(m, np.random.default_rng(5))
    q[2] += 5.0
    out = step(m, State(q, np.zeros(m.nv)), np.zeros(m.n_q), 0.002, ContactModelParams())
    np.testing.assert_array_equal(out.q, q)
    np.testing.assert_array_equal(out.v, 0.0)


def test_box_at_rest_rollout(box):
    q0 = place_on_ground(box, box.neutral_configuration())
    tr = rollout(box, q0, ControlSequence(np.zeros((50, 0)), 0.02))
    assert len(tr) == 51
    assert np.max(np.linalg.norm(tr.q[:, :3] - q0[:3], axis=1)) < 1e-3


def test_rollout_deterministic_and_composes(humanoid):
    rng = np.random.default_rng(6)
    q0 = place_on_ground(humanoid, humanoid.neutral_configuration())
    U = rng.normal(scale=2.0, size=(20, humanoid.n_q))
    a = rollout(humanoid, q0, ControlSequence(U, 0.02))
    b = rollout(humanoid, q0, ControlSequence(U, 0.02))
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.v, b.v)
    first = rollout(humanoid, q0, ControlSequence(U[:8], 0.02))
    rest = continue_rollout(humanoid, first.final_state(), U[8:], DynamicsConfig(mode="torque"))
    joined = first.concat(rest)
    np.testing.assert_array_equal(joined.q, a.q)
    np.testing.assert_array_equal(joined.v, a.v)


def test_torques_clamped_to_limits(humanoid):
    q0 = place_on_ground(humanoid, humanoid.neutral_configuration())
    s = State(q0, np.zeros(humanoid.nv))
    _, tau = step(humanoid, s, 1e4 * np.ones(humanoid.n_q), 0.002, ContactModelParams(), return_torque=True)
    np.testing.assert_array_equal(tau, humanoid.arrays.effort)
    _, tau = step(humanoid, s, 1e3 * np.ones(humanoid.n_q), 0.002, ContactModelParams(), mode="target",
                  return_torque=True)
    assert np.all(np.abs(tau) <= humanoid.arrays.effort + 1e-12)


def test_joint_limits_enforced(humanoid):
    q0 = place_on_ground(humanoid, humanoid.neutral_configuration())
    tr = rollout(humanoid, q0, ControlSequence(np.tile(humanoid.arrays.effort, (25, 1)), 0.02))
    a = humanoid.arrays
    assert np.all(tr.q[:, 7:] >= a.lower) and np.all(tr.q[:, 7:] <= a.upper)


def test_contact_forces_respect_cone(humanoid):
    rng = np.random.default_rng(7)
    a = humanoid.arrays
    p = ContactModelParams()
    mu = humanoid.friction_coefficient
    for _ in range(50):
        q = place_on_ground(humanoid, random_config(humanoid, rng, 0.3))
        q[2] -= 0.01
        v = rng.normal(size=humanoid.nv)
        F, _, _ = K.contact_forces(a.parent, a.axis, a.trans, a.rot, a.clinks, a.coffsets, q, v,
                             p.stiffness, p.damping, p.ground_height, mu, p.regularization_velocity)
        assert np.all(F[:, 2] >= 0.0)
        assert np.all(np.linalg.norm(F[:, :2], axis=1) <= mu * F[:, 2] + 1e-9)


@pytest.mark.parametrize("gravity", [True, False])
def test_energy_drift_contact_free(humanoid, gravity):
    from dataclasses import replace

    m = humanoid if gravity else replace(humanoid, gravity=np.zeros(3))
    rng = np.random.default_rng(8)
    q = random_config(m, rng, 0.2)
    v = rng.normal(scale=0.3, size=m.nv)
    v[6:] *= 0.3  # slow joints: the motion never reaches a limit, whose stop is dissipative by design

    def energy(s):
        return kinetic_energy(m, s.q, s.v) + potential_energy(m, s.q)

    s = State(q, v)
    e0, peak = energy(s), kinetic_energy(m, q, v)
    lo, hi = m.arrays.lower, m.arrays.upper
    for _ in range(500):
        s = step(m, s, np.zeros(m.n_q), 0.002, None)
        assert np.all((s.q[7:] > lo) & (s.q[7:] < hi))
        peak = max(peak, kinetic_energy(m, s.q, s.v))
    # relative to the kinetic energy scale of the run (potential energy has an arbitrary zero)
    assert abs(energy(s) - e0) < 0.01 * peak


def test_nonfinite_state_raises(humanoid):
    v = np.zeros(humanoid.nv)
    v[0] = np.inf
    with pytest.raises(DynamicsError, match="non-finite"):
        step(humanoid, State(humanoid.neutral_configuration(), v), np.zeros(humanoid.n_q), 0.002,
             ContactModelParams())


def test_step_dt_checked(humanoid):
    with pytest.raises(ValueError):
        step(humanoid, State(humanoid.neutral_configuration(), np.zeros(humanoid.nv)),
             np.zeros(humanoid.n_q), 0.02, None)


def test_contact_params_validated():
    with pytest.raises(ValueError):
        ContactModelParams(stiffness=0)
    with pytest.raises(ValueError):
        ContactModelParams(damping=-1)
    with pytest.raises(ValueError):
        ContactModelParams(regularization_velocity=0)


def _ramp(model, fn, T=8, dt=0.1):
    t = np.arange(T) * dt
    Q = np.repeat(model.neutral_configuration()[None], T, 0)
    Q[:, 7] = fn(t)
    Q[:, 0] = 2 * fn(t)
    return Q, dt


def test_fd_linear_ramp_exact(humanoid):
    Q, dt = _ramp(humanoid, lambda t: 0.3 * t)
    v, a = finite_difference_derivatives(Q, dt)
    np.testing.assert_allclose(v[1:-1, 6], 0.3, atol=1e-12)
    np.testing.assert_allclose(v[1:-1, 0], 0.6, atol=1e-12)
    np.testing.assert_allclose(a[1:-1], 0.0, atol=1e-12)


def test_fd_quadratic_exact(humanoid):
    Q, dt = _ramp(humanoid, lambda t: 0.5 * 1.7 * t * t)
    v, a = finite_difference_derivatives(Q, dt)
    np.testing.assert_allclose(a[1:-1, 6], 1.7, atol=1e-12)
    np.testing.assert_allclose(a[1:-1, 0], 3.4, atol=1e-12)
    t = np.arange(len(Q)) * dt
    np.testing.assert_allclose(v[1:-1, 6], 1.7 * t[1:-1], atol=1e-12)


def test_fd_constant_rate_yaw(humanoid):
    omega, dt, T = 0.8, 0.02, 10
    Q = np.repeat(humanoid.neutral_configuration()[None], T, 0)
    th = omega * np.arange(T) * dt
    Q[:, 3], Q[:, 6] = np.cos(th / 2), np.sin(th / 2)
    v, _ = finite_difference_derivatives(Q, dt)
    np.testing.assert_allclose(v[:, 3:6], np.tile([0, 0, omega], (T, 1)), atol=1e-6)


def test_fd_needs_three_frames(humanoid):
    with pytest.raises(ValueError):
        finite_difference_derivatives(np.repeat(humanoid.neutral_configuration()[None], 2, 0), 0.02)


def test_trajectory_types():
    tr = Trajectory(np.zeros((3, 8)) + [0, 0, 0, 1, 0, 0, 0, 0], None, 0.02)
    assert tr.v.shape == (3, 7) and len(list(tr.states)) == 3
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 8)), None, 0.0)
    with pytest.raises(ValueError):
        ControlSequence(np.array([[np.nan]]), 0.02)
    with pytest.raises(ValueError):
        DynamicsConfig(substeps=1, control_dt=0.02)
