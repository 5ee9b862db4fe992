import numpy as np
import pytest

from dynretarget import _kernels as K
from dynretarget.dynamics import Trajectory
from dynretarget.kinematics import (Configuration, IkOptions, KeypointTrajectory, as_config,
                                    fk_trajectory, geometric_retarget, geometric_retarget_with_diagnostics,
                                    keypoint_jacobian, keypoint_positions, place_on_ground)

from conftest import random_config


def _quat(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def _rot(quat):
    return K.quat_to_rot(np.asarray(quat, float))


def test_biped_zero_pose_heights_sum_link_offsets(biped):
    X = keypoint_positions(biped, biped.neutral_configuration())
    names = biped.keypoint_names
    # torso keypoint 0.4 above the base, feet at hip (0) + thigh (-0.4) + shank offset (-0.4)
    assert X[names.index("torso"), 2] == pytest.approx(0.4, abs=1e-15)
    assert X[names.index("pelvis"), 2] == pytest.approx(0.0, abs=1e-15)
    for foot, y in (("left_foot", 0.08), ("right_foot", -0.08)):
        np.testing.assert_allclose(X[names.index(foot)], [0.0, y, -0.8], atol=1e-15)


def test_base_translation_moves_every_keypoint(humanoid):
    rng = np.random.default_rng(0)
    q = random_config(humanoid, rng)
    t = np.array([0.3, -1.2, 0.7])
    q2 = q.copy()
    q2[0:3] += t
    np.testing.assert_allclose(keypoint_positions(humanoid, q2), keypoint_positions(humanoid, q) + t, atol=1e-12)


def test_base_rotation_rotates_zero_pose(humanoid):
    q = humanoid.neutral_configuration()
    X0 = keypoint_positions(humanoid, q)
    quat = _quat([1, 2, 3], 0.9)
    q[3:7] = quat
    np.testing.assert_allclose(keypoint_positions(humanoid, q), X0 @ _rot(quat).T, atol=1e-12)


def test_fk_equivariance_under_rigid_transform(humanoid):
    rng = np.random.default_rng(1)
    Q = np.array([random_config(humanoid, rng) for _ in range(5)])
    quat = _quat([0.2, -1, 0.4], 1.3)
    R, t = _rot(quat), np.array([1.0, 2.0, -0.5])
    Qt = Q.copy()
    Qt[:, 0:3] = Q[:, 0:3] @ R.T + t
    Qt[:, 3:7] = [K.quat_mul(quat, qq) for qq in Q[:, 3:7]]
    X = fk_trajectory(humanoid, Q, dt=0.02).frames
    Xt = fk_trajectory(humanoid, Qt, dt=0.02).frames
    np.testing.assert_allclose(Xt, X @ R.T + t, atol=1e-12)


def test_fk_trajectory_single_constant_and_concat(humanoid):
    rng = np.random.default_rng(2)
    q = random_config(humanoid, rng)
    one = fk_trajectory(humanoid, Trajectory(q[None], None, 0.02))
    assert one.T == 1 and one.dt == 0.02
    np.testing.assert_array_equal(one.frames[0], keypoint_positions(humanoid, q))
    const = fk_trajectory(humanoid, Trajectory(np.repeat(q[None], 4, 0), None, 0.02))
    assert np.all(const.frames == const.frames[0])
    Q1 = np.array([random_config(humanoid, rng) for _ in range(3)])
    Q2 = np.array([random_config(humanoid, rng) for _ in range(2)])
    both = fk_trajectory(humanoid, np.vstack([Q1, Q2]), dt=0.02)
    parts = fk_trajectory(humanoid, Q1, dt=0.02).concat(fk_trajectory(humanoid, Q2, dt=0.02))
    np.testing.assert_array_equal(both.frames, parts.frames)
    assert both.adjacency == list(humanoid.keypoint_adjacency)


def _perturb(model, q, j, h):
    dv = np.zeros(model.nv)
    dv[j] = h
    return K.integrate_config(q, dv, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_central_differences(humanoid, seed):
    rng = np.random.default_rng(seed)
    q = random_config(humanoid, rng)
    h = 1e-6
    for k in range(humanoid.m):
        J = keypoint_jacobian(humanoid, q, k)
        fd = np.empty_like(J)
        for j in range(humanoid.nv):
            fd[:, j] = (keypoint_positions(humanoid, _perturb(humanoid, q, j, h))[k]
                        - keypoint_positions(humanoid, _perturb(humanoid, q, j, -h))[k]) / (2 * h)
        assert np.max(np.abs(J - fd)) < 1e-5


def test_jacobian_off_path_columns_zero(humanoid):
    q = random_config(humanoid, np.random.default_rng(3))
    k = humanoid.keypoint_index("left_hand")
    J = keypoint_jacobian(humanoid, q, k)
    on_path = {humanoid.joint_names.index(n) for n in ("left_shoulder_pitch", "left_elbow")}
    for j in range(humanoid.n_q):
        if j not in on_path:
            assert np.all(J[:, 6 + j] == 0.0)


def test_biped_extended_leg_jacobian_norm_is_length(biped):
    q = biped.neutral_configuration()
    k = biped.keypoint_names.index("left_foot")
    J = keypoint_jacobian(biped, q, k)
    assert np.linalg.norm(J[:, 6 + biped.joint_names.index("left_hip")]) == pytest.approx(0.8, abs=1e-12)
    assert np.linalg.norm(J[:, 6 + biped.joint_names.index("left_knee")]) == pytest.approx(0.4, abs=1e-12)


def test_jacobian_index_checked(humanoid):
    with pytest.raises(IndexError):
        keypoint_jacobian(humanoid, humanoid.neutral_configuration(), humanoid.m)


def test_configuration_validation():
    with pytest.raises(ValueError, match="unit norm"):
        as_config([0, 0, 0, 2, 0, 0, 0])
    with pytest.raises(ValueError, match="finite"):
        as_config([0, 0, np.nan, 1, 0, 0, 0])
    c = Configuration.from_vector([1, 2, 3, 1, 0, 0, 0, 0.5])
    np.testing.assert_array_equal(c.to_vector(), [1, 2, 3, 1, 0, 0, 0, 0.5])


def test_keypoint_trajectory_window_holds_last():
    frames = np.arange(4 * 2 * 3, dtype=float).reshape(4, 2, 3)
    x = KeypointTrajectory(frames, 0.02, [(0, 1)])
    w = x.window(2, 4)
    np.testing.assert_array_equal(w, frames[[2, 3, 3, 3]])
    with pytest.raises(ValueError):
        KeypointTrajectory(frames, 0.0)


def _feasible_motion(model, T=12):
    """Smooth motion with bent limbs, away from the straight-limb singularities."""
    t = np.linspace(0, 1, T)
    bent = {"hip_pitch": -0.4, "knee": 0.8, "ankle_pitch": -0.4, "shoulder_pitch": 0.3, "elbow": -0.8}
    pose = np.array([next((v for k, v in bent.items() if n.endswith(k)), 0.0) for n in model.joint_names])
    phase = np.linspace(0, np.pi, model.n_q)
    Q = np.repeat(model.neutral_configuration()[None], T, 0)
    Q[:, 7:] = pose + 0.25 * np.sin(2 * np.pi * t[:, None] + phase)
    Q[:, 0] = 0.2 * t
    Q[:, 3:7] = [_quat([0, 0, 1], 0.3 * s) for s in t]
    a = model.arrays
    assert np.all((Q[:, 7:] > a.lower) & (Q[:, 7:] < a.upper))
    return Q


def test_ik_recovers_self_generated_targets(humanoid):
    Q = _feasible_motion(humanoid)
    x = fk_trajectory(humanoid, Q, dt=0.02)
    opts = IkOptions(ground_weight=0.0, initial=Q[0])
    _, diag = geometric_retarget_with_diagnostics(humanoid, x, opts)
    assert np.all(diag.costs < 1e-6)


def test_ik_unreachable_target_respects_limits(humanoid):
    q = place_on_ground(humanoid, humanoid.neutral_configuration())
    X = keypoint_positions(humanoid, q)
    X[humanoid.keypoint_index("left_hand"), 2] += 10.0
    x = KeypointTrajectory(X[None], 0.02, list(humanoid.keypoint_adjacency), humanoid.keypoint_names)
    Q, diag = geometric_retarget_with_diagnostics(humanoid, x, IkOptions(initial=q))
    a = humanoid.arrays
    assert np.all(Q.q[:, 7:] >= a.lower) and np.all(Q.q[:, 7:] <= a.upper)
    hist = np.array(diag.histories[0])
    assert np.all(np.diff(hist) <= 0.0)
    assert hist[-1] < hist[0]


def test_ik_residual_nonincreasing_every_frame(humanoid):
    from dynretarget.fixtures import load_fixture

    x = load_fixture("drift").reference
    _, diag = geometric_retarget_with_diagnostics(humanoid, KeypointTrajectory(x.frames[:10], x.dt, x.adjacency, x.names))
    for hist in diag.histories:
        assert np.all(np.diff(hist) <= 0.0)


def test_ik_identity_case_changes_nothing(humanoid):
    q = humanoid.neutral_configuration()
    x = fk_trajectory(humanoid, q[None], dt=0.02)
    Q, diag = geometric_retarget_with_diagnostics(humanoid, x, IkOptions(initial=q, ground_weight=0.0))
    np.testing.assert_array_equal(Q.q[0], q)
    assert diag.costs[0] == 0.0


def test_ik_keypoint_map_reorders(humanoid):
    Q = _feasible_motion(humanoid, T=3)
    x = fk_trajectory(humanoid, Q, dt=0.02)
    order = np.arange(humanoid.m)[::-1]
    names = [f"ref_{humanoid.keypoint_names[i]}" for i in order]
    renamed = KeypointTrajectory(x.frames[:, order], x.dt, [], names)
    kmap = {f"ref_{n}": n for n in humanoid.keypoint_names}
    out = geometric_retarget(humanoid, renamed, IkOptions(ground_weight=0.0, initial=Q[0], keypoint_map=kmap))
    np.testing.assert_allclose(fk_trajectory(humanoid, out).frames, x.frames, atol=1e-4)


def test_ik_dimension_mismatch(humanoid):
    x = KeypointTrajectory(np.zeros((2, 3, 3)), 0.02)
    with pytest.raises(ValueError, match="keypoints"):
        geometric_retarget(humanoid, x)


def test_place_on_ground(humanoid):
    from dynretarget.kinematics import contact_positions

    q = place_on_ground(humanoid, random_config(humanoid, np.random.default_rng(4)))
    assert contact_positions(humanoid, q)[:, 2].min() == pytest.approx(0.0, abs=1e-12)
