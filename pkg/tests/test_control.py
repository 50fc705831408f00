import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peginhole.control import (
    ConstantOffsets,
    ControllerConfig,
    OracleKeypoints,
    OracleOffsets,
    apply_offsets,
    coarse_step,
    oracle_opn,
    restrict_offsets,
    restrict_rotation,
    run_trial,
    servo_loop,
)
from peginhole.datagen import gt_keypoints
from peginhole.errors import DegenerateKeypoints
from peginhole.geom import Pose, euler_to_rotation, rot_z, rotation_angle, rotation_to_euler
from peginhole.sim import TrialConfig, move_ee, sample_scene, target_pose

CFG = ControllerConfig()


class ShiftedKeypoints(OracleKeypoints):
    def __init__(self, shift):
        super().__init__()
        self.shift = np.asarray(shift, dtype=float)

    def predict(self, cloud, scene):
        cand, conf = super().predict(cloud, scene)
        return cand + self.shift, conf


class CollapsedKeypoints:
    def predict(self, cloud, scene):
        return np.zeros((len(cloud), 3, 3)), np.ones(len(cloud))


def scene(mode="6dof", seed=0, **kw):
    return sample_scene(TrialConfig(mode, noise_sigma=0.0, seed=seed, **kw))


def at_target_with(s, dt=(0, 0, 0), dr=(0, 0, 0)):
    goal = target_pose(s.hole.pose, CFG.standoff)
    ee = Pose(euler_to_rotation(dr) @ goal.rotation, goal.translation + np.asarray(dt, dtype=float))
    return move_ee(s, ee)


def test_oracle_coarse_step_lands_on_target():
    s = scene("6dof", 1)
    moved, cmd = coarse_step(OracleKeypoints(), s, CFG)
    assert np.allclose(cmd.rotation, s.hole.pose.rotation, atol=1e-9)
    z = s.hole.pose.rotation[:, 2]
    assert np.allclose(cmd.translation, s.hole.pose.translation + 0.05 * z, atol=1e-9)
    assert moved.ee_pose is cmd


def test_vertical_hole_standoff():
    s = scene("3dof", 2)
    _, cmd = coarse_step(OracleKeypoints(), s, CFG)
    assert np.allclose(cmd.translation - s.hole.pose.translation, (0, 0, 0.05), atol=1e-12)


def test_degenerate_keypoints_surface_without_motion():
    s = scene("3dof", 3)
    with pytest.raises(DegenerateKeypoints):
        coarse_step(CollapsedKeypoints(), s, CFG)
    res = run_trial(CollapsedKeypoints(), OracleOffsets(), TrialConfig("3dof", noise_sigma=0, seed=3), CFG)
    assert not res.success and res.error.startswith("DegenerateKeypoints")


def test_oracle_opn_examples():
    s = scene("3dof", 4)
    goal = target_pose(s.hole.pose, 0.05)
    dt, dr = oracle_opn(s, goal)
    assert np.allclose(dt, 0, atol=1e-15) and np.allclose(dr, 0, atol=1e-15)
    dt, _ = oracle_opn(s, Pose(goal.rotation, goal.translation - (0.01, 0, 0)))
    assert np.allclose(dt, (0.01, 0, 0), atol=1e-15)
    _, dr = oracle_opn(s, Pose(rot_z(np.radians(-10)) @ goal.rotation, goal.translation))
    assert np.allclose(dr, (0, 0, np.radians(10)), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02), st.floats(-0.2, 0.2))
def test_oracle_servo_takes_exactly_two_iterations(seed, x, y, yaw):
    s = at_target_with(scene("6dof", seed), (x, y, 0.01), (0.05, -0.03, yaw))
    out, trace = servo_loop(OracleOffsets(), s, CFG)
    assert trace.iterations == 2 and trace.converged
    assert trace.steps[1].commanded is None
    assert out.ee_pose.allclose(target_pose(s.hole.pose, 0.05), atol=1e-9)


def test_zero_offsets_stop_at_once_without_motion():
    s = at_target_with(scene("3dof", 5), (0.004, 0, 0))
    out, trace = servo_loop(ConstantOffsets(), s, CFG)
    assert trace.iterations == 1 and trace.converged and out.ee_pose is s.ee_pose


def test_large_constant_offsets_run_to_the_limit():
    s = at_target_with(scene("3dof", 6))
    out, trace = servo_loop(ConstantOffsets(dt=(0.002, 0, 0)), s, ControllerConfig(max_iters=7))
    assert trace.iterations == 7 and trace.max_iters_reached
    assert np.allclose(out.ee_pose.translation - s.ee_pose.translation, (0.014, 0, 0), atol=1e-12)


def test_update_rule():
    p = Pose(euler_to_rotation((0.1, 0.2, 0.3)), (1.0, 2.0, 3.0))
    q = apply_offsets(p, (0.01, 0, -0.02), (0, 0, 0.5))
    assert np.allclose(q.rotation, rot_z(0.5) @ p.rotation)
    assert np.allclose(q.translation, (1.01, 2.0, 2.98))
    assert np.allclose(rotation_to_euler(q.rotation @ p.rotation.T), (0, 0, 0.5))


@pytest.mark.parametrize("mode", ["3dof", "4dof", "6dof"])
def test_oracle_pipeline_succeeds(mode):
    for seed in range(5):
        tc = TrialConfig(mode, noise_sigma=0.0, seed=seed)
        res = run_trial(OracleKeypoints(), OracleOffsets(), tc, CFG)
        assert res.success, res
        assert res.servo_iterations == 1  # coarse stage already exact
        assert res.residual_translation < 1e-9


def test_lateral_keypoint_error_without_fine_stage_fails():
    tc = TrialConfig("3dof", noise_sigma=0.0, seed=7)
    res = run_trial(ShiftedKeypoints((0.005, 0, 0)), ConstantOffsets(), tc, CFG)
    assert not res.success and abs(res.residual_translation - 0.005) < 1e-9


def test_oracle_fine_stage_repairs_coarse_error():
    tc = TrialConfig("3dof", noise_sigma=0.0, seed=7)
    res = run_trial(ShiftedKeypoints((0.005, 0, 0)), OracleOffsets(), tc, CFG)
    assert res.success and res.servo_iterations == 2


def test_trial_is_repeatable_and_trace_serializes():
    tc = TrialConfig("6dof", noise_sigma=0.001, seed=11)
    a = run_trial(OracleKeypoints(), OracleOffsets(), tc, CFG)
    b = run_trial(OracleKeypoints(), OracleOffsets(), tc, CFG)
    assert (a.success, a.servo_iterations, a.residual_translation) == (b.success, b.servo_iterations, b.residual_translation)
    assert a.trace.to_jsonl() == b.trace.to_jsonl()
    assert a.trace.to_jsonl().count("\n") == a.servo_iterations


def test_gt_keypoints_examples():
    k = gt_keypoints(Pose.identity())
    assert np.allclose(k.as_array(), [[0, 0, 0], [0.025, 0, 0], [0, 0, 0.025]])
    k = gt_keypoints(Pose(rot_z(np.pi / 2), np.zeros(3)))
    assert np.allclose(k.k2, (0, 0.025, 0), atol=1e-15)


@pytest.mark.parametrize("kw", [{"e_t": 0}, {"e_r": -1}, {"max_iters": 0}])
def test_bad_controller_config(kw):
    with pytest.raises(ValueError):
        ControllerConfig(**kw)


def test_action_space_restriction():
    r = euler_to_rotation((0.02, -0.03, 0.4))
    assert np.array_equal(restrict_rotation(r, "3dof"), np.eye(3))
    assert np.allclose(restrict_rotation(r, "4dof"), rot_z(0.4), atol=1e-3)
    assert restrict_rotation(r, "6dof") is r
    dr = (0.1, 0.2, 0.3)
    assert np.array_equal(restrict_offsets(dr, "3dof"), np.zeros(3))
    assert np.array_equal(restrict_offsets(dr, "4dof"), (0, 0, 0.3))
    assert np.array_equal(restrict_offsets(dr, "6dof"), dr)


class TiltedKeypoints(OracleKeypoints):
    def predict(self, cloud, scene):
        cand, conf = super().predict(cloud, scene)
        k = cand[0]
        tilt = euler_to_rotation((np.radians(2), 0, 0))
        return (k - k[0]) @ tilt.T + k[0] + np.zeros_like(cand), conf


@pytest.mark.parametrize("mode", ["3dof", "4dof"])
def test_low_dof_tasks_keep_the_tool_vertical(mode):
    # a 2 degree tilt in the keypoints is not commanded when the task has no tilt
    tc = TrialConfig(mode, noise_sigma=0.0, seed=8)
    res = run_trial(TiltedKeypoints(), ConstantOffsets(dr=(0.05, 0.05, 0)), tc, CFG)
    assert res.success and res.residual_tilt < 1e-9


def test_6dof_follows_the_keypoint_tilt():
    s = scene("6dof", 8)
    _, cmd = coarse_step(TiltedKeypoints(), s, CFG, dof_mode="6dof")
    assert abs(np.degrees(rotation_angle(cmd.rotation @ s.hole.pose.rotation.T)) - 2) < 1e-6
