"""Coarse-to-fine controller: keypoint move, visual servoing, insertion.

Keypoint and offset models are duck-typed. A keypoint model provides
``predict(cloud, scene) -> (candidates (N, 3, 3), confidence (N,))`` and an
offset model provides ``predict(cloud, scene) -> (dt, dr)`` in the world
frame. Learned models only look at the cloud (and the end-effector pose, which
the robot knows); oracles read the ground truth from the scene.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .cloud import crop_near, resample, weighted_keypoint_aggregate
from .datagen import gt_keypoints
from .errors import PegInHoleError
from .geom import (
    Pose,
    euler_to_rotation,
    gaussian_confidence,
    pose_from_keypoints,
    rot_z,
    rotation_angle,
    rotation_to_euler,
)
from .net.infer import oakn_forward, opn_forward
from .sim.world import (
    Scene,
    TrialConfig,
    capture,
    check_insertion,
    drop_peg_points,
    move_ee,
    sample_scene,
    target_pose,
)


@dataclass(frozen=True)
class ControllerConfig:
    e_t: float = 0.001
    e_r: float = float(np.radians(1.0))
    max_iters: int = 10
    standoff: float = 0.05
    crop_radius: float = 0.08
    crop_points: int = 512
    uniform_weights: bool = False  # plain average instead of confidence weighting
    peg_filter: bool = True  # drop the robot's own peg before cropping

    def __post_init__(self):
        if self.e_t <= 0 or self.e_r <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


# -- models -------------------------------------------------------------------


class LearnedKeypoints:
    def __init__(self, model):
        self.model = model

    def predict(self, cloud, scene):
        pts = resample(cloud, self.model.config.n_points, seed=0)
        return oakn_forward(self.model, pts)


class OracleKeypoints:
    """Every point votes for the true keypoints with the true confidence."""

    def __init__(self, sigma: float = 0.025):
        self.sigma = sigma

    def predict(self, cloud, scene):
        k = gt_keypoints(scene.hole.pose)
        cand = np.broadcast_to(k.as_array(), (len(cloud), 3, 3))
        return cand, gaussian_confidence(cloud, k.k1, self.sigma)


class LearnedOffsets:
    def __init__(self, model):
        self.model = model

    def predict(self, cloud, scene):
        return opn_forward(self.model, cloud, scene.ee_pose)


def oracle_opn(scene: Scene, ee_pose: Pose, standoff: float = 0.05):
    """Exact left-multiplicative offsets from ``ee_pose`` to the pre-insertion pose."""
    target = target_pose(scene.hole.pose, standoff)
    dr = rotation_to_euler(target.rotation @ ee_pose.rotation.T)
    return target.translation - ee_pose.translation, dr


class OracleOffsets:
    def __init__(self, standoff: float = 0.05):
        self.standoff = standoff

    def predict(self, cloud, scene):
        return oracle_opn(scene, scene.ee_pose, self.standoff)


class ConstantOffsets:
    def __init__(self, dt=(0.0, 0.0, 0.0), dr=(0.0, 0.0, 0.0)):
        self.dt = np.asarray(dt, dtype=np.float64)
        self.dr = np.asarray(dr, dtype=np.float64)

    def predict(self, cloud, scene):
        return self.dt.copy(), self.dr.copy()


def apply_offsets(pose: Pose, dt, dr) -> Pose:
    """The servo update: ``R' = dR @ R``, ``t' = t + dt``."""
    return Pose(euler_to_rotation(dr) @ pose.rotation, pose.translation + np.asarray(dt, dtype=np.float64))


def restrict_rotation(rotation: np.ndarray, dof_mode: str) -> np.ndarray:
    """Project a commanded orientation onto the task's action space.

    3dof moves only in position with the tool held vertical; 4dof adds yaw.
    """
    if dof_mode == "3dof":
        return np.eye(3)
    if dof_mode == "4dof":
        return rot_z(np.arctan2(rotation[1, 0], rotation[0, 0]))
    return rotation


def restrict_offsets(dr, dof_mode: str) -> np.ndarray:
    dr = np.array(dr, dtype=np.float64)
    if dof_mode == "3dof":
        dr[:] = 0.0
    elif dof_mode == "4dof":
        dr[:2] = 0.0
    return dr


# -- stages -------------------------------------------------------------------


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def coarse_step(keypoints, scene: Scene, cfg: ControllerConfig, noise_sigma: float = 0.0, rng=None,
                dof_mode: str = "6dof"):
    """Capture, vote, aggregate and move to the standoff pose; returns ``(scene, pose)``."""
    rng = _rng(rng)
    cloud = capture(scene, noise_sigma, rng)
    cand, conf = keypoints.predict(cloud, scene)
    weights = np.ones(len(cand)) if cfg.uniform_weights else conf
    hole = pose_from_keypoints(weighted_keypoint_aggregate(cand, weights))
    cmd = target_pose(hole, cfg.standoff)
    cmd = Pose(restrict_rotation(cmd.rotation, dof_mode), cmd.translation)
    return move_ee(scene, cmd), cmd


@dataclass
class ServoStep:
    iteration: int
    delta_t: list
    delta_r: list
    commanded: list | None  # 4x4 pose, None when the loop stopped on this prediction
    residual_translation: float  # to the true pre-insertion pose, for analysis only
    residual_rotation: float


@dataclass
class ServoTrace:
    steps: list[ServoStep] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.steps)

    @property
    def max_iters_reached(self) -> bool:
        return not self.converged

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.__dict__) + "\n" for s in self.steps)


def servo_loop(offsets, scene: Scene, cfg: ControllerConfig, noise_sigma: float = 0.0, rng=None,
               dof_mode: str = "6dof"):
    """Iterate predict-and-move until the predicted offsets fall below tolerance."""
    rng = _rng(rng)
    trace = ServoTrace()
    goal = target_pose(scene.hole.pose, cfg.standoff)
    for it in range(1, cfg.max_iters + 1):
        ee = scene.ee_pose
        cloud = capture(scene, noise_sigma, rng)
        if cfg.peg_filter:
            cloud = drop_peg_points(cloud, scene.peg, ee)
        crop = crop_near(cloud, ee.translation, cfg.crop_radius, cfg.crop_points, rng)
        dt, dr = offsets.predict(crop, scene)
        dr = restrict_offsets(dr, dof_mode)
        res_t = float(np.linalg.norm(goal.translation - ee.translation))
        res_r = rotation_angle(goal.rotation @ ee.rotation.T)
        done = np.linalg.norm(dt) < cfg.e_t and np.linalg.norm(dr) < cfg.e_r
        cmd = None
        if not done:
            cmd = apply_offsets(ee, dt, dr)
            scene = move_ee(scene, cmd)
        trace.steps.append(
            ServoStep(it, list(map(float, dt)), list(map(float, dr)),
                      None if cmd is None else cmd.matrix().tolist(), res_t, res_r)
        )
        if done:
            trace.converged = True
            break
    return scene, trace


# -- trials -------------------------------------------------------------------


@dataclass
class TrialResult:
    success: bool
    servo_iterations: int
    residual_translation: float
    residual_tilt: float
    wall_time: float
    servo_time: float = 0.0
    error: str | None = None
    trace: ServoTrace | None = None


def run_trial(keypoints, offsets, trial: TrialConfig, cfg: ControllerConfig,
              coarse: bool = True, fine: bool = True, scene: Scene | None = None) -> TrialResult:
    """One episode; stage errors yield a failed result with the error recorded."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(trial.seed)
    servo_time, trace = 0.0, None
    try:
        scene = scene or sample_scene(trial, rng)
        if coarse:
            scene, _ = coarse_step(keypoints, scene, cfg, trial.noise_sigma, rng, trial.dof_mode)
        if fine:
            ts = time.perf_counter()
            scene, trace = servo_loop(offsets, scene, cfg, trial.noise_sigma, rng, trial.dof_mode)
            servo_time = time.perf_counter() - ts
        ins = check_insertion(scene.hole, scene.peg, scene.ee_pose)
    except PegInHoleError as exc:
        return TrialResult(False, trace.iterations if trace else 0, float("nan"), float("nan"),
                           time.perf_counter() - t0, servo_time, f"{type(exc).__name__}: {exc}", trace)
    return TrialResult(
        ins.success,
        trace.iterations if trace else 0,
        ins.residual_translation,
        ins.residual_tilt,
        time.perf_counter() - t0,
        servo_time,
        None,
        trace,
    )
