"""Kinematic peg-in-hole world.

The end-effector is a free-flying pose (the peg tip frame); moves teleport
it. Insertion success is decided geometrically: the peg is pushed straight
down the hole axis until its lowest point reaches the cavity floor, and the
part of the peg below the mouth must then lie inside the cavity prism.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, OutOfWorkspace, SamplingExhausted
from ..geom import Pose, apply, axis_angle, compose, invert, normalize, rot_z
from .camera import Camera, depth_to_cloud, render
from .objects import BODIES, HoleObject, Peg

DOF_MODES = ("3dof", "4dof", "6dof")
TABLE_HALF = 0.25  # hole centers fall in a 0.5 m x 0.5 m table region


@dataclass(frozen=True)
class TrialConfig:
    dof_mode: str = "3dof"
    initial_error: float = 0.30
    tilt_range_deg: tuple[float, float] = (0.0, 50.0)
    noise_sigma: float = 0.001
    seed: int = 0
    shape: str | None = None  # None draws from ``shapes``
    shapes: tuple[str, ...] = ("cuboid1", "cuboid2")

    def __post_init__(self):
        if self.dof_mode not in DOF_MODES:
            raise ConfigError(f"dof_mode must be one of {DOF_MODES}")
        lo, hi = self.tilt_range_deg
        if not 0.0 <= lo <= hi <= 50.0:
            raise ConfigError("tilt range must lie within [0, 50] degrees")
        if self.initial_error <= 0:
            raise ConfigError("initial_error must be positive")
        for s in (self.shape,) if self.shape else self.shapes:
            if s not in BODIES:
                raise ConfigError(f"unknown shape {s!r}")

    @property
    def profile(self) -> str:
        return "round" if self.dof_mode == "3dof" else "square"


@dataclass(frozen=True)
class Workspace:
    lo: tuple[float, float, float] = (-0.7, -0.7, -0.3)
    hi: tuple[float, float, float] = (0.7, 0.7, 0.9)

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))


@dataclass(frozen=True)
class Scene:
    hole: HoleObject
    peg: Peg
    ee_pose: Pose
    camera: Camera = field(default_factory=Camera)
    workspace: Workspace = field(default_factory=Workspace)


def target_pose(hole_pose: Pose, standoff: float) -> Pose:
    """Ideal pre-insertion ee pose: hole orientation, ``standoff`` above the mouth."""
    z = hole_pose.rotation[:, 2]
    return Pose(hole_pose.rotation, hole_pose.translation + standoff * z)


def hole_rotation(mode: str, rng: np.random.Generator, tilt_range_deg) -> np.ndarray:
    if mode == "3dof":
        return np.eye(3)
    # square holes are symmetric under quarter turns; one representative suffices
    yaw = rng.uniform(-np.pi / 4, np.pi / 4)
    if mode == "4dof":
        return rot_z(yaw)
    tilt = np.radians(rng.uniform(*tilt_range_deg))
    azimuth = rng.uniform(0.0, 2 * np.pi)
    return axis_angle((np.cos(azimuth), np.sin(azimuth), 0.0), tilt) @ rot_z(yaw)


def initial_ee_pose(
    hole_center: np.ndarray, initial_error: float, camera: Camera, rng, jitter_deg: float = 8.0
) -> Pose:
    """Peg pointing down, ``initial_error`` from the hole, hole near the image center."""
    m = camera.mount.translation
    ang = np.radians(rng.uniform(-jitter_deg, jitter_deg, size=2))
    d_cam = normalize(np.array([np.tan(ang[0]), np.tan(ang[1]), 1.0]))
    d = camera.mount.rotation @ d_cam
    md = float(m @ d)
    disc = md * md - float(m @ m) + initial_error**2
    if disc < 0:
        raise SamplingExhausted("initial error shorter than the camera mount offset")
    lam = -md + np.sqrt(disc)
    tip = hole_center - m - lam * d
    return Pose(np.eye(3), tip)


def sample_scene(config: TrialConfig, rng=None, camera: Camera | None = None, max_tries: int = 100) -> Scene:
    rng = np.random.default_rng(config.seed) if rng is None else rng
    camera = camera or Camera()
    ws = Workspace()
    for _ in range(max_tries):
        shape = config.shape or config.shapes[int(rng.integers(len(config.shapes)))]
        body = BODIES[shape]
        center = np.array(
            [rng.uniform(-TABLE_HALF, TABLE_HALF), rng.uniform(-TABLE_HALF, TABLE_HALF), body.height]
        )
        rot = hole_rotation(config.dof_mode, rng, config.tilt_range_deg)
        hole = HoleObject(shape, config.profile, Pose(rot, center))
        ee = initial_ee_pose(center, config.initial_error, camera, rng)
        if ws.contains(ee.translation) and ws.contains(target_pose(hole.pose, 0.1).translation):
            return Scene(hole, Peg(config.profile), ee, camera, ws)
    raise SamplingExhausted(f"no valid scene after {max_tries} draws")


def move_ee(scene: Scene, target: Pose) -> Scene:
    if not scene.workspace.contains(target.translation):
        raise OutOfWorkspace(f"target {np.round(target.translation, 4)} outside workspace")
    return replace(scene, ee_pose=target)


def render_depth(scene: Scene, with_peg: bool = True):
    depth, _ = render(scene.camera, scene.ee_pose, scene.hole, scene.peg if with_peg else None)
    return depth


def capture(scene: Scene, noise_sigma: float = 0.0, rng=None, with_source: bool = False):
    """Render, back-project and optionally perturb the eye-in-hand cloud."""
    depth, source = render(scene.camera, scene.ee_pose, scene.hole, scene.peg)
    pts, pix = depth_to_cloud(depth, scene.camera, scene.ee_pose, return_pixels=True)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    if with_source:
        return pts, source.ravel()[pix]
    return pts


PEG_MARGIN = 0.004  # 4 sigma of the default depth noise


def drop_peg_points(points: np.ndarray, peg: Peg, ee_pose: Pose, margin: float = PEG_MARGIN) -> np.ndarray:
    """Remove points on (or within ``margin`` of) the robot's own peg.

    The peg is rigidly attached to the tool, so its points carry no
    information about the hole; the robot knows its geometry.
    """
    local = apply(invert(ee_pose), np.asarray(points, dtype=np.float64))
    if peg.profile == "round":
        lateral = np.hypot(local[:, 0], local[:, 1])
    else:
        lateral = np.max(np.abs(local[:, :2]), axis=1)
    on_peg = (local[:, 2] > -margin) & (local[:, 2] < peg.length + margin) & (lateral < peg.half_width + margin)
    return points[~on_peg]


# -- insertion ----------------------------------------------------------------


@dataclass(frozen=True)
class InsertionResult:
    success: bool
    residual_translation: float  # lateral tip offset from the hole axis, m
    residual_tilt: float  # angle between peg and hole axes, rad
    residual_yaw: float  # square profiles: yaw error modulo quarter turns, rad


def _box_extreme_points(half: float, length: float, rot, trans) -> np.ndarray:
    corners = np.array([[sx * half, sy * half, z] for z in (0.0, length) for sx in (-1, 1) for sy in (-1, 1)])
    world = corners @ rot.T + trans
    edges = [(i, j) for i in range(8) for j in range(i + 1, 8) if np.sum(corners[i] != corners[j]) == 1]
    pts = [world]
    for i, j in edges:
        zi, zj = world[i, 2], world[j, 2]
        if (zi < 0) != (zj < 0):
            s = zi / (zi - zj)
            pts.append((world[i] + s * (world[j] - world[i]))[None])
    return np.concatenate(pts)


def _cylinder_extreme_points(radius: float, length: float, rot, trans, n: int = 720) -> np.ndarray:
    phi = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    ring = np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n)])
    bottom = ring @ rot.T + trans
    top = bottom + length * rot[:, 2]
    pts = [bottom, top]
    zb, zt = bottom[:, 2], top[:, 2]
    cross = (zb < 0) != (zt < 0)
    s = zb[cross] / (zb[cross] - zt[cross])
    pts.append(bottom[cross] + s[:, None] * (top[cross] - bottom[cross]))
    return np.concatenate(pts)


def check_insertion(hole: HoleObject, peg: Peg, peg_pose: Pose, tol: float = 1e-12) -> InsertionResult:
    rel = compose(invert(hole.pose), peg_pose)
    r, t = rel.rotation, rel.translation
    axis = r[:, 2]
    tilt = float(np.arccos(np.clip(axis[2], -1.0, 1.0)))
    lateral = float(np.hypot(t[0], t[1]))
    yaw = 0.0
    if peg.profile == "square":
        yaw = float(np.arctan2(r[1, 0], r[0, 0]))
        yaw = float(abs((yaw + np.pi / 4) % (np.pi / 2) - np.pi / 4))

    if axis[2] <= 0:
        return InsertionResult(False, lateral, tilt, yaw)
    # push straight down until the lowest point reaches the floor; the
    # mouth-plane crossings must be taken after the push, not before
    if peg.profile == "round":
        lowest = t[2] - peg.half_width * np.sqrt(max(0.0, 1.0 - axis[2] ** 2))
    else:
        lowest = _box_extreme_points(peg.half_width, peg.length, r, t)[:, 2].min()
    t = t - np.array([0.0, 0.0, lowest + hole.depth])
    if peg.profile == "round":
        pts = _cylinder_extreme_points(peg.half_width, peg.length, r, t)
    else:
        pts = _box_extreme_points(peg.half_width, peg.length, r, t)
    below = pts[pts[:, 2] < tol]
    if hole.profile == "round":
        inside = np.hypot(below[:, 0], below[:, 1]) <= hole.half_width + tol
    else:
        inside = np.max(np.abs(below[:, :2]), axis=1) <= hole.half_width + tol
    return InsertionResult(bool(np.all(inside)), lateral, tilt, yaw)


# -- scene description files ------------------------------------------------------

SCENE_FORMAT = "peginhole-scene 1"


def _fmt(a) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(a))


def scene_to_text(scene: Scene) -> str:
    cam = scene.camera
    lines = {
        "format": SCENE_FORMAT,
        "hole.body": scene.hole.body_name,
        "hole.profile": scene.hole.profile,
        "hole.depth": repr(scene.hole.depth),
        "hole.rotation": _fmt(scene.hole.pose.rotation),
        "hole.translation": _fmt(scene.hole.pose.translation),
        "peg.profile": scene.peg.profile,
        "peg.length": repr(scene.peg.length),
        "ee.rotation": _fmt(scene.ee_pose.rotation),
        "ee.translation": _fmt(scene.ee_pose.translation),
        "camera.width": str(cam.width),
        "camera.height": str(cam.height),
        "camera.vfov_deg": repr(cam.vfov_deg),
        "camera.mount.rotation": _fmt(cam.mount.rotation),
        "camera.mount.translation": _fmt(cam.mount.translation),
        "workspace.lo": _fmt(scene.workspace.lo),
        "workspace.hi": _fmt(scene.workspace.hi),
    }
    return "".join(f"{k} = {v}\n" for k, v in lines.items())


def scene_from_text(text: str) -> Scene:
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"malformed scene line: {raw!r}")
        kv[key.strip()] = value.strip()
    if kv.pop("format", None) != SCENE_FORMAT:
        raise ConfigError("not a scene description (bad format line)")

    def arr(key, n):
        vals = np.array([float(v) for v in kv[key].split()])
        if vals.size != n:
            raise ConfigError(f"{key} needs {n} numbers")
        return vals

    try:
        hole = HoleObject(
            kv["hole.body"],
            kv["hole.profile"],
            Pose(arr("hole.rotation", 9).reshape(3, 3), arr("hole.translation", 3)),
            float(kv["hole.depth"]),
        )
        peg = Peg(kv["peg.profile"], float(kv["peg.length"]))
        ee = Pose(arr("ee.rotation", 9).reshape(3, 3), arr("ee.translation", 3))
        mount = Pose(arr("camera.mount.rotation", 9).reshape(3, 3), arr("camera.mount.translation", 3))
        cam = Camera(int(kv["camera.width"]), int(kv["camera.height"]), float(kv["camera.vfov_deg"]), mount)
        ws = Workspace(tuple(arr("workspace.lo", 3)), tuple(arr("workspace.hi", 3)))
    except KeyError as exc:
        raise ConfigError(f"scene description missing {exc.args[0]}") from exc
    known = {
        "hole.body", "hole.profile", "hole.depth", "hole.rotation", "hole.translation",
        "peg.profile", "peg.length", "ee.rotation", "ee.translation", "camera.width",
        "camera.height", "camera.vfov_deg", "camera.mount.rotation",
        "camera.mount.translation", "workspace.lo", "workspace.hi",
    }
    unknown = set(kv) - known
    if unknown:
        raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
    return Scene(hole, peg, ee, cam, ws)


def peg_tip_world(scene: Scene) -> np.ndarray:
    return apply(scene.ee_pose, np.zeros(3))
