"""Eye-in-hand pinhole depth camera.

Camera frame follows the usual vision convention: +x right, +y down, +z
along the optical axis. Depth images hold the z coordinate of the hit point
in the camera frame (meters); pixels that see nothing hold ``nan``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CorruptFile, EmptyCloud, VersionMismatch
from ..geom import Pose, apply, compose, invert, normalize
from .objects import HoleObject, Peg, hole_object_hit, peg_hit


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at ``position`` with the optical axis through ``target``."""
    position = np.asarray(position, dtype=np.float64)
    z = normalize(np.asarray(target, dtype=np.float64) - position)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x = normalize(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), position)


def default_mount() -> Pose:
    # beside the peg, 0.10 m behind the tip, aimed past the tip so the peg
    # does not hide the hole; "up" in the ee frame is the peg axis
    return look_at((0.0, -0.08, 0.10), (0.0, 0.0, -0.08), up=(0.0, -1.0, 0.0))


@dataclass(frozen=True)
class Camera:
    width: int = 128
    height: int = 128
    vfov_deg: float = 70.0
    mount: Pose = field(default_factory=default_mount)

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("image must be at least 16x16")
        if not 0 < self.vfov_deg < 180:
            raise ValueError("field of view must be in (0, 180) degrees")

    @property
    def fy(self) -> float:
        return self.height / 2 / np.tan(np.radians(self.vfov_deg) / 2)

    @property
    def fx(self) -> float:
        return self.fy

    @property
    def cx(self) -> float:
        return self.width / 2

    @property
    def cy(self) -> float:
        return self.height / 2

    def world_pose(self, ee_pose: Pose) -> Pose:
        return compose(ee_pose, self.mount)

    def pixel_rays(self) -> np.ndarray:
        """Camera-frame ray directions with unit z, shape (H*W, 3), row-major."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        x = (u.ravel() + 0.5 - self.cx) / self.fx
        y = (v.ravel() + 0.5 - self.cy) / self.fy
        return np.column_stack([x, y, np.ones_like(x)])

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points to continuous pixel coordinates (u, v)."""
        p = np.asarray(points_cam, dtype=np.float64)
        return np.column_stack(
            [self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy]
        )


def render(camera: Camera, ee_pose: Pose, hole: HoleObject | None, peg: Peg | None):
    """Ray-cast the scene; returns ``(depth (H, W), source (H, W))``.

    ``source`` is 0 for background, 1 for the hole object and 2 for the peg.
    """
    cam = camera.world_pose(ee_pose)
    rays = camera.pixel_rays()
    n = len(rays)
    best = np.full(n, np.inf)
    source = np.zeros(n, dtype=np.uint8)
    if hole is not None:
        # ray o + s*d with d = R_cam @ (x, y, 1): s is camera z-depth
        to_obj = compose(invert(hole.pose), cam)
        o = np.broadcast_to(to_obj.translation, (n, 3))
        d = rays @ to_obj.rotation.T
        t = hole_object_hit(hole, o, d)
        source[t < best] = 1
        best = np.minimum(best, t)
    if peg is not None:
        to_peg = compose(invert(ee_pose), cam)  # peg frame is the ee frame
        o = np.broadcast_to(to_peg.translation, (n, 3))
        d = rays @ to_peg.rotation.T
        t = peg_hit(peg, o, d)
        source[t < best] = 2
        best = np.minimum(best, t)
    depth = np.where(np.isfinite(best), best, np.nan)
    return depth.reshape(camera.height, camera.width), source.reshape(camera.height, camera.width)


def depth_to_cloud(depth: np.ndarray, camera: Camera, ee_pose: Pose, return_pixels: bool = False):
    """Back-project valid pixels into world-frame points (row-major order)."""
    flat = np.asarray(depth, dtype=np.float64).ravel()
    valid = np.flatnonzero(np.isfinite(flat) & (flat > 0))
    if len(valid) == 0:
        raise EmptyCloud("depth image has no valid pixel")
    pts_cam = camera.pixel_rays()[valid] * flat[valid, None]
    world = apply(camera.world_pose(ee_pose), pts_cam)
    if return_pixels:
        return world, valid
    return world


# -- raw depth export ---------------------------------------------------------

DEPTH_MAGIC = b"PIHDEPTH"
DEPTH_VERSION = 1
_DEPTH_HEADER = struct.Struct("<8sHII4d")


def save_depth(path, depth: np.ndarray, camera: Camera) -> None:
    """Little-endian float32 image after a header of (W, H, fx, fy, cx, cy)."""
    h, w = depth.shape
    header = _DEPTH_HEADER.pack(
        DEPTH_MAGIC, DEPTH_VERSION, w, h, camera.fx, camera.fy, camera.cx, camera.cy
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.asarray(depth, dtype="<f4").tobytes())


def load_depth(path):
    """Return ``(depth, intrinsics dict)``."""
    blob = open(path, "rb").read()
    if len(blob) < _DEPTH_HEADER.size:
        raise CorruptFile("depth file shorter than its header")
    magic, version, w, h, fx, fy, cx, cy = _DEPTH_HEADER.unpack_from(blob)
    if magic != DEPTH_MAGIC:
        raise CorruptFile("not a depth image file")
    if version != DEPTH_VERSION:
        raise VersionMismatch(f"depth format version {version}, expected {DEPTH_VERSION}")
    body = blob[_DEPTH_HEADER.size :]
    if len(body) != 4 * w * h:
        raise CorruptFile("depth payload size does not match header")
    depth = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return depth, {"width": w, "height": h, "fx": fx, "fy": fy, "cx": cx, "cy": cy}
