"""Training data for the keypoint network (coarse) and the offset network (fine).

Each record is generated from its own generator keyed on ``(seed, kind,
index)``, so the first ``k`` records of a run never depend on how many were
requested. Clouds are rounded to float32 when they are produced; every
label is then computed from those rounded points in float64.

On disk, clouds are little-endian float32 and the per-record pose data is
float64. Per-point coarse labels are not stored: they are a fixed function
of the cloud, the keypoints and sigma, and are recomputed on load with the
same arithmetic, which keeps the round trip bit-exact.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .cloud import AugmentSpec, augment, crop_near, resample
from .errors import CorruptFile, EmptyCrop, VersionMismatch
from .geom import KeypointTriple, Pose, euler_to_rotation, gaussian_confidence
from .sim.world import TrialConfig, capture, drop_peg_points, move_ee, sample_scene, target_pose

KEYPOINT_OFFSET = 0.025  # markers sit 25 mm along the hole x and z axes


def gt_keypoints(hole_pose: Pose) -> KeypointTriple:
    c = hole_pose.translation
    r = hole_pose.rotation
    return KeypointTriple(c, c + KEYPOINT_OFFSET * r[:, 0], c + KEYPOINT_OFFSET * r[:, 2])


@dataclass(frozen=True)
class DataConfig:
    dof_mode: str = "3dof"
    shapes: tuple[str, ...] = ("cuboid1", "cuboid2")
    initial_error_range: tuple[float, float] = (0.15, 0.30)
    tilt_range_deg: tuple[float, float] = (0.0, 50.0)
    n_points: int = 1024
    sigma: float = 0.025
    augment_fraction: float = 0.5  # share of coarse records that get augmented
    noise_sigma: float = 0.0  # training clouds are noise-free by default
    standoff: float = 0.05
    crop_radius: float = 0.08
    crop_points: int = 512
    perturb_translation: float = 0.02
    perturb_rotation_deg: float = 10.0
    near_fraction: float = 0.0  # share of fine records drawn from a 4x smaller envelope
    peg_filter: bool = True  # drop the robot's own peg from fine crops
    seed: int = 0

    def trial(self, initial_error: float) -> TrialConfig:
        return TrialConfig(
            dof_mode=self.dof_mode,
            initial_error=initial_error,
            tilt_range_deg=self.tilt_range_deg,
            noise_sigma=self.noise_sigma,
            shapes=self.shapes,
        )


@dataclass(frozen=True)
class CoarseRecord:
    cloud: np.ndarray  # (N, 3) world
    hole_pose: Pose
    keypoints: KeypointTriple
    sigma: float
    offsets: np.ndarray = field(init=False)  # (N, 3, 3): keypoint j minus point i
    confidence: np.ndarray = field(init=False)  # (N,)

    def __post_init__(self):
        k = self.keypoints.as_array()
        object.__setattr__(self, "offsets", k[None, :, :] - self.cloud[:, None, :])
        object.__setattr__(self, "confidence", gaussian_confidence(self.cloud, self.keypoints.k1, self.sigma))


@dataclass(frozen=True)
class FineRecord:
    cloud: np.ndarray  # (N', 3) world, cropped around the peg tip
    delta_t: np.ndarray  # world, m
    delta_r: np.ndarray  # extrinsic XYZ Euler angles, rad
    ee_pose: Pose  # perturbed pose the cloud was captured from
    target: Pose  # ideal pre-insertion pose


def _record_rng(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, kind, index])


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def coarse_record(cfg: DataConfig, index: int, augmented: bool | None = None) -> CoarseRecord:
    rng = _record_rng(cfg.seed, 1, index)
    scene = sample_scene(cfg.trial(rng.uniform(*cfg.initial_error_range)), rng)
    pts, src = capture(scene, cfg.noise_sigma, rng, with_source=True)
    kps = gt_keypoints(scene.hole.pose)
    if augmented is None:
        augmented = rng.uniform() < cfg.augment_fraction
    if augmented:
        spec = AugmentSpec(seed=int(rng.integers(2**31)))
        pts, kps, _ = augment(pts, scene.hole.pose, kps, spec, cfg.sigma, movable=src == 1)
    cloud = _f32(resample(pts, cfg.n_points, rng))
    return CoarseRecord(cloud, scene.hole.pose, kps, cfg.sigma)


def sample_perturbation(cfg: DataConfig, rng):
    """Offsets ``(dt, dr)`` inside the envelope, restricted to the mode's freedoms."""
    scale = 0.25 if rng.uniform() < cfg.near_fraction else 1.0
    dt = rng.uniform(-1, 1, size=3) * cfg.perturb_translation * scale
    dr = rng.uniform(-1, 1, size=3) * np.radians(cfg.perturb_rotation_deg) * scale
    if cfg.dof_mode == "3dof":
        dr[:] = 0.0  # a round peg over a vertical hole has no rotation to fix
    elif cfg.dof_mode == "4dof":
        dr[:2] = 0.0
    return dt, dr


def perturbed_pose(target: Pose, dt, dr) -> Pose:
    """Pose from which the update ``(dR @ R, t + dt)`` lands exactly on ``target``."""
    return Pose(euler_to_rotation(dr).T @ target.rotation, target.translation - dt)


def fine_record(cfg: DataConfig, index: int, zero: bool = False, max_tries: int = 20) -> FineRecord:
    rng = _record_rng(cfg.seed, 2, index)
    for _ in range(max_tries):
        scene = sample_scene(cfg.trial(cfg.initial_error_range[1]), rng)
        target = target_pose(scene.hole.pose, cfg.standoff)
        dt, dr = (np.zeros(3), np.zeros(3)) if zero else sample_perturbation(cfg, rng)
        ee = perturbed_pose(target, dt, dr)
        scene = move_ee(scene, ee)
        pts = capture(scene, cfg.noise_sigma, rng)
        if cfg.peg_filter:
            pts = drop_peg_points(pts, scene.peg, ee)
        try:
            crop = crop_near(pts, ee.translation, cfg.crop_radius, cfg.crop_points, rng)
        except EmptyCrop:
            # steep tilt plus a large perturbation can leave the hole just out of reach; redraw
            continue
        return FineRecord(_f32(crop), dt, dr, ee, target)
    raise EmptyCrop(f"fine record {index}: nothing within {cfg.crop_radius} m after {max_tries} draws")


def gen_coarse(m: int, cfg: DataConfig, start: int = 0) -> list[CoarseRecord]:
    if m < 1:
        raise ValueError("need at least one record")
    return [coarse_record(cfg, i) for i in range(start, start + m)]


def gen_fine(count: int, cfg: DataConfig, start: int = 0) -> list[FineRecord]:
    if count < 1:
        raise ValueError("need at least one record")
    return [fine_record(cfg, i) for i in range(start, start + count)]


# -- training arrays ---------------------------------------------------------


def coarse_arrays(records: list[CoarseRecord]):
    pts = np.stack([r.cloud for r in records])
    return pts, (np.stack([r.offsets for r in records]), np.stack([r.confidence for r in records]))


def fine_arrays(records: list[FineRecord]):
    """Tool-frame clouds and tool-frame 6-vector labels."""
    from .net.infer import offsets_to_tool, to_tool_frame

    pts = np.stack([to_tool_frame(r.cloud, r.ee_pose) for r in records])
    labels = np.stack([offsets_to_tool(r.delta_t, r.delta_r, r.ee_pose) for r in records])
    return pts, (labels,)


# -- binary format ------------------------------------------------------------

MAGIC = b"PIHDATA\0"
VERSION = 1
KINDS = {"coarse": 1, "fine": 2}
_HEADER = struct.Struct("<8sHBIId")  # magic, version, kind, count, points, sigma
_VERSION_OFFSET = 8


def _pose_vec(p: Pose) -> np.ndarray:
    return np.concatenate([p.rotation.ravel(), p.translation])


def _vec_pose(v: np.ndarray) -> Pose:
    return Pose(v[:9].reshape(3, 3), v[9:12])


def dumps_dataset(records) -> bytes:
    if not records:
        raise ValueError("no records to save")
    coarse = isinstance(records[0], CoarseRecord)
    kind = KINDS["coarse" if coarse else "fine"]
    n = len(records[0].cloud)
    if any(len(r.cloud) != n or isinstance(r, CoarseRecord) != coarse for r in records):
        raise ValueError("records must share kind and cloud size")
    sigma = records[0].sigma if coarse else 0.0
    if coarse:
        meta = [np.concatenate([_pose_vec(r.hole_pose), r.keypoints.as_array().ravel()]) for r in records]
    else:
        meta = [
            np.concatenate([r.delta_t, r.delta_r, _pose_vec(r.ee_pose), _pose_vec(r.target)])
            for r in records
        ]
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, kind, len(records), n, sigma))
    buf.write(np.asarray(meta, dtype="<f8").tobytes())
    buf.write(np.stack([r.cloud for r in records]).astype("<f4").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def loads_dataset(blob: bytes):
    if len(blob) < _HEADER.size + 4:
        raise CorruptFile("dataset file truncated")
    magic, version, kind, count, n, sigma = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptFile("not a dataset file")
    if version != VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {VERSION}")
    if kind not in KINDS.values():
        raise CorruptFile(f"unknown record kind {kind}")
    width = 21 if kind == KINDS["coarse"] else 30
    size = _HEADER.size + count * width * 8 + count * n * 12 + 4
    if len(blob) != size:
        raise CorruptFile(f"dataset size {len(blob)} does not match header ({size})")
    if struct.unpack("<I", blob[-4:])[0] != zlib.crc32(blob[:-4]):
        raise CorruptFile("dataset checksum mismatch")
    off = _HEADER.size
    meta = np.frombuffer(blob, dtype="<f8", count=count * width, offset=off).reshape(count, width)
    off += count * width * 8
    clouds = np.frombuffer(blob, dtype="<f4", count=count * n * 3, offset=off).reshape(count, n, 3)
    clouds = clouds.astype(np.float64)
    out = []
    for m, c in zip(meta, clouds):
        if kind == KINDS["coarse"]:
            out.append(CoarseRecord(c, _vec_pose(m[:12]), KeypointTriple.from_array(m[12:21]), sigma))
        else:
            out.append(FineRecord(c, m[0:3].copy(), m[3:6].copy(), _vec_pose(m[6:18]), _vec_pose(m[18:30])))
    return out


def save_dataset(records, path) -> None:
    with open(path, "wb") as f:
        f.write(dumps_dataset(records))


def load_dataset(path):
    with open(path, "rb") as f:
        return loads_dataset(f.read())
