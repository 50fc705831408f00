"""Point-cloud operations.

Clouds are float64 arrays of shape (N, 3) in world meters. Confidence maps
are (N,) arrays and keypoint candidates are (N, 3, 3) arrays indexed as
``[point, keypoint, xyz]``. Randomness always comes from an explicit seed or
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CountOutOfRange, EmptyCrop, ShapeMismatch
from .geom import KeypointTriple, Pose, gaussian_confidence, rot_z

ZERO_WEIGHT_EPS = 1e-9


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty (N, 3) cloud, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("cloud contains non-finite coordinates")
    return pts


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def farthest_point_sample(cloud, m: int, seed=0, start: int | None = None) -> np.ndarray:
    """Greedy max-min sampling of ``m`` indices.

    The first index is ``start`` when given, otherwise drawn from ``seed``.
    """
    pts = np.asarray(cloud, dtype=np.float64)
    n = len(pts)
    if not 1 <= m <= n:
        raise CountOutOfRange(f"cannot sample {m} of {n} points")
    if start is None:
        start = int(_rng(seed).integers(n))
    idx = np.empty(m, dtype=np.int64)
    idx[0] = start
    cols = [np.ascontiguousarray(pts[:, k]) for k in range(3)]
    dist = np.full(n, np.inf)
    d, tmp = np.empty(n), np.empty(n)
    nxt = start
    for i in range(1, m + 1):
        # squared distance to the newest pick, with preallocated buffers
        np.subtract(cols[0], pts[nxt, 0], out=d)
        np.multiply(d, d, out=d)
        for k in (1, 2):
            np.subtract(cols[k], pts[nxt, k], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
            np.add(d, tmp, out=d)
        np.minimum(dist, d, out=dist)
        if i == m:
            break
        nxt = int(np.argmax(dist))
        idx[i] = nxt
    return idx


def resample(cloud, n: int, seed=0) -> np.ndarray:
    """Exactly ``n`` points: farthest-point subsample, or pad by seeded repeats."""
    pts = as_cloud(cloud)
    rng = _rng(seed)
    if len(pts) >= n:
        return pts[farthest_point_sample(pts, n, seed=rng)]
    extra = rng.choice(len(pts), size=n - len(pts), replace=True)
    return np.concatenate([pts, pts[extra]])


def ball_query_padded(cloud, centers, radius: float, max_k: int) -> np.ndarray:
    """Fixed-size neighbor table of shape (M, max_k).

    Each row holds the nearest in-radius points by ascending distance (ties by
    index) and is padded by repeating its first entry. A center without any
    in-radius point gets its nearest point.
    """
    pts = np.asarray(cloud, dtype=np.float64)
    ctr = np.asarray(centers, dtype=np.float64)
    d2 = np.sum((ctr[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    k = min(max_k, pts.shape[0])
    # stable sort keeps index order among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    sd = np.take_along_axis(d2, order, axis=1)
    inside = sd <= radius * radius
    inside[:, 0] = True
    out = np.where(inside, order, order[:, :1])
    if k < max_k:
        out = np.concatenate([out, np.repeat(out[:, :1], max_k - k, axis=1)], axis=1)
    return out


def ball_query(cloud, centers, radius: float, max_k: int) -> list[np.ndarray]:
    """Per-center neighbor index arrays (variable length, never empty)."""
    if radius <= 0 or max_k < 1:
        raise ValueError("radius must be positive and max_k at least 1")
    pts = np.asarray(cloud, dtype=np.float64)
    ctr = np.asarray(centers, dtype=np.float64)
    d2 = np.sum((ctr[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")
    out = []
    for row, o in zip(d2, order):
        hits = o[row[o] <= radius * radius][:max_k]
        out.append(hits if len(hits) else o[:1])
    return out


def crop_near(cloud, center, radius: float, n_prime: int, seed=0) -> np.ndarray:
    """Keep points within ``radius`` of ``center``, resampled to ``n_prime``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = as_cloud(cloud)
    d2 = np.sum((pts - np.asarray(center, dtype=np.float64)) ** 2, axis=1)
    inside = np.flatnonzero(d2 <= radius * radius)
    if len(inside) == 0:
        raise EmptyCrop(f"no point within {radius} m of the crop center")
    rng = _rng(seed)
    if len(inside) >= n_prime:
        pick = rng.choice(inside, size=n_prime, replace=False)
    else:
        extra = rng.choice(inside, size=n_prime - len(inside), replace=True)
        pick = np.concatenate([rng.permutation(inside), extra])
    return pts[pick]


def add_gaussian_noise(cloud, sigma: float, seed=0) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    pts = as_cloud(cloud)
    if sigma == 0:
        return pts.copy()
    return pts + _rng(seed).normal(0.0, sigma, size=pts.shape)


def decode_candidates(points, offsets) -> np.ndarray:
    """Candidate keypoints ``x_i + dk_ij`` as an (N, 3, 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    off = np.asarray(offsets, dtype=np.float64).reshape(len(pts), 3, 3)
    return pts[:, None, :] + off


def weighted_keypoint_aggregate(candidates, weights) -> KeypointTriple:
    cand = np.asarray(candidates, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if cand.ndim != 3 or cand.shape[1:] != (3, 3) or cand.shape[0] != w.shape[0]:
        raise ShapeMismatch(f"candidates {cand.shape} vs weights {w.shape}")
    total = w.sum()
    if total < ZERO_WEIGHT_EPS:
        w = np.ones_like(w)
        total = float(len(w))
    return KeypointTriple.from_array(np.einsum("i,ijk->jk", w, cand) / total)


@dataclass(frozen=True)
class AugmentSpec:
    scale_range_xy: tuple[float, float] = (0.8, 1.2)
    rotation_range_z: tuple[float, float] = (-np.pi, np.pi)
    mode: str = "mix"
    hole_exclusion_radius: float = 0.035
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range_xy
        if not 0 < lo <= hi:
            raise ValueError(f"bad scale range {self.scale_range_xy}")
        if self.hole_exclusion_radius < 0:
            raise ValueError("exclusion radius must be >= 0")
        if self.mode not in ("scale", "rotate", "mix"):
            raise ValueError(f"unknown augmentation mode {self.mode!r}")


def augment(
    cloud,
    hole_pose: Pose,
    keypoints: KeypointTriple,
    spec: AugmentSpec,
    sigma: float,
    movable=None,
):
    """Reshape the object around its hole.

    Points whose lateral distance from the hole axis is below the exclusion
    radius never move, so the cavity and the keypoints stay put. Outside that
    cylinder, scaling stretches the object-frame x/y offset measured from the
    exclusion boundary and rotation spins about the hole axis. ``movable``
    optionally restricts the transform to object points (the peg is not part
    of the object). Returns ``(cloud, keypoints, confidence_map)``.
    """
    pts = as_cloud(cloud)
    rng = _rng(spec.seed)
    r = hole_pose.rotation
    c = hole_pose.translation
    local = (pts - c) @ r
    lateral = np.linalg.norm(local[:, :2], axis=1)
    move = lateral > spec.hole_exclusion_radius
    if movable is not None:
        move &= np.asarray(movable, dtype=bool)

    out = local.copy()
    if spec.mode in ("scale", "mix"):
        s = rng.uniform(*spec.scale_range_xy, size=2)
        xy = local[move, :2]
        rad = lateral[move, None]
        edge = xy * (spec.hole_exclusion_radius / rad)
        out[move, :2] = edge + (xy - edge) * s
    if spec.mode in ("rotate", "mix"):
        theta = rng.uniform(*spec.rotation_range_z)
        out[move] = out[move] @ rot_z(theta).T
    world = out @ r.T + c
    world[~move] = pts[~move]
    wmap = gaussian_confidence(world, keypoints.k1, sigma)
    return world, keypoints, wmap
