"""Hole objects, pegs and analytic ray intersection.

Hole frame: origin at the center of the cavity mouth on the top face, +z out
of the hole. The body fills ``-height <= z <= 0``. The cavity is a prism of
the hole profile running from ``z = -depth`` up through the top face.

Peg (end-effector) frame: origin at the peg tip, the peg body occupies
``0 <= z <= length`` and the insertion direction is -z.

Ray routines take local-frame origins ``o`` and directions ``d`` of shape
(R, 3) and return entry/exit parameters; ``t0 > t1`` marks a miss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom import Pose

HOLE_DEPTH = 0.045
ROUND_HOLE_RADIUS = 0.025
SQUARE_HOLE_SIDE = 0.050
ROUND_PEG_RADIUS = 0.023
SQUARE_PEG_SIDE = 0.046
PEG_LENGTH = 0.10
CLEARANCE = 0.004

_FAR = 1e9


@dataclass(frozen=True)
class Body:
    """Outer body of a hole object; ``size`` meaning depends on ``shape``.

    cuboid: (x extent, y extent); cylinder: (radius,); pentagonal_prism:
    (circumradius,).
    """

    shape: str
    size: tuple[float, ...]
    height: float = 0.07

    def footprint_radius(self) -> float:
        if self.shape == "cuboid":
            return float(np.hypot(*self.size) / 2)
        return float(self.size[0])

    def inradius(self) -> float:
        if self.shape == "cuboid":
            return min(self.size) / 2
        if self.shape == "pentagonal_prism":
            return self.size[0] * np.cos(np.pi / 5)
        return self.size[0]


BODIES = {
    "cuboid1": Body("cuboid", (0.13, 0.13)),
    "cuboid2": Body("cuboid", (0.10, 0.16)),
    "cylinder": Body("cylinder", (0.08,)),
    "pentagonal_prism": Body("pentagonal_prism", (0.09,)),
}
SEEN_SHAPES = ("cuboid1", "cuboid2")
UNSEEN_SHAPES = ("cylinder", "pentagonal_prism")


@dataclass(frozen=True)
class HoleObject:
    body_name: str
    profile: str  # "round" or "square"
    pose: Pose
    depth: float = HOLE_DEPTH

    def __post_init__(self):
        if self.profile not in ("round", "square"):
            raise ValueError(f"unknown hole profile {self.profile!r}")
        if self.body_name not in BODIES:
            raise ValueError(f"unknown body {self.body_name!r}")
        if self.half_width >= self.body.inradius() or self.depth >= self.body.height:
            raise ValueError("hole does not fit inside the body")

    @property
    def body(self) -> Body:
        return BODIES[self.body_name]

    @property
    def half_width(self) -> float:
        """Radius (round) or half side (square) of the cavity."""
        return ROUND_HOLE_RADIUS if self.profile == "round" else SQUARE_HOLE_SIDE / 2


@dataclass(frozen=True)
class Peg:
    profile: str
    length: float = PEG_LENGTH

    @property
    def half_width(self) -> float:
        return ROUND_PEG_RADIUS if self.profile == "round" else SQUARE_PEG_SIDE / 2


# -- convex intervals ---------------------------------------------------------


def _planes(o, d, normals, offsets, t0, t1):
    """Clip [t0, t1] by half-spaces ``n . x <= h``."""
    for n, h in zip(normals, offsets):
        nd = d @ n
        no = o @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (h - no) / nd
        t1 = np.where(nd > 0, np.minimum(t1, t), t1)
        t0 = np.where(nd < 0, np.maximum(t0, t), t0)
        outside = (nd == 0) & (no > h)
        t0 = np.where(outside, _FAR, t0)
        t1 = np.where(outside, -_FAR, t1)
    return t0, t1


def _zslab(o, d, zlo, zhi):
    n = len(o)
    t0 = np.full(n, -_FAR)
    t1 = np.full(n, _FAR)
    return _planes(o, d, [np.array([0.0, 0, 1]), np.array([0.0, 0, -1])], [zhi, -zlo], t0, t1)


def _cylinder(o, d, r, t0, t1):
    a = d[:, 0] ** 2 + d[:, 1] ** 2
    b = 2 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
    c = o[:, 0] ** 2 + o[:, 1] ** 2 - r * r
    disc = b * b - 4 * a * c
    par = a < 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        sq = np.sqrt(np.maximum(disc, 0))
        lo = (-b - sq) / (2 * a)
        hi = (-b + sq) / (2 * a)
    lo = np.where(par, np.where(c <= 0, -_FAR, _FAR), np.where(disc >= 0, lo, _FAR))
    hi = np.where(par, np.where(c <= 0, _FAR, -_FAR), np.where(disc >= 0, hi, -_FAR))
    return np.maximum(t0, lo), np.minimum(t1, hi)


def _polygon_normals(n_sides: int, circumradius: float, phase: float = 0.0):
    angles = phase + (np.arange(n_sides) + 0.5) * 2 * np.pi / n_sides
    normals = [np.array([np.cos(a), np.sin(a), 0.0]) for a in angles]
    h = circumradius * np.cos(np.pi / n_sides)
    return normals, [h] * n_sides


def _box_xy(half_x, half_y):
    normals = [np.array(v, dtype=float) for v in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0))]
    return normals, [half_x, half_x, half_y, half_y]


def prism_interval(o, d, profile: str, size, zlo: float, zhi: float):
    """Entry/exit of a vertical prism; ``profile`` is cuboid/square, round/cylinder or pentagon."""
    t0, t1 = _zslab(o, d, zlo, zhi)
    if profile in ("round", "cylinder"):
        return _cylinder(o, d, size[0], t0, t1)
    if profile == "cuboid":
        normals, offs = _box_xy(size[0] / 2, size[1] / 2)
    elif profile == "square":
        normals, offs = _box_xy(size[0], size[0])
    elif profile == "pentagonal_prism":
        normals, offs = _polygon_normals(5, size[0], phase=np.pi / 2)
    else:
        raise ValueError(f"unknown prism profile {profile!r}")
    return _planes(o, d, normals, offs, t0, t1)


def hole_object_hit(obj: HoleObject, o, d) -> np.ndarray:
    """Nearest positive hit parameter on body-minus-cavity, ``inf`` on miss."""
    body = obj.body
    a0, a1 = prism_interval(o, d, body.shape, body.size, -body.height, 0.0)
    hw = obj.half_width
    # the cavity pokes through the top face so its mouth is open
    b0, b1 = prism_interval(o, d, obj.profile, (hw,), -obj.depth, 1.0)
    hit_a = (a0 <= a1) & (a1 > 0)
    in_cavity = (b0 <= b1) & (b0 <= a0) & (a0 <= b1)
    t = np.where(in_cavity, np.where(b1 < a1, b1, np.inf), a0)
    t = np.where(hit_a, t, np.inf)
    return np.where(t > 0, t, np.inf)


def peg_hit(peg: Peg, o, d) -> np.ndarray:
    t0, t1 = prism_interval(o, d, peg.profile, (peg.half_width,), 0.0, peg.length)
    ok = (t0 <= t1) & (t0 > 0)
    return np.where(ok, t0, np.inf)


def on_object_surface(obj: HoleObject, local: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """True where hole-frame points lie on the body-minus-cavity boundary."""
    body = obj.body
    x, y, z = local.T
    hw = obj.half_width

    def lateral_dist(profile, size, px, py):
        # signed distance to the prism side (negative inside)
        if profile in ("round", "cylinder"):
            return np.hypot(px, py) - size[0]
        if profile == "square":
            return np.maximum(np.abs(px), np.abs(py)) - size[0]
        if profile == "cuboid":
            return np.maximum(np.abs(px) - size[0] / 2, np.abs(py) - size[1] / 2)
        normals, offs = _polygon_normals(5, size[0], phase=np.pi / 2)
        return np.max([px * n[0] + py * n[1] - h for n, h in zip(normals, offs)], axis=0)

    body_d = lateral_dist(body.shape, body.size, x, y)
    cav_d = lateral_dist(obj.profile, (hw,), x, y)
    in_body_xy = body_d <= tol
    top = (np.abs(z) <= tol) & in_body_xy & (cav_d >= -tol)
    side = (np.abs(body_d) <= tol) & (z >= -body.height - tol) & (z <= tol)
    bottom_face = (np.abs(z + body.height) <= tol) & in_body_xy
    wall = (np.abs(cav_d) <= tol) & (z >= -obj.depth - tol) & (z <= tol)
    floor = (np.abs(z + obj.depth) <= tol) & (cav_d <= tol)
    return top | side | bottom_face | wall | floor
