"""Set-abstraction point backbone plus the keypoint and offset networks.

Sampling and grouping indices depend only on coordinates, so they are
computed once per cloud in numpy (a ``Plan``) and reused across epochs. The
differentiable part only sees gathers, shared MLPs and max-pools.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..cloud import ball_query_padded, farthest_point_sample
from ..errors import ShapeMismatch
from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class SALevel:
    npoint: int
    radius: float
    nsample: int
    mlp: tuple[int, ...]


@dataclass(frozen=True)
class OAKNConfig:
    n_points: int = 1024
    levels: tuple[SALevel, ...] = (
        SALevel(256, 0.02, 32, (32, 64)),
        SALevel(64, 0.06, 32, (64, 128)),
    )
    fp_mlp: tuple[int, ...] = (128,)
    feat_dim: int = 128
    head_width: int = 128
    coord_scale: float = 10.0  # network sees decimeters
    offset_scale: float = 0.1  # head output unit, meters

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OPNConfig:
    n_points: int = 512
    levels: tuple[SALevel, ...] = (
        SALevel(128, 0.02, 32, (32, 64)),
        SALevel(32, 0.05, 32, (64, 128)),
    )
    global_mlp: tuple[int, ...] = (128,)
    global_dim: int = 256
    head_width: int = 128
    coord_scale: float = 10.0
    trans_scale: float = 0.01  # meters per output unit
    rot_scale: float = 0.1  # radians per output unit

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(kind: str, d: dict):
    d = dict(d)
    d["levels"] = tuple(
        SALevel(lv["npoint"], lv["radius"], lv["nsample"], tuple(lv["mlp"])) for lv in d["levels"]
    )
    for key in ("fp_mlp", "global_mlp"):
        if key in d:
            d[key] = tuple(d[key])
    return {"oakn": OAKNConfig, "opn": OPNConfig}[kind](**d)


def tiny_oakn_config(n_points: int = 64) -> OAKNConfig:
    return OAKNConfig(
        n_points=n_points,
        levels=(SALevel(16, 0.04, 8, (8, 8)), SALevel(4, 0.08, 8, (8, 12))),
        fp_mlp=(12,),
        feat_dim=12,
        head_width=12,
    )


def tiny_opn_config(n_points: int = 64) -> OPNConfig:
    return OPNConfig(
        n_points=n_points,
        levels=(SALevel(16, 0.04, 8, (8, 8)), SALevel(4, 0.08, 8, (8, 12))),
        global_mlp=(12,),
        global_dim=16,
        head_width=12,
    )


ARCHS = ("desk", "tiny")


def arch_config(kind: str, arch: str, n_points: int):
    """Named size presets; ``tiny`` exists for smoke tests and gradient checks."""
    if arch == "desk":
        return replace(OAKNConfig() if kind == "oakn" else OPNConfig(), n_points=n_points)
    if arch == "tiny":
        return tiny_oakn_config(n_points) if kind == "oakn" else tiny_opn_config(n_points)
    raise ValueError(f"unknown architecture {arch!r}")


# -- planning -----------------------------------------------------------------


def _start_index(pts: np.ndarray) -> int:
    # lexicographic max is independent of point order, unlike a seeded index
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    return int(order[-1])


def three_nn(fine: np.ndarray, coarse: np.ndarray):
    d2 = np.sum((fine[:, None, :] - coarse[None, :, :]) ** 2, axis=-1)
    k = min(3, coarse.shape[0])
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    d = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    w = 1.0 / (d + 1e-8)
    return idx, w / w.sum(axis=1, keepdims=True)


@dataclass
class Plan:
    """Coordinates and neighbor tables for one (or a batch of) cloud(s)."""

    xyz: list[np.ndarray]  # per level, level 0 = input points
    group_idx: list[np.ndarray]  # per SA level, (M, K) into previous level
    interp_idx: list[np.ndarray] = field(default_factory=list)  # (N_fine, 3)
    interp_w: list[np.ndarray] = field(default_factory=list)
    center_idx: list[np.ndarray] = field(default_factory=list)  # per SA level, (M,) into previous level

    @staticmethod
    def stack(plans: list["Plan"]) -> "Plan":
        def st(name):
            return [np.stack(a) for a in zip(*(getattr(p, name) for p in plans))]

        return Plan(st("xyz"), st("group_idx"), st("interp_idx"), st("interp_w"), st("center_idx"))

    def jittered(self, noise: np.ndarray) -> "Plan":
        """Same neighbor tables over ``xyz[0] + noise`` (batched plans only).

        Interpolation weights are kept as they are, which is close enough for
        millimeter noise.
        """
        xyz = [self.xyz[0] + noise]
        for ci in self.center_idx:
            xyz.append(np.take_along_axis(xyz[-1], ci[..., None], axis=1))
        return Plan(xyz, self.group_idx, self.interp_idx, self.interp_w, self.center_idx)


def make_plan(points: np.ndarray, levels, interpolate: bool) -> Plan:
    xyz = [np.asarray(points, dtype=np.float64)]
    groups, picks = [], []
    for lv in levels:
        prev = xyz[-1]
        m = min(lv.npoint, len(prev))
        pick = farthest_point_sample(prev, m, start=_start_index(prev))
        centers = prev[pick]
        groups.append(ball_query_padded(prev, centers, lv.radius, lv.nsample))
        picks.append(np.asarray(pick))
        xyz.append(centers)
    plan = Plan(xyz, groups, center_idx=picks)
    if interpolate:
        for lvl in range(len(levels), 0, -1):
            idx, w = three_nn(xyz[lvl - 1], xyz[lvl])
            plan.interp_idx.append(idx)
            plan.interp_w.append(w)
    return plan


# -- layers -------------------------------------------------------------------


class Module:
    """Holds named parameter tensors in a stable order."""

    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}

    def _dense(self, name: str, fan_in: int, fan_out: int, gain: float = 2.0):
        w = self.rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        self.params[f"{name}.w"] = Tensor(w.astype(self.dtype), requires_grad=True, name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out, self.dtype), requires_grad=True, name=f"{name}.b")

    def _apply(self, name: str, x, act: bool = True):
        y = ad.linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])
        return ad.relu(y) if act else y

    def _mlp(self, prefix: str, x, widths, final_act: bool = True):
        for i in range(len(widths)):
            last = i == len(widths) - 1
            x = self._apply(f"{prefix}.{i}", x, act=final_act or not last)
        return x

    def _build_mlp(self, prefix: str, fan_in: int, widths, final_gain: float = 2.0) -> int:
        for i, w in enumerate(widths):
            gain = final_gain if i == len(widths) - 1 else 2.0
            self._dense(f"{prefix}.{i}", fan_in, w, gain)
            fan_in = w
        return fan_in

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype) -> None:
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.data = p.data.astype(self.dtype)
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())


class _Backbone(Module):
    def _build_sa(self, levels, in_feat: int) -> list[int]:
        dims = []
        for li, lv in enumerate(levels):
            in_feat = self._build_mlp(f"sa{li}", 3 + in_feat, lv.mlp)
            dims.append(in_feat)
        return dims

    def _sa_forward(self, plan: Plan, levels):
        feats = []
        feat = None
        for li, lv in enumerate(levels):
            prev, centers, idx = plan.xyz[li], plan.xyz[li + 1], plan.group_idx[li]
            rel = (_group_coords(prev, idx) - centers[:, :, None, :]) / lv.radius
            parts = [Tensor(rel.astype(self.dtype))]
            if feat is not None:
                parts.append(ad.gather_points(feat, idx))
            x = ad.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
            x = self._mlp(f"sa{li}", x, lv.mlp)
            feat = ad.tmax(x, axis=2)
            feats.append(feat)
        return feats


def _group_coords(prev: np.ndarray, idx: np.ndarray) -> np.ndarray:
    b = prev.shape[0]
    return prev[np.arange(b)[:, None, None], idx]


def _check_batch(points: np.ndarray, n: int) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 2:
        pts = pts[None]
    if pts.ndim != 3 or pts.shape[1:] != (n, 3):
        raise ShapeMismatch(f"expected (B, {n}, 3) points, got {pts.shape}")
    return pts


class OAKN(_Backbone):
    """Per-point backbone with a 9-output offset head and a confidence head."""

    kind = "oakn"

    def __init__(self, config: OAKNConfig | None = None, seed: int = 0, dtype=np.float32):
        super().__init__(seed, dtype)
        self.config = cfg = config or OAKNConfig()
        dims = self._build_sa(cfg.levels, 0)
        # feature propagation, coarsest level first; the last step lands on the input points
        skip = dims[-2::-1] + [3]
        fan = dims[-1]
        for fi, s in enumerate(skip):
            widths = cfg.fp_mlp if fi < len(skip) - 1 else (cfg.feat_dim,)
            fan = self._build_mlp(f"fp{fi}", fan + s, widths)
        self._build_mlp("off", cfg.feat_dim, (cfg.head_width, 9), final_gain=0.1)
        self._build_mlp("conf", cfg.feat_dim, (cfg.head_width, 1), final_gain=1.0)

    def plan(self, points: np.ndarray) -> Plan:
        return make_plan(points, self.config.levels, interpolate=True)

    def features(self, points, plan: Plan | None = None) -> Tensor:
        """Per-point backbone features, shape (B, N, feat_dim)."""
        cfg = self.config
        pts = _check_batch(points, cfg.n_points)
        if plan is None:
            plan = Plan.stack([self.plan(p) for p in pts])
        centroid = pts.mean(axis=1, keepdims=True)
        plan_c = _recentered(plan, centroid)
        feats = self._sa_forward(plan_c, cfg.levels)
        feat = feats[-1]
        skips = feats[-2::-1] + [Tensor(((pts - centroid) * cfg.coord_scale).astype(self.dtype))]
        for fi, s in enumerate(skips):
            idx, w = plan.interp_idx[fi], plan.interp_w[fi]
            nb = ad.gather_points(feat, idx)  # (B, Nf, 3, C)
            interp = ad.tsum(ad.mul(nb, Tensor(w[..., None].astype(self.dtype))), axis=2)
            x = ad.concat([interp, s], axis=-1)
            widths = cfg.fp_mlp if fi < len(skips) - 1 else (cfg.feat_dim,)
            feat = self._mlp(f"fp{fi}", x, widths)
        return feat

    def forward(self, points, plan: Plan | None = None):
        """Return raw ``(offsets (B, N, 3, 3) meters, confidence (B, N))`` tensors."""
        cfg = self.config
        z = self.features(points, plan)
        off = self._mlp("off", z, (cfg.head_width, 9), final_act=False)
        b, n = off.shape[:2]
        off = ad.mul(ad.reshape(off, (b, n, 3, 3)), cfg.offset_scale)
        conf = self._mlp("conf", z, (cfg.head_width, 1), final_act=False)
        conf = ad.sigmoid(ad.reshape(conf, (b, n)))
        return off, conf


def _recentered(plan: Plan, centroid: np.ndarray) -> Plan:
    # grouping uses relative coordinates, so only the absolute copies shift
    return Plan([x - centroid for x in plan.xyz], plan.group_idx, plan.interp_idx, plan.interp_w, plan.center_idx)


class OPN(_Backbone):
    """Global-feature backbone with a 6-output head (translation, Euler angles)."""

    kind = "opn"

    def __init__(self, config: OPNConfig | None = None, seed: int = 0, dtype=np.float32):
        super().__init__(seed, dtype)
        self.config = cfg = config or OPNConfig()
        dims = self._build_sa(cfg.levels, 0)
        self._build_mlp("glob", 3 + dims[-1], cfg.global_mlp + (cfg.global_dim,))
        self._build_mlp("head", cfg.global_dim, (cfg.head_width, 6), final_gain=0.1)

    def plan(self, points: np.ndarray) -> Plan:
        return make_plan(points, self.config.levels, interpolate=False)

    def global_features(self, points, plan: Plan | None = None) -> Tensor:
        """Order-invariant global descriptor, shape (B, global_dim)."""
        cfg = self.config
        pts = _check_batch(points, cfg.n_points)
        if plan is None:
            plan = Plan.stack([self.plan(p) for p in pts])
        feats = self._sa_forward(plan, cfg.levels)
        centers = Tensor((plan.xyz[-1] * cfg.coord_scale).astype(self.dtype))
        x = ad.concat([centers, feats[-1]], axis=-1)
        x = self._mlp("glob", x, cfg.global_mlp + (cfg.global_dim,))
        return ad.tmax(x, axis=1)

    def forward(self, points, plan: Plan | None = None) -> Tensor:
        """Return (B, 6): translation in meters then Euler angles in radians."""
        cfg = self.config
        g = self.global_features(points, plan)
        out = self._mlp("head", g, (cfg.head_width, 6), final_act=False)
        scale = np.array([cfg.trans_scale] * 3 + [cfg.rot_scale] * 3, dtype=self.dtype)
        return ad.mul(out, scale)
