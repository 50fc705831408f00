"""Training losses for the keypoint and offset networks.

Every loss returns ``(total, report, per_sample)``: a scalar tensor to
differentiate, a ``LossReport`` of batch means and a numpy vector holding
each sample's total.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from . import autodiff as ad
from .autodiff import Tensor

COS_GUARD = 1e-9  # below this norm (m) the translation direction is undefined


@dataclass(frozen=True)
class LossReport:
    l_kpts: float = 0.0
    l_map: float = 0.0
    l_trans: float = 0.0
    l_rot: float = 0.0

    @property
    def total(self) -> float:
        return self.l_kpts + self.l_map + self.l_trans + self.l_rot

    def as_dict(self) -> dict:
        return {**asdict(self), "total": self.total}


def _batched(x, ndim: int) -> Tensor:
    t = ad.as_tensor(x)
    return ad.reshape(t, (1,) + t.shape) if t.ndim == ndim - 1 else t


def loss_coarse(pred_offsets, pred_map, gt_offsets, gt_map):
    """Confidence-weighted keypoint offset error plus confidence RMSE.

    Shapes: offsets (B, N, 3, 3) or (N, 3, 3); maps (B, N) or (N,).
    """
    off = _batched(pred_offsets, 4)
    conf = _batched(pred_map, 2)
    gt_off = np.asarray(gt_offsets, dtype=off.dtype).reshape(off.shape)
    gt_w = np.asarray(gt_map, dtype=off.dtype).reshape(conf.shape)
    if off.shape[:2] != conf.shape or off.shape[2:] != (3, 3):
        raise ShapeMismatch(f"offsets {off.shape} vs map {conf.shape}")
    n = off.shape[1]
    dist = ad.norm(ad.sub(off, gt_off), axis=-1)  # (B, N, 3)
    per_point = ad.tsum(dist, axis=-1)  # sum over the three keypoints
    l_kpts = ad.mul(ad.tsum(ad.mul(per_point, gt_w), axis=1), 1.0 / n)
    err = ad.sub(conf, gt_w)
    l_map = ad.sqrt(ad.mean(ad.mul(err, err), axis=1))
    per_sample = ad.add(l_kpts, l_map)
    total = ad.mean(per_sample)
    report = LossReport(l_kpts=float(l_kpts.data.mean()), l_map=float(l_map.data.mean()))
    return total, report, per_sample.data.astype(np.float64)


def loss_fine(pred, gt, trans_unit: float = 1.0, rot_unit: float = 1.0):
    """Translation RMSE plus cosine distance, and rotation RMSE.

    ``pred`` and ``gt`` are (B, 6) or (6,): translation (m) then Euler angles
    (rad). The RMSE terms are measured in multiples of ``trans_unit`` meters
    and ``rot_unit`` radians; the cosine term is unitless.
    """
    p = _batched(pred, 2)
    g = np.asarray(gt, dtype=p.dtype).reshape(p.shape)
    if p.shape[-1] != 6:
        raise ShapeMismatch(f"expected 6 offsets per sample, got {p.shape}")
    t, r = ad.index(p, (slice(None), slice(0, 3))), ad.index(p, (slice(None), slice(3, 6)))
    gt_t, gt_r = g[:, :3], g[:, 3:]

    et = ad.mul(ad.sub(t, gt_t), 1.0 / trans_unit)
    rmse_t = ad.sqrt(ad.mean(ad.mul(et, et), axis=1))
    nt = ad.norm(t, axis=1)
    ngt = np.linalg.norm(gt_t, axis=1)
    ok = ((nt.data >= COS_GUARD) & (ngt >= COS_GUARD)).astype(p.dtype)
    # masked entries get a unit denominator and a zero weight
    denom = ad.add(ad.mul(nt, ngt * ok), 1.0 - ok)
    cos = ad.div(ad.tsum(ad.mul(t, gt_t), axis=1), denom)
    l_cos = ad.mul(ad.sub(1.0, cos), ok)
    l_trans = ad.add(rmse_t, l_cos)

    er = ad.mul(ad.sub(r, gt_r), 1.0 / rot_unit)
    l_rot = ad.sqrt(ad.mean(ad.mul(er, er), axis=1))
    per_sample = ad.add(l_trans, l_rot)
    total = ad.mean(per_sample)
    report = LossReport(l_trans=float(l_trans.data.mean()), l_rot=float(l_rot.data.mean()))
    return total, report, per_sample.data.astype(np.float64)
