"""Mini-batch training loop shared by both networks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFinite
from .autodiff import Tape
from .losses import loss_coarse, loss_fine
from .optim import Adam
from .pointnet import Plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 60
    seed: int = 0
    shuffle: bool = True
    lr_final: float = 1.0  # cosine decay to lr * lr_final over the run; 1 keeps lr fixed
    # units of the fine RMSE terms; in meters the cosine term dominates and
    # the offset magnitude is learned far more slowly than its direction
    trans_unit: float = 0.001
    rot_unit: float = float(np.radians(1.0))
    jitter: float = 0.0  # std of fresh Gaussian noise added to every training cloud, m


class TrainingSet:
    """Network-frame inputs plus targets, with sampling plans cached per sample.

    ``targets`` is ``(offsets, maps)`` for the keypoint network and
    ``(offsets6,)`` for the offset network.
    """

    def __init__(self, points: np.ndarray, targets: tuple):
        self.points = np.asarray(points, dtype=np.float64)
        self.targets = tuple(np.asarray(t) for t in targets)
        if len(self.points) == 0:
            raise ValueError("training set is empty")
        for t in self.targets:
            if len(t) != len(self.points):
                raise ValueError("targets and inputs differ in length")
        self._plans: list[Plan | None] = [None] * len(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def plan(self, model, i: int) -> Plan:
        if self._plans[i] is None:
            p = model.plan(self.points[i])
            p.group_idx = [g.astype(np.int32) for g in p.group_idx]
            p.interp_idx = [g.astype(np.int32) for g in p.interp_idx]
            p.center_idx = [g.astype(np.int32) for g in p.center_idx]
            self._plans[i] = p
        return self._plans[i]

    def batch(self, model, idx, jitter: float = 0.0, rng=None):
        plan = Plan.stack([self.plan(model, i) for i in idx])
        pts = self.points[idx]
        if jitter > 0:
            noise = rng.normal(0.0, jitter, pts.shape)
            pts, plan = pts + noise, plan.jittered(noise)
        return pts, plan, tuple(t[idx] for t in self.targets)


def batch_loss(model, points, plan, targets, config: TrainConfig | None = None):
    if model.kind == "oakn":
        off, conf = model.forward(points, plan)
        return loss_coarse(off, conf, *targets)
    cfg = config or TrainConfig()
    return loss_fine(model.forward(points, plan), *targets, cfg.trans_unit, cfg.rot_unit)


@dataclass
class TrainResult:
    curve: list[float] = field(default_factory=list)  # mean sample loss per epoch
    reports: list[dict] = field(default_factory=list)
    initial_losses: np.ndarray | None = None  # pre-training sample losses, epoch-0 order
    rejected_steps: int = 0


def epoch_lr(config: TrainConfig, epoch: int) -> float:
    f = config.lr_final
    return config.lr * (f + (1.0 - f) * 0.5 * (1.0 + np.cos(np.pi * epoch / max(config.epochs, 1))))


def sample_losses(model, data: TrainingSet, config: TrainConfig | None = None, batch_size: int = 32) -> np.ndarray:
    """Per-sample loss with the current parameters, no graph recorded."""
    out = []
    for s in range(0, len(data), batch_size):
        idx = np.arange(s, min(s + batch_size, len(data)))
        out.append(batch_loss(model, *data.batch(model, idx), config)[2])
    return np.concatenate(out)


def train(model, data: TrainingSet, config: TrainConfig, optimizer: Adam | None = None,
          start_epoch: int = 0, result: TrainResult | None = None, on_epoch=None) -> TrainResult:
    """Train in place; resumable from ``start_epoch`` with a restored optimizer.

    Shuffling draws from a generator keyed on (seed, epoch), so a resumed
    run visits batches exactly as an uninterrupted one would.
    """
    opt = optimizer or Adam(model.parameters(), lr=config.lr)
    res = result or TrainResult()
    n = len(data)
    for epoch in range(start_epoch, config.epochs):
        opt.lr = epoch_lr(config, epoch)
        if config.shuffle:
            order = np.random.default_rng([config.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        if epoch == 0:
            res.initial_losses = sample_losses(model, data, config)[order]
        losses, reports = [], []
        noise_rng = np.random.default_rng([config.seed, epoch, 1])
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            pts, plan, targets = data.batch(model, idx, config.jitter, noise_rng)
            with Tape() as tape:
                total, report, per = batch_loss(model, pts, plan, targets, config)
            tape.backward(total)
            try:
                opt.step()
            except NonFinite as exc:
                res.rejected_steps += 1
                log.warning("epoch %d: %s", epoch, exc)
            model.zero_grad()
            losses.append(per)
            reports.append((len(idx), report.as_dict()))
        per_epoch = np.concatenate(losses)
        res.curve.append(float(per_epoch.mean()))
        res.reports.append(
            {k: sum(w * r[k] for w, r in reports) / n for k in reports[0][1]}
        )
        log.debug("epoch %d loss %.6f", epoch, res.curve[-1])
        if on_epoch is not None:
            on_epoch(epoch, res, opt)
    return res
