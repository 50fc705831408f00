import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peginhole.errors import ShapeMismatch
from peginhole.net.losses import loss_coarse, loss_fine

seeds = st.integers(0, 2**31 - 1)


def coarse_inputs(rng, b=2, n=8):
    return (rng.normal(size=(b, n, 3, 3)), rng.uniform(0, 1, (b, n)),
            rng.normal(size=(b, n, 3, 3)), rng.uniform(0, 1, (b, n)))


def test_coarse_zero_at_ground_truth():
    rng = np.random.default_rng(0)
    off, _, _, w = coarse_inputs(rng)
    total, rep, per = loss_coarse(off, w, off, w)
    assert total.item() == 0.0 and rep.l_kpts == 0.0 and rep.l_map == 0.0
    assert np.all(per == 0)


def test_zero_weights_silence_keypoint_term():
    rng = np.random.default_rng(1)
    off, conf, gt_off, _ = coarse_inputs(rng)
    _, rep, _ = loss_coarse(off, conf, gt_off, np.zeros(conf.shape))
    assert rep.l_kpts == 0.0


def test_keypoint_worked_example():
    gt = np.zeros((2, 3, 3))
    pred = gt.copy()
    pred[0, 1] = (1.0, 0, 0)
    pred[1, 2] = (0, 3.0, 0)
    w = np.ones(2)
    _, rep, _ = loss_coarse(pred, w, gt, w)
    assert abs(rep.l_kpts - 2.0) < 1e-12
    assert rep.l_map == 0.0


def test_map_term_is_rmse():
    gt_w = np.array([0.2, 0.4, 0.6, 0.8])
    pred_w = gt_w + np.array([0.1, -0.1, 0.3, 0.0])
    off = np.zeros((4, 3, 3))
    _, rep, _ = loss_coarse(off, pred_w, off, gt_w)
    assert abs(rep.l_map - np.sqrt(np.mean([0.01, 0.01, 0.09, 0.0]))) < 1e-12


def test_coarse_shapes_checked():
    with pytest.raises(ShapeMismatch):
        loss_coarse(np.zeros((4, 3, 3)), np.zeros(5), np.zeros((4, 3, 3)), np.zeros(5))


def test_fine_zero_at_ground_truth():
    g = np.array([[0.003, -0.001, 0.002, 0.01, 0.0, -0.02]])
    total, rep, _ = loss_fine(g, g)
    assert total.item() < 1e-12 and rep.l_rot == 0.0


def test_fine_double_translation_example():
    gt = np.array([0.003, 0, 0, 0, 0, 0])
    _, rep, _ = loss_fine(2 * gt, gt)
    assert abs(rep.l_trans - np.sqrt(0.003**2 / 3)) < 1e-12


def test_antiparallel_cosine_is_two():
    gt = np.array([0.003, -0.004, 0.001, 0, 0, 0])
    pred = -gt
    _, rep, _ = loss_fine(pred, gt)
    rmse = np.sqrt(np.mean((2 * gt[:3]) ** 2))
    assert abs(rep.l_trans - (rmse + 2.0)) < 1e-12


def test_cosine_guard_at_zero_translation():
    gt = np.zeros(6)
    pred = np.array([1e-12, 0, 0, 0, 0, 0])
    total, rep, _ = loss_fine(pred, gt)
    assert np.isfinite(total.item()) and rep.l_trans < 1e-11


def test_fine_units_scale_rmse_terms_only():
    rng = np.random.default_rng(2)
    p, g = rng.normal(size=(3, 6)) * 0.01, rng.normal(size=(3, 6)) * 0.01
    _, a, _ = loss_fine(p, g)
    _, b, _ = loss_fine(p, g, trans_unit=0.001, rot_unit=0.5)
    assert abs(b.l_rot - a.l_rot / 0.5) < 1e-12
    cos = np.sum(p[:, :3] * g[:, :3], 1) / np.linalg.norm(p[:, :3], axis=1) / np.linalg.norm(g[:, :3], axis=1)
    rmse = np.sqrt(np.mean((p[:, :3] - g[:, :3]) ** 2, 1))
    assert abs(b.l_trans - np.mean(rmse / 0.001 + 1 - cos)) < 1e-9


@settings(max_examples=100)
@given(seeds)
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    total, rep, per = loss_coarse(*coarse_inputs(rng))
    assert total.item() >= 0 and np.all(per >= 0) and rep.l_kpts >= 0 and rep.l_map >= 0
    total, rep, per = loss_fine(rng.normal(size=(4, 6)), rng.normal(size=(4, 6)))
    assert total.item() >= 0 and np.all(per >= 0)
