"""Self-check suites shared by the ``check`` command and the acceptance tests."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, GimbalLock
from .geom import KeypointTriple, euler_to_rotation, rotation_from_keypoints, rotation_to_euler
from .net import autodiff as ad
from .net.losses import loss_coarse, loss_fine
from .net.pointnet import OAKN, OPN, tiny_oakn_config, tiny_opn_config

GRAD_STEP = 1e-5
GRAD_TOL = 1e-4
GRAD_FLOOR = 1e-6  # denominators below this compare absolute error instead


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing suite is a failing suite
        passed, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


# -- SO(3) ----------------------------------------------------------------------


def random_keypoint_triples(n: int, rng) -> np.ndarray:
    """(n, 3, 3) triples with well-separated, non-parallel directions."""
    k1 = rng.uniform(-1, 1, size=(n, 3))
    out = np.empty((n, 3, 3))
    i = 0
    while i < n:
        vx = rng.normal(size=3)
        vz = rng.normal(size=3)
        nx, nz = np.linalg.norm(vx), np.linalg.norm(vz)
        if min(nx, nz) < 1e-3 or np.linalg.norm(np.cross(vx, vz)) < 1e-3 * nx * nz:
            continue
        s = rng.uniform(0.005, 0.1, size=2)
        out[i] = [k1[i], k1[i] + s[0] * vx / nx, k1[i] + s[1] * vz / nz]
        i += 1
    return out


def so3_suite(n: int = 10_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_orth = worst_det = worst_z = 0.0
    for k in random_keypoint_triples(n, rng):
        r = rotation_from_keypoints(KeypointTriple.from_array(k))
        worst_orth = max(worst_orth, float(np.max(np.abs(r.T @ r - np.eye(3)))))
        worst_det = max(worst_det, abs(float(np.linalg.det(r)) - 1.0))
        z = (k[2] - k[0]) / np.linalg.norm(k[2] - k[0])
        worst_z = max(worst_z, float(np.max(np.abs(r[:, 2] - z))))
    ok = max(worst_orth, worst_det, worst_z) < 1e-9
    return ok, f"{n} triples, max |RtR-I|={worst_orth:.1e}, |det-1|={worst_det:.1e}, z err={worst_z:.1e}"


def euler_suite(n: int = 1000, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for e in rng.uniform(-np.pi, np.pi, size=(n, 3)):
        e[1] = rng.uniform(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3)
        r = euler_to_rotation(e)
        try:
            worst = max(worst, float(np.max(np.abs(euler_to_rotation(rotation_to_euler(r)) - r))))
        except GimbalLock:
            return False, "unexpected gimbal lock"
    return worst < 1e-9, f"{n} round trips, max deviation {worst:.1e}"


# -- gradients ----------------------------------------------------------------------


def _jitter_biases(model, rng, scale: float = 0.05) -> None:
    # fresh biases are zero, and a group's center has zero relative coordinates,
    # so its first pre-activation sits exactly on the ReLU kink; move off it
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data[...] = rng.normal(0.0, scale, p.shape)


def _loss_fn(model, rng):
    n = model.config.n_points
    _jitter_biases(model, rng)
    pts = rng.normal(0.0, 0.04, size=(1, n, 3))
    plan = model.plan(pts[0])
    plan = type(plan).stack([plan])
    if model.kind == "oakn":
        gt_off = rng.normal(0.0, 0.05, size=(1, n, 3, 3))
        gt_map = rng.uniform(0.0, 1.0, size=(1, n))

        def fn():
            off, conf = model.forward(pts, plan)
            return loss_coarse(off, conf, gt_off, gt_map)[0]
    else:
        gt = np.concatenate([rng.normal(0, 0.01, 3), rng.normal(0, 0.1, 3)])[None]

        def fn():
            return loss_fine(model.forward(pts, plan), gt)[0]

    return fn


def max_gradient_error(model, loss_fn, h: float = GRAD_STEP) -> float:
    """Largest relative error between backprop and central differences, over every parameter entry."""
    params = model.parameters()
    model.zero_grad()
    with ad.Tape() as tape:
        out = loss_fn()
    tape.backward(out)
    analytic = [np.zeros(p.shape) if p.grad is None else np.array(p.grad, dtype=np.float64) for p in params]
    model.zero_grad()
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            err, kink = _entry_error(loss_fn, flat, i, gflat[i], h)
            step = h
            # a ReLU or max-pool switch inside [x-h, x+h] makes the difference
            # quotient meaningless; shrink the step only when one is detected
            while err >= GRAD_TOL and kink and step > h * 1e-2:
                step /= 10
                err, kink = _entry_error(loss_fn, flat, i, gflat[i], step)
            worst = max(worst, err)
    return worst


def _entry_error(loss_fn, flat, i, analytic, h):
    old = flat[i]
    flat[i] = old + h
    fp = loss_fn().item()
    flat[i] = old - h
    fm = loss_fn().item()
    flat[i] = old
    num = (fp - fm) / (2 * h)
    err = abs(num - analytic) / max(abs(num), abs(analytic), GRAD_FLOOR)
    if err < GRAD_TOL:
        return err, False
    f0 = loss_fn().item()
    fwd, bwd = (fp - f0) / h, (f0 - fm) / h
    kink = abs(fwd - bwd) > 0.01 * max(abs(fwd), abs(bwd), GRAD_FLOOR)
    return err, kink


def gradient_suite(seeds=(0, 1, 2), n_points: int = 64):
    details, worst = [], 0.0
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        for model in (
            OAKN(tiny_oakn_config(n_points), seed=seed, dtype=np.float64),
            OPN(tiny_opn_config(n_points), seed=seed, dtype=np.float64),
        ):
            err = max_gradient_error(model, _loss_fn(model, rng))
            worst = max(worst, err)
            details.append(f"{model.kind}[{seed}]={err:.1e}")
    return worst < GRAD_TOL, "max rel err " + ", ".join(details)


# -- losses ---------------------------------------------------------------------------


def loss_suite(n: int = 10_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    b = 100
    worst_neg, worst_gt = 0.0, 0.0
    for _ in range(n // b):
        npts = int(rng.integers(1, 8))
        off = rng.normal(size=(b, npts, 3, 3))
        gt_off = rng.normal(size=(b, npts, 3, 3))
        conf = rng.uniform(size=(b, npts))
        gt_w = rng.uniform(size=(b, npts))
        _, rep, per = loss_coarse(off, conf, gt_off, gt_w)
        worst_neg = min(worst_neg, float(per.min()), rep.l_kpts, rep.l_map)
        _, _, per0 = loss_coarse(gt_off, gt_w, gt_off, gt_w)
        worst_gt = max(worst_gt, float(per0.max()))
        p6 = rng.normal(size=(b, 6)) * rng.choice([0.0, 1e-3, 1.0], size=(b, 1))
        g6 = rng.normal(size=(b, 6)) * rng.choice([0.0, 1e-3, 1.0], size=(b, 1))
        _, rep, per = loss_fine(p6, g6)
        worst_neg = min(worst_neg, float(per.min()), rep.l_trans, rep.l_rot)
        _, _, per0 = loss_fine(g6, g6)
        worst_gt = max(worst_gt, float(per0.max()))
    # worked examples
    off = np.zeros((2, 3, 3))
    gt = np.zeros((2, 3, 3))
    off[0, 0] = [1.0, 0, 0]
    off[1, 2] = [0, 3.0, 0]
    _, rep, _ = loss_coarse(off, np.ones(2), gt, np.ones(2))
    kpts_err = abs(rep.l_kpts - 2.0)
    gt_t = np.array([0.003, 0, 0, 0, 0, 0])
    _, rep, _ = loss_fine(2 * gt_t, gt_t)
    trans_err = abs(rep.l_trans - np.sqrt(0.003**2 / 3))
    ok = worst_neg >= 0 and worst_gt < 1e-12 and kpts_err < 1e-12 and trans_err < 1e-12
    return ok, (
        f"{n} random inputs, min loss {worst_neg:.1e}, max loss at gt {worst_gt:.1e}, "
        f"kpts example err {kpts_err:.1e}, trans example err {trans_err:.1e}"
    )


# -- labels, oracle pipeline, files -------------------------------------------------


def label_suite(n_coarse: int = 100, n_fine: int = 1000, seed: int = 0, dof_mode: str = "6dof"):
    from .cloud import decode_candidates, weighted_keypoint_aggregate
    from .datagen import DataConfig, coarse_record, fine_record
    from .control import apply_offsets
    from .geom import pose_from_keypoints

    cfg = DataConfig(dof_mode=dof_mode, seed=seed)
    worst_k = worst_p = 0.0
    for i in range(n_coarse):
        r = coarse_record(cfg, i)
        k = weighted_keypoint_aggregate(decode_candidates(r.cloud, r.offsets), r.confidence)
        worst_k = max(worst_k, float(np.max(np.abs(k.as_array() - r.keypoints.as_array()))))
        worst_p = max(worst_p, float(np.max(np.abs(pose_from_keypoints(k).matrix() - r.hole_pose.matrix()))))
    worst_f = 0.0
    for i in range(n_fine):
        r = fine_record(cfg, i)
        end = apply_offsets(r.ee_pose, r.delta_t, r.delta_r)
        worst_f = max(worst_f, float(np.max(np.abs(end.matrix() - r.target.matrix()))))
    ok = max(worst_k, worst_p, worst_f) < 1e-9
    return ok, (
        f"{n_coarse} coarse: keypoint err {worst_k:.1e}, pose err {worst_p:.1e}; "
        f"{n_fine} fine: round-trip err {worst_f:.1e}"
    )


def oracle_suite(trials: int = 20, seed: int = 0):
    from .control import ControllerConfig, OracleKeypoints, OracleOffsets, run_trial
    from .sim.world import TrialConfig

    cfg = ControllerConfig()
    fails = []
    for mode in ("3dof", "4dof", "6dof"):
        for err in (0.15, 0.30):
            for i in range(trials):
                tc = TrialConfig(dof_mode=mode, initial_error=err, noise_sigma=0.0, seed=seed ^ i)
                r = run_trial(OracleKeypoints(), OracleOffsets(), tc, cfg)
                if not r.success:
                    fails.append(f"{mode}/{err}/{i}:{r.error}")
    return not fails, f"{6 * trials} oracle trials, {len(fails)} failures {fails[:3]}"


def serialization_suite(seed: int = 0):
    from .datagen import DataConfig, dumps_dataset, gen_coarse, gen_fine, loads_dataset
    from .net.checkpoint import dumps, loads
    from .net.optim import Adam

    problems = []
    cfg = DataConfig(dof_mode="6dof", seed=seed)
    for recs in (gen_coarse(3, cfg), gen_fine(3, cfg)):
        blob = dumps_dataset(recs)
        back = loads_dataset(blob)
        if dumps_dataset(back) != blob:
            problems.append("dataset re-save differs")
        for a, b in zip(recs, back):
            for name in ("cloud", "offsets", "confidence", "delta_t", "delta_r"):
                if hasattr(a, name) and not np.array_equal(getattr(a, name), getattr(b, name)):
                    problems.append(f"dataset field {name} differs")
        problems += _rejections(blob, loads_dataset, "dataset")
    model = OPN(tiny_opn_config(), seed=seed)
    opt = Adam(model.parameters())
    opt.t = 3
    blob = dumps(model, opt, {"epoch": 1})
    m2, state, meta = loads(blob)
    if dumps(m2, _restored(m2, state), meta) != blob:
        problems.append("checkpoint re-save differs")
    for (k, p), (_, q) in zip(model.params.items(), m2.params.items()):
        if p.data.dtype != q.data.dtype or not np.array_equal(p.data, q.data):
            problems.append(f"checkpoint tensor {k} differs")
    problems += _rejections(blob, loads, "checkpoint")
    return not problems, "round trips bit-exact, corruption rejected" if not problems else "; ".join(problems[:4])


def _restored(model, state):
    from .net.optim import Adam

    opt = Adam(model.parameters())
    opt.load_state(state)
    return opt


def _rejections(blob: bytes, loader, label: str) -> list[str]:
    out = []
    bumped = bytearray(blob)
    bumped[8] ^= 0x7F  # version field follows the 8-byte magic
    cases = {
        "truncated": blob[: len(blob) // 2],
        "flipped byte": blob[:-40] + bytes([blob[-40] ^ 1]) + blob[-39:],
        "bumped version": bytes(bumped),
        "empty": b"",
    }
    for what, data in cases.items():
        try:
            loader(data)
            out.append(f"{label}: {what} accepted")
        except FormatError:
            pass
    return out


SUITES = {
    "so3": lambda: so3_suite(),
    "euler": lambda: euler_suite(),
    "gradients": lambda: gradient_suite(),
    "losses": lambda: loss_suite(),
    "labels": lambda: label_suite(n_coarse=10, n_fine=200),
    "oracles": lambda: oracle_suite(),
    "serialization": lambda: serialization_suite(),
}


def run_suites(names=None) -> list[CheckResult]:
    names = list(SUITES) if names is None else names
    return [_timed(n, SUITES[n]) for n in names]

