"""Command-line harness: ``peginhole <command> [options] [key=value ...]``.

Commands: gen-data, train, eval, ablate, bench, check. Every command writes
its effective configuration to ``<out>/config.txt`` before doing any work.
Exit codes: 0 success, 1 usage or input error, 2 failed check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import checks
from .config import SHAPE_GROUPS, dump_config, load_config
from .control import (
    ControllerConfig,
    LearnedKeypoints,
    LearnedOffsets,
    OracleKeypoints,
    OracleOffsets,
    run_trial,
)
from .datagen import DataConfig, coarse_arrays, fine_arrays, gen_coarse, gen_fine, load_dataset, save_dataset
from .errors import ConfigError, PegInHoleError
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.optim import Adam
from .net.pointnet import OAKN, OPN, arch_config
from .net.train import TrainConfig, TrainingSet, TrainResult, epoch_lr, train
from .sim.world import TrialConfig

log = logging.getLogger("peginhole")

COMMANDS = ("gen-data", "train", "eval", "ablate", "bench", "check")
DATA_FILES = {"oakn": "coarse.pds", "opn": "fine.pds"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="peginhole", description="Coarse-to-fine peg-in-hole pipeline.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--oracle", action="store_true", help="use ground-truth models instead of checkpoints")
    return p


# -- helpers -------------------------------------------------------------------


def _digest(path) -> tuple[int, str]:
    # the files end in their own crc32, which makes a crc32 of the whole file constant
    with open(path, "rb") as f:
        blob = f.read()
    return len(blob), hashlib.sha256(blob).hexdigest()


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _record_time(out: str, step: str, seconds: float) -> None:
    """Append to ``timings.csv``; wall-clock numbers never go into data or metric files."""
    path = os.path.join(out, "timings.csv")
    new = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        if new:
            f.write("step,seconds\n")
        f.write(f"{step},{seconds:.3f}\n")


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def data_config(cfg: dict) -> DataConfig:
    return DataConfig(
        dof_mode=cfg["data.dof_mode"],
        shapes=cfg["data.shapes"],
        initial_error_range=(cfg["data.initial_error_min"], cfg["data.initial_error_max"]),
        tilt_range_deg=(0.0, cfg["data.tilt_max_deg"]),
        n_points=cfg["data.n_points"],
        sigma=cfg["data.sigma"],
        augment_fraction=cfg["data.augment_fraction"],
        noise_sigma=cfg["data.noise_sigma"],
        standoff=cfg["control.standoff"],
        crop_radius=cfg["control.crop_radius"],
        crop_points=cfg["control.crop_points"],
        perturb_translation=cfg["data.perturb_translation"],
        perturb_rotation_deg=cfg["data.perturb_rotation_deg"],
        near_fraction=cfg["data.near_fraction"],
        peg_filter=cfg["data.peg_filter"],
        seed=cfg["seed"],
    )


def controller_config(cfg: dict, **changes) -> ControllerConfig:
    kw = dict(
        e_t=cfg["control.e_t"],
        e_r=float(np.radians(cfg["control.e_r_deg"])),
        max_iters=cfg["control.max_iters"],
        standoff=cfg["control.standoff"],
        crop_radius=cfg["control.crop_radius"],
        crop_points=cfg["control.crop_points"],
        peg_filter=cfg["control.peg_filter"],
    )
    kw.update(changes)
    return ControllerConfig(**kw)


# -- gen-data ------------------------------------------------------------------


def cmd_gen_data(cfg: dict, out: str) -> int:
    counts = {"coarse": cfg["data.coarse_count"], "fine": cfg["data.fine_count"]}
    if min(counts.values()) < 1:
        raise UsageError("data.coarse_count and data.fine_count must be at least 1")
    dc = data_config(cfg)
    lines = []
    for kind, gen in (("coarse", gen_coarse), ("fine", gen_fine)):
        t0 = time.perf_counter()
        records = gen(counts[kind], dc)
        path = os.path.join(out, f"{kind}.pds")
        save_dataset(records, path)
        size, digest = _digest(path)
        lines.append(f"{kind}.pds records={counts[kind]} bytes={size} sha256={digest}")
        elapsed = time.perf_counter() - t0
        _record_time(out, f"gen-data {kind}", elapsed)
        log.info("%s: %d records in %.1f s", kind, counts[kind], elapsed)
    with open(os.path.join(out, "manifest.txt"), "w") as f:
        f.write("# files\n" + "".join(f"{ln}\n" for ln in lines))
        f.write("# generation config\n" + dump_config(cfg))
    return 0


# -- train ---------------------------------------------------------------------


def _training_set(kind: str, data_dir: str, limit: int) -> TrainingSet:
    path = os.path.join(data_dir, DATA_FILES[kind])
    if not os.path.exists(path):
        raise UsageError(f"dataset {path} not found (run gen-data first)")
    records = load_dataset(path)
    if limit > 0:
        records = records[:limit]
    pts, targets = coarse_arrays(records) if kind == "oakn" else fine_arrays(records)
    return TrainingSet(pts, targets)


def _loss_rows(result: TrainResult, tc: TrainConfig):
    keys = sorted(result.reports[0]) if result.reports else []
    rows = []
    for e, (loss, rep) in enumerate(zip(result.curve, result.reports)):
        rows.append([e, _fmt(epoch_lr(tc, e)), _fmt(loss)] + [_fmt(rep[k]) for k in keys])
    return ["epoch", "lr", "loss"] + keys, rows


def train_one(kind: str, cfg: dict, out: str) -> TrainResult:
    data = _training_set(kind, cfg["train.data"] or out, cfg["train.limit"])
    epochs = cfg["train.epochs_coarse"] if kind == "oakn" else cfg["train.epochs_fine"]
    tc = TrainConfig(
        lr=cfg["train.lr"],
        batch_size=cfg["train.batch_size"],
        epochs=epochs,
        seed=cfg["seed"],
        lr_final=cfg["train.lr_final"],
        # keypoint labels are per-point offsets, so jitter would need relabeling
        jitter=cfg["train.fine_jitter"] if kind == "opn" else 0.0,
    )
    ckpt = os.path.join(out, f"{kind}.ckpt")
    csv_path = os.path.join(out, f"loss_{kind}.csv")
    start, result, opt = 0, None, None
    if cfg["train.resume"] and os.path.exists(ckpt):
        model, state, meta = load_checkpoint(ckpt)
        opt = Adam(model.parameters(), lr=tc.lr)
        if state is not None:
            opt.load_state(state)
        start = meta["epoch"] + 1
        result = TrainResult(list(meta["curve"]), list(meta["reports"]), None, meta.get("rejected", 0))
        log.info("%s: resuming after epoch %d", kind, meta["epoch"])
    else:
        n = cfg["data.n_points"] if kind == "oakn" else cfg["control.crop_points"]
        model = (OAKN if kind == "oakn" else OPN)(arch_config(kind, cfg["train.arch"], n), seed=cfg["seed"])

    def on_epoch(epoch, res, optimizer):
        meta = {"epoch": epoch, "curve": res.curve, "reports": res.reports, "rejected": res.rejected_steps}
        tmp = ckpt + ".tmp"
        save_checkpoint(tmp, model, optimizer, meta)
        os.replace(tmp, ckpt)
        _write_csv(csv_path, *_loss_rows(res, tc))
        log.info("%s epoch %d/%d loss %.5f", kind, epoch + 1, tc.epochs, res.curve[-1])

    result = train(model, data, tc, optimizer=opt, start_epoch=start, result=result, on_epoch=on_epoch)
    _write_csv(csv_path, *_loss_rows(result, tc))
    return result


def cmd_train(cfg: dict, out: str) -> int:
    nets = cfg["train.nets"]
    bad = set(nets) - set(DATA_FILES)
    if bad or not nets:
        raise UsageError(f"train.nets must name oakn and/or opn, got {nets}")
    for kind in nets:
        t0 = time.perf_counter()
        train_one(kind, cfg, out)
        _record_time(out, f"train {kind}", time.perf_counter() - t0)
    return 0


# -- evaluation ------------------------------------------------------------------


@dataclass(frozen=True)
class Models:
    keypoints: object
    offsets: object
    source: str


def load_models(cfg: dict, mode: str, oracle: bool) -> Models:
    if oracle:
        return Models(OracleKeypoints(cfg["data.sigma"]), OracleOffsets(cfg["control.standoff"]), "oracle")
    path = cfg[f"eval.models.{mode}"]
    if not path:
        raise UsageError(f"no models for {mode}: set eval.models.{mode}=<dir> or pass --oracle")
    return Models(_keypoint_model(path), LearnedOffsets(_load_kind(path, "opn")), path)


def _load_kind(path: str, kind: str):
    file = os.path.join(path, f"{kind}.ckpt")
    if not os.path.exists(file):
        raise UsageError(f"checkpoint {file} not found")
    model = load_checkpoint(file)[0]
    if model.kind != kind:
        raise UsageError(f"{file} holds a {model.kind} network, expected {kind}")
    return model


def _keypoint_model(path: str):
    return LearnedKeypoints(_load_kind(path, "oakn"))


def trial_seed(base: int, index: int) -> int:
    return base ^ index


def run_cell(models: Models, trial_cfgs: list[TrialConfig], ctrl: ControllerConfig, workers: int,
             coarse: bool = True, fine: bool = True):
    def one(tc):
        return run_trial(models.keypoints, models.offsets, tc, ctrl, coarse=coarse, fine=fine)

    if workers <= 1:
        return [one(tc) for tc in trial_cfgs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, trial_cfgs))


def _trial(cfg: dict, mode: str, shapes, error: float, index: int) -> TrialConfig:
    return TrialConfig(
        dof_mode=mode,
        initial_error=error,
        tilt_range_deg=(0.0, cfg["eval.tilt_max_deg"]),
        noise_sigma=cfg["eval.noise_sigma"],
        seed=trial_seed(cfg["seed"], index),
        shapes=shapes,
    )


def _trials(cfg: dict, mode: str, shapes, error: float, n: int) -> list[TrialConfig]:
    return [_trial(cfg, mode, shapes, error, i) for i in range(n)]


def _summary(results) -> dict:
    n = len(results)
    wins = sum(r.success for r in results)
    return {
        "trials": n,
        "successes": wins,
        "success_rate": wins / n,
        "mean_iterations": float(np.mean([r.servo_iterations for r in results])),
        "mean_servo_time": float(np.mean([r.servo_time for r in results])),
        "errors": sum(r.error is not None for r in results),
    }


def _trial_record(key: dict, tc: TrialConfig, r) -> dict:
    return {
        **key,
        "seed": tc.seed,
        "success": bool(r.success),
        "iterations": r.servo_iterations,
        "residual_translation": None if np.isnan(r.residual_translation) else r.residual_translation,
        "residual_tilt": None if np.isnan(r.residual_tilt) else r.residual_tilt,
        "error": r.error,
    }


def _dump_trials(path: str, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def _check_trials(cfg: dict) -> int:
    n = cfg["eval.trials"]
    if n < 1:
        raise UsageError("eval.trials must be at least 1")
    return n


def _groups(cfg: dict):
    for g in cfg["eval.shapes"]:
        if g not in SHAPE_GROUPS:
            raise UsageError(f"unknown shape group {g!r}; choose from {sorted(SHAPE_GROUPS)}")
    return cfg["eval.shapes"]


# wall-clock times live in a separate file so that metric files are reproducible
EVAL_HEADER = ["dof_mode", "shape", "initial_error", "trials", "successes", "success_rate",
               "mean_iterations", "errors", "models"]
TIMING_HEADER = ["dof_mode", "shape", "initial_error", "mean_servo_time", "mean_wall_time"]


def cmd_eval(cfg: dict, out: str, oracle: bool) -> int:
    n = _check_trials(cfg)
    groups = _groups(cfg)
    ctrl = controller_config(cfg)
    t0 = time.perf_counter()
    rows, timing, records, traces = [], [], [], []
    for mode in cfg["eval.dof_modes"]:
        models = load_models(cfg, mode, oracle)
        for group in groups:
            for error in cfg["eval.initial_errors"]:
                tcs = _trials(cfg, mode, SHAPE_GROUPS[group], error, n)
                results = run_cell(models, tcs, ctrl, cfg["eval.workers"])
                s = _summary(results)
                rows.append([mode, group, _fmt(error), s["trials"], s["successes"], _fmt(s["success_rate"]),
                             _fmt(s["mean_iterations"]), s["errors"], models.source])
                timing.append([mode, group, _fmt(error), _fmt(s["mean_servo_time"]),
                               _fmt(float(np.mean([r.wall_time for r in results])))])
                key = {"dof_mode": mode, "shape": group, "initial_error": error}
                records += [_trial_record(key, tc, r) for tc, r in zip(tcs, results)]
                if cfg["eval.traces"]:
                    traces += [json.dumps({**key, "seed": tc.seed, **step.__dict__}, sort_keys=True) + "\n"
                               for tc, r in zip(tcs, results) if r.trace for step in r.trace.steps]
                log.info("%s %s %.2f: success %.3f, %.2f iterations", mode, group, error,
                         s["success_rate"], s["mean_iterations"])
    _record_time(out, "eval", time.perf_counter() - t0)
    _write_csv(os.path.join(out, "eval.csv"), EVAL_HEADER, rows)
    _write_csv(os.path.join(out, "eval_timing.csv"), TIMING_HEADER, timing)
    _dump_trials(os.path.join(out, "trials.jsonl"), records)
    if cfg["eval.traces"]:
        with open(os.path.join(out, "traces.jsonl"), "w") as f:
            f.writelines(traces)
    _print_table(EVAL_HEADER, rows)
    return 0


def _print_table(header, rows) -> None:
    print(",".join(header))
    for r in rows:
        print(",".join(str(x) for x in r))


# -- ablation ---------------------------------------------------------------------

ABLATION_HEADER = ["variant", "coarse", "fine", "map", "aug", "trials", "successes", "success_rate",
                   "mean_iterations", "keypoint_model"]


def cmd_ablate(cfg: dict, out: str, oracle: bool) -> int:
    """Five variants: (a) coarse-only without map/aug, (b) fine-only,
    (c) C2F without map, (d) C2F without aug, (e) full."""
    n = _check_trials(cfg)
    mode = cfg["ablate.dof_mode"]
    models = load_models(cfg, mode, oracle)
    noaug = models.keypoints
    noaug_source = models.source
    if not oracle and cfg["ablate.noaug_models"]:
        noaug = _keypoint_model(cfg["ablate.noaug_models"])
        noaug_source = cfg["ablate.noaug_models"]
    errors = cfg["eval.initial_errors"]
    tcs = [_trial(cfg, mode, SHAPE_GROUPS["seen"], errors[i % len(errors)], i) for i in range(n)]
    variants = [
        ("a_coarse_only", True, False, False, False),
        ("b_fine_only", False, True, True, True),
        ("c_c2f_no_map", True, True, False, True),
        ("d_c2f_no_aug", True, True, True, False),
        ("e_full", True, True, True, True),
    ]
    rows, records = [], []
    for name, coarse, fine, use_map, use_aug in variants:
        kp = models.keypoints if use_aug else noaug
        m = Models(kp, models.offsets, models.source)
        ctrl = controller_config(cfg, uniform_weights=not use_map)
        results = run_cell(m, tcs, ctrl, cfg["eval.workers"], coarse=coarse, fine=fine)
        s = _summary(results)
        rows.append([name, int(coarse), int(fine), int(use_map), int(use_aug), s["trials"], s["successes"],
                     _fmt(s["success_rate"]), _fmt(s["mean_iterations"]),
                     models.source if use_aug else noaug_source])
        records += [_trial_record({"variant": name, "initial_error": tc.initial_error}, tc, r)
                    for tc, r in zip(tcs, results)]
        log.info("ablation %s: success %.3f", name, s["success_rate"])
    _write_csv(os.path.join(out, "ablation.csv"), ABLATION_HEADER, rows)
    _dump_trials(os.path.join(out, "ablation_trials.jsonl"), records)
    _print_table(ABLATION_HEADER, rows)
    return 0


# -- bench ------------------------------------------------------------------------

BENCH_ERRORS = (0.15, 0.30)
BENCH_HEADER = ["dof_mode", "initial_error", "trials", "success_rate", "mean_iterations", "mean_servo_time", "models"]


def cmd_bench(cfg: dict, out: str, oracle: bool) -> int:
    n = _check_trials(cfg)
    ctrl = controller_config(cfg)
    rows = []
    for mode in cfg["eval.dof_modes"]:
        models = load_models(cfg, mode, oracle)
        for error in BENCH_ERRORS:
            # the same trial seeds at both distances, so the scenes are paired
            results = run_cell(models, _trials(cfg, mode, SHAPE_GROUPS["seen"], error, n), ctrl,
                               cfg["eval.workers"])
            s = _summary(results)
            rows.append([mode, _fmt(error), n, _fmt(s["success_rate"]), _fmt(s["mean_iterations"]),
                         _fmt(s["mean_servo_time"]), models.source])
    _write_csv(os.path.join(out, "bench.csv"), BENCH_HEADER, rows)
    _print_table(BENCH_HEADER, rows)
    return 0


# -- check ------------------------------------------------------------------------


def cmd_check(cfg: dict, out: str) -> int:
    names = cfg["check.suites"]
    unknown = [n for n in names if n not in checks.SUITES]
    if unknown:
        raise UsageError(f"unknown suites {unknown}; available: {list(checks.SUITES)}")
    results = []
    for name in names:
        r = checks.run_suites([name])[0]
        print(r.line(), flush=True)
        results.append(r)
    with open(os.path.join(out, "check.txt"), "w") as f:
        f.writelines(r.line() + "\n" for r in results)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 2 if failed else 0


# -- entry point ------------------------------------------------------------------


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")
    try:
        args = build_parser().parse_intermixed_args(argv)
        cfg = load_config(args.config, args.overrides, args.seed)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "config.txt"), "w") as f:
            f.write(f"# command: {args.command}\n" + dump_config(cfg))
        cmd = args.command
        if cmd == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if cmd == "train":
            return cmd_train(cfg, args.out)
        if cmd == "eval":
            return cmd_eval(cfg, args.out, args.oracle)
        if cmd == "ablate":
            return cmd_ablate(cfg, args.out, args.oracle)
        if cmd == "bench":
            return cmd_bench(cfg, args.out, args.oracle)
        return cmd_check(cfg, args.out)
    except (UsageError, ConfigError) as exc:
        print(f"peginhole: error: {exc}", file=sys.stderr)
        return 1
    except (PegInHoleError, OSError) as exc:
        print(f"peginhole: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
