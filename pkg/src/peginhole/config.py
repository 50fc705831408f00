"""Strict key-value run configuration.

Config files hold ``dotted.key = value`` lines; ``#`` starts a comment.
Every key must exist in ``DEFAULTS`` and values are parsed according to the
type of the default, so a typo fails loudly instead of being ignored. Lists
are comma separated.
"""

from __future__ import annotations

from .errors import ConfigError

DEFAULTS: dict[str, object] = {
    "seed": 0,
    # data generation
    "data.dof_mode": "3dof",
    "data.shapes": ("cuboid1", "cuboid2"),
    "data.coarse_count": 2000,
    "data.fine_count": 2000,
    "data.initial_error_min": 0.15,
    "data.initial_error_max": 0.30,
    "data.tilt_max_deg": 50.0,
    "data.n_points": 1024,
    "data.sigma": 0.025,
    "data.augment_fraction": 0.5,
    "data.noise_sigma": 0.0,
    "data.perturb_translation": 0.02,
    "data.perturb_rotation_deg": 10.0,
    "data.near_fraction": 0.5,
    "data.peg_filter": True,
    # training
    "train.data": "",
    "train.nets": ("oakn", "opn"),
    "train.lr": 1e-3,
    "train.lr_final": 0.05,
    "train.batch_size": 16,
    "train.epochs_coarse": 60,
    "train.epochs_fine": 60,
    "train.limit": 0,  # use only the first n records of each dataset (0 = all)
    "train.resume": False,
    "train.arch": "desk",
    "train.fine_jitter": 0.001,  # per-point noise added to offset-network inputs each epoch
    # controller
    "control.e_t": 0.001,
    "control.e_r_deg": 1.0,
    "control.max_iters": 10,
    "control.standoff": 0.05,
    "control.crop_radius": 0.08,
    "control.crop_points": 512,
    "control.peg_filter": True,
    # evaluation
    "eval.dof_modes": ("3dof", "4dof", "6dof"),
    "eval.shapes": ("seen",),
    "eval.initial_errors": (0.15, 0.30),
    "eval.trials": 100,
    "eval.noise_sigma": 0.001,
    "eval.tilt_max_deg": 50.0,
    "eval.workers": 1,
    "eval.models.3dof": "",
    "eval.models.4dof": "",
    "eval.models.6dof": "",
    "eval.traces": False,
    # ablation
    "ablate.dof_mode": "6dof",
    "ablate.noaug_models": "",
    # self-checks
    "check.suites": ("so3", "euler", "gradients", "losses", "labels", "oracles", "serialization"),
}

SHAPE_GROUPS = {
    "seen": ("cuboid1", "cuboid2"),
    "unseen": ("cylinder", "pentagonal_prism"),
    "all": ("cuboid1", "cuboid2", "cylinder", "pentagonal_prism"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_value(key: str, raw: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_lines(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected 'key = value'")
        out[key.strip()] = parse_value(key.strip(), value)
    return out


def load_config(path: str | None = None, overrides=(), seed: int | None = None) -> dict:
    """Defaults, then the file, then ``key=value`` overrides, then ``seed``."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path) as f:
            cfg.update(parse_lines(f.read()))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        cfg[key.strip()] = parse_value(key.strip(), value)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in sorted(cfg))
