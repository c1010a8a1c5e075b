"""Run-configuration files: defaults, dot-path overrides and object construction."""

import copy
import json
from pathlib import Path

from nnd.errors import ValidationError
from nnd.latent import DEFAULT_EPS, ScaleSpec
from nnd.sampler import RunConfig
from nnd.schedule import anneal_schedule, train_sigmas

DEFAULTS = {
    "seed": 0,
    "eps": DEFAULT_EPS,
    "dims": [16, 16, 16],
    "channels": ["lwc", "re"],
    "schedule": {"T": 600, "K": 5, "sigma_1": 1e-2, "sigma_T": 1e2, "zeta": 2e-6},
    "train_sigmas": {"L": 150, "sigma_1": 1e-2, "sigma_L": 1e2},
    "init": "latent-eps-centered",
    "denoiser": {"kind": "neural", "model": "model.nndm"},
    "scale": None,
    "likelihood_weight": 1.0,
    "divergence_bound": 1e3,
    "snapshot_every": 0,
    "count": 1,
    "dataset": {"n_scenes": 1000, "path": "dataset", "params": {}},
    "train": {"batch": 32, "lr": 1e-4, "weight_decay": 1e-5, "steps": 5000,
              "eval_every": 50, "val_scenes": 32, "stop_at_reduction": None, "init": "random"},
    "forward": {"kind": "identity"},
    "measurement": {"path": None, "truth": None, "noise": "gaussian", "y_min": 1e-3},
    "mip": {"input": None, "axis": "z", "gamma": 1.0, "channels": None},
    "trace_input": None,
}


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> tuple:
    """'a.b=value' -> (['a', 'b'], value); value parsed as JSON when possible."""
    if "=" not in text:
        raise ValidationError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ValidationError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def set_path(cfg: dict, path: list, value) -> None:
    node = cfg
    for p in path[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[path[-1]] = value


def load_config(path=None, overrides=(), seed=None) -> tuple:
    """Return (resolved config, set of top-level keys the user supplied explicitly)."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read config {path}: {e}") from None
        if not isinstance(user, dict):
            raise ValidationError(f"config {path} must hold a JSON object")
    for text in overrides:
        key_path, value = parse_override(text)
        set_path(user, key_path, value)
    if seed is not None:
        user["seed"] = int(seed)
    explicit = set(user)
    cfg = deep_merge(DEFAULTS, user)
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ValidationError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    return cfg, explicit


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def schedule_from(cfg):
    s = cfg["schedule"]
    try:
        return anneal_schedule(int(s["T"]), int(s["K"]), float(s["sigma_1"]),
                               float(s["sigma_T"]), float(s["zeta"]))
    except KeyError as e:
        raise ValidationError(f"schedule config missing {e}") from None


def train_sigmas_from(cfg):
    s = cfg["train_sigmas"]
    return train_sigmas(int(s["L"]), float(s["sigma_1"]), float(s["sigma_L"]))


def run_config_from(cfg, run=0) -> RunConfig:
    scale = ScaleSpec(cfg["scale"]) if cfg.get("scale") else None
    return RunConfig(
        schedule=schedule_from(cfg),
        eps=float(cfg["eps"]),
        init=cfg["init"],
        seed=int(cfg["seed"]),
        dims=tuple(cfg["dims"]),
        channels=tuple(cfg["channels"]),
        scale=scale,
        likelihood_weight=float(cfg["likelihood_weight"]),
        divergence_bound=float(cfg["divergence_bound"]),
        snapshot_every=int(cfg["snapshot_every"]),
        run=run,
    )
