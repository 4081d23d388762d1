"""Experiment configuration: schema-validated nested key-value files and a
named-stream seed scheme so any randomness source can be varied in isolation.
"""

from __future__ import annotations

import copy
import hashlib

import numpy as np
import yaml

DEFAULTS = {
    "root_seed": 1234,
    "track": {
        "length_m": 2200.0,
        "fork_density_per_km": 1.0,
        "curvature_max": 0.018,
        "lane_half_width_m": 2.0,
    },
    "data": {
        "train_tracks": 3,
        "runs_per_track": 2,
        "p_side": 0.1,
        "train_fraction": 0.85,
        "preview_noise_std_m": 0.05,
    },
    "grid": {
        "a_min_deg": -250.0,
        "a_max_deg": 250.0,
        "n": 512,
        "soft_mass": 0.999,
        "soft_window_deg": 5.0,
    },
    "backbone": {
        "hidden": [64, 64],
        "fusion_width": 64,
        "activation": "tanh",
        "preview_points": 24,
        "preview_horizon_m": 40.0,
        "out_scale": 100.0,
    },
    "heads": {
        "mdn_components": 5,
        "temporal_alpha": 1.0,
        "sampler_mode": "constant",
    },
    "vehicle": {
        "wheelbase_m": 2.79,
        "steering_ratio": 15.0,
        "wheel_limit_deg": 500.0,
        "tau_s": 0.15,
        "rate_limit_deg_s": 400.0,
        "dt_s": 0.1,
    },
    "expert": {
        "v_max_mps": 14.0,
        "v_min_mps": 3.0,
        "a_lat_max": 2.0,
        "accel_max": 2.0,
        "lookahead_time_s": 1.2,
        "lookahead_min_m": 5.0,
    },
    "train": {
        "batch_size": 256,
        "max_epochs": 200,
        "patience": 10,
        "lr": 1.0e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "weight_decay": 1.0e-2,
        "seeds": [0, 1, 2, 3, 4],
    },
    "eval": {
        "tracks": 3,
        "episodes": 3,
        "speed_factor": 0.8,
        "crash_distance_m": 2.0,
        "respawn_time_s": 2.0,
    },
    "swerve": {
        "window_m": 20.0,
        "full_m": 0.5,
        "half_m": 0.25,
    },
    "ablate": {
        "fractions": [0.2, 0.4, 0.6, 0.8, 1.0],
        "head": "ebm",
        "histogram_bins": 101,
    },
}


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ValueError(f"config {path}: {message}")


def _check_number(value, path, lo=None, hi=None, integer=False):
    kind = (int,) if integer else (int, float)
    _require(isinstance(value, kind) and not isinstance(value, bool), path,
             f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if lo is not None:
        _require(value >= lo, path, f"must be >= {lo}, got {value}")
    if hi is not None:
        _require(value <= hi, path, f"must be <= {hi}, got {value}")


_RANGES = {
    "track.length_m": (200.0, 50_000.0),
    "track.fork_density_per_km": (0.0, 5.0),
    "track.curvature_max": (1e-4, 0.05),
    "track.lane_half_width_m": (0.5, 10.0),
    "data.train_tracks": (1, 200),
    "data.runs_per_track": (1, 100),
    "data.p_side": (0.0, 1.0),
    "data.train_fraction": (0.05, 0.95),
    "data.preview_noise_std_m": (0.0, 1.0),
    "grid.n": (2, 100_000),
    "grid.soft_mass": (0.5, 0.999999),
    "grid.soft_window_deg": (0.1, 500.0),
    "backbone.fusion_width": (1, 4096),
    "backbone.preview_points": (3, 256),
    "backbone.preview_horizon_m": (5.0, 500.0),
    "backbone.out_scale": (1.0, 1000.0),
    "heads.mdn_components": (1, 5),
    "heads.temporal_alpha": (0.0, 100.0),
    "vehicle.wheelbase_m": (0.5, 10.0),
    "vehicle.steering_ratio": (1.0, 30.0),
    "vehicle.wheel_limit_deg": (30.0, 2000.0),
    "vehicle.tau_s": (0.01, 5.0),
    "vehicle.rate_limit_deg_s": (10.0, 10_000.0),
    "vehicle.dt_s": (0.01, 1.0),
    "expert.v_max_mps": (1.0, 40.0),
    "expert.v_min_mps": (0.5, 20.0),
    "expert.a_lat_max": (0.5, 10.0),
    "expert.accel_max": (0.2, 10.0),
    "expert.lookahead_time_s": (0.2, 5.0),
    "expert.lookahead_min_m": (1.0, 50.0),
    "train.batch_size": (1, 8192),
    "train.max_epochs": (1, 10_000),
    "train.patience": (1, 1000),
    "train.lr": (1e-6, 1.0),
    "train.beta1": (0.0, 0.9999),
    "train.beta2": (0.0, 0.9999),
    "train.weight_decay": (0.0, 1.0),
    "eval.tracks": (1, 100),
    "eval.episodes": (1, 100),
    "eval.speed_factor": (0.1, 1.5),
    "eval.crash_distance_m": (0.5, 20.0),
    "eval.respawn_time_s": (0.5, 30.0),
    "swerve.window_m": (5.0, 100.0),
    "swerve.full_m": (0.05, 5.0),
    "swerve.half_m": (0.02, 5.0),
    "ablate.histogram_bins": (3, 10_000),
}

_INTEGER_KEYS = {
    "root_seed", "data.train_tracks", "data.runs_per_track", "grid.n",
    "backbone.fusion_width", "backbone.preview_points", "heads.mdn_components",
    "train.batch_size", "train.max_epochs", "train.patience",
    "eval.tracks", "eval.episodes", "ablate.histogram_bins",
}


def validate_config(cfg: dict) -> dict:
    """Reject unknown keys, enforce types/ranges, and fill defaults."""
    merged = copy.deepcopy(DEFAULTS)

    def walk(user: dict, defaults: dict, target: dict, prefix: str) -> None:
        _require(isinstance(user, dict), prefix or "<root>",
                 f"expected a mapping, got {type(user).__name__}")
        for key, value in user.items():
            path = f"{prefix}.{key}" if prefix else key
            _require(key in defaults, path, "unknown key")
            if isinstance(defaults[key], dict):
                walk(value, defaults[key], target[key], path)
            else:
                target[key] = value

    walk(cfg, DEFAULTS, merged, "")

    flat = {}

    def flatten(d: dict, prefix: str) -> None:
        for key, value in d.items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, dict):
                flatten(value, path)
            else:
                flat[path] = value

    flatten(merged, "")

    for path, value in flat.items():
        if path in _RANGES:
            lo, hi = _RANGES[path]
            _check_number(value, path, lo, hi, integer=path in _INTEGER_KEYS)
        elif path in _INTEGER_KEYS:
            _check_number(value, path, integer=True)

    _require(merged["grid"]["a_min_deg"] < merged["grid"]["a_max_deg"],
             "grid", "a_min_deg must be below a_max_deg")
    _require(merged["backbone"]["activation"] in ("tanh", "relu"),
             "backbone.activation", "must be 'tanh' or 'relu'")
    _require(merged["heads"]["sampler_mode"] in ("constant", "uniform"),
             "heads.sampler_mode", "must be 'constant' or 'uniform'")
    hidden = merged["backbone"]["hidden"]
    _require(isinstance(hidden, list) and hidden
             and all(isinstance(h, int) and h > 0 for h in hidden),
             "backbone.hidden", "must be a non-empty list of positive integers")
    seeds = merged["train"]["seeds"]
    _require(isinstance(seeds, list) and seeds
             and all(isinstance(s, int) for s in seeds),
             "train.seeds", "must be a non-empty list of integers")
    fractions = merged["ablate"]["fractions"]
    _require(isinstance(fractions, list) and fractions
             and all(isinstance(f, (int, float)) and 0.0 < f <= 1.0 for f in fractions),
             "ablate.fractions", "must be a list of fractions in (0, 1]")
    _require(merged["swerve"]["half_m"] <= merged["swerve"]["full_m"],
             "swerve", "half_m must not exceed full_m")
    _require(merged["expert"]["v_min_mps"] <= merged["expert"]["v_max_mps"],
             "expert", "v_min_mps must not exceed v_max_mps")
    _require(merged["ablate"]["head"] in
             ("regression", "classification", "mdn", "ebm", "ebm_soft", "ebm_temporal"),
             "ablate.head", "unknown model variant")
    return merged


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw or {})


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True, default_flow_style=False)


def stream_seed(root_seed: int, *names) -> int:
    """Deterministic per-purpose seed derived from the root seed and a name path."""
    tag = f"{root_seed}:" + "/".join(str(n) for n in names)
    digest = hashlib.sha256(tag.encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(root_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, *names))
