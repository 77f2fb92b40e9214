"""Run configuration: JSON schema, exhaustive validation, env overrides.

Environment variables named SGM_<SECTION>_<KEY> (e.g. SGM_SAMPLER_TAU_E=500,
SGM_STEPS=1000 for top-level keys) override file values; values are parsed as
JSON with a plain-string fallback.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .sampler import MODES, SamplerConfig

_PROBLEM_NAMES = ("poisson2d", "poisson2d_param", "ldc_lite")

DEFAULTS = {
    "problem": "poisson2d",
    "cloud": {"n_interior": 20000, "n_boundary": 2000, "seed": 0, "method": "uniform", "path": None},
    "graph": {"k": 8, "weight_scheme": "inverse_distance", "features": "all"},
    "lrd": {"levels": 10, "diam_budget": None},
    "sampler": {
        "mode": "uniform", "batch_size": 256, "probe_fraction": 0.15,
        "tau_e": 700, "tau_g": 2500, "p_min": 0.02, "p_max": 0.6,
        "epoch_target": None, "mis_seeds": 1000, "seed": 0,
        "isr_k": 6, "isr_r": 3,
    },
    "network": {"width": 32, "depth": 3, "encoder": "identity", "seed": 0},
    "optimizer": {"kind": "adam", "lr": 1e-3, "decay": 0.95, "decay_every": 4000},
    "loss_weights": {"interior": 1.0, "boundary": 100.0},
    "steps": 20000,
    "eval_every": 1000,
    "eval_resolution": 101,
    "boundary_batch": 64,
    "seeds": [0],
    "methods": ["uniform", "sgm"],
    "out_dir": "runs/out",
    "background": False,
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(repr=False)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(**self.raw["sampler"])

    def sampler_config_for(self, mode: str, seed: int) -> SamplerConfig:
        kw = dict(self.raw["sampler"])
        kw["mode"] = mode
        kw["seed"] = seed
        return SamplerConfig(**kw)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _merge(base: dict, override: dict, errors: list, prefix=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            errors.append(f"unknown config key {prefix + key!r}")
            continue
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, errors, prefix=f"{prefix}{key}.")
        else:
            out[key] = value
    return out


def _apply_env(cfg: dict, errors: list, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    sections = {k.upper(): k for k, v in DEFAULTS.items() if isinstance(v, dict)}
    for name, raw_value in sorted(environ.items()):
        if not name.startswith("SGM_"):
            continue
        body = name[4:]
        try:
            value = json.loads(raw_value)
        except (json.JSONDecodeError, ValueError):
            value = raw_value
        section = next((s for s in sections if body.startswith(s + "_")), None)
        if section is not None:
            key = body[len(section) + 1:].lower()
            if key not in cfg[sections[section]]:
                errors.append(f"env {name}: unknown key {key!r} in section {sections[section]!r}")
                continue
            cfg[sections[section]][key] = value
        else:
            key = body.lower()
            if key not in cfg or isinstance(DEFAULTS.get(key), dict):
                errors.append(f"env {name}: unknown top-level key {key!r}")
                continue
            cfg[key] = value
    return cfg


def validate(cfg: dict) -> list:
    """All validation problems, never just the first."""
    errors = []

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    check(cfg["problem"] in _PROBLEM_NAMES,
          f"problem must be one of {_PROBLEM_NAMES}, got {cfg['problem']!r}")
    cloud = cfg["cloud"]
    if cloud.get("path"):
        check(Path(cloud["path"]).exists(), f"cloud path {cloud['path']!r} does not exist")
    else:
        check(cloud["n_interior"] >= 1 and cloud["n_boundary"] >= 1,
              "cloud counts must be >= 1")
        check(cloud["method"] in ("uniform", "lhs"),
              f"cloud method must be uniform or lhs, got {cloud['method']!r}")
    check(cfg["graph"]["k"] >= 1, "graph k must be >= 1")
    check(cfg["graph"]["weight_scheme"] in ("inverse_distance", "inverse_square"),
          f"unknown weight_scheme {cfg['graph']['weight_scheme']!r}")
    check(cfg["graph"]["features"] in ("all", "spatial"),
          f"graph features must be 'all' or 'spatial', got {cfg['graph']['features']!r}")
    check(cfg["lrd"]["levels"] >= 1, "lrd levels must be >= 1")
    if cfg["lrd"]["diam_budget"] is not None:
        check(cfg["lrd"]["diam_budget"] > 0, "diam_budget must be > 0")
    try:
        SamplerConfig(**cfg["sampler"])
    except (ConfigError, TypeError) as exc:
        errors.append(f"sampler: {exc}")
    net = cfg["network"]
    check(net["width"] >= 1 and net["depth"] >= 1, "network width and depth must be >= 1")
    check(net["encoder"] in ("identity", "fourier"),
          f"encoder must be identity or fourier, got {net['encoder']!r}")
    opt = cfg["optimizer"]
    check(opt["kind"] in ("sgd", "adam"), f"optimizer kind must be sgd or adam, got {opt['kind']!r}")
    check(opt["lr"] > 0, "learning rate must be > 0")
    check(0 < opt["decay"] <= 1, "optimizer decay must be in (0, 1]")
    check(cfg["steps"] >= 0, "steps must be >= 0")
    check(cfg["eval_resolution"] >= 16, "eval_resolution must be >= 16")
    check(bool(cfg["seeds"]), "seeds must be non-empty")
    check(len(cfg["methods"]) >= 1, "methods must be non-empty")
    for m in cfg["methods"]:
        if m not in MODES:
            errors.append(f"unknown sampler mode {m!r}; valid modes: {', '.join(MODES)}")
    w = cfg["loss_weights"]
    check(w["interior"] >= 0 and w["boundary"] >= 0, "loss weights must be >= 0")
    return errors


def load_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Assemble defaults <- file <- explicit overrides <- environment; raise
    ConfigError listing every problem found."""
    errors = []
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path!r} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _merge(cfg, file_cfg, errors)
    if overrides:
        cfg = _merge(cfg, overrides, errors)
    cfg = _apply_env(cfg, errors, environ)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return RunConfig(cfg)
