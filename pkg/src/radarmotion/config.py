"""Flat experiment configuration with dotted keys.

A config file is TOML; nested tables and dotted keys are flattened, so
``[gst]\\nblocks = 4`` and ``gst.blocks = 4`` mean the same thing. Unknown keys
and invalid values are rejected with the offending key in the message.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Any

from .dataset import PROFILES as DATASET_PROFILES

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    # synthetic capture
    "sim.actors": 12,
    "sim.frames": 120,
    "sim.fps": 15.0,
    "sim.noise_std": 0.03,
    "sim.dropout": 0.1,
    "sim.dropout_correlation": 0.0,
    "sim.ghost_rate": 0.05,
    "sim.points_per_segment": 3,
    "sim.wall_x": 2.5,
    # windowing
    "pipeline.H": 8,
    "pipeline.F": 16,
    "pipeline.window": 4,
    "pipeline.pad_to": 256,
    "pipeline.crop": 1.6,
    "pipeline.thre": 3.0,
    "pipeline.split": 0.75,
    # transforms; n1 = 0 means min(H + F, 20)
    "codec.n1": 0,
    "codec.n2": 3,
    # stage one
    "fdm.anchors": 8,
    "fdm.neighbors": 16,
    "fdm.feat_dim": 64,
    "fdm.layers": 2,
    "fdm.heads": 4,
    "fdm.steps": 300,
    "fdm.estimator_steps": 1500,
    "fdm.batch": 32,
    "fdm.lr": 2e-3,
    # stage two
    "gst.d_model": 32,
    "gst.blocks": 4,
    "gst.heads": 4,
    "gst.d_cond": 32,
    "gst.s_blocks": True,
    "gst.f_blocks": True,
    "diffusion.K": 100,
    "diffusion.steps": 1000,
    "diffusion.batch": 32,
    "diffusion.lr": 2e-3,
    "diffusion.clip": 1.0,
    # sampling and evaluation
    "sampler.mode": "ddim",
    "sampler.ddim_steps": 60,
    "sampler.reverse_rule": "standard",
    "sampler.eta": 1.0,
    "sampler.clamp": True,
    "eval.k": 10,
    "eval.mm_threshold": 0.5,
    "eval.max_samples": 0,
}

# capture presets; pad_to stays at the desk-scale default unless set explicitly
PROFILES: dict[str, dict[str, Any]] = {
    name: {f"pipeline.{k}": v for k, v in preset.items() if k != "pad_to"}
    for name, preset in DATASET_PROFILES.items()
}

_CHOICES = {
    "sampler.mode": ("ddpm", "ddim"),
    "sampler.reverse_rule": ("standard", "paper-literal"),
}


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, type(default)):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def n1(self) -> int:
        n1 = self.values["codec.n1"]
        return n1 if n1 > 0 else min(self["pipeline.H"] + self["pipeline.F"], 20)

    def subset(self, *prefixes: str) -> dict:
        return {k: v for k, v in self.values.items()
                if any(k == p or k.startswith(p + ".") for p in prefixes)}

    def replace(self, **overrides) -> "ExperimentConfig":
        return make_config({**self.values, **{k.replace("__", "."): v for k, v in overrides.items()}})

    def to_toml(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, str):
                text = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
            else:
                text = repr(v)
            lines.append(f"{k} = {text}")
        return "\n".join(lines) + "\n"


def validate(values: dict) -> None:
    def need(cond: bool, key: str, msg: str):
        if not cond:
            raise ConfigError(f"{key}: {msg} (got {values[key]!r})")

    for key, choices in _CHOICES.items():
        need(values[key] in choices, key, f"must be one of {', '.join(choices)}")
    for key in ("sim.actors", "sim.frames", "sim.points_per_segment", "pipeline.H", "pipeline.window",
                "pipeline.pad_to", "codec.n2", "fdm.anchors", "fdm.neighbors", "fdm.feat_dim",
                "fdm.heads", "fdm.batch", "gst.d_model", "gst.heads", "gst.d_cond", "diffusion.K",
                "diffusion.batch", "sampler.ddim_steps", "eval.k"):
        need(values[key] >= 1, key, "must be >= 1")
    for key in ("pipeline.F", "pipeline.thre", "codec.n1", "fdm.layers", "fdm.steps",
                "fdm.estimator_steps", "diffusion.steps", "diffusion.clip", "sim.noise_std",
                "eval.mm_threshold", "eval.max_samples", "sampler.eta"):
        need(values[key] >= 0, key, "must be >= 0")
    for key in ("sim.fps", "pipeline.crop", "fdm.lr", "diffusion.lr"):
        need(values[key] > 0, key, "must be > 0")
    for key in ("sim.dropout", "sim.dropout_correlation", "sim.ghost_rate", "pipeline.split"):
        need(0.0 <= values[key] <= 1.0, key, "must lie in [0, 1]")
    need(values["sim.dropout"] < 1.0, "sim.dropout", "must be < 1")
    span = values["pipeline.H"] + values["pipeline.F"]
    need(values["codec.n1"] <= span, "codec.n1", f"must not exceed H + F = {span}")
    need(values["codec.n2"] <= values["pipeline.H"], "codec.n2", "must not exceed H")
    need(values["sim.frames"] >= span, "sim.frames", f"must cover one window of {span} frames")
    need(values["sampler.ddim_steps"] <= values["diffusion.K"], "sampler.ddim_steps",
         "must not exceed diffusion.K")
    need(values["gst.blocks"] >= 2 and values["gst.blocks"] % 2 == 0, "gst.blocks",
         "must be a positive even count")
    need(values["gst.d_model"] % values["gst.heads"] == 0, "gst.d_model",
         "must be divisible by gst.heads")
    need(values["fdm.feat_dim"] % values["fdm.heads"] == 0, "fdm.feat_dim",
         "must be divisible by fdm.heads")
    need(values["gst.s_blocks"] or values["gst.f_blocks"], "gst.s_blocks",
         "at least one block family must be enabled")


def make_config(overrides: dict | None = None, profile: str | None = None) -> ExperimentConfig:
    values = dict(DEFAULTS)
    overrides = dict(overrides or {})
    profile = overrides.pop("profile", profile)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"profile: unknown profile {profile!r}")
        values.update(PROFILES[profile])
    for key, value in overrides.items():
        if key not in DEFAULTS:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = _check_type(key, value, DEFAULTS[key])
    validate(values)
    return ExperimentConfig(values)


def load_config(path=None, profile: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = flatten(tomllib.load(fh))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    data.update(overrides or {})
    return make_config(data, profile)
