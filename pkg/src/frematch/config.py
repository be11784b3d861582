"""Plain-text experiment configuration and the run manifest.

The config format is deliberately dumb: one `key = value` per line,
`#` starts a comment, dotted keys namespace the non-training sections
(`augment.cutout_frac`, `dataset.noise`, `split.test_frac`).  Every key
has a default, so an empty file is a valid config.  The same keys are
accepted as command-line overrides, which keeps run manifests
copy-pasteable back into either channel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import data as dat
from .trainer import TrainConfig

DATASET_KINDS = ("two_moons", "blobs", "digits")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "two_moons"
    n: int = 1000
    noise: float = 0.1
    classes: int = 3      # blobs only
    sigma: float = 0.4    # blobs only

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"dataset.kind must be one of {DATASET_KINDS}, "
                             f"got {self.kind!r}")


@dataclass(frozen=True)
class SplitConfig:
    labels_per_class: int = 2
    test_frac: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    dataset: DatasetConfig
    split: SplitConfig


def default_experiment() -> ExperimentConfig:
    return ExperimentConfig(train=TrainConfig(), dataset=DatasetConfig(),
                            split=SplitConfig())


# config key -> (section, dataclass field).  "lambda" is the public name
# of the weight the code calls lam (keyword collision).
_TRAIN_KEYS = {
    "mode": "mode", "lambda": "lam", "eta": "eta", "beta": "beta",
    "m": "m", "m0": "m0", "ema_scheduled": "ema_scheduled",
    "hidden_dims": "hidden_dims", "feature_dim": "feature_dim",
    "lr0": "lr0", "min_lr": "min_lr", "weight_decay": "weight_decay",
    "sgd_momentum": "sgd_momentum", "nesterov": "nesterov",
    "optimizer": "optimizer", "epochs": "epochs",
    "labelled_bs": "labelled_bs", "mu": "mu", "seed": "seed",
    "augment.weak_jitter_sigma": "weak_jitter_sigma",
    "augment.strong_jitter_sigma": "strong_jitter_sigma",
    "augment.translate_frac": "translate_frac",
    "augment.cutout_frac": "cutout_frac",
    "augment.strong_ops_per_sample": "strong_ops_per_sample",
}
_DATASET_KEYS = {f"dataset.{f.name}": f.name for f in fields(DatasetConfig)}
_SPLIT_KEYS = {f"split.{f.name}": f.name for f in fields(SplitConfig)}

KEYMAP = {}
KEYMAP.update({k: ("train", v) for k, v in _TRAIN_KEYS.items()})
KEYMAP.update({k: ("dataset", v) for k, v in _DATASET_KEYS.items()})
KEYMAP.update({k: ("split", v) for k, v in _SPLIT_KEYS.items()})


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw == "":
                return ()
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def _defaults_by_section():
    return {"train": TrainConfig(), "dataset": DatasetConfig(),
            "split": SplitConfig()}


def parse_assignments(pairs) -> dict:
    """`key=value` strings -> {(section, field): coerced value}."""
    defaults = _defaults_by_section()
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in KEYMAP:
            raise ConfigError(f"unknown config key {key!r}")
        section, field_name = KEYMAP[key]
        default = getattr(defaults[section], field_name)
        out[(section, field_name)] = _coerce(key, raw, default)
    return out


def parse_config(text: str) -> ExperimentConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, "
                              f"got {line.strip()!r}")
        pairs.append(stripped)
    return apply_assignments(default_experiment(), parse_assignments(pairs))


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_assignments(exp: ExperimentConfig, assignments: dict) -> ExperimentConfig:
    by_section = {"train": {}, "dataset": {}, "split": {}}
    for (section, field_name), value in assignments.items():
        by_section[section][field_name] = value
    try:
        return ExperimentConfig(
            train=replace(exp.train, **by_section["train"]),
            dataset=replace(exp.dataset, **by_section["dataset"]),
            split=replace(exp.split, **by_section["split"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(exp: ExperimentConfig, pairs) -> ExperimentConfig:
    return apply_assignments(exp, parse_assignments(pairs))


def _render_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def render_config(exp: ExperimentConfig) -> str:
    """Canonical text form: every key, stable order; parses back to an
    equal ExperimentConfig."""
    sections = {"train": exp.train, "dataset": exp.dataset, "split": exp.split}
    lines = ["# resolved run configuration"]
    for key, (section, field_name) in KEYMAP.items():
        lines.append(f"{key} = {_render_value(getattr(sections[section], field_name))}")
    return "\n".join(lines) + "\n"


def config_snapshot(exp: ExperimentConfig) -> dict:
    """JSON-friendly {config key: value} with the same key names the
    text format uses."""
    sections = {"train": exp.train, "dataset": exp.dataset, "split": exp.split}
    snap = {}
    for key, (section, field_name) in KEYMAP.items():
        value = getattr(sections[section], field_name)
        snap[key] = list(value) if isinstance(value, tuple) else value
    return snap


def build_dataset(dc: DatasetConfig, seed: int) -> dat.Dataset:
    if dc.kind == "two_moons":
        return dat.make_two_moons(dc.n, noise=dc.noise, seed=seed)
    if dc.kind == "blobs":
        angles = 2.0 * math.pi * np.arange(dc.classes) / dc.classes
        centers = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return dat.make_blobs(dc.n, centers, sigma=dc.sigma, seed=seed)
    return dat.load_digits8x8()


def dataset_id(dc: DatasetConfig, seed: int) -> str:
    if dc.kind == "two_moons":
        return f"two_moons(n={dc.n},noise={dc.noise!r},seed={seed})"
    if dc.kind == "blobs":
        return f"blobs(n={dc.n},classes={dc.classes},sigma={dc.sigma!r},seed={seed})"
    return "digits8x8"


def write_manifest(path, exp: ExperimentConfig, seed: int, started: str,
                   outputs: dict, finished: str = None) -> None:
    from . import __version__
    manifest = {
        "config": config_snapshot(exp),
        "dataset": dataset_id(exp.dataset, seed),
        "split_seed": seed,
        "code_version": __version__,
        "started": started,
        "finished": finished,
        "outputs": outputs,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
