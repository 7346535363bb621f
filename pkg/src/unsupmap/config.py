"""Run configuration: an INI file with one section per command plus ``[train]``.

Every key has a default, so an empty file is a valid configuration.  Values
are parsed against the type of their default; ``--set section.key=value``
overrides apply after the file.  The resolved configuration is a plain dict
of typed values whose canonical JSON form is hashed into the run manifest.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from pathlib import Path

from unsupmap.exceptions import ContractError
from unsupmap.training import TrainConfig

TRAIN_DEFAULTS = {f.name: f.default for f in dataclasses.fields(TrainConfig)}

DEFAULTS: dict[str, dict] = {
    "run": {"seed": 0, "pair": "twin-moons-rotation", "out_dir": "runs", "jobs": 1},
    "train": {k: v for k, v in TRAIN_DEFAULTS.items() if k != "seed"},
    "demo-ambiguity": {"pair": "twin-gaussians", "n": 512},
    "depth-sweep": {"depths": (1, 2, 3, 4, 5, 6, 7, 8), "seeds": (0, 1, 2, 3, 4), "width": 16, "epochs": 200, "restarts": 4},
    "stop-criterion": {
        "depth": 1,
        "width": 16,
        "seeds": (2,),
        "epochs": 100,
        "restarts": 4,
        "n_train": 2048,
        "lam": 0.01,
        "t2": 4,
        "n_perms": 9999,
    },
    "per-sample": {
        "pair": "warp",
        "depth": 2,
        "width": 16,
        "n_points": 30,
        "point_seed": 4242,
        "restarts": 2,
        "probe_epochs": 20,
        "probe_lam": 1.0,
        "n_perms": 9999,
    },
    "hyperband": {
        "max_resource": 27,
        "eta": 3,
        "lam": 0.01,
        "depths": (1, 2, 3, 4, 5, 6, 7, 8),
        "widths": (16,),
        "batch_sizes": (32, 64, 128),
        "learning_rates": (0.0005, 0.001, 0.002),
        "n_train": 2048,
        "store_dir": "",
    },
    "distill": {"pair": "warp", "k1": 2, "k2": 5, "lam": 0.1, "width": 16, "seeds": (0, 1, 2, 3, 4), "restarts": 4, "find_k1": False, "max_depth": 4},
    "nonunique": {"pair": "multi-target", "depth": 4, "width": 16, "encoder_layers": 2, "epochs": 60, "t2": 2, "lam": 0.01},
    "verify": {"ipm_trials": 100, "lipschitz_trials": 500, "probe_points": 5},
}


def _parse(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(part) for part in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ContractError(f"cannot parse {where} = {text!r} as {type(default).__name__}") from None


def _assign(config: dict, section: str, key: str, text: str) -> None:
    if section not in DEFAULTS:
        raise ContractError(f"unknown config section [{section}]")
    if key not in DEFAULTS[section]:
        raise ContractError(f"unknown key {key!r} in section [{section}]")
    config[section][key] = _parse(text, DEFAULTS[section][key], f"{section}.{key}")


def _apply_manifest(config: dict, path) -> None:
    """Take the resolved configuration recorded in a run manifest."""
    try:
        recorded = json.loads(Path(path).read_text(encoding="utf-8"))["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise ContractError(f"cannot read manifest {path}: {exc}") from None
    for section, values in recorded.items():
        for key, value in values.items():
            text = ", ".join(str(v) for v in value) if isinstance(value, list) else str(value)
            _assign(config, section, key, text)


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the INI file at ``path`` (if any), then ``section.key=value`` overrides."""
    config = {section: dict(values) for section, values in DEFAULTS.items()}
    if path is not None and str(path).endswith(".json"):
        _apply_manifest(config, path)
    elif path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(Path(path), encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ContractError(f"cannot read config {path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                _assign(config, section, key, text)
    for item in overrides:
        lhs, sep, text = item.partition("=")
        section, dot, key = lhs.partition(".")
        if not sep or not dot:
            raise ContractError(f"override {item!r} is not of the form section.key=value")
        _assign(config, section.strip(), key.strip(), text)
    return config


def train_config(config: dict, section: str | None = None, **fixed) -> TrainConfig:
    """``[train]`` values, overlaid with same-named keys of ``section``, then ``fixed``."""
    values = dict(config["train"])
    values["seed"] = config["run"]["seed"]
    if section is not None:
        for key, value in config[section].items():
            if key in TRAIN_DEFAULTS:
                values[key] = value
    values.update(fixed)
    return TrainConfig(**values)


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"), default=list)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def dump_ini(config: dict) -> str:
    """INI text that :func:`load_config` parses back into ``config``."""
    lines = []
    for section, values in config.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, tuple):
                text = ", ".join(repr(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)
