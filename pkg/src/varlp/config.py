"""INI experiment configuration with a closed schema.

Every section and key must be declared in :data:`SCHEMA`; anything else is
rejected.  Values are converted to the declared type, and ``key = auto``
(or an empty value) leaves the default in place.
"""
from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigInvalid, FileError


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (type, default)
SCHEMA = {
    "geometry": {
        "image_side": (int, 64),
        "pixel_size": (float, 0.1),
        "num_angles": (int, 90),
        "angle_start": (float, 0.0),
        "angle_step": (float, 2.0),
        "num_detectors": (int, 0),
        "detector_spacing": (float, 0.0),
    },
    "phantom": {
        "kind": (str, "sparse_shapes"),
    },
    "noise": {
        "kind": (str, "salt_pepper"),
        "fraction": (float, 0.0),
        "mean": (float, 0.0),
        "variance": (float, 0.0),
        "low": (float, None),
        "high": (float, None),
        "threshold": (float, None),
        "background": (str, None),
        "foreground": (str, None),
        "seed": (int, 0),
    },
    "pilot": {
        "p_const": (float, 1.1),
        "epochs": (int, 5),
        "mu": (float, 0.03),
        "num_subsets": (int, None),
        "seed": (int, 0),
    },
    "maps": {
        "p_lower": (float, 1.05),
        "p_upper": (float, 1.25),
        "q_lower": (float, 1.05),
        "q_upper": (float, 1.25),
        "q_source": (str, "projection"),
    },
    "solver": {
        "algorithm": (str, "sgd_pnqn"),
        "p": (float, None),
        "q": (float, None),
        "r": (float, None),
        "mu0": (float, None),
        "decay_c": (float, 0.1),
        "gamma": (float, None),
        "schedule": (str, "decaying"),
        "num_subsets": (int, 1),
        "epochs": (int, 10),
        "seed": (int, 0),
        "adapt_interval": (int, 0),
        "sampling": (str, "uniform"),
        "x0": (str, "zero"),
    },
    "io": {
        "phantom": (str, "phantom.csv"),
        "sinogram": (str, "sinogram.csv"),
        "noisy_sinogram": (str, "noisy_sinogram.csv"),
        "pilot": (str, "pilot.csv"),
        "p_map": (str, "p_map.csv"),
        "q_map": (str, "q_map.csv"),
        "reconstruction": (str, "reconstruction.csv"),
        "runlog": (str, "runlog.csv"),
        "metrics": (str, "metrics.csv"),
        "export_pgm": (_bool, False),
    },
}


class Config(dict):
    """``{section: {key: value}}`` with attribute-style section access."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    base_dir: Path = Path(".")

    def path(self, key) -> Path:
        p = Path(self["io"][key])
        return p if p.is_absolute() else self.base_dir / p


def _convert(section, key, text):
    if section not in SCHEMA:
        raise ConfigInvalid(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigInvalid(f"unknown key {key!r} in [{section}]")
    kind, default = SCHEMA[section][key]
    text = text.strip()
    if text == "" or text.lower() == "auto":
        return default
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigInvalid(f"[{section}] {key}: {exc}") from None


def parse_override(item: str):
    """Split ``--section.key=value`` into its parts."""
    body = item[2:] if item.startswith("--") else item
    if "=" not in body or "." not in body.split("=", 1)[0]:
        raise ConfigInvalid(f"override must look like --section.key=value, got {item!r}")
    name, value = body.split("=", 1)
    section, key = name.split(".", 1)
    return section, key, value


def load_config(path=None, overrides=(), text=None) -> Config:
    """Read ``path`` (or ``text``), apply overrides and fill defaults.

    Relative ``[io]`` paths resolve against the config file's directory.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileError(f"config file not found: {path}")
        text = path.read_text()
        base = path.parent
    try:
        parser.read_string(text or "")
    except configparser.Error as exc:
        raise ConfigInvalid(f"cannot parse config: {exc}") from None

    cfg = Config({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    cfg.base_dir = base
    for section in parser.sections():
        for key, value in parser.items(section):
            cfg[section][key] = _convert(section, key, value)
    for item in overrides:
        section, key, value = parse_override(item)
        cfg[section][key] = _convert(section, key, value)
    return cfg
