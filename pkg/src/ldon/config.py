"""Experiment configuration: flat key=value files against a typed schema.

Files hold one `key = value` pair per line with # comments. Keys are dotted
lowercase names grouped by pipeline stage; every key has a typed default, so
an empty file is a valid experiment. Unknown keys and type mismatches are
rejected with the line they came from.
"""
from __future__ import annotations

import hashlib


class ConfigError(Exception):
    """Malformed config text, unknown key, or a value of the wrong type."""


# key -> (type, default)
SCHEMA = {
    "seed": (int, 0),
    "data.problem": (str, "diffusion"),
    "data.grid": (int, 32),
    "data.samples": (int, 200),
    "data.m_t": (int, 10),
    "data.length_scale": (float, 0.1),
    "data.variance": (float, 1.0),
    "data.energy": (float, 0.99),
    "data.diffusivity": (float, 0.01),
    "data.reaction_rate": (float, 1.0),
    "data.t_final": (float, 1.0),
    "data.train_fraction": (float, 0.9),
    "reducer.kind": (str, "pca"),
    "reducer.d": (int, 64),
    "reducer.epochs": (int, 40),
    "reducer.batch_size": (int, 64),
    "reducer.lr": (float, 1e-3),
    "operator.model": (str, "latent"),
    "operator.p": (int, 5),
    "operator.width": (int, 100),
    "operator.branch": (str, "dense"),
    "operator.epochs": (int, 80),
    "operator.batch_size": (int, 64),
    "operator.lr": (float, 1e-3),
    "fno.d_v": (int, 16),
    "fno.k_max": (int, 8),
    "fno.n_layers": (int, 4),
    "fno.epochs": (int, 12),
    "fno.batch_size": (int, 8),
    "fno.lr": (float, 1e-3),
    "compare.models": (str, "latent,full,fno"),
    "compare.dims": (str, "64"),
    "compare.seeds": (str, "0,1,2"),
}


def _validate_key_chars(key: str, lineno: int, raw: str):
    start = raw.find(key)
    for i, ch in enumerate(key):
        if not (ch.isascii() and (ch.isalnum() or ch in "._")):
            raise ConfigError(f"line {lineno}, col {start + i + 1}: invalid character {ch!r} in key")
    for part in key.split("."):
        if not part or part[0].isdigit():
            raise ConfigError(f"line {lineno}, col {start + 1}: malformed key '{key}'")


def parse_config_text(text: str) -> dict:
    """Parse key=value lines to {key: (raw_value, lineno)}."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}, col 1: empty key")
        _validate_key_chars(key, lineno, raw)
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' (first set on line {out[key][1]})")
        out[key] = (value, lineno)
    return out


def _convert(key: str, value: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown config key '{key}'")
    typ = SCHEMA[key][0]
    if typ is str:
        return value
    try:
        return typ(value)
    except ValueError:
        raise ConfigError(f"{where}: key '{key}' expects {typ.__name__}, got '{value}'") from None


def _canonical_value(value) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


class ExperimentConfig:
    """Immutable mapping of schema keys to typed values."""

    def __init__(self, values: dict | None = None):
        merged = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key '{key}'")
            typ = SCHEMA[key][0]
            if not isinstance(value, typ):
                raise ConfigError(f"key '{key}' expects {typ.__name__}, got {type(value).__name__}")
            merged[key] = value
        self._values = merged

    def __getitem__(self, key: str):
        if key not in self._values:
            raise KeyError(key)
        return self._values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def as_dict(self) -> dict:
        return dict(self._values)

    def canonical_text(self) -> str:
        return "".join(
            f"{key} = {_canonical_value(self._values[key])}\n" for key in sorted(self._values)
        )

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("ascii")).hexdigest()

    def int_list(self, key: str) -> list:
        """Parse a comma-separated int-valued key like compare.dims."""
        try:
            return [int(part.strip()) for part in self._values[key].split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"key '{key}' must be comma-separated integers,"
                              f" got '{self._values[key]}'") from None

    def str_list(self, key: str) -> list:
        return [part.strip() for part in self._values[key].split(",") if part.strip()]


def apply_overrides(values: dict, overrides) -> dict:
    """Fold key=value override strings (from --set) into a typed value dict."""
    out = dict(values)
    for text in overrides:
        if "=" not in text:
            raise ConfigError(f"override '{text}': expected key=value")
        key, value = (part.strip() for part in text.split("=", 1))
        out[key] = _convert(key, value, f"override '{text}'")
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the optional file, then --set overrides."""
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
        for key, (raw, lineno) in parse_config_text(text).items():
            values[key] = _convert(key, raw, f"line {lineno}")
    values = apply_overrides(values, overrides)
    return ExperimentConfig(values)
