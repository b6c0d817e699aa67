"""Strict INI run configuration.

Keys carry their unit in the name (``_s``, ``_Hz``, ``_T``, ``_rad``,
``_per_s``); unknown sections or keys are rejected so a mistyped unit cannot
silently fall back to a default.  Detunings are given in Hz and converted to
rad/s by the consumers.

Example::

    [run]
    seed = 7

    [noise]
    tau_c_s = 1e-7
    duration_s = 1e-5
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .constants import GAMMA_E_OVER_2PI

REQUIRED = object()


class ConfigError(ValueError):
    """Invalid configuration; ``key_path`` names the offending entry."""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path


@dataclass(frozen=True)
class Key:
    kind: str             # float, int, bool, str, floats, strs
    default: object = REQUIRED
    check: str | None = None   # pos, nonneg, ge1, frac


def _k(kind, default=REQUIRED, check=None):
    return Key(kind, default, check)


SCHEMA = {
    "noise": {
        "tau_c_s": _k("float", check="pos"),
        "duration_s": _k("float", check="pos"),
        "dt_s": _k("float", None, "pos"),
    },
    "drives": {
        "b1_T": _k("float", check="nonneg"),
        "b2_T": _k("float", check="nonneg"),
        "phase1_rad": _k("float", 0.0),
        "phase2_rad": _k("float", 0.0),
        "delta1_Hz": _k("float", 0.0),
        "delta2_Hz": _k("float", 0.0),
    },
    "t1": {
        "t_max_s": _k("float", check="pos"),
        "n_times": _k("int", 30, "pos"),
        "shots": _k("int", 10000, "pos"),
        "pi1": _k("bool", False),
        "pi2": _k("bool", False),
    },
    "qme": {
        "gamma1_per_s": _k("float", check="nonneg"),
        "gamma2_per_s": _k("float", check="nonneg"),
        "delta1_Hz": _k("floats", [0.0]),
        "delta2_Hz": _k("float", 0.0),
        "gd11_per_s": _k("float", 0.0, "nonneg"),
        "gd22_per_s": _k("float", 0.0, "nonneg"),
        "gd12_per_s": _k("float", 0.0),
        "r0": _k("float", 1.0),
        "t_max_s": _k("float", check="pos"),
        "n_times": _k("int", 200, "pos"),
    },
    "readout": {
        "sigma_r1": _k("float", 1.0, "ge1"),
        "sigma_r2": _k("float", 1.0, "ge1"),
    },
    "sweep": {
        "n_pulses": _k("int", check="pos"),
        "f_start_Hz": _k("float", check="pos"),
        "f_stop_Hz": _k("float", check="pos"),
        "n_points": _k("int", 101, "pos"),
        "fixed_f1_Hz": _k("float", None, "pos"),
        "shots": _k("int", 100000, "pos"),
    },
    "tones": {
        "f_Hz": _k("floats", check="pos"),
        "b1_T": _k("floats", check="nonneg"),
        "b2_T": _k("floats", check="nonneg"),
    },
    "decoherence": {
        "chi1": _k("float", 0.0, "nonneg"),
        "chi2": _k("float", 0.0, "nonneg"),
    },
    "psd": {
        "n_pulses": _k("int", check="pos"),
        "f_Hz": _k("floats", check="pos"),
        "r": _k("floats"),
        "shots": _k("int", 100000, "pos"),
    },
    "driven": {
        "theta_start_rad": _k("float", 0.0),
        "theta_stop_rad": _k("float", math.pi),
        "n_points": _k("int", 9, "pos"),
        "shots": _k("int", 1000000, "pos"),
        "configuration": _k("str", "correlation"),
        "dump_shots": _k("bool", False),
    },
    "sensitivity": {
        "t_init_s": _k("float", 1.5e-3, "pos"),
        "t_sense_s": _k("float", 10e-6, "pos"),
        "t_read_s": _k("float", 6e-3, "pos"),
        "c1": _k("float", 1.0, "frac"),
        "c2": _k("float", 1.0, "frac"),
        "w": _k("float", 2 / math.pi),
        "T_start_s": _k("float", 1.0, "pos"),
        "T_stop_s": _k("float", 2400.0, "pos"),
        "n_points": _k("int", 50, "pos"),
    },
    "fit": {
        "model": _k("str"),
        "data": _k("strs"),
        "delta1_Hz": _k("floats", None),
        "n_terms": _k("int", 3, "pos"),
    },
}
RUN_SCHEMA = {
    "seed": _k("int", 0, "nonneg"),
    "threads": _k("str", "1"),
    "gamma_over_2pi_Hz_per_T": _k("float", GAMMA_E_OVER_2PI, "pos"),
}
# Free-form parameter maps for the fit subcommand: name = value, or
# name = lower, upper for free parameters.
DYNAMIC = ("fit.fixed", "fit.free", "fit.init")


def _parse_scalar(kind, text, path):
    text = text.strip()
    try:
        if kind == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "int":
            return int(text)
    except ValueError:
        raise ConfigError(path, f"expected {kind}, got {text!r}") from None
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(path, f"expected boolean, got {text!r}")
    return text


def _parse(key: Key, text, path):
    if key.kind in ("floats", "strs"):
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if not parts:
            raise ConfigError(path, "empty list")
        return [_parse_scalar(key.kind[:-1] if key.kind == "floats" else "str", p, path)
                for p in parts]
    return _parse_scalar(key.kind, text, path)


def _check(key: Key, value, path):
    if key.check is None or value is None:
        return
    for v in (value if isinstance(value, list) else [value]):
        ok = {"pos": v > 0, "nonneg": v >= 0, "ge1": v >= 1, "frac": 0 < v <= 1}[key.check]
        if not ok:
            need = {"pos": "> 0", "nonneg": ">= 0", "ge1": ">= 1", "frac": "in (0, 1]"}[key.check]
            raise ConfigError(path, f"value {v!r} must be {need}")


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with defaults filled in for every given block."""

    seed: int = 0
    threads: str = "1"
    gamma_over_2pi: float = GAMMA_E_OVER_2PI
    blocks: dict = field(default_factory=dict)

    @property
    def gamma(self) -> float:
        return 2 * math.pi * self.gamma_over_2pi

    @property
    def n_threads(self) -> int:
        if self.threads == "auto":
            return os.cpu_count() or 1
        return int(self.threads)

    def has(self, name) -> bool:
        return name in self.blocks

    def block(self, name, need=None) -> dict:
        """Resolved keys of block ``name``.

        Raises if the block or one of its required keys is missing; ``need``
        restricts the required-key check to the listed keys.
        """
        if name not in self.blocks:
            raise ConfigError(name, "required block missing")
        values = self.blocks[name]
        for key, spec in SCHEMA.get(name, {}).items():
            if need is not None and key not in need:
                continue
            if key not in values and spec.default is REQUIRED:
                raise ConfigError(f"{name}.{key}", "required key missing")
        return dict(values)

    def with_overrides(self, seed=None, threads=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=_check_seed(int(seed), "--seed"))
        if threads is not None:
            cfg = replace(cfg, threads=_check_threads(str(threads), "--threads"))
        return cfg

    def to_ini(self) -> str:
        """Resolved-config echo; :func:`parse_config` reproduces this object."""
        lines = ["[run]", f"seed = {self.seed}", f"threads = {self.threads}",
                 f"gamma_over_2pi_Hz_per_T = {self.gamma_over_2pi!r}", ""]
        for name, values in self.blocks.items():
            lines.append(f"[{name}]")
            for key, value in values.items():
                if value is not None:
                    lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)


def _check_seed(seed, path):
    if not 0 <= seed < 2**64:
        raise ConfigError(path, f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def _check_threads(text, path):
    text = text.strip()
    if text == "auto":
        return text
    try:
        n = int(text)
    except ValueError:
        raise ConfigError(path, f"expected a positive integer or 'auto', got {text!r}") from None
    if n < 1:
        raise ConfigError(path, f"expected a positive integer or 'auto', got {text!r}")
    return str(n)


def _parse_dynamic(name, section):
    out = {}
    for key, text in section.items():
        path = f"{name}.{key}"
        vals = [_parse_scalar("float", p, path) for p in text.split(",")]
        if name == "fit.free":
            if len(vals) != 2 or not vals[0] < vals[1]:
                raise ConfigError(path, "free parameter needs 'lower, upper' with lower < upper")
            out[key] = vals
        else:
            if len(vals) != 1:
                raise ConfigError(path, "expected a single value")
            out[key] = vals[0]
    return out


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str   # keys are case-sensitive (b1_T, f_Hz)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(source, f"unparseable: {exc}") from None
    run = {k: spec.default for k, spec in RUN_SCHEMA.items()}
    blocks = {}
    for name in parser.sections():
        section = parser[name]
        if name == "run":
            for key, text_value in section.items():
                if key not in RUN_SCHEMA:
                    raise ConfigError(f"run.{key}", "unknown key")
                run[key] = _parse(RUN_SCHEMA[key], text_value, f"run.{key}")
                _check(RUN_SCHEMA[key], run[key], f"run.{key}")
            continue
        if name in DYNAMIC:
            blocks[name] = _parse_dynamic(name, section)
            continue
        if name not in SCHEMA:
            raise ConfigError(name, "unknown block")
        schema = SCHEMA[name]
        values = {}
        for key, text_value in section.items():
            path = f"{name}.{key}"
            if key not in schema:
                raise ConfigError(path, "unknown key")
            values[key] = _parse(schema[key], text_value, path)
            _check(schema[key], values[key], path)
        for key, spec in schema.items():
            if key not in values and spec.default is not REQUIRED:
                d = spec.default
                values[key] = list(d) if isinstance(d, list) else d
        blocks[name] = values
    return RunConfig(_check_seed(run["seed"], "run.seed"),
                     _check_threads(run["threads"], "run.threads"),
                     run["gamma_over_2pi_Hz_per_T"], blocks)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(str(path), "config file not found")
    return parse_config(path.read_text(), str(path))
