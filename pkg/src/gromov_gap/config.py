"""Sectioned key = value run configuration with defaults and strict key checking."""

from __future__ import annotations

import configparser
import os
import re

from .errors import ConfigError, DomainError, InputNotFound
from .geometry import CostKernel
from .gw import ENTROPY_MODES, GwConfig
from .sinkhorn import SinkhornConfig


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _strs(text):
    return tuple(v for v in text.replace(",", " ").split())


def _tristate(text):
    return None if text.lower() == "auto" else _bool(text)


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "seed": (int, 0),
    },
    "kernels": {
        "source": (str, "sqeuclidean"),
        "target": (str, "sqeuclidean"),
        "source_log_alpha": (float, 0.0),
        "target_log_alpha": (float, 0.0),
    },
    "gw": {
        "epsilon0": (float, 0.1),
        "stat": (_choice("mean", "max", "std", "none"), "mean"),
        "max_outer": (int, 50),
        "outer_tolerance": (float, 1e-5),
        "entropy_mode": (_choice(*ENTROPY_MODES), "offset_2logn"),
        "factored": (_tristate, None),
    },
    "sinkhorn": {
        "epsilon": (float, 0.05),
        "max_iterations": (int, 2000),
        "tolerance": (float, 1e-6),
        "relaxation": (float, 1.0),
        "epsilon_scaling": (_bool, True),
        "newton_polish": (_bool, True),
    },
    "train": {
        "regularizer": (_choice("none", "dst", "gmg"), "none"),
        "lambda": (float, 0.0),
        "fit_epsilon": (float, 0.05),
        "steps": (int, 5000),
        "batch_size": (int, 128),
        "lr": (float, 1e-3),
        "eval_every": (int, 500),
        "hidden": (_ints, (64, 64)),
        "activation": (_choice("tanh", "relu"), "tanh"),
        "holdout_size": (int, 256),
    },
    "data": {
        "target": (_choice("uniform_square", "circle", "rigid"), "uniform_square"),
        "radial_noise": (float, 0.02),
    },
    "convexity": {
        "chords": (int, 0),
        "epsilon": (float, 1e-2),
        "method": (_choice("entropic", "exact"), "entropic"),
        "target_dim": (int, 0),
        "normalization": (_choice("proof", "definition"), "proof"),
    },
    "stability": {
        "batches": (int, 5),
        "batch_size": (int, 128),
        "regularizers": (_strs, ("dst", "gmg")),
    },
    "sweep": {
        "n_values": (_ints, (3, 4, 5)),
        "families": (_strs, ("sqeuclidean", "scaled_sqeuclidean", "cosine", "inner_product")),
        "trials": (int, 20),
        "schedule_start": (float, 0.1),
        "schedule_stop": (float, 0.005),
        "schedule_steps": (int, 6),
    },
}


def _line_of(lines, section, key=None):
    current = None
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*[=:]", line, re.I):
            return i
    return 0


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse and resolve a config; returns {section: {key: value}} with every default filled."""
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    resolved = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{origin}:{_line_of(lines, section)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            line = _line_of(lines, section, key)
            if key not in SCHEMA[section]:
                raise ConfigError(f"{origin}:{line}: unknown key '{key}' in [{section}]")
            conv, _ = SCHEMA[section][key]
            try:
                resolved[section][key] = conv(_unquote(raw))
            except ValueError as exc:
                raise ConfigError(f"{origin}:{line}: bad value for '{key}' in [{section}]: {exc}") from None
    _check(resolved, origin)
    return resolved


def _check(cfg, origin):
    try:
        build_gw_config(cfg)
        build_kernels(cfg)
    except DomainError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def load_config(path) -> dict:
    if path is None:
        return parse_config_text("", "<defaults>")
    if not os.path.isfile(path):
        raise InputNotFound(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), os.fspath(path))


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def echo(cfg: dict) -> str:
    """Normalized text form: every section and key, in schema order."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        out.extend(f"{key} = {_fmt(cfg[section][key])}" for key in keys)
        out.append("")
    return "\n".join(out)


def build_sinkhorn_config(cfg: dict, epsilon: float | None = None) -> SinkhornConfig:
    s = cfg["sinkhorn"]
    return SinkhornConfig(epsilon=s["epsilon"] if epsilon is None else epsilon,
                          max_iterations=s["max_iterations"], tolerance=s["tolerance"],
                          relaxation=s["relaxation"], epsilon_scaling=s["epsilon_scaling"],
                          newton_polish=s["newton_polish"])


def build_gw_config(cfg: dict) -> GwConfig:
    g = cfg["gw"]
    return GwConfig(epsilon0=g["epsilon0"], stat_kind=g["stat"], max_outer=g["max_outer"],
                    outer_tolerance=g["outer_tolerance"], inner=build_sinkhorn_config(cfg, epsilon=1.0),
                    use_factored_path=g["factored"], entropy_mode=g["entropy_mode"])


def build_kernels(cfg: dict):
    k = cfg["kernels"]
    return (CostKernel(k["source"], k["source_log_alpha"]), CostKernel(k["target"], k["target_log_alpha"]))
