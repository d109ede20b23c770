"""Versioned INI configuration for analyses and scenario specifications.

Example::

    [landmark-dl]
    version = 1

    [analysis]
    t = 2
    y = 45
    folds = 5
    seed = 20240101

    [learners]
    propensity = intercept, logit
    event = km, cox

    [scenario]
    base = 1
    l2_prob = 0.2
"""

from __future__ import annotations

import ast
import configparser
from dataclasses import fields, replace
from pathlib import Path

from .data import DataError

CONFIG_VERSION = 1

ANALYSIS_KEYS = {
    "t": ("landmark_t", float),
    "y": ("threshold_y", float),
    "y_grid": ("y_grid", lambda s: tuple(float(v) for v in s.split(","))),
    "folds": ("folds", int),
    "seed": ("seed", int),
    "positivity_floor": ("positivity_floor", float),
    "known_randomization_prob": ("known_randomization_prob", float),
    "utility_weight": ("utility_weight", float),
    "missingness": ("missingness_mode", str),
    "level": ("level", float),
    "survival_form": ("survival_form", str),
    "stratify_folds": ("stratify_folds", lambda s: s.strip().lower() in ("1", "true", "yes")),
    "bootstrap": ("bootstrap", int),
}


class ConfigError(DataError):
    pass


def read_config(path) -> dict:
    """Parse a config file into ``{"analysis": {...}, "learners": {...}, "scenario": {...}}``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    version = cp.get("landmark-dl", "version", fallback=None)
    if version is None:
        raise ConfigError(f"{path}: missing [landmark-dl] version")
    if int(version) != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version} (expected {CONFIG_VERSION})")
    out = {"analysis": {}, "learners": {}, "scenario": {}}
    if cp.has_section("analysis"):
        for key, raw in cp.items("analysis"):
            if key not in ANALYSIS_KEYS:
                raise ConfigError(f"{path}: unknown analysis key {key!r}")
            name, conv = ANALYSIS_KEYS[key]
            try:
                out["analysis"][name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
    if cp.has_section("learners"):
        for key, raw in cp.items("learners"):
            out["learners"][key] = tuple(v.strip() for v in raw.split(",") if v.strip())
    if cp.has_section("scenario"):
        for key, raw in cp.items("scenario"):
            try:
                out["scenario"][key] = _tuplify(ast.literal_eval(raw))
            except (ValueError, SyntaxError):
                out["scenario"][key] = raw
    return out


def _tuplify(v):
    # specs are hashable, so sequences become tuples
    if isinstance(v, (list, tuple)):
        return tuple(_tuplify(x) for x in v)
    return v


def scenario_from_config(section: dict):
    """Build a :class:`ScenarioSpec` from a ``[scenario]`` section (``base`` picks a built-in)."""
    from .simulate import SCENARIOS, ScenarioSpec

    section = dict(section)
    base = str(section.pop("base", "1"))
    if base not in SCENARIOS:
        raise ConfigError(f"unknown base scenario {base!r}")
    allowed = {f.name for f in fields(ScenarioSpec)}
    bad = set(section) - allowed
    if bad:
        raise ConfigError(f"unknown scenario keys: {sorted(bad)}")
    try:
        return replace(SCENARIOS[base], **section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None
