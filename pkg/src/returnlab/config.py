"""YAML experiment configuration: loading, defaults, validation.

Validation errors name the offending field path and, when the config came
from a file, its line number.
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

import yaml

from .markov_exact import ChainError, MarkovChainModel

SUBCOMMANDS = ("exact", "mc", "lemmas", "scan", "dist")
LEMMAS = ("convolution", "galves_schmitt", "dyadic", "ratio", "k_ratio", "gf")
OUT_ENV = "RETURNLAB_OUT"

DEFAULTS: dict = {
    "system": {"chain": {"iid": [0.5, 0.5]}, "map": "doubling"},
    "target": {"word": "0", "family": None},
    "grids": {},
    "K": 8,
    "seed": 0,
    "schedule": {"t": 1.0, "omega": 0.5, "eta": None, "alpha_exp": 0.5},
    "mc": {"N": 2, "t": 1.0, "samples": 100000, "streams": 8, "symbolic": None, "max_discard_rate": 0.01},
    "lemmas": {"which": ["convolution"], "mode": "phi", "loose": False, "gamma": 0.1, "beta": 0.5},
    "dist": {"t": 1.0, "theta": 0.5, "kmax": 10, "cluster_K": 60, "binomial_n": [100, 1000, 10000]},
    "output": {"dir": None, "format": "both"},
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path = path
        self.line = line
        where = f"{path} (line {line})" if line else path
        super().__init__(f"{where}: {message}")


# mappings replaced wholesale rather than merged key by key
ATOMIC = ("chain", "family")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ATOMIC:
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _line_index(node, prefix: str = "", out: dict | None = None) -> dict:
    """Map dotted field paths to 1-based source lines from a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for key, val in node.value:
            path = f"{prefix}.{key.value}" if prefix else str(key.value)
            out[path] = key.start_mark.line + 1
            _line_index(val, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = item.start_mark.line + 1
            _line_index(item, path, out)
    return out


def parse_range(value, path: str) -> list[int]:
    """Integer grid from a list, a scalar, ``"a..b"`` or ``{from, to, step}``."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected an integer grid")
    if isinstance(value, int):
        return [value]
    if isinstance(value, str) and ".." in value:
        lo, hi = value.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    if isinstance(value, dict):
        return list(range(int(value["from"]), int(value["to"]) + 1, int(value.get("step", 1))))
    if isinstance(value, list):
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(path, "grid entries must be integers")
        return list(value)
    raise ConfigError(path, f"cannot read an integer grid from {value!r}")


class Config(dict):
    """Resolved configuration (a plain dict with field-path aware errors)."""

    lines: dict

    def error(self, path: str, message: str) -> ConfigError:
        return ConfigError(path, message, self.lines.get(path))

    def grid(self, name: str, default=None) -> list[int] | None:
        raw = self["grids"].get(name, default)
        if raw is None:
            return None
        vals = parse_range(raw, f"grids.{name}")
        if not vals:
            raise self.error(f"grids.{name}", "grid is empty")
        return vals

    def chain(self) -> MarkovChainModel:
        spec = self["system"].get("chain")
        if not isinstance(spec, dict):
            raise self.error("system.chain", "chain specification must be a mapping")
        try:
            return MarkovChainModel.from_mapping(spec)
        except ChainError as exc:
            msg = str(exc)
            path = "system.chain"
            if msg.startswith("transition row "):
                row = msg.split()[2]
                path = f"system.chain.transition[{row}]"
            raise self.error(path, msg) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise self.error("system.chain", f"malformed chain specification ({exc})") from None


def load_config(source: str | os.PathLike | dict | None, subcommand: str | None = None,
                overrides: dict | None = None) -> Config:
    """Read, merge defaults and validate.

    ``source`` may be a YAML/JSON path, a mapping, or a run manifest (whose
    ``config`` entry is used, allowing bit-identical reruns).
    """
    lines: dict = {}
    if source is None:
        raw: dict = {}
    elif isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = Path(source).read_text()
        try:
            node = yaml.compose(text)
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(str(source), f"not valid YAML: {exc}") from None
        if node is not None:
            lines = _line_index(node)
        if not isinstance(raw, dict):
            raise ConfigError(str(source), "top level must be a mapping")
        if "config" in raw and "outputs" in raw:  # a manifest
            raw = raw["config"]
            lines = {}
    cfg = Config(_merge(DEFAULTS, raw))
    cfg.lines = lines
    for k, v in (overrides or {}).items():
        if v is not None:
            section, _, key = k.partition(".")
            if key:
                cfg[section][key] = v
            else:
                cfg[section] = v
    sub = subcommand or cfg.get("subcommand")
    if sub not in SUBCOMMANDS:
        raise ConfigError("subcommand", f"must be one of {SUBCOMMANDS}, got {sub!r}")
    cfg["subcommand"] = sub
    validate(cfg)
    return cfg


def _positive(cfg: Config, path: str, value, integer: bool = False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and value > 0
    if integer:
        ok = ok and isinstance(value, int)
    if not ok:
        raise cfg.error(path, f"must be a positive {'integer' if integer else 'number'}, got {value!r}")


def validate(cfg: Config) -> None:
    sub = cfg["subcommand"]
    fmt = cfg["output"]["format"]
    if fmt not in ("csv", "json", "both"):
        raise cfg.error("output.format", f"must be csv, json or both, got {fmt!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise cfg.error("seed", "must be a nonnegative integer")
    _positive(cfg, "K", cfg["K"], integer=True)
    if sub in ("exact", "scan", "lemmas"):
        cfg.chain()
    if sub == "exact":
        if cfg.grid("L") is None:
            raise cfg.error("grids.L", "exact runs need a window grid")
        if any(L < 1 for L in cfg.grid("L")):
            raise cfg.error("grids.L", "windows must be >= 1")
    if sub == "scan":
        fam = cfg["target"].get("family")
        if not isinstance(fam, dict) or "base" not in fam or "depths" not in fam:
            raise cfg.error("target.family", "scan runs need a family {base, depths}")
        parse_range(fam["depths"], "target.family.depths")
        if cfg.grid("L") is None:
            raise cfg.error("grids.L", "scan runs need a window grid")
        sch = cfg["schedule"]
        _positive(cfg, "schedule.t", sch["t"])
        if not 0 < sch["omega"] < 1:
            raise cfg.error("schedule.omega", "must lie in (0, 1)")
    if sub == "mc":
        mc = cfg["mc"]
        if cfg["system"]["map"] not in ("gauss", "doubling"):
            raise cfg.error("system.map", f"must be gauss or doubling, got {cfg['system']['map']!r}")
        _positive(cfg, "mc.samples", mc["samples"], integer=True)
        _positive(cfg, "mc.streams", mc["streams"], integer=True)
        if mc["N"] != "kac":
            _positive(cfg, "mc.N", mc["N"], integer=True)
    if sub == "lemmas":
        lem = cfg["lemmas"]
        which = lem["which"]
        if isinstance(which, str):
            which = lem["which"] = [which]
        for i, name in enumerate(which):
            if name not in LEMMAS:
                raise cfg.error(f"lemmas.which[{i}]", f"unknown lemma {name!r}; choose from {LEMMAS}")
        if lem["mode"] not in ("phi", "alpha"):
            raise cfg.error("lemmas.mode", "must be phi or alpha")
        for name in ("windows", "k", "n", "Delta", "r", "L"):
            if name in cfg["grids"]:
                cfg.grid(name)
    if sub == "dist":
        d = cfg["dist"]
        _positive(cfg, "dist.t", d["t"])
        th = d["theta"]
        if not isinstance(th, (int, float)) or not 0 <= th < 1:
            raise cfg.error(
                "dist.theta",
                f"must lie in [0, 1), got {th!r}; theta = 1 is degenerate under the geometric "
                "cluster convention lambda_j = (1 - theta) theta^(j-1)",
            )
        _positive(cfg, "dist.kmax", d["kmax"], integer=True)


def dump(cfg: Config) -> dict:
    """JSON-safe copy of the resolved configuration."""
    return json.loads(json.dumps({k: v for k, v in cfg.items()}))
