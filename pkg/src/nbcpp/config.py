"""Flat key-value run configuration: defaults < JSON file < command-line flags."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Callable


class ConfigError(ValueError):
    """Invalid or unknown configuration value; the message starts with the key."""


def _floats(v):
    if isinstance(v, str):
        v = [s for s in v.replace(";", ",").split(",") if s.strip()]
    if isinstance(v, (int, float)):
        v = [v]
    return [float(s) for s in v]


def _point(v):
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    return [int(s) for s in v]


def _points(v):
    # a single point "1,0,0" from the command line, or a list of points from a file
    if isinstance(v, str):
        return [_point(s) for s in v.split(";") if s.strip()]
    if v and all(isinstance(a, (int, float)) for a in v):
        return [_point(v)]
    return [_point(a) for a in v]


def _opt_float(v):
    if v is None or (isinstance(v, str) and v.lower() in ("none", "null", "auto")):
        return None
    return float(v)


def _int(v):
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"expected an integer, got {v}")
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    return int(v)


@dataclass(frozen=True)
class Field:
    parse: Callable[[Any], Any]
    default: Any
    help: str = ""
    choices: tuple | None = None
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    metavar: str | None = None


def positive(v):
    return v > 0


def nonneg(v):
    return v >= 0


COMMON = {
    "seed": Field(_int, 0, "master seed", check=nonneg, rule="must be >= 0"),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "rw": {
        "d": Field(_int, None, "lattice dimension", check=positive, rule="must be >= 1"),
        "lambda": Field(float, None, "infection rate", check=positive, rule="must be > 0"),
        "theta": Field(_floats, [], "resolvent parameters, comma separated", metavar="T1,T2"),
        "radius": Field(_int, 10, "l1 radius of the tables", check=nonneg, rule="must be >= 0"),
        "tol": Field(float, 1e-12, "quadrature tolerance", check=positive, rule="must be > 0"),
    },
    "simulate": {
        "d": Field(_int, None, "lattice dimension", check=positive, rule="must be >= 1"),
        "lambda": Field(float, None, "infection rate", check=positive, rule="must be > 0"),
        "L": Field(_int, 15, "torus side"),
        "t_end": Field(float, 10.0, "final time", check=nonneg, rule="must be >= 0"),
        "dt": Field(_opt_float, None, "observation spacing (default t_end/100)"),
        "replicas": Field(_int, 1, "number of replicas", check=positive, rule="must be >= 1"),
        "init": Field(str, "ones", "initial condition", choices=("ones", "equilibrium")),
        "burn_in": Field(_opt_float, None, "burn-in time (default adaptive)"),
        "observe": Field(_points, [[0]], "observed site(s) 'x1,..,xd'; ';' separates sites",
                         metavar="X1,..,XD"),
    },
    "moments": {
        "d": Field(_int, None, "lattice dimension", check=positive, rule="must be >= 1"),
        "lambda": Field(float, None, "infection rate", check=positive, rule="must be > 0"),
        "t": Field(_floats, [1.0], "time(s), comma separated", metavar="T1,T2"),
        "box_radius": Field(_int, 8, "l1 radius of the truncation box", check=positive,
                            rule="must be >= 1"),
        "x": Field(_points, [[0]], "pair offset(s) 'x1,..,xd'; ';' separates offsets",
                   metavar="X1,..,XD"),
        "kernel": Field(str, "auto", "pair space or its fiber-summed difference chain",
                        choices=("auto", "pair", "difference", "classes")),
    },
    "clt": {
        "d": Field(_int, None, "lattice dimension", check=positive, rule="must be >= 1"),
        "lambda": Field(float, None, "infection rate", check=positive, rule="must be > 0"),
        "L": Field(_int, 15, "torus side"),
        "N": Field(_floats, [25.0, 100.0, 400.0], "scaling parameters", metavar="N1,N2"),
        "times": Field(_floats, [0.5, 1.0], "grid times", metavar="T1,T2"),
        "replicas": Field(_int, 100, "number of replicas", check=positive, rule="must be >= 1"),
        "burn_in": Field(_opt_float, 20.0, "burn-in from all ones (none = adaptive)"),
        "origins": Field(_int, 10, "separated origins sampled per replica", check=positive,
                         rule="must be >= 1"),
        "resamples": Field(_int, 1000, "bootstrap resamples", check=positive, rule="must be >= 1"),
        "cache": Field(lambda v: None if v in (None, "") else str(v), None,
                       "directory for per-replica cache files"),
    },
}

REQUIRED = ("d", "lambda")


def schema(sub: str) -> dict[str, Field]:
    return {**SCHEMAS[sub], **COMMON}


def _convert(key, field_, value):
    try:
        v = field_.parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: invalid value {value!r} ({exc})") from None
    if field_.choices and v not in field_.choices:
        raise ConfigError(f"{key}: must be one of {', '.join(field_.choices)}, got {v!r}")
    if field_.check is not None and v is not None:
        vals = v if isinstance(v, list) else [v]
        for item in vals:
            if not field_.check(item):
                raise ConfigError(f"{key}: {field_.rule}, got {item!r}")
    return v


def resolve(sub: str, file_values: dict | None, flags: dict) -> dict:
    """Merge defaults, file values and flags; every key is validated."""
    fields = schema(sub)
    out = {k: f.default for k, f in fields.items()}
    for source in (file_values or {}), flags:
        for k, v in source.items():
            if k not in fields:
                raise ConfigError(f"{k}: unknown key for '{sub}'")
            out[k] = _convert(k, fields[k], v)
    for k in REQUIRED:
        if k in fields and out[k] is None:
            raise ConfigError(f"{k}: required")
    return out


def load_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    return doc


def digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
