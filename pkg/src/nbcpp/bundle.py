"""Output directories: payload writers, resolved-config echo and the INCOMPLETE flag."""
from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from . import __version__

INCOMPLETE = "INCOMPLETE"


def _plain(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Bundle:
    """An output directory that stays flagged INCOMPLETE until ``finish``."""

    def __init__(self, root, subcommand: str, config: dict, config_hash: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.subcommand = subcommand
        self.config = config
        self.config_hash = config_hash
        self.payloads: list[str] = []
        self.started = time.time()
        (self.root / INCOMPLETE).write_text("run in progress or interrupted\n")
        self.write_json("config.json", {"subcommand": subcommand, "version": __version__,
                                        "config_hash": config_hash, "config": config},
                        payload=False)

    def path(self, name) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name, obj, payload: bool = True):
        with open(self.path(name), "w") as fh:
            json.dump(_plain(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if payload:
            self.payloads.append(name)

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.payloads.append(name)

    def _meta(self, **extra):
        return {"version": __version__, "config_hash": self.config_hash,
                "seed": self.config.get("seed"), "wall_time_s": round(time.time() - self.started, 3),
                "payloads": sorted(self.payloads), **extra}

    def finish(self, **extra):
        self.write_json("bundle.json", self._meta(status="complete", **extra), payload=False)
        (self.root / INCOMPLETE).unlink(missing_ok=True)

    def fail(self, message: str, **extra):
        self.write_json("bundle.json", self._meta(status="incomplete", error=message, **extra),
                        payload=False)
        (self.root / INCOMPLETE).write_text(message + "\n")
