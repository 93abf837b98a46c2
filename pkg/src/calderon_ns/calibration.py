"""Calibration files: fitted smallness constants tied to a grid.

A calibration file is JSON holding the grid description, its hash and one
smallness entry per Kato pair ``(p, delta)``. Entries are measured by
``calibrate_smallness`` on a fixed seeded datum shape, so the file is a
deterministic function of the grid, the pairs, the horizon and the seed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mild import MildConfig, SmallnessCalibration, calibrate_smallness
from .spectral import Grid3, random_solenoidal
from .splitting import derive_params


class CalibrationError(ValueError):
    pass


@dataclass
class CalibrationSet:
    grid: dict
    grid_hash: str
    horizon: float
    seed: int
    entries: list = field(default_factory=list)   # of SmallnessCalibration

    def to_json(self) -> dict:
        return {"grid": self.grid, "grid_hash": self.grid_hash, "horizon": self.horizon,
                "seed": self.seed, "entries": [e.to_json() for e in self.entries]}

    def calibration_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def lookup(self, p: float, delta: float) -> SmallnessCalibration:
        for e in self.entries:
            if math.isclose(e.p, p, rel_tol=1e-9) and math.isclose(e.delta, delta, rel_tol=1e-9):
                return e
        raise CalibrationError(f"no smallness entry for (p, delta) = ({p:.6g}, {delta:.6g})")

    def check_grid(self, grid: Grid3):
        if grid.grid_hash() != self.grid_hash:
            raise CalibrationError("calibration was measured on a different grid")

    def save(self, path) -> Path:
        path = Path(path)
        payload = self.to_json()
        payload["calibration_hash"] = self.calibration_hash()
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def load_calibration(path) -> CalibrationSet:
    path = Path(path)
    if not path.exists():
        raise CalibrationError(f"calibration file {path} does not exist")
    try:
        data = json.loads(path.read_text())
        entries = [SmallnessCalibration(**e) for e in data["entries"]]
        out = CalibrationSet(data["grid"], data["grid_hash"], float(data["horizon"]),
                             int(data["seed"]), entries)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CalibrationError(f"malformed calibration file {path}: {exc}") from exc
    stored = data.get("calibration_hash")
    if stored is not None and stored != out.calibration_hash():
        raise CalibrationError("calibration hash does not match the file contents")
    return out


def calibration_shape(grid: Grid3, seed: int):
    """The fixed datum shape whose convergence threshold defines ``c1``."""
    return random_solenoidal(grid, np.random.default_rng(seed), kmax=4)


def run_calibration(grid: Grid3, qs_pairs, horizon: float, seed: int = 0, iters: int = 3,
                    base: MildConfig | None = None) -> CalibrationSet:
    """Measure one smallness entry per distinct Kato pair of the given ``(q, s)`` pairs."""
    base = base or MildConfig()
    shape = calibration_shape(grid, seed)
    out = CalibrationSet(grid.describe(), grid.grid_hash(), float(horizon), int(seed))
    seen = set()
    for q, s in qs_pairs:
        pr = derive_params(q, s)
        key = (float(pr.p), float(pr.delta))
        if key in seen:
            continue
        seen.add(key)
        cfg = MildConfig(horizon=horizon, steps_per_decade=base.steps_per_decade,
                         quad_nodes=base.quad_nodes, max_iters=base.max_iters,
                         residual_tol=base.residual_tol, p=key[0], delta=key[1], t_min=base.t_min)
        out.entries.append(calibrate_smallness(shape, cfg, iters=iters))
    return out
