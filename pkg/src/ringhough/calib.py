"""Radius to axial-distance calibration with a quadratic r(dz) model."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

REFRACTIVE_RATIO = 1.58
VALID_R_MARGIN = 2.0


class CalibrationError(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationCurve:
    """r(dz) = a*dz^2 + b*dz + c, inverted on one monotonic branch."""

    a: float
    b: float
    c: float
    refractive_ratio: float = REFRACTIVE_RATIO
    valid_r: tuple[float, float] = (-math.inf, math.inf)
    rmse_z: float = float("nan")
    branch: int = 1  # sign of dr/d(dz) on the fitted domain

    def radius(self, dz):
        dz = np.asarray(dz, np.float64)
        return (self.a * dz + self.b) * dz + self.c

    def slope(self, dz):
        return 2.0 * self.a * np.asarray(dz, np.float64) + self.b

    def invert(self, r):
        """Objective-side dz for radius r (no refractive scaling, no range check)."""
        r = np.asarray(r, np.float64)
        a, b = self.a, self.b
        num = r - self.c
        if a == 0.0:
            return num / b
        disc = np.sqrt(np.maximum(b * b + 4.0 * a * num, 0.0))
        s = float(self.branch)
        # root where 2a*dz + b = s*sqrt(disc); both forms below are free of
        # cancellation when chosen by the sign of b
        if s * b >= 0:
            out = 2.0 * num / (b + s * disc)
        else:
            out = (-b + s * disc) / (2.0 * a)
        return out

    def to_json(self) -> str:
        d = asdict(self)
        d["valid_r"] = list(self.valid_r)
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CalibrationCurve":
        d = json.loads(text)
        d["valid_r"] = tuple(d["valid_r"])
        return cls(**d)


def _quadfit(z, r):
    z = np.asarray(z, np.float64)
    r = np.asarray(r, np.float64)
    if len(z) < 3 or np.ptp(z) == 0:
        raise CalibrationError("degenerate calibration data")
    a, b, c = np.polyfit(z, r, 2)
    return float(a), float(b), float(c)


def _larger_root(a, b, c):
    if a == 0.0:
        if b == 0.0:
            raise CalibrationError("constant fit has no root")
        return -c / b
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise CalibrationError("fitted quadratic has complex roots")
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b))
    roots = [q / a]
    if q != 0.0:
        roots.append(c / q)
    else:
        roots.append(q / a)
    return max(roots)


def align_tracer(samples) -> np.ndarray:
    """Shift a tracer's dz values by the larger root of its quadratic fit.

    ``samples`` is an (n, 2) array of (dz_raw, r). Returns (dz_aligned, r).
    """
    s = np.asarray(samples, np.float64).reshape(-1, 2)
    if len(s) < 4:
        raise CalibrationError("need at least 4 samples per tracer")
    a, b, c = _quadfit(s[:, 0], s[:, 1])
    shift = _larger_root(a, b, c)
    out = s.copy()
    out[:, 0] -= shift
    return out


def fit_joint(samples, refractive_ratio: float = REFRACTIVE_RATIO) -> CalibrationCurve:
    """Least-squares quadratic through all aligned (dz, r) samples."""
    s = np.asarray(samples, np.float64).reshape(-1, 2)
    if len(s) < 10:
        raise CalibrationError("need at least 10 pooled samples")
    z, r = s[:, 0], s[:, 1]
    a, b, c = _quadfit(z, r)
    zlo, zhi = float(z.min()), float(z.max())
    if a != 0.0:
        vertex = -b / (2.0 * a)
        if zlo < vertex < zhi:
            raise CalibrationError(f"fit is not monotonic on [{zlo}, {zhi}] (vertex at {vertex})")
    mid_slope = 2.0 * a * 0.5 * (zlo + zhi) + b
    if mid_slope == 0:
        raise CalibrationError("flat calibration curve")
    branch = 1 if mid_slope > 0 else -1

    r_lo, r_hi = float(r.min()) - VALID_R_MARGIN, float(r.max()) + VALID_R_MARGIN
    if a != 0.0:
        # never extend past the vertex radius into the other branch
        r_vertex = c - b * b / (4.0 * a)
        if a > 0:
            r_lo = max(r_lo, r_vertex)
        else:
            r_hi = min(r_hi, r_vertex)
    curve = CalibrationCurve(a, b, c, refractive_ratio, (r_lo, r_hi), float("nan"), branch)
    rmse = float(np.sqrt(np.mean((z - curve.invert(r)) ** 2)))
    return CalibrationCurve(a, b, c, refractive_ratio, (r_lo, r_hi), rmse, branch)


def radius_to_z(r, curve: CalibrationCurve):
    """Physical axial distance (objective dz times the refractive ratio)."""
    arr = np.asarray(r, np.float64)
    lo, hi = curve.valid_r
    if np.any((arr < lo) | (arr > hi)) or not np.all(np.isfinite(arr)):
        raise RangeError(f"radius outside calibrated range [{lo}, {hi}]")
    z = curve.invert(arr) * curve.refractive_ratio
    return float(z) if np.ndim(z) == 0 else z


def calibrate(tracers: dict, refractive_ratio: float = REFRACTIVE_RATIO) -> tuple[CalibrationCurve, list]:
    """Align every tracer, pool them and fit. Returns the curve and the
    ids of tracers excluded because their alignment failed."""
    pooled = []
    excluded = []
    for tid, samples in tracers.items():
        try:
            pooled.append(align_tracer(samples))
        except CalibrationError as exc:
            log.warning("tracer %s excluded: %s", tid, exc)
            excluded.append(tid)
    if not pooled:
        raise CalibrationError("no usable tracers")
    return fit_joint(np.vstack(pooled), refractive_ratio), excluded


def read_calibration_csv(path) -> dict:
    tracers: dict = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"tracer_id", "dz_um", "r_px"} - set(reader.fieldnames or ())
        if missing:
            raise CalibrationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tracers[row["tracer_id"]].append((float(row["dz_um"]), float(row["r_px"])))
            except ValueError as exc:
                raise CalibrationError(f"{path}:{lineno}: {exc}") from exc
    return {k: np.array(v) for k, v in tracers.items()}
