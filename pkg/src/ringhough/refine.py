"""Annulus classification of ridge pixels and algebraic circle fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .hough import HoughConfig, PeakCandidate, sigma_of_r
from .ridges import Ridges

log = logging.getLogger(__name__)


class SingularFit(ValueError):
    pass


@dataclass(frozen=True)
class RingDetection:
    cx: float
    cy: float
    r: float
    score: float
    inliers: int
    rms_residual: float


def default_halfwidth(r: float, cfg: HoughConfig) -> float:
    return max(2.0, math.ceil(2.0 * sigma_of_r(r, cfg)))


def kasa_fit(x, y) -> tuple[float, float, float]:
    """Algebraic least-squares circle: minimize sum (x^2 + y^2 + D x + E y + F)^2.

    Coordinates are centered on their mean before solving; the shift is
    added back to the center afterwards.
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if len(x) < 3:
        raise SingularFit("need at least 3 points")
    mx, my = x.mean(), y.mean()
    u, v = x - mx, y - my
    a = np.column_stack([u, v, np.ones_like(u)])
    b = -(u * u + v * v)
    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3 or sv[-1] <= 1e-10 * sv[0]:
        raise SingularFit("collinear or coincident points")
    d, e, f = sol
    cu, cv = -d / 2.0, -e / 2.0
    r2 = cu * cu + cv * cv - f
    if not r2 > 0:
        raise SingularFit("non-positive squared radius")
    return float(cu + mx), float(cv + my), float(math.sqrt(r2))


def rms_residual(x, y, cx, cy, r) -> float:
    d = np.hypot(np.asarray(x, np.float64) - cx, np.asarray(y, np.float64) - cy) - r
    return float(np.sqrt(np.mean(d * d)))


def annulus_members(ridges: Ridges, peak: PeakCandidate, halfwidth: float) -> np.ndarray:
    d = np.hypot(ridges.x - peak.cx, ridges.y - peak.cy)
    return np.flatnonzero(np.abs(d - peak.r) <= halfwidth)


def classify_and_fit(ridges: Ridges, peaks, annulus_halfwidth=None,
                     cfg: HoughConfig | None = None) -> list[RingDetection]:
    """Fit one circle per peak to the ridge pixels inside its annulus.

    ``annulus_halfwidth`` may be a number or None; None uses
    ``max(2, ceil(2 * sigma(r)))`` per peak (``cfg`` required then).
    Membership is non-exclusive. Peaks with fewer than 3 inliers, or whose
    inliers are collinear, are dropped.
    """
    if annulus_halfwidth is not None and not annulus_halfwidth > 0:
        raise ValueError("annulus_halfwidth must be positive")
    if annulus_halfwidth is None and cfg is None:
        raise ValueError("cfg is needed for the default annulus width")
    out = []
    for peak in peaks:
        hw = annulus_halfwidth if annulus_halfwidth is not None else default_halfwidth(peak.r, cfg)
        idx = annulus_members(ridges, peak, hw)
        if len(idx) < 3:
            continue
        x = ridges.x[idx]
        y = ridges.y[idx]
        try:
            cx, cy, r = kasa_fit(x, y)
        except SingularFit as exc:
            log.debug("dropping peak %s: %s", peak, exc)
            continue
        out.append(RingDetection(cx, cy, r, peak.score, len(idx), rms_residual(x, y, cx, cy, r)))
    return out


def deduplicate(dets: list[RingDetection], center_tol: float = 2.0,
                radius_tol: float = 2.0) -> list[RingDetection]:
    """Merge near-identical detections, keeping the higher score.

    Ties in score keep the earlier detection. Survivors keep input order.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[int] = []
    for i in order:
        d = dets[i]
        if any(math.hypot(d.cx - dets[k].cx, d.cy - dets[k].cy) < center_tol
               and abs(d.r - dets[k].r) < radius_tol for k in kept):
            continue
        kept.append(i)
    return [dets[i] for i in sorted(kept)]
