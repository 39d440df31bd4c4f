"""Per-frame ring detection and the full-accumulator reference detector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import imaging
from .hough import (
    AccumulatorSlab, ConfigError, HoughConfig, PeakCandidate, hough_peaks,
    sigma_of_r, smoothing_weights,
)
from .refine import RingDetection, classify_and_fit, deduplicate
from .ridges import Ridges, detect_ridges


@dataclass(frozen=True)
class DetectorConfig:
    smoothing_sigma: float
    hough: HoughConfig
    curvature_threshold: float = 0.0
    annulus_halfwidth: float | None = None  # None: max(2, ceil(2 sigma(r)))
    dedupe: bool = True

    def __post_init__(self):
        if not self.smoothing_sigma > 0:
            raise ConfigError("smoothing_sigma must be positive")
        if self.curvature_threshold > 0:
            raise ConfigError("curvature_threshold must be <= 0")
        if self.annulus_halfwidth is not None and not self.annulus_halfwidth > 0:
            raise ConfigError("annulus_halfwidth must be positive")


@dataclass
class FrameAnalysis:
    ridges: Ridges
    peaks: list[PeakCandidate]
    detections: list[RingDetection]
    raw_levels: dict[int, np.ndarray] = field(default_factory=dict)


def frame_ridges(img, cfg: DetectorConfig) -> Ridges:
    curv = imaging.curvature(img, cfg.smoothing_sigma)
    return detect_ridges(curv, cfg.curvature_threshold)


def _finish(ridges, peaks, cfg: DetectorConfig) -> list[RingDetection]:
    dets = classify_and_fit(ridges, peaks, cfg.annulus_halfwidth, cfg.hough)
    return deduplicate(dets) if cfg.dedupe else dets


def analyse_frame(img, cfg: DetectorConfig, slab: AccumulatorSlab | None = None,
                  keep_levels: bool = False) -> FrameAnalysis:
    img = img if isinstance(img, imaging.GrayImage) else imaging.GrayImage(img)
    cfg.hough.check_frame(img.width, img.height)
    ridges = frame_ridges(img, cfg)
    levels: dict[int, np.ndarray] = {}
    hook = (lambda r, raw, norm: levels.__setitem__(r, raw.copy())) if keep_levels else None
    peaks = hough_peaks(ridges, cfg.hough, img.width, img.height, slab=slab, level_hook=hook)
    return FrameAnalysis(ridges, peaks, _finish(ridges, peaks, cfg), levels)


def detect_rings(img, cfg: DetectorConfig, slab: AccumulatorSlab | None = None) -> list[RingDetection]:
    return analyse_frame(img, cfg, slab).detections


class Detector:
    """Reusable detector holding one accumulator slab for a fixed frame size."""

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.slab: AccumulatorSlab | None = None

    def __call__(self, img) -> list[RingDetection]:
        img = img if isinstance(img, imaging.GrayImage) else imaging.GrayImage(img)
        if self.slab is None or (self.slab.width, self.slab.height) != (img.width, img.height):
            self.slab = AccumulatorSlab(img.width, img.height)
        return detect_rings(img, self.cfg, self.slab)


# ---------------------------------------------------------------------------
# reference implementation over the full (radius, y, x) accumulator


MAX_ORACLE_CELLS = 2_000_000_000


def oracle_votes(ridges: Ridges, cfg: HoughConfig, width: int, height: int):
    """Vote target triples (r, y, x), vectorized over radii."""
    r = np.arange(cfg.r_lo, cfg.r_hi + 1, dtype=np.int64)
    x = ridges.x.astype(np.float64)[:, None]
    y = ridges.y.astype(np.float64)[:, None]
    ox = r[None, :] * ridges.dx[:, None]
    oy = r[None, :] * ridges.dy[:, None]
    rr = np.broadcast_to(r[None, :], ox.shape)
    out = []
    for sign in (1.0, -1.0):
        cx = np.floor(x + sign * ox + 0.5).astype(np.int64)
        cy = np.floor(y + sign * oy + 0.5).astype(np.int64)
        ok = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        out.append((rr[ok], cy[ok], cx[ok]))
    return tuple(np.concatenate(parts) for parts in zip(*out))


def full_accumulator(ridges: Ridges, cfg: HoughConfig, width: int, height: int) -> np.ndarray:
    n_cells = cfg.n_levels * width * height
    if n_cells > MAX_ORACLE_CELLS:
        raise ConfigError(f"full accumulator of {n_cells} cells is too large")
    r, y, x = oracle_votes(ridges, cfg, width, height)
    raw = np.zeros((cfg.n_levels, height, width), np.int64)
    np.add.at(raw, (r - cfg.r_lo, y, x), 1)
    return raw


def normalized_space(raw: np.ndarray, cfg: HoughConfig) -> np.ndarray:
    """Gaussian-weighted level sums divided by r, kept only at hotspots."""
    n_lev, h, w = raw.shape
    norm = np.zeros(raw.shape, np.float64)
    for i in range(n_lev):
        hot = raw[i] > cfg.vote_threshold_raw
        if not hot.any():
            continue
        r = cfg.r_lo + i
        weights = smoothing_weights(sigma_of_r(r, cfg))
        rad = weights.shape[0] // 2
        padded = np.zeros((h + 2 * rad, w + 2 * rad), np.float64)
        padded[rad:rad + h, rad:rad + w] = raw[i]
        acc = np.zeros((h, w), np.float64)
        for oy in range(-rad, rad + 1):
            for ox in range(-rad, rad + 1):
                acc += weights[oy + rad, ox + rad] * padded[rad + oy:rad + oy + h, rad + ox:rad + ox + w]
        norm[i] = np.where(hot, acc / float(r), 0.0)
    return norm


def local_maxima(norm: np.ndarray, raw: np.ndarray, cfg: HoughConfig) -> list[PeakCandidate]:
    n_lev, h, w = norm.shape
    padded = np.full((n_lev + 2, h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1, 1:-1] = norm
    cand = (raw > cfg.vote_threshold_raw) & (norm >= cfg.score_threshold)
    # only radii inside the original range may be reported
    cand[0] = False
    cand[-1] = False
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                nb = padded[1 + dz:1 + dz + n_lev, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
                if (dz, dy, dx) < (0, 0, 0):
                    cand &= norm > nb
                else:
                    cand &= norm >= nb
    li, ys, xs = np.nonzero(cand)
    return [PeakCandidate(int(i + cfg.r_lo), int(y), int(x), float(norm[i, y, x]))
            for i, y, x in zip(li, ys, xs)]


def analyse_frame_oracle(img, cfg: DetectorConfig) -> FrameAnalysis:
    img = img if isinstance(img, imaging.GrayImage) else imaging.GrayImage(img)
    cfg.hough.check_frame(img.width, img.height)
    ridges = frame_ridges(img, cfg)
    raw = full_accumulator(ridges, cfg.hough, img.width, img.height)
    norm = normalized_space(raw, cfg.hough)
    peaks = local_maxima(norm, raw, cfg.hough)
    levels = {cfg.hough.r_lo + i: raw[i] for i in range(raw.shape[0])}
    return FrameAnalysis(ridges, peaks, _finish(ridges, peaks, cfg), levels)


def detect_rings_oracle(img, cfg: DetectorConfig) -> list[RingDetection]:
    return analyse_frame_oracle(img, cfg).detections


def synthetic_preset(r_min: int = 8, r_max: int = 45) -> DetectorConfig:
    """Settings tuned on the synthetic corpus (``scripts/robustness.py``).

    The negative curvature threshold drops the weak tangential ridges on the
    outer skirt of each ring; the lower score threshold keeps partially
    occluded rings inside clusters.
    """
    return DetectorConfig(
        smoothing_sigma=1.5,
        hough=HoughConfig(r_min, r_max, vote_threshold_norm=0.4),
        curvature_threshold=-0.025,
    )
