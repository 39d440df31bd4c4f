"""Streamed directed circle Hough transform.

Votes are integer codes ``((r - r_lo) * H + y) * W + x`` with ``r_lo = r_min - 1``,
so a full sort orders them by radius, then row, then column. The parameter
space is never held in full: a slab of three equi-radius levels (indexed
``r % 3``) is populated one radius at a time, hotspots are smoothed and
normalized by 1/r, the middle level is searched for 3x3x3 maxima, and the
bottom level is cleared through its registry of touched cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .ridges import Ridges

TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HoughConfig:
    r_min: int
    r_max: int
    vote_threshold_raw: int = 3
    vote_threshold_norm: float = 0.5
    sigma_slope: float = 0.05
    sigma_offset: float = 0.25

    def __post_init__(self):
        if int(self.r_min) != self.r_min or int(self.r_max) != self.r_max:
            raise ConfigError("radii must be integers")
        if not 2 <= self.r_min < self.r_max:
            raise ConfigError(f"need 2 <= r_min < r_max, got {self.r_min}, {self.r_max}")
        if self.vote_threshold_raw < 1:
            raise ConfigError("vote_threshold_raw must be >= 1")
        if not self.vote_threshold_norm > 0:
            raise ConfigError("vote_threshold_norm must be positive")
        if self.sigma_slope < 0 or self.sigma_offset < 0 or self.sigma_of(self.r_min) <= 0:
            raise ConfigError("sigma law must be positive over the radii range")

    @property
    def r_lo(self) -> int:
        return self.r_min - 1

    @property
    def r_hi(self) -> int:
        return self.r_max + 1

    @property
    def n_levels(self) -> int:
        return self.r_hi - self.r_lo + 1

    @property
    def score_threshold(self) -> float:
        return self.vote_threshold_norm * TWO_PI

    def sigma_of(self, r: float) -> float:
        return self.sigma_slope * r + self.sigma_offset

    def check_frame(self, width: int, height: int) -> None:
        if self.r_max >= min(width, height):
            raise ConfigError(f"r_max={self.r_max} must be below min(width, height)={min(width, height)}")


def sigma_of_r(r: float, cfg: HoughConfig) -> float:
    """Width of the Gaussian weights used to smooth equi-radius level ``r``."""
    return cfg.sigma_slope * r + cfg.sigma_offset


def smoothing_weights(sigma: float) -> np.ndarray:
    """Unnormalized 2D Gaussian weights (peak 1), truncated at ceil(3*sigma)."""
    rad = int(math.ceil(3.0 * sigma))
    d = np.arange(-rad, rad + 1, dtype=np.float64)
    d2 = d[:, None] ** 2 + d[None, :] ** 2
    return np.exp(-0.5 * (d2 / (sigma * sigma)))


@dataclass(frozen=True, order=True)
class PeakCandidate:
    r: int
    cy: int
    cx: int
    score: float = field(compare=False)


# ---------------------------------------------------------------------------
# votes


def encode(r, y, x, r_lo: int, width: int, height: int):
    return ((np.asarray(r, np.int64) - r_lo) * height + y) * width + x


def decode(code, r_lo: int, width: int, height: int):
    code = np.asarray(code, np.int64)
    x = code % width
    rest = code // width
    y = rest % height
    r = rest // height + r_lo
    return r, y, x


@numba.njit(cache=True)
def _votes_kernel(xs, ys, dxs, dys, r_lo, r_hi, width, height):
    n = xs.shape[0]
    out = np.empty(n * (r_hi - r_lo + 1) * 2, np.int64)
    k = 0
    for i in range(n):
        x = xs[i]
        y = ys[i]
        dx = dxs[i]
        dy = dys[i]
        for r in range(r_lo, r_hi + 1):
            ox = r * dx
            oy = r * dy
            base = (r - r_lo) * height
            cx = int(math.floor(x + ox + 0.5))
            cy = int(math.floor(y + oy + 0.5))
            if 0 <= cx < width and 0 <= cy < height:
                out[k] = (base + cy) * width + cx
                k += 1
            cx = int(math.floor(x - ox + 0.5))
            cy = int(math.floor(y - oy + 0.5))
            if 0 <= cx < width and 0 <= cy < height:
                out[k] = (base + cy) * width + cx
                k += 1
    return out[:k]


def collect_votes(ridges: Ridges, cfg: HoughConfig, width: int, height: int) -> np.ndarray:
    """Encoded votes of every ridge for both senses of its direction, over
    the extended radii range [r_min - 1, r_max + 1]."""
    if len(ridges) == 0:
        return np.empty(0, np.int64)
    return _votes_kernel(
        np.ascontiguousarray(ridges.x, np.int64), np.ascontiguousarray(ridges.y, np.int64),
        np.ascontiguousarray(ridges.dx, np.float64), np.ascontiguousarray(ridges.dy, np.float64),
        cfg.r_lo, cfg.r_hi, int(width), int(height),
    )


def sort_votes(votes) -> np.ndarray:
    return np.sort(np.asarray(votes, dtype=np.int64), kind="stable")


# ---------------------------------------------------------------------------
# slab


class AccumulatorSlab:
    """Three rotating equi-radius levels of raw counters and normalized values.

    Each level keeps a registry of touched cells (flat ``y * W + x``) and a
    registry of hotspots, so clearing a level costs its occupancy.
    """

    def __init__(self, width: int, height: int):
        self.width = int(width)
        self.height = int(height)
        n = self.width * self.height
        self.raw = np.zeros((3, self.height, self.width), np.int32)
        self.norm = np.zeros((3, self.height, self.width), np.float64)
        self.modified = np.empty((3, n), np.int32)
        self.n_modified = np.zeros(3, np.int64)
        self.hotspots = np.empty((3, n), np.int32)
        self.n_hotspots = np.zeros(3, np.int64)
        self.undo_touched = 0
        self.smoothing_log: list[tuple[int, float, int]] = []

    @property
    def accumulator_cells(self) -> int:
        return self.raw.size + self.norm.size

    @property
    def nbytes(self) -> int:
        return (self.raw.nbytes + self.norm.nbytes + self.modified.nbytes
                + self.hotspots.nbytes)

    def is_clear(self) -> bool:
        return (not self.raw.any() and not self.norm.any()
                and not self.n_modified.any() and not self.n_hotspots.any())

    def level_hotspots(self, level: int) -> np.ndarray:
        return self.hotspots[level, : self.n_hotspots[level]]

    def level_modified(self, level: int) -> np.ndarray:
        return self.modified[level, : self.n_modified[level]]


@numba.njit(cache=True)
def _populate(raw, modified, n_modified, hotspots, n_hotspots, lev, flat, threshold):
    w = raw.shape[2]
    n = flat.shape[0]
    i = 0
    while i < n:
        c = flat[i]
        j = i + 1
        while j < n and flat[j] == c:
            j += 1
        y = c // w
        x = c - y * w
        before = raw[lev, y, x]
        if before == 0:
            modified[lev, n_modified[lev]] = c
            n_modified[lev] += 1
        after = before + (j - i)
        raw[lev, y, x] = after
        if after > threshold and before <= threshold:
            hotspots[lev, n_hotspots[lev]] = c
            n_hotspots[lev] += 1
        i = j


@numba.njit(cache=True)
def _map_hotspots(raw, norm, hotspots, n_hot, lev, weights, r):
    h = raw.shape[1]
    w = raw.shape[2]
    rad = weights.shape[0] // 2
    for k in range(n_hot):
        c = hotspots[lev, k]
        y = c // w
        x = c - y * w
        s = 0.0
        for oy in range(-rad, rad + 1):
            yy = y + oy
            if yy < 0 or yy >= h:
                continue
            for ox in range(-rad, rad + 1):
                xx = x + ox
                if xx < 0 or xx >= w:
                    continue
                s += weights[oy + rad, ox + rad] * raw[lev, yy, xx]
        norm[lev, y, x] = s / r


@numba.njit(cache=True)
def _find_maxima(norm, hotspots, n_hot, lev_bot, lev_mid, lev_top, threshold):
    h = norm.shape[1]
    w = norm.shape[2]
    ys = np.empty(n_hot, np.int64)
    xs = np.empty(n_hot, np.int64)
    vals = np.empty(n_hot, np.float64)
    m = 0
    for k in range(n_hot):
        c = hotspots[lev_mid, k]
        y = c // w
        x = c - y * w
        v = norm[lev_mid, y, x]
        if not v >= threshold:
            continue
        is_max = True
        for dz in range(-1, 2):
            if dz == -1:
                lev = lev_bot
            elif dz == 0:
                lev = lev_mid
            else:
                lev = lev_top
            for dy in range(-1, 2):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for dx in range(-1, 2):
                    if dz == 0 and dy == 0 and dx == 0:
                        continue
                    xx = x + dx
                    if xx < 0 or xx >= w:
                        continue
                    u = norm[lev, yy, xx]
                    if u > v:
                        is_max = False
                    elif u == v:
                        # neighbor earlier in (r, y, x) order wins the tie
                        if dz < 0 or (dz == 0 and (dy < 0 or (dy == 0 and dx < 0))):
                            is_max = False
                    if not is_max:
                        break
                if not is_max:
                    break
            if not is_max:
                break
        if is_max:
            ys[m] = y
            xs[m] = x
            vals[m] = v
            m += 1
    return ys[:m], xs[:m], vals[:m]


@numba.njit(cache=True)
def _undo(raw, norm, modified, n_modified, n_hotspots, lev):
    w = raw.shape[2]
    n = n_modified[lev]
    for k in range(n):
        c = modified[lev, k]
        y = c // w
        x = c - y * w
        raw[lev, y, x] = 0
        norm[lev, y, x] = 0.0
    n_modified[lev] = 0
    n_hotspots[lev] = 0
    return n


def undo_level(slab: AccumulatorSlab, level_index: int) -> int:
    """Zero the registered cells of one level and clear its registries.

    Returns the number of cells touched.
    """
    n = _undo(slab.raw, slab.norm, slab.modified, slab.n_modified, slab.n_hotspots, int(level_index))
    slab.undo_touched += int(n)
    return int(n)


def stream_levels(sorted_votes, cfg: HoughConfig, width: int, height: int,
                  slab: AccumulatorSlab, level_hook=None) -> list[PeakCandidate]:
    """Populate and search the parameter space one radius level at a time.

    ``level_hook(r, raw_level, norm_level)``, if given, is called once per
    radius right after the level is populated and its hotspots are
    normalized; the arrays are live views into the slab.
    """
    if slab.width != width or slab.height != height:
        raise ConfigError(f"slab is {slab.width}x{slab.height}, frame is {width}x{height}")
    votes = np.asarray(sorted_votes, np.int64)
    plane = width * height
    r_lo, r_hi = cfg.r_lo, cfg.r_hi
    bounds = np.searchsorted(votes, np.arange(cfg.n_levels + 1, dtype=np.int64) * plane)
    threshold = cfg.score_threshold
    peaks: list[PeakCandidate] = []
    slab.smoothing_log = []

    for r in range(r_lo, r_hi + 1):
        top = r % 3
        i0, i1 = bounds[r - r_lo], bounds[r - r_lo + 1]
        if i1 > i0:
            flat = (votes[i0:i1] - (r - r_lo) * plane).astype(np.int32)
            _populate(slab.raw, slab.modified, slab.n_modified, slab.hotspots,
                      slab.n_hotspots, top, flat, cfg.vote_threshold_raw)
        sigma = sigma_of_r(r, cfg)
        weights = smoothing_weights(sigma)
        slab.smoothing_log.append((r, sigma, weights.shape[0] // 2))
        if slab.n_hotspots[top]:
            _map_hotspots(slab.raw, slab.norm, slab.hotspots, slab.n_hotspots[top],
                          top, weights, float(r))
        if level_hook is not None:
            level_hook(r, slab.raw[top], slab.norm[top])

        mid_r = r - 1
        if cfg.r_min <= mid_r <= cfg.r_max:
            mid = mid_r % 3
            if slab.n_hotspots[mid]:
                ys, xs, vals = _find_maxima(slab.norm, slab.hotspots, slab.n_hotspots[mid],
                                            (r - 2) % 3, mid, top, threshold)
                peaks.extend(PeakCandidate(mid_r, int(y), int(x), float(v))
                             for y, x, v in zip(ys, xs, vals))
        if r - 2 >= r_lo:
            undo_level(slab, (r - 2) % 3)

    # drain: the last two levels are no longer needed
    for r in (r_hi - 1, r_hi):
        undo_level(slab, r % 3)
    return peaks


def hough_peaks(ridges: Ridges, cfg: HoughConfig, width: int, height: int,
                slab: AccumulatorSlab | None = None, level_hook=None) -> list[PeakCandidate]:
    cfg.check_frame(width, height)
    if slab is None:
        slab = AccumulatorSlab(width, height)
    votes = sort_votes(collect_votes(ridges, cfg, width, height))
    return stream_levels(votes, cfg, width, height, slab, level_hook=level_hook)
