"""Directed ridge detection on the least principal curvature field."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .imaging import BORDER, CurvatureField


@dataclass
class Ridges:
    """Structure-of-arrays container of directed ridge pixels.

    Ordered row-major by (y, x). ``kappa`` is kept for debug dumps.
    """

    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    kappa: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def empty(cls) -> "Ridges":
        return cls(
            np.empty(0, np.int64), np.empty(0, np.int64),
            np.empty(0, np.float64), np.empty(0, np.float64), np.empty(0, np.float64),
        )

    @classmethod
    def from_points(cls, xy, directions, kappa=None) -> "Ridges":
        xy = np.asarray(xy, dtype=np.int64).reshape(-1, 2)
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 2)
        k = np.full(len(xy), -1.0) if kappa is None else np.asarray(kappa, np.float64)
        return cls(xy[:, 0].copy(), xy[:, 1].copy(), d[:, 0].copy(), d[:, 1].copy(), k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "dx", "dy", "kappa"])
            for row in zip(self.x, self.y, self.dx, self.dy, self.kappa):
                w.writerow([int(row[0]), int(row[1]), repr(float(row[2])),
                            repr(float(row[3])), repr(float(row[4]))])


@numba.njit(cache=True)
def _round_step(d):
    # nearest 8-connected offset for a unit component
    if d >= 0.5:
        return 1
    if d <= -0.5:
        return -1
    return 0


@numba.njit(cache=True)
def _beats(kp, idx_p, kn, idx_n):
    # p survives against neighbor n: strictly lower, or equal and earlier row-major
    if kp < kn:
        return True
    if kp == kn and idx_p < idx_n:
        return True
    return False


@numba.njit(cache=True)
def _detect_kernel(kappa, dir_x, dir_y, degenerate, threshold, border):
    h, w = kappa.shape
    cap = 1024
    xs = np.empty(cap, np.int64)
    ys = np.empty(cap, np.int64)
    n = 0
    for y in range(border, h - border):
        for x in range(border, w - border):
            kp = kappa[y, x]
            if not (kp < threshold) or degenerate[y, x]:
                continue
            sx = _round_step(dir_x[y, x])
            sy = _round_step(dir_y[y, x])
            idx = y * w + x
            ya = y + sy
            xa = x + sx
            yb = y - sy
            xb = x - sx
            if not _beats(kp, idx, kappa[ya, xa], ya * w + xa):
                continue
            if not _beats(kp, idx, kappa[yb, xb], yb * w + xb):
                continue
            if n == cap:
                cap *= 2
                nx = np.empty(cap, np.int64)
                ny = np.empty(cap, np.int64)
                nx[:n] = xs[:n]
                ny[:n] = ys[:n]
                xs = nx
                ys = ny
            xs[n] = x
            ys[n] = y
            n += 1
    return xs[:n], ys[:n]


def detect_ridges(curv: CurvatureField, curvature_threshold: float = 0.0) -> Ridges:
    """Pixels with kappa below ``curvature_threshold`` that are minimal along
    their principal direction.

    The comparison neighbors are the 8-connected pixels nearest to
    (x +- dx, y +- dy). A pixel tying with a neighbor survives only if it
    comes first in row-major order.
    """
    if curvature_threshold > 0:
        raise ValueError("curvature_threshold must be <= 0")
    kappa = np.ascontiguousarray(curv.kappa, dtype=np.float64)
    if min(kappa.shape) < 2 * BORDER + 1:
        return Ridges.empty()
    xs, ys = _detect_kernel(
        kappa,
        np.ascontiguousarray(curv.dir_x, dtype=np.float64),
        np.ascontiguousarray(curv.dir_y, dtype=np.float64),
        np.ascontiguousarray(curv.degenerate, dtype=np.bool_),
        float(curvature_threshold),
        BORDER,
    )
    return Ridges(
        xs, ys,
        curv.dir_x[ys, xs].astype(np.float64),
        curv.dir_y[ys, xs].astype(np.float64),
        kappa[ys, xs],
    )
