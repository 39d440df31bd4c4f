"""Predictive frame-to-frame linking of particle positions.

Each open trajectory is extrapolated to the next frame with a
constant-acceleration model fitted to its last three samples (constant
velocity from two, static from one). Detections are assigned greedily in
order of increasing squared prediction error, within a gating radius.
Unmatched trajectories coast for up to ``memory`` frames before closing;
coasted positions are not stored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LinkConfig:
    max_displacement: float
    memory: int = 3
    min_length: int = 1

    def __post_init__(self):
        if not self.max_displacement > 0:
            raise ValueError("max_displacement must be positive")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if self.min_length < 1:
            raise ValueError("min_length must be >= 1")


@dataclass
class Trajectory:
    id: int
    frames: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    positions: list[np.ndarray] = field(default_factory=list)
    sources: list[int] = field(default_factory=list)  # detection index within its frame
    gap_count: int = 0

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.times, np.float64)

    @property
    def xyz(self) -> np.ndarray:
        return np.vstack(self.positions) if self.positions else np.empty((0, 0))

    def predict(self, t: float) -> np.ndarray:
        n = len(self.times)
        p = self.positions
        if n == 1:
            return p[-1]
        if n == 2:
            t1, t2 = self.times[-2:]
            return p[-1] + (p[-1] - p[-2]) * ((t - t2) / (t2 - t1))
        t0, t1, t2 = self.times[-3:]
        # Lagrange extrapolation of the quadratic through the last three samples
        l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
        l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
        l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
        return l0 * p[-3] + l1 * p[-2] + l2 * p[-1]


def link_frames(frames, cfg: LinkConfig, times=None) -> list[Trajectory]:
    """Link per-frame position lists into trajectories.

    ``frames[i]`` is an (n_i, d) array of positions observed at frame i
    (time ``times[i]``, default i). Trajectories shorter than
    ``cfg.min_length`` samples are discarded. The result is ordered by
    trajectory id, i.e. by first appearance.
    """
    if times is None:
        times = np.arange(len(frames), dtype=np.float64)
    times = np.asarray(times, np.float64)
    if len(times) != len(frames):
        raise ValueError("times and frames differ in length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame times must be strictly increasing")

    gate2 = cfg.max_displacement ** 2
    active: list[Trajectory] = []
    done: list[Trajectory] = []
    next_id = 0

    for fi, (t, pts) in enumerate(zip(times, frames)):
        pts = np.asarray(pts, np.float64)
        if pts.size == 0:
            pts = np.empty((0, 1))
        elif pts.ndim == 1:
            pts = pts.reshape(1, -1)

        # close trajectories that exceeded their memory
        still = []
        for tr in active:
            if fi - tr.frames[-1] - 1 >= cfg.memory + 1:
                done.append(tr)
            else:
                still.append(tr)
        active = still

        pairs = []
        if active and len(pts):
            pred = np.vstack([tr.predict(t) for tr in active])
            cost = ((pred[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            ti, di = np.nonzero(cost <= gate2)
            pairs = sorted(zip(cost[ti, di], [active[k].id for k in ti], ti, di))
        taken_t, taken_d = set(), set()
        for _, _, k, j in pairs:
            if k in taken_t or j in taken_d:
                continue
            taken_t.add(k)
            taken_d.add(j)
            tr = active[k]
            tr.gap_count += fi - tr.frames[-1] - 1
            tr.frames.append(fi)
            tr.times.append(float(t))
            tr.positions.append(pts[j].copy())
            tr.sources.append(int(j))
        for j in range(len(pts)):
            if j not in taken_d:
                tr = Trajectory(next_id, [fi], [float(t)], [pts[j].copy()], [j])
                next_id += 1
                active.append(tr)

    done.extend(active)
    done.sort(key=lambda tr: tr.id)
    return [tr for tr in done if len(tr) >= cfg.min_length]


def read_detections_csv(path):
    """Read ``frame,x_um,y_um,z_um`` rows into per-frame arrays.

    Returns (frame_numbers, list of (n, 3) arrays) with every frame between
    the first and last present, empty where no detection was recorded.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"frame", "x_um", "y_um", "z_um"}
        if not need <= set(reader.fieldnames or ()):
            raise ValueError(f"{path}: expected columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((int(row["frame"]), float(row["x_um"]), float(row["y_um"]), float(row["z_um"])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        return np.empty(0, np.int64), []
    arr = np.array(rows)
    f = arr[:, 0].astype(np.int64)
    frame_ids = np.arange(f.min(), f.max() + 1)
    frames = [arr[f == k, 1:4] for k in frame_ids]
    return frame_ids, frames


def write_trajectories_csv(path, trajectories, frame_ids=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "frame", "x", "y", "z"])
        for tr in trajectories:
            for fi, p in zip(tr.frames, tr.positions):
                frame = int(frame_ids[fi]) if frame_ids is not None else fi
                w.writerow([tr.id, frame] + [repr(float(v)) for v in p[:3]])


def read_trajectories_csv(path) -> list[Trajectory]:
    by_id: dict[int, Trajectory] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                tid = int(row["traj_id"])
                frame = int(row["frame"])
                pos = np.array([float(row["x"]), float(row["y"]), float(row["z"])])
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            tr = by_id.setdefault(tid, Trajectory(tid))
            tr.frames.append(frame)
            tr.times.append(float(frame))
            tr.positions.append(pos)
    return [by_id[k] for k in sorted(by_id)]
