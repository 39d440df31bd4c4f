"""Producer/consumer frame pool for batch detection.

The calling process is the producer: it decodes frames and feeds a bounded
task queue. Each consumer process owns one :class:`~ringhough.pipeline.Detector`
(and therefore one accumulator slab). Results are reordered by frame index,
so the output does not depend on the number of workers.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import os
import queue
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .pipeline import Detector, DetectorConfig
from .refine import RingDetection

log = logging.getLogger(__name__)

DETECTION_COLUMNS = ("frame", "cx", "cy", "r", "score", "inliers", "rms_residual")


@dataclass
class RunReport:
    frames_total: int = 0
    frames_done: int = 0
    skipped: list[dict] = field(default_factory=list)
    wall_seconds: float = 0.0
    workers: int = 1
    per_worker: dict = field(default_factory=dict)
    slab_bytes: int = 0
    slab_cells: int = 0

    @property
    def fps(self) -> float:
        return self.frames_done / self.wall_seconds if self.wall_seconds > 0 else 0.0

    def as_dict(self) -> dict:
        return {
            "frames_total": self.frames_total,
            "frames_done": self.frames_done,
            "frames_skipped": len(self.skipped),
            "skipped": self.skipped,
            "wall_seconds": self.wall_seconds,
            "frames_per_second": self.fps,
            "workers": self.workers,
            "per_worker": self.per_worker,
            "peak_slab_bytes": self.slab_bytes,
            "slab_accumulator_cells": self.slab_cells,
        }


def load_frame(path) -> np.ndarray:
    """Decode to a float image in [0, 1]."""
    return imaging.load_image(path).data


def _worker(wid: int, cfg: DetectorConfig, tasks, results, fail_on=None):
    det = Detector(cfg)
    busy = 0.0
    n = 0
    while True:
        item = tasks.get()
        if item is None:
            break
        idx, frame = item
        results.put(("start", wid, idx))
        if fail_on is not None and idx in fail_on:
            os._exit(3)  # simulated crash, used by tests
        t0 = time.perf_counter()
        try:
            dets = det(frame)
        except Exception as exc:  # noqa: BLE001 - reported per frame
            results.put(("error", wid, idx, f"{type(exc).__name__}: {exc}"))
            continue
        dt = time.perf_counter() - t0
        busy += dt
        n += 1
        slab = det.slab
        results.put(("done", wid, idx, dets, dt, slab.nbytes, slab.accumulator_cells))
    results.put(("exit", wid, n, busy))


def _frames_in_process(frames, cfg, report):
    det = Detector(cfg)
    out = {}
    busy = 0.0
    for idx, item in frames:
        if isinstance(item, Exception):
            report.skipped.append({"frame": idx, "reason": str(item)})
            continue
        t0 = time.perf_counter()
        try:
            out[idx] = det(item)
        except Exception as exc:  # noqa: BLE001
            report.skipped.append({"frame": idx, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        busy += time.perf_counter() - t0
        report.slab_bytes = max(report.slab_bytes, det.slab.nbytes)
        report.slab_cells = det.slab.accumulator_cells
    report.per_worker["0"] = {"frames": len(out), "busy_seconds": busy,
                              "frames_per_second": len(out) / busy if busy else 0.0}
    return out


def run_frames(frames, cfg: DetectorConfig, workers: int = 1, in_process: bool = False,
               _fail_on=None) -> tuple[dict[int, list[RingDetection]], RunReport]:
    """Detect rings in an iterable of (index, image-or-exception) pairs.

    An exception in place of an image marks a frame that could not be read;
    it is reported as skipped. A worker that dies loses only its in-flight
    frame and is replaced.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    report = RunReport(workers=workers)
    t_start = time.perf_counter()
    frames = list(frames) if not hasattr(frames, "__next__") else frames

    if in_process:
        results = _frames_in_process(frames, cfg, report)
        report.frames_total = len(results) + len(report.skipped)
        report.frames_done = len(results)
        report.wall_seconds = time.perf_counter() - t_start
        return results, report

    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    tasks = ctx.Queue(maxsize=2 * workers)
    res_q = ctx.Queue()
    fail_on = set(_fail_on or ())
    procs: dict[int, mp.Process] = {}
    next_wid = 0

    def spawn():
        nonlocal next_wid
        wid = next_wid
        next_wid += 1
        p = ctx.Process(target=_worker, args=(wid, cfg, tasks, res_q, fail_on), daemon=True)
        p.start()
        procs[wid] = p
        return wid

    for _ in range(workers):
        spawn()

    results: dict[int, list[RingDetection]] = {}
    dispatched: set[int] = set()
    in_flight: dict[int, int] = {}
    finished: set[int] = set()
    stats: dict[int, dict] = {}
    source = iter(frames)
    exhausted = False
    # one sentinel per worker slot; a replacement inherits its slot
    sentinels_left = workers

    def handle(msg):
        kind, wid = msg[0], msg[1]
        if kind == "start":
            in_flight[wid] = msg[2]
        elif kind == "done":
            _, _, idx, dets, dt, nbytes, cells = msg
            results[idx] = dets
            in_flight.pop(wid, None)
            report.slab_bytes = max(report.slab_bytes, nbytes)
            report.slab_cells = cells
        elif kind == "error":
            report.skipped.append({"frame": msg[2], "reason": msg[3]})
            in_flight.pop(wid, None)
        elif kind == "exit":
            finished.add(wid)
            stats[wid] = {"frames": msg[2], "busy_seconds": msg[3],
                          "frames_per_second": msg[2] / msg[3] if msg[3] else 0.0}

    pending = None
    while True:
        # feed the task queue without blocking on a full queue
        while not exhausted:
            if pending is None:
                try:
                    idx, item = next(source)
                except StopIteration:
                    exhausted = True
                    break
                if isinstance(item, Exception):
                    report.skipped.append({"frame": idx, "reason": str(item)})
                    dispatched.add(idx)
                    continue
                pending = (idx, item)
            try:
                tasks.put(pending, timeout=0.01)
            except queue.Full:
                break
            dispatched.add(pending[0])
            pending = None
        while exhausted and pending is None and sentinels_left:
            try:
                tasks.put(None, timeout=0.01)
            except queue.Full:
                break
            sentinels_left -= 1

        try:
            handle(res_q.get(timeout=0.05))
            while True:
                handle(res_q.get_nowait())
        except queue.Empty:
            pass

        for wid, p in list(procs.items()):
            if wid in finished or p.is_alive():
                continue
            # died without its exit message: drain anything it managed to send
            try:
                while True:
                    handle(res_q.get(timeout=0.05))
            except queue.Empty:
                pass
            if wid in finished:
                continue
            lost = in_flight.pop(wid, None)
            if lost is not None and lost not in results:
                report.skipped.append({"frame": lost, "reason": f"worker {wid} died (exit code {p.exitcode})"})
            log.warning("worker %d died with exit code %s; replacing it", wid, p.exitcode)
            finished.add(wid)
            stats[wid] = {"frames": None, "busy_seconds": None, "died": True}
            spawn()

        if exhausted and all(w in finished for w in procs):
            break

    for p in procs.values():
        p.join(timeout=5)
    accounted = set(results) | {s["frame"] for s in report.skipped}
    for idx in sorted(dispatched - accounted):
        report.skipped.append({"frame": idx, "reason": "lost in flight"})
    report.skipped.sort(key=lambda s: s["frame"])
    report.per_worker = {str(k): v for k, v in sorted(stats.items())}
    report.frames_total = len(dispatched)
    report.frames_done = len(results)
    report.wall_seconds = time.perf_counter() - t_start
    return results, report


def iter_paths(paths):
    for idx, path in enumerate(paths):
        try:
            yield idx, load_frame(path)
        except Exception as exc:  # noqa: BLE001 - corrupt frames are skipped
            log.error("cannot read %s: %s", path, exc)
            yield idx, ValueError(f"{path}: {exc}")


def detection_rows(results: dict[int, list[RingDetection]]):
    rows = []
    for idx in sorted(results):
        for d in results[idx]:
            rows.append((idx, d.cx, d.cy, d.r, d.score, d.inliers, d.rms_residual))
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    return rows


def write_detections_csv(path, rows) -> None:
    lines = [",".join(DETECTION_COLUMNS)]
    for frame, cx, cy, r, score, inl, rms in rows:
        lines.append(f"{frame},{cx!r},{cy!r},{r!r},{score!r},{inl},{rms!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_detections_csv(path) -> dict[int, np.ndarray]:
    """Ring detections grouped by frame, as (n, 3) arrays of (cx, cy, r)."""
    import csv

    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                out.setdefault(int(row["frame"]), []).append(
                    (float(row["cx"]), float(row["cy"]), float(row["r"])))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return {k: np.array(v, np.float64).reshape(-1, 3) for k, v in out.items()}
