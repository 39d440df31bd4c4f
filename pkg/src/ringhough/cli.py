"""Command-line front end: ``ringhough <subcommand> ...``.

Exit codes: 0 success, 1 partial result (frames skipped), 2 configuration
or input error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import batch, calib, imaging, spline, synth, track
from .hough import ConfigError, HoughConfig
from .pipeline import DetectorConfig

log = logging.getLogger("ringhough")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
WORKERS_ENV = "RING_HOUGH_WORKERS"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# detector configuration: key=value file, overridable by flags

CONFIG_KEYS = {
    "smoothing_sigma": float,
    "curvature_threshold": float,
    "r_min": int,
    "r_max": int,
    "vote_threshold_raw": int,
    "vote_threshold_norm": float,
    "sigma_slope": float,
    "sigma_offset": float,
    "annulus_halfwidth": lambda v: None if v.lower() in ("auto", "none", "") else float(v),
    "dedupe": lambda v: v.lower() in ("1", "true", "yes", "on"),
}
REQUIRED_KEYS = ("smoothing_sigma", "r_min", "r_max")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
    return out


def build_detector_config(values: dict) -> DetectorConfig:
    missing = [k for k in REQUIRED_KEYS if values.get(k) in (None, "")]
    if missing:
        raise UsageError(f"missing required configuration: {', '.join(missing)}")
    conv = {}
    for key, raw in values.items():
        if raw is None:
            continue
        try:
            conv[key] = CONFIG_KEYS[key](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
    hough_keys = ("r_min", "r_max", "vote_threshold_raw", "vote_threshold_norm", "sigma_slope", "sigma_offset")
    try:
        hough = HoughConfig(**{k: conv[k] for k in hough_keys if k in conv})
        return DetectorConfig(
            smoothing_sigma=conv["smoothing_sigma"],
            hough=hough,
            curvature_threshold=conv.get("curvature_threshold", 0.0),
            annulus_halfwidth=conv.get("annulus_halfwidth"),
            dedupe=conv.get("dedupe", True),
        )
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def config_to_text(cfg: DetectorConfig) -> str:
    h = cfg.hough
    lines = [
        f"smoothing_sigma = {cfg.smoothing_sigma!r}",
        f"curvature_threshold = {cfg.curvature_threshold!r}",
        f"r_min = {h.r_min}",
        f"r_max = {h.r_max}",
        f"vote_threshold_raw = {h.vote_threshold_raw}",
        f"vote_threshold_norm = {h.vote_threshold_norm!r}",
        f"sigma_slope = {h.sigma_slope!r}",
        f"sigma_offset = {h.sigma_offset!r}",
        f"annulus_halfwidth = {'auto' if cfg.annulus_halfwidth is None else repr(cfg.annulus_halfwidth)}",
        f"dedupe = {str(cfg.dedupe).lower()}",
    ]
    return "\n".join(lines) + "\n"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detector configuration")
    g.add_argument("--config", help="key=value configuration file")
    for key in CONFIG_KEYS:
        g.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, metavar="VALUE")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key")


def _config_from_args(args) -> DetectorConfig:
    values: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        values.update(parse_config_text(text, args.config))
    for key in CONFIG_KEYS:
        v = getattr(args, "cfg_" + key)
        if v is not None:
            values[key] = v
    for item in args.set:
        values.update(parse_config_text(item, "--set"))
    return build_detector_config(values)


def _workers(args) -> int:
    if args.workers is not None:
        n = args.workers
    else:
        env = os.environ.get(WORKERS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {env!r}") from exc
    if n < 1:
        raise UsageError("worker count must be >= 1")
    return n


def _check_frame_size(paths, cfg: DetectorConfig) -> None:
    """Validate the radii range against the first readable frame."""
    for p in paths:
        try:
            img = imaging.load_image(p)
        except (OSError, ValueError):
            continue
        try:
            cfg.hough.check_frame(img.width, img.height)
        except ConfigError as exc:
            raise UsageError(f"{p}: {exc}") from exc
        return


def _input_paths(spec: str) -> list[str]:
    p = Path(spec)
    if p.is_dir():
        paths = sorted(str(q) for q in p.iterdir() if q.suffix.lower() in (".pgm", ".png"))
    else:
        paths = sorted(glob.glob(spec))
    if not paths:
        raise UsageError(f"no input frames match {spec!r}")
    return paths


# ---------------------------------------------------------------------------
# subcommands


def cmd_detect(args) -> int:
    cfg = _config_from_args(args)
    workers = _workers(args)
    paths = _input_paths(args.input)
    _check_frame_size(paths, cfg)
    log.info("detecting rings in %d frames with %d worker(s)", len(paths), workers)
    results, report = batch.run_frames(batch.iter_paths(paths), cfg, workers=workers,
                                       in_process=args.in_process)
    rows = batch.detection_rows(results)
    batch.write_detections_csv(args.out, rows)
    rep = report.as_dict()
    rep["inputs"] = paths
    rep["detections"] = len(rows)
    rep["config"] = config_to_text(cfg)
    if args.report:
        Path(args.report).write_text(json.dumps(rep, indent=2))
    log.info("%d frames, %.2f frames/s, %d skipped", report.frames_done, report.fps, len(report.skipped))
    return EXIT_PARTIAL if report.skipped else EXIT_OK


def _corpus_params(args) -> synth.CorpusParams:
    return synth.CorpusParams(
        width=args.width, height=args.height, mean_rings=args.mean_rings,
        min_rings=args.min_rings, max_rings=args.max_rings,
        cluster_fraction=args.cluster_fraction, r_range=(args.r_lo, args.r_hi),
        amplitude=args.amplitude, ring_width=args.ring_width,
        inner_rings=args.inner_rings, noise_sd=args.noise_sd,
    )


def write_corpus(out_dir, scenes) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth_rows = []
    n_rings, n_clustered = 0, 0
    for i, scene in enumerate(scenes):
        img, truth = synth.render_scene(scene)
        imaging.write_pgm(out / f"frame_{i:05d}.pgm", imaging.to_uint8(img))
        cl = synth.clustered(truth)
        n_rings += len(truth)
        n_clustered += int(cl.sum())
        truth_rows.extend((i, *t) for t in truth)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "cx", "cy", "r"])
        for row in truth_rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    summary = {
        "frames": len(scenes),
        "rings": n_rings,
        "mean_rings_per_frame": n_rings / len(scenes) if scenes else 0.0,
        "cluster_fraction": n_clustered / n_rings if n_rings else 0.0,
    }
    manifest = {"summary": summary, "scenes": [s.to_dict() for s in scenes]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return summary


def cmd_synth(args) -> int:
    if args.manifest:
        try:
            data = json.loads(Path(args.manifest).read_text())
            items = data["scenes"] if isinstance(data, dict) else data
            scenes = [synth.SceneSpec.from_dict(d) for d in items]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"invalid scene manifest {args.manifest}: {exc}") from exc
    else:
        try:
            scenes = synth.generate_corpus(_corpus_params(args), args.frames, args.seed)
        except (ValueError, synth.SpecError) as exc:
            raise UsageError(str(exc)) from exc
    summary = write_corpus(args.out, scenes)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def read_truth_csv(path) -> dict[int, np.ndarray]:
    out: dict[int, list] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.setdefault(int(row["frame"]), []).append(
                    (float(row["cx"]), float(row["cy"]), float(row["r"])))
            except (KeyError, ValueError) as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from exc
    return {k: np.array(v).reshape(-1, 3) for k, v in out.items()}


def cmd_score(args) -> int:
    truth = read_truth_csv(args.truth)
    try:
        dets = batch.read_detections_csv(args.detections)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    frames = sorted(set(truth) | set(dets))
    if args.frames is not None:
        frames = sorted(set(frames) | set(range(args.frames)))
    total = synth.MatchReport(0, 0, 0)
    for f in frames:
        total = total + synth.score_detections(truth.get(f, np.empty((0, 3))), dets.get(f, np.empty((0, 3))),
                                               args.tol_center, args.tol_radius)
    rep = total.as_dict()
    rep["frames"] = len(frames)
    text = json.dumps(rep, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        tracers = calib.read_calibration_csv(args.input)
        curve, excluded = calib.calibrate(tracers, args.refractive_ratio)
    except (OSError, calib.CalibrationError) as exc:
        raise UsageError(str(exc)) from exc
    Path(args.out).write_text(curve.to_json())
    print(json.dumps({"rmse_z": curve.rmse_z, "tracers": len(tracers), "excluded": excluded}))
    return EXIT_OK


def rings_to_positions(dets: dict[int, np.ndarray], curve: calib.CalibrationCurve,
                       pixel_size: float):
    """Convert ring detections (px) to (x, y, z) in micrometres.

    Rings outside the calibrated radius range are dropped.
    """
    if not dets:
        return np.empty(0, np.int64), []
    ids = np.arange(min(dets), max(dets) + 1)
    frames = []
    dropped = 0
    for f in ids:
        d = dets.get(int(f), np.empty((0, 3)))
        lo, hi = curve.valid_r
        ok = (d[:, 2] >= lo) & (d[:, 2] <= hi)
        dropped += int((~ok).sum())
        d = d[ok]
        z = calib.radius_to_z(d[:, 2], curve) if len(d) else np.empty(0)
        frames.append(np.column_stack([d[:, 0] * pixel_size, d[:, 1] * pixel_size, z]))
    if dropped:
        log.warning("%d rings outside the calibrated radius range were dropped", dropped)
    return ids, frames


def cmd_link(args) -> int:
    try:
        if args.rings:
            if not (args.calibration and args.pixel_size):
                raise UsageError("--rings needs --calibration and --pixel-size")
            curve = calib.CalibrationCurve.from_json(Path(args.calibration).read_text())
            frame_ids, frames = rings_to_positions(batch.read_detections_csv(args.rings), curve, args.pixel_size)
        elif args.input:
            frame_ids, frames = track.read_detections_csv(args.input)
        else:
            raise UsageError("give --input or --rings")
        cfg = track.LinkConfig(args.max_displacement, args.memory, args.min_length)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    trajs = track.link_frames(frames, cfg)
    track.write_trajectories_csv(args.out, trajs, frame_ids)
    n_in = sum(len(f) for f in frames)
    n_linked = sum(len(t) for t in trajs)
    print(json.dumps({"detections": n_in, "trajectories": len(trajs), "linked_samples": n_linked}))
    return EXIT_OK


def cmd_smooth(args) -> int:
    try:
        trajs = track.read_trajectories_csv(args.input)
        lam = spline.AUTO if args.lam == "auto" else float(args.lam)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    items = []
    for tr in trajs:
        if len(tr) < max(4, args.min_samples):
            continue
        t = np.asarray(tr.frames, np.float64) * args.frame_interval
        items.append((tr.id, spline.smooth_values(t, tr.xyz, lam)))
    spline.write_smoothed_csv(args.out, items)
    if args.summary:
        spline.write_summary_json(args.summary, items)
    sig = np.array([st.sigma_est for _, st in items]) if items else np.empty((0, 3))
    print(json.dumps({"trajectories": len(items),
                      "mean_sigma": sig.mean(axis=0).tolist() if len(sig) else None}))
    return EXIT_OK


def cmd_bench(args) -> int:
    """Throughput of the streamed detector on a generated corpus."""
    cfg = _config_from_args(args)
    params = _corpus_params(args)
    scenes = synth.generate_corpus(params, args.frames, args.seed)
    images = [synth.render_scene(s)[0] for s in scenes]
    frames = list(enumerate(images))
    out: dict = {"frames": len(frames), "width": params.width, "height": params.height,
                 "mean_rings": float(np.mean([len(s.rings) for s in scenes])), "runs": []}
    reference = None
    for w in [int(x) for x in args.workers_list.split(",")]:
        results, rep = batch.run_frames(frames, cfg, workers=w)
        rows = batch.detection_rows(results)
        if reference is None:
            reference = rows
        out["runs"].append({"workers": w, "fps": rep.fps, "identical_to_first": rows == reference,
                            "per_worker": rep.per_worker, "slab_bytes": rep.slab_bytes})
    base = out["runs"][0]["fps"]
    for run in out["runs"]:
        run["speedup"] = run["fps"] / base if base else 0.0
    if args.oracle_frames:
        from .pipeline import Detector, detect_rings_oracle

        det = Detector(cfg)
        sub = images[: args.oracle_frames]
        t0 = time.perf_counter()
        streamed = [det(img) for img in sub]
        t_stream = time.perf_counter() - t0
        t0 = time.perf_counter()
        oracle = [detect_rings_oracle(img, cfg) for img in sub]
        t_oracle = time.perf_counter() - t0
        out["oracle"] = {"frames": len(sub), "streamed_seconds": t_stream, "oracle_seconds": t_oracle,
                         "speedup": t_oracle / t_stream if t_stream else 0.0,
                         "identical": streamed == oracle}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_corpus_flags(p):
    d = synth.CorpusParams()
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--height", type=int, default=d.height)
    p.add_argument("--mean-rings", type=float, default=d.mean_rings)
    p.add_argument("--min-rings", type=int, default=d.min_rings)
    p.add_argument("--max-rings", type=int, default=d.max_rings)
    p.add_argument("--cluster-fraction", type=float, default=d.cluster_fraction)
    p.add_argument("--r-lo", type=float, default=d.r_range[0])
    p.add_argument("--r-hi", type=float, default=d.r_range[1])
    p.add_argument("--amplitude", type=float, default=d.amplitude)
    p.add_argument("--ring-width", type=float, default=d.ring_width)
    p.add_argument("--inner-rings", type=int, default=d.inner_rings)
    p.add_argument("--noise-sd", type=float, default=d.noise_sd)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ringhough", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ring corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest", help="JSON list of scene specs (overrides generation flags)")
    _add_corpus_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("detect", help="detect rings in image frames")
    p.add_argument("input", help="directory or glob of PGM/PNG frames")
    p.add_argument("--out", required=True, help="detections CSV")
    p.add_argument("--report", help="run report JSON")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")
    p.add_argument("--in-process", action="store_true", help="run in the calling process")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("score", help="score detections against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--tol-center", type=float, default=3.0)
    p.add_argument("--tol-radius", type=float, default=3.0)
    p.add_argument("--frames", type=int, help="number of frames (counts frames with no rows)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("calibrate", help="fit the radius to axial-distance curve")
    p.add_argument("--input", required=True, help="CSV with tracer_id, dz_um, r_px")
    p.add_argument("--out", required=True, help="curve JSON")
    p.add_argument("--refractive-ratio", type=float, default=calib.REFRACTIVE_RATIO)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("link", help="link 3D positions into trajectories")
    p.add_argument("--input", help="CSV with frame, x_um, y_um, z_um")
    p.add_argument("--rings", help="ring detections CSV to convert with --calibration")
    p.add_argument("--calibration", help="curve JSON from 'calibrate'")
    p.add_argument("--pixel-size", type=float, help="micrometres per pixel")
    p.add_argument("--out", required=True, help="trajectories CSV")
    p.add_argument("--max-displacement", type=float, required=True, help="gating radius (um)")
    p.add_argument("--memory", type=int, default=3)
    p.add_argument("--min-length", type=int, default=1)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("smooth", help="smoothing-spline trajectories")
    p.add_argument("--input", required=True, help="trajectories CSV")
    p.add_argument("--out", required=True, help="smoothed CSV")
    p.add_argument("--summary", help="per-trajectory sigma JSON")
    p.add_argument("--lambda", dest="lam", default="auto", help="'auto' (GCV) or a value")
    p.add_argument("--frame-interval", type=float, default=1.0, help="seconds per frame")
    p.add_argument("--min-samples", type=int, default=4)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("bench", help="throughput and scaling benchmark")
    p.add_argument("--workers-list", default="1", help="comma-separated worker counts")
    p.add_argument("--oracle-frames", type=int, default=0, help="frames to time against the full-array oracle")
    p.add_argument("--out")
    _add_corpus_flags(p)
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ringhough {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
