"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal
summary ("acceptance criteria" section), then asserts it.
"""

import math
import os
import time

import numpy as np
import pytest

from ringhough import batch, calib, spline, synth, track
from ringhough.hough import AccumulatorSlab, HoughConfig, sigma_of_r
from ringhough.pipeline import (
    Detector, DetectorConfig, analyse_frame, analyse_frame_oracle, detect_rings_oracle,
    full_accumulator, synthetic_preset,
)

pytestmark = pytest.mark.slow

TWO_PI = 2 * math.pi


def _triples(dets):
    return np.array([(d.cx, d.cy, d.r) for d in dets], np.float64).reshape(-1, 3)


def _nearest(dets, truth_row):
    d = _triples(dets)
    if len(d) == 0:
        return None
    k = np.argmin(np.hypot(d[:, 0] - truth_row[0], d[:, 1] - truth_row[1]) + np.abs(d[:, 2] - truth_row[2]))
    return d[k]


# 1 -------------------------------------------------------------------------


def test_c01_oracle_equivalence(accept):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    params = synth.CorpusParams(r_range=(8, 55))
    cfg = synthetic_preset(8, 56)
    problems = []
    n_peaks = n_dets = n_levels = 0
    for frame in range(50):
        scene = synth.generate_scene(rng, params, n_rings=int(rng.integers(5, 26)), seed=frame)
        scene = synth.SceneSpec(scene.width, scene.height, scene.rings, noise_sd=float(rng.uniform(0, 0.1)),
                                seed=frame)
        img, _ = synth.render_scene(scene)
        s = analyse_frame(img, cfg, keep_levels=True)
        o = analyse_frame_oracle(img, cfg)
        raw = full_accumulator(s.ridges, cfg.hough, img.shape[1], img.shape[0])
        for r, level in s.raw_levels.items():
            n_levels += 1
            if not np.array_equal(level, raw[r - cfg.hough.r_lo]):
                problems.append(f"frame {frame}: raw level {r} differs")
        if s.peaks != o.peaks:
            problems.append(f"frame {frame}: peak sets differ")
        if len(s.detections) != len(o.detections):
            problems.append(f"frame {frame}: detection counts differ")
        else:
            for a, b in zip(s.detections, o.detections):
                va = np.array([a.cx, a.cy, a.r, a.score])
                vb = np.array([b.cx, b.cy, b.r, b.score])
                if not np.allclose(va, vb, rtol=1e-9, atol=0):
                    problems.append(f"frame {frame}: fit differs {va} vs {vb}")
        n_peaks += len(s.peaks)
        n_dets += len(s.detections)
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 300
    accept(1, "oracle equivalence", ok,
           f"50 frames, {n_levels} levels bit-exact, {n_peaks} peaks, {n_dets} fits; "
           f"{len(problems)} mismatches; {elapsed:.0f} s (limit 300 s)")
    assert ok, problems[:5]


# 2 -------------------------------------------------------------------------


def test_c02_robustness(accept):
    t0 = time.perf_counter()
    det = Detector(synthetic_preset())
    noise = 0.08
    # seeds disjoint from the tuning corpus (scripts/robustness.py --seed 1)
    scenes = synth.generate_corpus(synth.CorpusParams(noise_sd=noise), 600, seed=20261018)
    total = synth.MatchReport(0, 0, 0)
    n_rings = []
    for spec in scenes:
        img, truth = synth.render_scene(spec)
        total = total + synth.score_detections(truth, det(img))
        n_rings.append(len(truth))
    cluster_frac = total.cluster_total / sum(n_rings)

    iso_params = synth.CorpusParams(noise_sd=noise, cluster_fraction=0.0, mean_rings=8, min_rings=8, max_rings=8)
    iso = synth.MatchReport(0, 0, 0)
    for spec in synth.generate_corpus(iso_params, 100, seed=20261019):
        img, truth = synth.render_scene(spec)
        iso = iso + synth.score_detections(truth, det(img))
    elapsed = time.perf_counter() - t0

    ok = (iso.detection_rate >= 0.995 and total.detection_rate >= 0.90 and total.false_rate <= 0.02
          and total.cluster_detection_rate >= 0.90 and elapsed < 900)
    accept(2, "robustness", ok,
           f"600 frames, {np.mean(n_rings):.1f} rings/frame, {cluster_frac:.1%} clustered, noise sd {noise}; "
           f"isolated {iso.detection_rate:.2%} (>=99.5%), detection {total.detection_rate:.2%} (>=90%), "
           f"false {total.false_rate:.2%} (<=2%), cluster {total.cluster_detection_rate:.2%} (>=90%); "
           f"{elapsed:.0f} s (limit 900 s)")
    assert ok


# 3 -------------------------------------------------------------------------


def test_c03_normalization_constant(accept):
    cfg = DetectorConfig(1.5, HoughConfig(8, 45), curvature_threshold=-0.025)
    scores = {}
    for r in (12, 20, 30, 40):
        img, _ = synth.render_scene(synth.SceneSpec(128, 128, (synth.RingSpec(64, 64, r),)))
        peaks = analyse_frame(img, cfg).peaks
        near = [p for p in peaks if abs(p.cx - 64) <= 1 and abs(p.cy - 64) <= 1 and abs(p.r - r) <= 1]
        scores[r] = max((p.score for p in near), default=float("nan"))
    ok = all(0.7 * TWO_PI <= s <= 1.3 * TWO_PI for s in scores.values())
    accept(3, "normalization constant", ok,
           "scores/2pi " + ", ".join(f"r={r}: {s / TWO_PI:.3f}" for r, s in scores.items()) + " (bracket 0.7-1.3)")
    assert ok


# 4 -------------------------------------------------------------------------


def test_c04_sigma_law(accept):
    cfg = HoughConfig(8, 45)
    exact = sigma_of_r(10, cfg) == 0.75
    img, _ = synth.render_scene(synth.SceneSpec(128, 128, (synth.RingSpec(64, 64, 20),)))
    slab = AccumulatorSlab(128, 128)
    analyse_frame(img, DetectorConfig(1.5, cfg, -0.025), slab=slab)
    r = np.array([e[0] for e in slab.smoothing_log], float)
    sig = np.array([e[1] for e in slab.smoothing_log])
    rad = np.array([e[2] for e in slab.smoothing_log])
    slope, icpt = np.polyfit(r, sig, 1)
    resid = np.abs(sig - (slope * r + icpt)).max()
    linear = resid < 1e-12 and abs(slope - 0.05) < 1e-12 and abs(icpt - 0.25) < 1e-12
    widths = np.all(rad == np.ceil(3 * sig)) and np.all(np.diff(rad) >= 0)
    ok = exact and linear and bool(widths)
    accept(4, "sigma(r) law", ok,
           f"sigma_of_r(10) = {sigma_of_r(10, cfg)!r}; instrumented over {len(r)} levels: "
           f"slope {slope:.6f}, intercept {icpt:.6f}, max residual {resid:.1e}, "
           f"kernel radius {rad[0]}..{rad[-1]} = ceil(3 sigma)")
    assert ok


# 5 -------------------------------------------------------------------------


def _subpixel_errors(cfg, seed=505):
    rng = np.random.default_rng(seed)
    det = Detector(cfg)
    errs, missing = [], 0
    for _ in range(100):
        r = rng.uniform(8.0, 40.0)
        cx, cy = rng.uniform(r + 4, 140 - r - 4, 2)
        img, truth = synth.render_scene(synth.SceneSpec(140, 140, (synth.RingSpec(cx, cy, r),)))
        best = _nearest(det(img), truth[0])
        if best is None:
            missing += 1
            continue
        errs.append([math.hypot(best[0] - cx, best[1] - cy), abs(best[2] - r)])
    return np.array(errs).reshape(-1, 2), missing


def test_c05_subpixel_accuracy(accept):
    # noiseless frames need little smoothing; the noise-tuned preset (sigma 1.5)
    # pulls the curvature extremum of small rings inward and is reported too
    cfg = DetectorConfig(1.0, HoughConfig(8, 45, vote_threshold_norm=0.4), curvature_threshold=-0.025)
    errs, missing = _subpixel_errors(cfg)
    ref, _ = _subpixel_errors(synthetic_preset())
    ok = missing == 0 and errs.max() <= 0.2
    accept(5, "sub-pixel accuracy", ok,
           f"100 noiseless rings r in [8, 40], smoothing 1.0: max centre error {errs[:, 0].max():.3f} px, "
           f"max radius error {errs[:, 1].max():.3f} px (<=0.2), {missing} missed; "
           f"with smoothing 1.5: {ref[:, 0].max():.3f} / {ref[:, 1].max():.3f} px")
    assert ok


# 6 -------------------------------------------------------------------------


def test_c06_memory_footprint(accept):
    h, w = 460, 480
    img, _ = synth.render_scene(synth.SceneSpec(w, h, (synth.RingSpec(240, 230, 15),)))
    cells, nbytes = [], []
    for span in (10, 200):
        slab = AccumulatorSlab(w, h)
        dets = analyse_frame(img, synthetic_preset(8, 8 + span), slab=slab).detections
        assert len(dets) == 1
        cells.append(slab.accumulator_cells)
        nbytes.append(slab.nbytes)
    ok = cells == [6 * h * w] * 2 and nbytes[0] == nbytes[1]
    accept(6, "memory footprint", ok,
           f"{w}x{h}: accumulator cells {cells} (6HW = {6 * h * w}), slab bytes {nbytes} "
           f"for r_max - r_min = 10 and 200")
    assert ok


# 7, 8 ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def large_corpus():
    params = synth.CorpusParams(width=968, height=728, mean_rings=50, min_rings=40, max_rings=60,
                                noise_sd=0.08)
    scenes = synth.generate_corpus(params, 20, seed=707)
    return [(i, synth.render_scene(s)[0]) for i, s in enumerate(scenes)], scenes


def test_c07_throughput(accept, large_corpus):
    frames, scenes = large_corpus
    cfg = synthetic_preset()
    det = Detector(cfg)
    det(frames[0][1])  # compile outside the timed region
    _, rep = batch.run_frames(frames, cfg, workers=1)
    sub = [img for _, img in frames[:2]]
    t0 = time.perf_counter()
    streamed = [det(img) for img in sub]
    t_stream = time.perf_counter() - t0
    t0 = time.perf_counter()
    oracle = [detect_rings_oracle(img, cfg) for img in sub]
    t_oracle = time.perf_counter() - t0
    speedup = t_oracle / t_stream
    rings = np.mean([len(s.rings) for s in scenes])
    ok = rep.fps >= 2.0 and speedup >= 10 and streamed == oracle
    accept(7, "throughput", ok,
           f"968x728, {rings:.1f} rings/frame, 1 worker: {rep.fps:.2f} frames/s over {rep.frames_done} frames "
           f"(>=2); oracle {t_oracle / len(sub):.1f} s/frame vs streamed {t_stream / len(sub):.2f} s/frame, "
           f"speed-up {speedup:.0f}x (>=10), identical outputs: {streamed == oracle}")
    assert ok


def test_c08_parallel_scaling(accept, large_corpus, tmp_path):
    frames, _ = large_corpus
    cfg = synthetic_preset()
    Detector(cfg)(frames[0][1])
    res1, rep1 = batch.run_frames(frames, cfg, workers=1)
    res4, rep4 = batch.run_frames(frames, cfg, workers=4)
    batch.write_detections_csv(tmp_path / "w1.csv", batch.detection_rows(res1))
    batch.write_detections_csv(tmp_path / "w4.csv", batch.detection_rows(res4))
    identical = (tmp_path / "w1.csv").read_bytes() == (tmp_path / "w4.csv").read_bytes()
    ratio = rep4.fps / rep1.fps
    ok = ratio >= 3.0 and identical
    accept(8, "parallel scaling", ok,
           f"{len(frames)} frames, 1 worker {rep1.fps:.2f} fps, 4 workers {rep4.fps:.2f} fps, "
           f"ratio {ratio:.2f} (>=3); bitwise-identical CSV: {identical}; "
           f"os.cpu_count() = {os.cpu_count()}, usable CPUs = {len(os.sched_getaffinity(0))}")
    assert ok


# 9 -------------------------------------------------------------------------


def test_c09_calibration_roundtrip(accept):
    dz = np.linspace(0, 30, 31)
    aligned = calib.align_tracer(np.c_[dz, (dz - 5) * 0.6 + 0.01 * (dz - 5) ** 2])
    shift_err = np.abs(aligned[:, 0] - (dz - 5)).max()

    rng = np.random.default_rng(909)
    curve = calib.CalibrationCurve(0.01, 0.6, 0.0, valid_r=(0.0, 40.0))
    z = rng.uniform(0.5, 30.0, 100)
    back = calib.radius_to_z(curve.radius(z), curve) / 1.58
    rel = np.abs(back - z) / np.abs(z)

    unit = calib.CalibrationCurve(0.01, 0.6, 0.0, refractive_ratio=1.0, valid_r=(0.0, 40.0))
    r = curve.radius(z)
    scaled = calib.radius_to_z(r, curve)
    plain = calib.radius_to_z(r, unit)
    exact_scale = bool(np.all(scaled == plain * 1.58)) and calib.REFRACTIVE_RATIO == 1.58

    ok = shift_err <= 1e-6 and rel.max() <= 1e-9 and exact_scale
    accept(9, "calibration round-trip", ok,
           f"alignment shift error {shift_err:.1e} (<=1e-6), inversion max relative error {rel.max():.1e} "
           f"(<=1e-9), refractive factor exactly 1.58: {exact_scale}")
    assert ok


# 10 ------------------------------------------------------------------------


def _links(trajs, ids):
    true_links, last = set(), {}
    for f, row in enumerate(ids):
        for pid in row:
            if pid in last:
                true_links.add((pid, last[pid], f))
            last[pid] = f
    found = wrong = 0
    for tr in trajs:
        for k in range(1, len(tr)):
            f0, f1 = tr.frames[k - 1], tr.frames[k]
            p0, p1 = ids[f0][tr.sources[k - 1]], ids[f1][tr.sources[k]]
            if p0 == p1 and (p0, f0, f1) in true_links:
                found += 1
            else:
                wrong += 1
    return found, wrong, len(true_links)


def test_c10_linking(accept):
    rng = np.random.default_rng(1010)
    paths = synth.particle_paths(rng, 50, 100, box=(40.0, 40.0, 20.0))
    dist = np.linalg.norm(paths[:, :, None] - paths[:, None], axis=3)
    iu = np.triu_indices(50, 1)
    crossings = int((dist[:, iu[0], iu[1]].min(axis=0) < 2.0).sum())
    frames, ids = synth.drop_observations(rng, paths, 0.05)

    trajs = track.link_frames(frames, track.LinkConfig(5.0, memory=3))
    found, wrong, n_true = _links(trajs, ids)
    correct = found / n_true
    single_gaps = sum(1 for pid in range(50) for f in range(1, 99)
                      if pid not in ids[f] and pid in ids[f - 1] and pid in ids[f + 1])

    split = track.link_frames(frames, track.LinkConfig(5.0, memory=0))
    no_gaps = all(np.all(np.diff(t.frames) == 1) for t in split)
    runs = 0
    for pid in range(50):
        seen = np.array([pid in row for row in ids])
        runs += int(seen[0]) + int(np.sum(seen[1:] & ~seen[:-1]))
    ok = correct >= 0.99 and no_gaps and len(split) >= runs and crossings > 0
    accept(10, "linking", ok,
           f"50 particles x 100 frames, {crossings} close approaches (<2 units), 5% dropout "
           f"({single_gaps} single-frame gaps); memory=3: {correct:.2%} links correct (>=99%), "
           f"{wrong} wrong, {len(trajs)} trajectories; memory=0: {len(split)} pieces for {runs} observation runs, "
           f"no gaps: {no_gaps}")
    assert ok


# 11 ------------------------------------------------------------------------


def test_c11_spline(accept):
    rng = np.random.default_rng(1111)
    t = np.arange(1000) * 0.01
    ratios = []
    for k in range(5):
        ph = rng.uniform(0, 2 * math.pi, 3)
        truth = np.c_[np.sin(1.3 * t + ph[0]) * 2, 0.3 * t ** 2 - t, 3 * np.cos(0.7 * t + ph[2])]
        st_ = spline.smooth_values(t, truth + rng.normal(0, 0.13, truth.shape))
        ratios.extend(st_.sigma_est / 0.13)
    ratios = np.array(ratios)
    sigma_ok = bool(np.all(np.abs(ratios - 1) <= 0.2))

    ends = st_.acceleration(t[[0, -1]])
    bc = float(np.abs(ends).max())
    bc_ok = bc <= 1e-9

    tc = np.linspace(0.0, 10.0, 200)
    cubic = 0.02 * tc ** 3 - 0.3 * tc ** 2 + tc
    fit = spline.smooth_values(tc, cubic, 1e-14)
    val_err = np.abs(fit.fitted[:, 0] - cubic).max()
    vel_err = np.abs(fit.velocity()[:, 0] - (0.06 * tc ** 2 - 0.6 * tc + 1))
    acc_err = np.abs(fit.acceleration()[:, 0] - (0.12 * tc - 0.6))
    cubic_ok = val_err <= 1e-6 and vel_err.max() <= 1e-6 and acc_err.max() <= 1e-6

    ok = sigma_ok and bc_ok and cubic_ok
    accept(11, "smoothing spline", ok,
           f"sigma_est/sd over 15 axes {ratios.min():.3f}..{ratios.max():.3f} (within 20%: {sigma_ok}); "
           f"|f''| at ends {bc:.1e} (<=1e-9); cubic: values {val_err:.1e}, velocity max {vel_err.max():.1e}, "
           f"acceleration max {acc_err.max():.1e} (<=1e-6; interior 20 knots in: velocity "
           f"{vel_err[20:-20].max():.1e}, acceleration {acc_err[20:-20].max():.1e})")
    assert ok


# 12 ------------------------------------------------------------------------


def test_c12_precision_chain(accept):
    rng = np.random.default_rng(1212)
    a, b = 0.01, 0.6  # r_px = a dz^2 + b dz, objective dz in um
    pool = {}
    for k, s in enumerate(rng.uniform(-10, 10, 20)):
        dz = np.linspace(2, 40, 77)
        pool[k] = np.c_[dz + s, a * dz * dz + b * dz + rng.normal(0, 0.02, dz.size)]
    curve, _ = calib.calibrate(pool)

    px = 0.5  # um per pixel
    n_frames = 100
    gx, gy = np.meshgrid([60.0, 170.0, 280.0], [65.0, 185.0, 305.0])
    gx, gy = gx.ravel(), gy.ravel()
    n = gx.size
    t = np.arange(n_frames)[:, None]
    ph = rng.uniform(0, 2 * math.pi, (3, n))
    x = gx + 8 * np.sin(2 * math.pi * t / 70 + ph[0])
    y = gy + 8 * np.cos(2 * math.pi * t / 90 + ph[1])
    dz_obj = 25 + 8 * np.sin(2 * math.pi * t / 80 + ph[2])
    r = a * dz_obj ** 2 + b * dz_obj

    det = Detector(synthetic_preset())
    frames = []
    for f in range(n_frames):
        rings = tuple(synth.RingSpec(x[f, i], y[f, i], r[f, i]) for i in range(n))
        img, _ = synth.render_scene(synth.SceneSpec(340, 370, rings, noise_sd=0.08, seed=f))
        d = _triples(det(img))
        d = d[(d[:, 2] >= curve.valid_r[0]) & (d[:, 2] <= curve.valid_r[1])]
        frames.append(np.c_[d[:, 0] * px, d[:, 1] * px, calib.radius_to_z(d[:, 2], curve)])
    trajs = track.link_frames(frames, track.LinkConfig(5.0, memory=3, min_length=20))
    sig = np.array([spline.smooth_values(tr.t, tr.xyz).sigma_est for tr in trajs])
    s_lat = float(np.sqrt(np.mean(sig[:, :2] ** 2)))
    s_ax = float(np.sqrt(np.mean(sig[:, 2] ** 2)))
    measured = s_ax / s_lat

    # sigma_z = 1.58 |d dz / dr| sigma_r, sigma_x = px sigma_c, and a full-ring
    # circle fit has sigma_r / sigma_c = 1 / sqrt(2)
    inv_slope = 1.0 / np.abs(curve.slope(curve.invert(r.ravel())))
    gain = curve.refractive_ratio * float(np.sqrt(np.mean(inv_slope ** 2)))
    predicted = gain / math.sqrt(2) / px
    ok = len(trajs) == n and predicted / 2 <= measured <= predicted * 2
    accept(12, "precision chain", ok,
           f"{len(trajs)} trajectories of {n}; sigma lateral {s_lat:.4f} um, axial {s_ax:.4f} um; "
           f"axial/lateral ratio {measured:.2f} vs calibration-slope prediction {predicted:.2f} "
           f"(factor 2 band {predicted / 2:.2f}..{predicted * 2:.2f})")
    assert ok
