import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringhough import hough
from ringhough.hough import (
    AccumulatorSlab, ConfigError, HoughConfig, collect_votes, decode, encode,
    hough_peaks, sigma_of_r, sort_votes, stream_levels, undo_level,
)
from ringhough.imaging import curvature
from ringhough.pipeline import full_accumulator
from ringhough.ridges import Ridges, detect_ridges

from helpers import plain_ring_image, ring_image

THRESH = -0.025


def ring_ridges(img, sigma=1.5):
    return detect_ridges(curvature(img, sigma), THRESH)


def test_empty_ridges_no_votes():
    assert collect_votes(Ridges.empty(), HoughConfig(5, 6), 100, 100).size == 0


def test_single_ridge_votes():
    cfg = HoughConfig(5, 6)
    rid = Ridges.from_points([[50, 50]], [[1.0, 0.0]])
    votes = collect_votes(rid, cfg, 100, 100)
    got = sorted(zip(*[a.tolist() for a in decode(votes, cfg.r_lo, 100, 100)]))
    want = sorted((r, 50, 50 + s * r) for r in range(4, 8) for s in (1, -1))
    assert got == want


def test_votes_out_of_frame_dropped():
    cfg = HoughConfig(5, 6)
    rid = Ridges.from_points([[3, 10]], [[1.0, 0.0]])
    r, y, x = decode(collect_votes(rid, cfg, 20, 20), cfg.r_lo, 20, 20)
    assert len(r) == 4 and np.all(x >= 7)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 9), st.integers(0, 13)), max_size=50))
def test_encode_decode_roundtrip(cells):
    if not cells:
        return
    r, y, x = (np.array(c) for c in zip(*cells))
    code = encode(r + 7, y, x, 7, 14, 10)
    r2, y2, x2 = decode(code, 7, 14, 10)
    assert np.array_equal(r2, r + 7) and np.array_equal(y2, y) and np.array_equal(x2, x)
    # code order is (r, y, x) lexicographic
    order = np.lexsort((x, y, r))
    assert np.all(np.diff(code[order]) >= 0)


def test_sort_votes_examples():
    assert sort_votes([]).tolist() == []
    assert sort_votes([7, 3, 3, 9]).tolist() == [3, 3, 7, 9]


def test_sort_votes_million(rng):
    codes = rng.integers(0, 2 ** 40, 10 ** 6)
    out = sort_votes(codes)
    assert np.all(np.diff(out) >= 0)
    assert np.array_equal(np.sort(codes, kind="mergesort"), out)


def test_sigma_law():
    cfg = HoughConfig(5, 60)
    assert sigma_of_r(10, cfg) == 0.75
    assert sigma_of_r(0, cfg) == 0.25
    assert sigma_of_r(55, cfg) == 3.0


def test_config_validation():
    for bad in [dict(r_min=1, r_max=5), dict(r_min=6, r_max=6), dict(r_min=4, r_max=9, vote_threshold_raw=0),
                dict(r_min=4, r_max=9, vote_threshold_norm=0.0), dict(r_min=4.5, r_max=9)]:
        with pytest.raises(ConfigError):
            HoughConfig(**bad)
    with pytest.raises(ConfigError):
        HoughConfig(5, 40).check_frame(40, 100)


def test_smoothing_weights():
    w = hough.smoothing_weights(0.75)
    assert w.shape == (7, 7) and w[3, 3] == 1.0
    assert np.allclose(w, w.T) and np.allclose(w, w[::-1])


def test_no_votes_no_peaks():
    cfg = HoughConfig(5, 10)
    assert stream_levels(np.empty(0, np.int64), cfg, 30, 30, AccumulatorSlab(30, 30)) == []


def test_single_ring_peak_and_score():
    cfg = HoughConfig(8, 45)
    img = plain_ring_image(64, 64, 20)
    rid = ring_ridges(img)
    raw = full_accumulator(rid, cfg, 128, 128)
    assert np.unravel_index(raw.argmax(), raw.shape) == (20 - cfg.r_lo, 64, 64)
    peaks = hough_peaks(rid, cfg, 128, 128)
    assert [(p.cx, p.cy, p.r) for p in peaks] == [(64, 64, 20)]
    assert 0.7 * 2 * math.pi <= peaks[0].score <= 1.3 * 2 * math.pi


def test_equal_radius_pair_resolved():
    from ringhough import synth

    spec = synth.SceneSpec(140, 100, (synth.RingSpec(57, 50, 18), synth.RingSpec(82, 50, 18)))
    img, _ = synth.render_scene(spec)
    peaks = hough_peaks(ring_ridges(img), HoughConfig(8, 30, vote_threshold_norm=0.4), 140, 100)
    got = sorted((p.cx, p.cy, p.r) for p in peaks)
    assert len(got) == 2
    for (cx, cy, r), (tx, ty) in zip(got, [(57, 50), (82, 50)]):
        assert abs(cx - tx) <= 1 and abs(cy - ty) <= 1 and abs(r - 18) <= 1


def test_undo_untouched_level():
    slab = AccumulatorSlab(10, 10)
    assert undo_level(slab, 1) == 0
    assert slab.is_clear()


def test_undo_counts_touched_cells():
    slab = AccumulatorSlab(10, 10)
    hough._populate(slab.raw, slab.modified, slab.n_modified, slab.hotspots, slab.n_hotspots,
                    0, np.array([5, 5, 17, 42, 42, 42], np.int32), 1)
    assert slab.n_modified[0] == 3
    assert slab.level_hotspots(0).tolist() == [5, 42]
    assert undo_level(slab, 0) == 3
    assert slab.is_clear()


@given(st.lists(st.integers(0, 20 * 15 - 1), max_size=300), st.integers(0, 2), st.integers(1, 4))
def test_undo_restores_clear_level(flat, level, thr):
    slab = AccumulatorSlab(20, 15)
    flat = np.sort(np.array(flat, np.int32))
    hough._populate(slab.raw, slab.modified, slab.n_modified, slab.hotspots, slab.n_hotspots,
                    level, flat, thr)
    counts = np.bincount(flat, minlength=300).reshape(15, 20)
    assert np.array_equal(slab.raw[level], counts)
    slab.norm[level].flat[slab.level_hotspots(level)] = 1.5
    assert undo_level(slab, level) == len(np.unique(flat))
    assert slab.is_clear()


def test_slab_size_independent_of_radii_range():
    sizes = set()
    for r_max in (18, 208):
        cfg = HoughConfig(8, r_max)
        slab = AccumulatorSlab(400, 420)
        hough_peaks(Ridges.from_points([[200, 200]], [[1.0, 0.0]]), cfg, 400, 420, slab=slab)
        sizes.add((slab.accumulator_cells, slab.nbytes))
        assert slab.is_clear()
    assert sizes == {(6 * 400 * 420, AccumulatorSlab(400, 420).nbytes)}


def test_smoothing_log_is_linear_in_r():
    cfg = HoughConfig(8, 45)
    slab = AccumulatorSlab(128, 128)
    hough_peaks(ring_ridges(plain_ring_image(64, 64, 20)), cfg, 128, 128, slab=slab)
    rs = np.array([e[0] for e in slab.smoothing_log], float)
    sig = np.array([e[1] for e in slab.smoothing_log])
    assert rs.tolist() == list(range(cfg.r_lo, cfg.r_hi + 1))
    slope, icpt = np.polyfit(rs, sig, 1)
    assert slope == pytest.approx(0.05) and icpt == pytest.approx(0.25)
    assert all(e[2] == math.ceil(3 * e[1]) for e in slab.smoothing_log)


def test_slab_reused_across_frames():
    cfg = HoughConfig(8, 45)
    slab = AccumulatorSlab(128, 128)
    a = hough_peaks(ring_ridges(ring_image(64, 64, 20)), cfg, 128, 128, slab=slab)
    b = hough_peaks(ring_ridges(ring_image(60, 70, 30)), cfg, 128, 128, slab=slab)
    c = hough_peaks(ring_ridges(ring_image(64, 64, 20)), cfg, 128, 128, slab=slab)
    assert a == c and a != b
    assert [p.score for p in a] == [p.score for p in c]
