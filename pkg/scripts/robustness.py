"""Detection robustness on the synthetic corpus.

Sweeps noise levels and, optionally, a small grid of detector settings.
This is the script used to pick ``synthetic_preset``; run it with
``--seed 1`` to reproduce the tuning numbers.

    python scripts/robustness.py --frames 200 --noise 0.02 0.05 0.08 0.12
    python scripts/robustness.py --grid --frames 100 --out tuning.json
"""

import argparse
import itertools
import json
import time

import numpy as np

from ringhough import synth
from ringhough.hough import HoughConfig
from ringhough.pipeline import Detector, DetectorConfig, synthetic_preset


def evaluate(cfg: DetectorConfig, params: synth.CorpusParams, frames: int, seed: int) -> dict:
    det = Detector(cfg)
    total = synth.MatchReport(0, 0, 0)
    rings = 0
    t0 = time.perf_counter()
    for spec in synth.generate_corpus(params, frames, seed):
        img, truth = synth.render_scene(spec)
        total = total + synth.score_detections(truth, det(img))
        rings += len(truth)
    out = total.as_dict()
    out.update(frames=frames, rings=rings, seconds=time.perf_counter() - t0)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.02, 0.05, 0.08, 0.12])
    ap.add_argument("--grid", action="store_true", help="sweep smoothing / curvature / norm threshold")
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args(argv)

    if args.grid:
        configs = [
            DetectorConfig(s, HoughConfig(8, 45, vote_threshold_norm=n), curvature_threshold=k)
            for s, k, n in itertools.product((1.0, 1.5, 2.0), (0.0, -0.01, -0.025, -0.05), (0.4, 0.5))
        ]
    else:
        configs = [synthetic_preset()]

    results = []
    for cfg, noise in itertools.product(configs, args.noise):
        res = evaluate(cfg, synth.CorpusParams(noise_sd=noise), args.frames, args.seed)
        res.update(noise_sd=noise, smoothing_sigma=cfg.smoothing_sigma,
                   curvature_threshold=cfg.curvature_threshold,
                   vote_threshold_norm=cfg.hough.vote_threshold_norm)
        results.append(res)
        print(f"sigma {cfg.smoothing_sigma:<4} kappa {cfg.curvature_threshold:<7} "
              f"norm {cfg.hough.vote_threshold_norm:<4} noise {noise:<5} "
              f"detect {res['detection_rate']:.3f} false {res['false_rate']:.3f} "
              f"cluster {res['cluster_detection_rate']:.3f} ({res['seconds']:.0f} s)", flush=True)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"seed": args.seed, "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
