"""Throughput of the streamed detector against the full-accumulator oracle.

Renders a corpus of large frames once, then times ``batch.run_frames``
for each worker count and the oracle on a few frames.

    python scripts/benchmark.py --workers 1 2 4 --frames 20
"""

import argparse
import json
import os
import time

import numpy as np

from ringhough import batch, synth
from ringhough.pipeline import detect_rings_oracle, synthetic_preset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=20)
    ap.add_argument("--width", type=int, default=968)
    ap.add_argument("--height", type=int, default=728)
    ap.add_argument("--mean-rings", type=float, default=50)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--oracle-frames", type=int, default=2)
    ap.add_argument("--seed", type=int, default=707)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args(argv)

    params = synth.CorpusParams(width=args.width, height=args.height, mean_rings=args.mean_rings,
                                min_rings=int(args.mean_rings * 0.8), max_rings=int(args.mean_rings * 1.2),
                                noise_sd=0.08)
    frames = [synth.render_scene(s)[0] for s in synth.generate_corpus(params, args.frames, args.seed)]
    cfg = synthetic_preset()

    runs, first = [], None
    for w in args.workers:
        t0 = time.perf_counter()
        res, _ = batch.run_frames(enumerate(frames), cfg, workers=w)
        dt = time.perf_counter() - t0
        rows = batch.detection_rows(res)
        first = rows if first is None else first
        runs.append({"workers": w, "seconds": dt, "fps": len(frames) / dt, "identical_to_first": rows == first})
        print(f"workers {w}: {len(frames) / dt:.2f} frames/s, identical {rows == first}", flush=True)
    for r in runs:
        r["speedup"] = r["fps"] / runs[0]["fps"]

    oracle = None
    if args.oracle_frames:
        t0 = time.perf_counter()
        for img in frames[: args.oracle_frames]:
            detect_rings_oracle(img, cfg)
        per = (time.perf_counter() - t0) / args.oracle_frames
        oracle = {"frames": args.oracle_frames, "seconds_per_frame": per,
                  "speedup_streamed": per * runs[0]["fps"]}
        print(f"oracle: {per:.1f} s/frame, streamed speed-up {oracle['speedup_streamed']:.0f}x")

    out = {"cpu_count": os.cpu_count(), "usable_cpus": len(os.sched_getaffinity(0)),
           "frame": [args.width, args.height], "frames": args.frames, "runs": runs, "oracle": oracle}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2)


if __name__ == "__main__":
    main()
