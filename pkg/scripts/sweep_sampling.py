"""Mean IOU of fixed-margin trackers across sample counts and KNN windows.

    python scripts/sweep_sampling.py --samples 147 243 --windows 10 --deltas 0 0.25 0.4 0.5

Sequences are random occlusion scripts; each cell is the mean over them.
"""

import argparse
import itertools
import time

import numpy as np

from qact.config import FeatureConfig, TrackerConfig
from qact.engine import track_sequence
from qact.geometry import iou
from qact.sequences import full_occlusion_suite, generate_synthetic


def mean_iou(seqs, cfg: TrackerConfig) -> float:
    per_seq = []
    for seq in seqs:
        results = track_sequence(seq, cfg)
        per_seq.append(np.mean([iou(r.estimate, seq.gt(r.index)) for r in results]))
    return float(np.mean(per_seq))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, nargs="+", default=[147, 243])
    ap.add_argument("--windows", type=int, nargs="+", default=[10])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.0, 0.25, 0.4, 0.5])
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--length", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    seqs = [generate_synthetic(s) for s in full_occlusion_suite(args.seed, args.count, args.length)]
    print(f"{'n_s':>5} {'window':>6} " + " ".join(f"d={d:<5g}" for d in args.deltas))
    for n_s, window in itertools.product(args.samples, args.windows):
        t0 = time.perf_counter()
        row = []
        for d in args.deltas:
            cfg = TrackerConfig(window=window, delta=d, features=FeatureConfig(n_samples=n_s))
            row.append(mean_iou(seqs, cfg))
        cells = " ".join(f"{v:7.4f}" for v in row)
        print(f"{n_s:5d} {window:6d} {cells}   ({time.perf_counter() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
