"""Train a margin policy, then compare it to fixed margins on held-out occlusion sequences.

    python scripts/train_and_compare.py --out runs/compare --episodes 60

Everything goes through the ``qact`` command line so the run directory
holds the same artifacts a user would get by hand.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from qact.cli import main as qact
from qact.sequences import dump_script, full_occlusion_suite

ROOT = Path(__file__).resolve().parents[1]


def write_suite(out: Path, seed: int, count: int, length: int) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for script in full_occlusion_suite(seed, count, length):
        p = out / f"{script.name}.toml"
        p.write_text(dump_script(script))
        paths.append(p)
    return paths


def summarize(run_dir: Path) -> tuple[float, float]:
    """Mean IOU and mean queried fraction over the sequences of one track run."""
    queried = [json.loads(s.read_text())["queried_fraction"] for s in sorted(run_dir.glob("*/summary.json"))]
    report = json.loads((run_dir / "eval" / "report.json").read_text())
    ious = [r["mean_iou"] for r in report["sequences"]]
    return float(np.mean(ious)), float(np.mean(queried))


def track_and_eval(label: str, seqs: list[Path], out: Path, extra: list[str]) -> tuple[float, float]:
    run = out / label
    args = ["track", "--out", str(run)] + extra
    for s in seqs:
        args += ["--seq", str(s)]
    if qact(args) != 0:
        raise SystemExit(f"track failed for {label}")
    if qact(["eval", "--results", str(run), "--seq", str(seqs[0].parent), "--out", str(run / "eval")]) != 0:
        raise SystemExit(f"eval failed for {label}")
    return summarize(run)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--episodes", type=int, default=60)
    ap.add_argument("--train-seed", type=int, default=1)
    ap.add_argument("--train-config", default=str(ROOT / "configs" / "train_synthetic.toml"))
    ap.add_argument("--suite-seed", type=int, default=12345)
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--length", type=int, default=100)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.1, 0.25, 0.4])
    args = ap.parse_args()

    out = Path(args.out)
    seqs = write_suite(out / "suite", args.suite_seed, args.count, args.length)

    t0 = time.perf_counter()
    policy_dir = out / "policy"
    if qact(["train-policy", "--config", args.train_config, "--episodes", str(args.episodes),
             "--seed", str(args.train_seed), "--out", str(policy_dir)]) != 0:
        raise SystemExit("training failed")
    print(f"trained {args.episodes} episodes in {time.perf_counter() - t0:.0f} s")

    rows = {}
    t0 = time.perf_counter()
    rows["qlearn"] = track_and_eval("qlearn", seqs, out, ["--mode", "active-qlearn",
                                                         "--qtable", str(policy_dir / "qtable.json")])
    for d in args.deltas:
        rows[f"delta={d:g}"] = track_and_eval(f"fixed_{d:g}", seqs, out, ["--mode", "active-fixed",
                                                                          "--delta", str(d)])
    print(f"tracked {len(rows)} configurations in {time.perf_counter() - t0:.0f} s")

    print(f"{'tracker':<12} {'mean IOU':>9} {'queried':>8}")
    for k, (m, q) in rows.items():
        print(f"{k:<12} {m:9.4f} {q:8.4f}")
    (out / "comparison.json").write_text(json.dumps(
        {k: {"mean_iou": m, "queried_fraction": q} for k, (m, q) in rows.items()}, indent=2))


if __name__ == "__main__":
    main()
