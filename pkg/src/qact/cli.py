"""Command line: ``qact track | train-policy | eval``.

Exit codes: 0 ok, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path

from qact.bench import EvalReport, evaluate_sequence, write_report
from qact.config import MODES, ConfigError, DataError, TrackerConfig, config_from_dict, dump_config, tomllib
from qact.engine import read_results, track_sequence, write_results
from qact.env import ClipEnv, MixedEnv, SyntheticEnv
from qact.policy import QTable, QueryPolicy, init_qtable, train_policy, write_training_log
from qact.sequences import Sequence, generate_synthetic, load_otb_sequence, load_script

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

ENV_DEFAULTS = {
    "kind": "synthetic",
    "length": 400,
    "annotation_stride": 25,
    "occlusion_prob": 0.7,
    "illumination_prob": 0.3,
    "sequences": [],
    "real_fraction": 0.5,
}


# --------------------------------------------------------------------------
# Helpers


def atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _read_toml(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def resolve_config(args) -> tuple[TrackerConfig, dict]:
    """Config file, then command-line overrides. Returns (tracker config, env section)."""
    raw = _read_toml(args.config)
    env = dict(raw.pop("env", {}))
    cfg = config_from_dict(raw)
    changes = {}
    if getattr(args, "mode", None) is not None:
        changes["mode"] = args.mode
    if getattr(args, "delta", None) is not None:
        changes["delta"] = args.delta
    if args.seed is not None:
        changes["seed"] = args.seed
    return (cfg.with_(**changes) if changes else cfg), env


def load_sequence(path: str | Path) -> Sequence:
    """An OTB directory, or a synthetic script (``.toml``) rendered on the fly."""
    p = Path(path)
    if p.is_file() and p.suffix == ".toml":
        script = load_script(p)
        seq = generate_synthetic(script)
        if not script.name:
            seq = Sequence(p.stem, seq.frames, seq.ground_truth, seq.attributes)
        return seq
    if not p.is_dir():
        raise DataError(f"sequence not found: {p}")
    return load_otb_sequence(p)


def discover_sequences(paths: list[str]) -> dict[str, Path]:
    """Map sequence name to path; each entry is a sequence or a directory of them."""
    found: dict[str, Path] = {}
    for entry in paths:
        p = Path(entry)
        if (p.is_file() and p.suffix == ".toml") or (p / "img").is_dir():
            candidates = [p]
        elif p.is_dir():
            candidates = sorted(c for c in p.iterdir() if (c / "img").is_dir() or c.suffix == ".toml")
        else:
            raise DataError(f"sequence path not found: {p}")
        for c in candidates:
            name = c.stem if c.suffix == ".toml" else c.name
            if c.suffix == ".toml":
                name = load_script(c).name or name
            found.setdefault(name, c)
    return found


def _load_qtable(path: str) -> QTable:
    try:
        return QTable.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"Q-table not found: {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed Q-table {path}: {exc}") from exc


def write_overlay(seq: Sequence, results, out_dir: Path) -> None:
    from PIL import Image, ImageDraw

    out_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        im = Image.fromarray(seq.frame(r.index).pixels)
        draw = ImageDraw.Draw(im)
        gt = seq.gt(r.index)
        if gt is not None:
            draw.rectangle([gt.x, gt.y, gt.x2, gt.y2], outline=(0, 255, 0))
        e = r.estimate
        draw.rectangle([e.x, e.y, e.x2, e.y2], outline=(255, 0, 0) if not r.lost else (255, 255, 0))
        im.save(out_dir / f"{r.index:04d}.png")


# --------------------------------------------------------------------------
# Commands


def cmd_track(args) -> int:
    cfg, env = resolve_config(args)
    policy = None
    if cfg.mode == "active-qlearn":
        if not args.qtable:
            raise ConfigError("--mode active-qlearn requires --qtable")
        table = _load_qtable(args.qtable)
        if table.n_actions != cfg.policy.n_actions:
            raise ConfigError(f"Q-table has {table.n_actions} actions, config policy.n_actions = {cfg.policy.n_actions}")
        policy = QueryPolicy(table, cfg.tau)
    out = Path(args.out)
    paths = [Path(s) for s in args.seq]
    seqs = [load_sequence(p) for p in paths]  # validate every input before work begins
    extra = {"env": env} if env else None
    atomic_write(out / "config.resolved.toml", dump_config(cfg, extra))
    for seq in seqs:
        start = time.perf_counter()
        results = track_sequence(seq, cfg, policy)
        seconds = time.perf_counter() - start
        seq_out = out / seq.name
        tmp = seq_out / ".results.jsonl.tmp"
        seq_out.mkdir(parents=True, exist_ok=True)
        write_results(results, tmp)
        os.replace(tmp, seq_out / "results.jsonl")
        tracked = results[1:]
        summary = {
            "name": seq.name,
            "frames": len(results),
            "seconds": seconds,
            "fps": len(tracked) / seconds if tracked and seconds > 0 else None,
            "mode": cfg.mode,
            "seed": cfg.seed,
            "qtable": args.qtable,
            "queried_fraction": sum(r.queried_fraction for r in tracked) / len(tracked) if tracked else 0.0,
            "lost_frames": sum(r.lost for r in tracked),
        }
        atomic_write(seq_out / "summary.json", json.dumps(summary, indent=1) + "\n")
        if args.overlay:
            write_overlay(seq, results, seq_out / "overlay")
        print(f"{seq.name}: {len(results)} frames, {summary['fps'] or 0:.1f} fps, "
              f"queried {summary['queried_fraction']:.3f}")
    return EXIT_OK


def _build_env(cfg: TrackerConfig, env: dict, start: int):
    unknown = set(env) - set(ENV_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown key(s) in [env]: {sorted(unknown)}")
    e = {**ENV_DEFAULTS, **env}
    kind = e["kind"]
    synth = SyntheticEnv(cfg, cfg.seed, int(e["length"]), int(e["annotation_stride"]),
                         float(e["occlusion_prob"]), float(e["illumination_prob"]), start)
    if kind == "synthetic":
        return synth
    paths = [Path(p) for p in e["sequences"]]
    if not paths:
        raise ConfigError(f"env kind {kind!r} needs env.sequences")
    clips = ClipEnv(cfg, paths, cfg.seed, int(e["length"]), int(e["annotation_stride"]), start)
    if kind == "clips":
        return clips
    if kind == "mixed":
        return MixedEnv(synth, clips, float(e["real_fraction"]), cfg.seed, start)
    raise ConfigError(f"env.kind must be synthetic, clips or mixed, got {kind!r}")


def cmd_train_policy(args) -> int:
    if args.episodes < 0:
        raise ConfigError("--episodes must be >= 0")
    cfg, env = resolve_config(args)
    pc = cfg.policy
    if args.resume:
        table = _load_qtable(args.resume)
        if table.n_actions != pc.n_actions or table.seed != cfg.seed:
            raise ConfigError(f"--resume table (n_actions={table.n_actions}, seed={table.seed}) does not match "
                              f"config (n_actions={pc.n_actions}, seed={cfg.seed})")
    else:
        table = init_qtable(cfg.seed, pc.n_actions, pc.gamma, pc.init_noise)
    source = _build_env(cfg, env, start=table.episodes)
    out = Path(args.out)
    atomic_write(out / "config.resolved.toml", dump_config(cfg, {"env": {**ENV_DEFAULTS, **env}}))
    table, log = train_policy(source, args.episodes, pc, table, seed=cfg.seed)
    atomic_write(out / "qtable.json", json.dumps(table.to_json()) + "\n")
    tmp = out / ".training.csv.tmp"
    write_training_log(log, tmp)
    os.replace(tmp, out / "training.csv")
    print(f"trained {args.episodes} episodes (total {table.episodes}); {len(table.values)} states visited")
    return EXIT_OK


def _load_run(results_dir: Path, sequences: dict[str, Path], cache: dict) -> EvalReport:
    if not results_dir.is_dir():
        raise DataError(f"results directory not found: {results_dir}")
    runs = sorted(p.parent for p in results_dir.glob("*/results.jsonl"))
    if not runs:
        raise DataError(f"{results_dir}: no <sequence>/results.jsonl files")
    missing = [r.name for r in runs if r.name not in sequences]
    if missing:
        raise DataError(f"no sequence found for result(s): {', '.join(missing)}")
    reports = []
    for run in runs:
        if run.name not in cache:
            cache[run.name] = load_sequence(sequences[run.name])
        seq = cache[run.name]
        rows = read_results(run / "results.jsonl")
        fps = None
        summary = run / "summary.json"
        if summary.is_file():
            fps = json.loads(summary.read_text()).get("fps")
        reports.append(evaluate_sequence({r["index"]: r["estimate"] for r in rows}, seq, fps))
    return EvalReport(reports)


def cmd_eval(args) -> int:
    sequences = discover_sequences(args.seq)
    cache: dict[str, Sequence] = {}
    main = Path(args.results)
    report = _load_run(main, sequences, cache)
    compare = {}
    for c in args.compare or []:
        label = Path(c).name
        if label in compare or label == main.name:
            label = str(c)
        compare[label] = _load_run(Path(c), sequences, cache)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        write_report(report, staging, main.name, compare)
        out.mkdir(parents=True, exist_ok=True)
        for f in staging.iterdir():
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"{len(report.sequences)} sequence(s): AUC {report.auc:.3f}, precision@20 {report.precision[20]:.3f}")
    for label, r in compare.items():
        print(f"  {label}: AUC {r.auc:.3f}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qact", description="Active co-tracking with a learned query margin.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", help="track sequences and write per-frame results")
    p.add_argument("--seq", action="append", required=True,
                   help="OTB sequence directory or synthetic script .toml (repeatable)")
    p.add_argument("--config", help="TOML config; defaults apply to anything omitted")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--delta", type=float, help="fixed margin for active-fixed")
    p.add_argument("--qtable", help="trained Q-table for active-qlearn")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--overlay", action="store_true", help="also write frames with boxes drawn")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("train-policy", help="learn the margin policy")
    p.add_argument("--config", help="TOML config; an [env] section selects the episode source")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="continue training this Q-table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("eval", help="success/precision curves and attribute table")
    p.add_argument("--results", required=True, help="directory of <sequence>/results.jsonl")
    p.add_argument("--seq", action="append", required=True,
                   help="sequence, script, or directory of them, providing ground truth (repeatable)")
    p.add_argument("--compare", nargs="+", help="other results directories to overlay")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
