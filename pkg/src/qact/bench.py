"""One-pass (OTB-style) evaluation: success/precision curves, AUC, attribute tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from qact.config import DataError
from qact.geometry import BoundingBox, center_error, iou
from qact.sequences import Sequence

OVERLAP_THRESHOLDS = np.arange(101) / 100.0
ERROR_THRESHOLDS = np.arange(51, dtype=np.float64)
PRECISION_AT = 20


def success_curve(ious, thresholds: np.ndarray = OVERLAP_THRESHOLDS) -> np.ndarray:
    """Fraction of frames whose overlap is strictly above each threshold."""
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ValueError("success curve of zero frames")
    return (ious[None, :] > thresholds[:, None]).mean(axis=1)


def precision_curve(errors, thresholds: np.ndarray = ERROR_THRESHOLDS) -> np.ndarray:
    """Fraction of frames whose center error is within each pixel threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("precision curve of zero frames")
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def auc(curve, thresholds: np.ndarray = OVERLAP_THRESHOLDS) -> float:
    """Trapezoidal area under a curve sampled on ``thresholds`` (default [0, 1])."""
    c = np.asarray(curve, dtype=np.float64)
    x = np.asarray(thresholds, dtype=np.float64)
    return float(np.sum((c[1:] + c[:-1]) * np.diff(x)) / 2.0)


def measure_fps(seconds: float, frames: int) -> float:
    if frames < 1 or seconds <= 0:
        raise ValueError(f"need frames >= 1 and positive time, got {frames} frames in {seconds}s")
    return frames / seconds


@dataclass
class SequenceReport:
    name: str
    attributes: frozenset[str]
    ious: np.ndarray
    errors: np.ndarray
    fps: float | None = None
    success: np.ndarray = field(init=False)
    precision: np.ndarray = field(init=False)

    def __post_init__(self):
        self.success = success_curve(self.ious)
        self.precision = precision_curve(self.errors)

    @property
    def auc(self) -> float:
        return auc(self.success)

    @property
    def precision_at_20(self) -> float:
        return float(self.precision[PRECISION_AT])

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "attributes": sorted(self.attributes),
            "frames": int(len(self.ious)),
            "auc": self.auc,
            "precision_20": self.precision_at_20,
            "mean_iou": float(np.mean(self.ious)),
            "fps": self.fps,
            "success": self.success.tolist(),
            "precision": self.precision.tolist(),
        }


def evaluate_sequence(estimates: dict[int, BoundingBox], seq: Sequence, fps: float | None = None) -> SequenceReport:
    """Score every annotated frame; lost frames count with their frozen estimate."""
    ious, errors = [], []
    missing = []
    for idx in seq.annotated:
        est = estimates.get(idx)
        if est is None:
            missing.append(idx)
            continue
        gt = seq.gt(idx)
        ious.append(iou(est, gt))
        errors.append(center_error(est, gt))
    if missing:
        raise DataError(f"{seq.name}: no estimate for annotated frames {missing[:5]}{'...' if len(missing) > 5 else ''}")
    if not ious:
        raise DataError(f"{seq.name}: no annotated frames to evaluate")
    return SequenceReport(seq.name, seq.attributes, np.array(ious), np.array(errors), fps)


def attribute_table(reports: list[SequenceReport]) -> dict[str, float]:
    """Mean per-sequence AUC for each challenge tag present, plus ``ALL``."""
    table: dict[str, list[float]] = {}
    for r in reports:
        for tag in r.attributes:
            table.setdefault(tag, []).append(r.auc)
    out = {tag: float(np.mean(v)) for tag, v in sorted(table.items())}
    if reports:
        out["ALL"] = float(np.mean([r.auc for r in reports]))
    return out


@dataclass
class EvalReport:
    sequences: list[SequenceReport]

    def __post_init__(self):
        self.sequences = sorted(self.sequences, key=lambda r: r.name)

    @property
    def success(self) -> np.ndarray:
        return np.mean([r.success for r in self.sequences], axis=0)

    @property
    def precision(self) -> np.ndarray:
        return np.mean([r.precision for r in self.sequences], axis=0)

    @property
    def auc(self) -> float:
        return float(np.mean([r.auc for r in self.sequences]))

    @property
    def attributes(self) -> dict[str, float]:
        return attribute_table(self.sequences)

    def to_json(self) -> dict:
        fps = [r.fps for r in self.sequences if r.fps is not None]
        return {
            "sequences": [r.to_json() for r in self.sequences],
            "ALL": {
                "auc": self.auc,
                "precision_20": float(self.precision[PRECISION_AT]),
                "mean_fps": float(np.mean(fps)) if fps else None,
                "success": self.success.tolist(),
                "precision": self.precision.tolist(),
            },
            "attributes": self.attributes,
            "overlap_thresholds": OVERLAP_THRESHOLDS.tolist(),
            "error_thresholds": ERROR_THRESHOLDS.tolist(),
        }


# --------------------------------------------------------------------------
# Artifacts

_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def curve_svg(x: np.ndarray, curves: dict[str, np.ndarray], title: str, xlabel: str,
              width: int = 480, height: int = 360) -> str:
    """Dependency-free line chart; y axis fixed to [0, 1]."""
    left, right, top, bottom = 55, 150, 30, 45
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = float(x[0]), float(x[-1])

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1.0 - v) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
    ]
    for i in range(6):
        v = i / 5
        parts.append(f'<line x1="{left - 4}" y1="{py(v):.1f}" x2="{left}" y2="{py(v):.1f}" stroke="#444"/>')
        parts.append(f'<text x="{left - 7}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
        xv = x0 + (x1 - x0) * i / 5
        parts.append(f'<text x="{px(xv):.1f}" y="{top + ph + 15}" text-anchor="middle">{xv:g}</text>')
    for j, (label, c) in enumerate(curves.items()):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, c))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = top + 14 + 16 * j
        parts.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 32}" y="{ly}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_curves_csv(path: Path, thresholds: np.ndarray, curves: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", *curves])
        for i, th in enumerate(thresholds):
            w.writerow([repr(float(th)), *(repr(float(c[i])) for c in curves.values())])


def write_report(report: EvalReport, out_dir: str | Path, label: str = "tracker",
                 compare: dict[str, EvalReport] | None = None) -> Path:
    """report.json, success/precision CSV + SVG and attributes.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = {label: report, **(compare or {})}
    (out / "report.json").write_text(json.dumps(
        {"label": label, **report.to_json(), "compare": {k: v.to_json() for k, v in (compare or {}).items()}},
        indent=1) + "\n")

    def name(k, r):
        return f"{k} [{r.auc:.3f}]"

    succ = {name(k, r): r.success for k, r in runs.items()}
    prec = {f"{k} [{r.precision[PRECISION_AT]:.3f}]": r.precision for k, r in runs.items()}
    _write_curves_csv(out / "success.csv", OVERLAP_THRESHOLDS, {k: r.success for k, r in runs.items()})
    _write_curves_csv(out / "precision.csv", ERROR_THRESHOLDS, {k: r.precision for k, r in runs.items()})
    (out / "success.svg").write_text(curve_svg(OVERLAP_THRESHOLDS, succ, "Success plot", "Overlap threshold"))
    (out / "precision.svg").write_text(curve_svg(ERROR_THRESHOLDS, prec, "Precision plot", "Location error threshold (px)"))

    tags = sorted({t for r in runs.values() for t in r.attributes if t != "ALL"}) + ["ALL"]
    with open(out / "attributes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", *runs])
        for tag in tags:
            w.writerow([tag, *("" if tag not in r.attributes else repr(r.attributes[tag]) for r in runs.values())])
    return out
