"""Benchmark sequences in OTB layout and seeded synthetic sequences.

OTB layout::

    <seq>/img/0001.jpg ...            numbered frames (jpg/jpeg/png)
    <seq>/groundtruth_rect.txt        one "x,y,w,h" row per frame
    <seq>/attributes.txt              optional, comma separated challenge tags

Rows may use commas, tabs or plain whitespace. A row of ``NaN`` (or a
zero-sized box) marks a frame without annotation; the first frame must
always be annotated because it initializes the tracker.
"""

from __future__ import annotations

import math
import re
from collections.abc import Sequence as SequenceABC
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from qact.config import ConfigError, DataError, dump_toml, tomllib
from qact.geometry import BoundingBox

ATTRIBUTES = ("IV", "SV", "IPR", "OPR", "DEF", "OCC", "OV", "LR", "BC", "FM", "MB")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
GT_NAMES = ("groundtruth_rect.txt", "groundtruth.txt")


@dataclass(frozen=True, eq=False)
class Frame:
    """One RGB frame; ``pixels`` is a (height, width, 3) uint8 array."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"frame {self.index}: expected HxWx3 uint8, got {p.shape} {p.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.pixels, other.pixels)


class _ImageFrames(SequenceABC):
    """Frames decoded from disk on access; no shared mutable state, so thread-safe."""

    def __init__(self, paths: list[Path]):
        self._paths = paths

    def __len__(self):
        return len(self._paths)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        path = self._paths[i]
        try:
            with Image.open(path) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise DataError(f"cannot read image {path}: {exc}") from exc
        return Frame(index=(i % len(self)) + 1, pixels=pixels)


@dataclass
class Sequence:
    name: str
    frames: SequenceABC  # of Frame; index 0 is frame 1
    ground_truth: list[BoundingBox | None]
    attributes: frozenset[str] = frozenset()

    def __post_init__(self):
        if len(self.ground_truth) != len(self.frames):
            raise DataError(
                f"{self.name}: {len(self.frames)} frames but {len(self.ground_truth)} ground-truth slots"
            )
        bad = set(self.attributes) - set(ATTRIBUTES)
        if bad:
            raise DataError(f"{self.name}: unknown attribute tags {sorted(bad)}")
        self.attributes = frozenset(self.attributes)

    def __len__(self):
        return len(self.frames)

    def frame(self, index: int) -> Frame:
        """Frame by 1-based index."""
        return self.frames[index - 1]

    def gt(self, index: int) -> BoundingBox | None:
        return self.ground_truth[index - 1]

    @property
    def annotated(self) -> list[int]:
        return [i + 1 for i, b in enumerate(self.ground_truth) if b is not None]


# --------------------------------------------------------------------------
# OTB loading / writing


def parse_gt_line(line: str) -> BoundingBox | None:
    parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
    if len(parts) != 4:
        raise DataError(f"ground-truth row needs 4 numbers, got {line.strip()!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"bad ground-truth row {line.strip()!r}") from exc
    if any(math.isnan(v) for v in (x, y, w, h)) or w <= 0 or h <= 0:
        return None
    return BoundingBox(x, y, w, h)


def _frame_number(path: Path) -> int | None:
    try:
        return int(path.stem)
    except ValueError:
        return None


def load_otb_sequence(path: str | Path) -> Sequence:
    root = Path(path)
    img_dir = root / "img"
    if not img_dir.is_dir():
        raise DataError(f"{root}: no img/ directory")
    images = [p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and _frame_number(p) is not None]
    if not images:
        raise DataError(f"{img_dir}: no numbered images")
    images.sort(key=_frame_number)

    size = None
    for p in images:
        try:
            with Image.open(p) as im:
                this = im.size
        except OSError as exc:
            raise DataError(f"cannot read image {p}: {exc}") from exc
        if size is None:
            size = this
        elif this != size:
            raise DataError(f"{p}: size {this} differs from first frame {size}")
    width, height = size

    gt_path = next((root / n for n in GT_NAMES if (root / n).is_file()), None)
    if gt_path is None:
        ground_truth = [None] * len(images)
    else:
        rows = [ln for ln in gt_path.read_text().splitlines() if ln.strip()]
        if len(rows) != len(images):
            raise DataError(
                f"{root.name}: frame count {len(images)} does not match ground-truth count {len(rows)}"
            )
        ground_truth = []
        for row in rows:
            box = parse_gt_line(row)
            ground_truth.append(box.clip(width, height) if box is not None else None)
        if ground_truth[0] is None:
            raise DataError(f"{root.name}: first frame has no ground truth")

    attributes: frozenset[str] = frozenset()
    attr_path = root / "attributes.txt"
    if attr_path.is_file():
        tags = [t.strip().upper() for t in re.split(r"[,\s]+", attr_path.read_text()) if t.strip()]
        attributes = frozenset(tags)

    return Sequence(root.name, _ImageFrames(images), ground_truth, attributes)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_otb_sequence(seq: Sequence, path: str | Path) -> Path:
    """Write frames as lossless PNG plus the ground-truth file."""
    root = Path(path)
    (root / "img").mkdir(parents=True, exist_ok=True)
    for i in range(len(seq)):
        Image.fromarray(seq.frames[i].pixels).save(root / "img" / f"{i + 1:04d}.png")
    lines = []
    for box in seq.ground_truth:
        lines.append("NaN,NaN,NaN,NaN" if box is None else ",".join(_fmt(v) for v in box.as_tuple()))
    (root / "groundtruth_rect.txt").write_text("\n".join(lines) + "\n")
    if seq.attributes:
        (root / "attributes.txt").write_text(",".join(sorted(seq.attributes)) + "\n")
    return root


# --------------------------------------------------------------------------
# Synthetic sequences


@dataclass(frozen=True)
class OcclusionEvent:
    start: int
    duration: int
    coverage: float = 1.0


@dataclass(frozen=True)
class IlluminationEvent:
    start: int
    duration: int
    gain: float


@dataclass(frozen=True)
class SyntheticScript:
    seed: int
    length: int
    waypoints: tuple[tuple[float, float], ...]  # target centers, pixels
    speed: float = 1.5  # pixels per frame along the waypoint path
    width: int = 160
    height: int = 120
    target_size: tuple[int, int] = (24, 24)
    occlusions: tuple[OcclusionEvent, ...] = ()
    illuminations: tuple[IlluminationEvent, ...] = ()
    background_cells: int = 8  # coarse texture grid cell size in pixels
    background_noise: float = 12.0
    annotation_stride: int = 1
    name: str = ""

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"synthetic length must be >= 1, got {self.length}")
        if not self.waypoints:
            raise ValueError("synthetic script needs at least one waypoint")
        tw, th = self.target_size
        if tw < 1 or th < 1 or tw > self.width or th > self.height:
            raise ValueError(f"target size {self.target_size} does not fit {self.width}x{self.height}")
        if self.annotation_stride < 1:
            raise ValueError("annotation_stride must be >= 1")
        for ev in self.occlusions:
            self._check_span(ev.start, ev.duration)
            if not 0.0 <= ev.coverage <= 1.0:
                raise ValueError(f"occlusion coverage must lie in [0, 1], got {ev.coverage}")
        for ev in self.illuminations:
            self._check_span(ev.start, ev.duration)
            if ev.gain <= 0:
                raise ValueError(f"illumination gain must be positive, got {ev.gain}")

    def _check_span(self, start: int, duration: int):
        if start < 1 or duration < 1 or start + duration - 1 > self.length:
            raise ValueError(f"event [{start}, +{duration}) outside [1, {self.length}]")


def _trajectory(script: SyntheticScript) -> np.ndarray:
    """Integer top-left corners per frame, clipped so the target stays in frame."""
    pts = np.asarray(script.waypoints, dtype=float)
    tw, th = script.target_size
    out = np.empty((script.length, 2))
    pos = pts[0].copy()
    nxt = 1
    for t in range(script.length):
        out[t] = pos
        step = script.speed
        while step > 0 and nxt < len(pts):
            vec = pts[nxt] - pos
            dist = float(np.hypot(*vec))
            if dist <= step:
                pos = pts[nxt].copy()
                step -= dist
                nxt += 1
            else:
                pos = pos + vec * (step / dist)
                step = 0
    corners = np.rint(out - [tw / 2.0, th / 2.0])
    corners[:, 0] = np.clip(corners[:, 0], 0, script.width - tw)
    corners[:, 1] = np.clip(corners[:, 1], 0, script.height - th)
    return corners.astype(int)


def _smooth_texture(rng, height, width, cell, palette, noise) -> np.ndarray:
    gh, gw = -(-height // cell) + 1, -(-width // cell) + 1
    coarse = palette[rng.integers(0, len(palette), size=(gh, gw))].astype(np.float64)
    coarse += rng.normal(0.0, 10.0, size=coarse.shape)
    small = Image.fromarray(np.clip(coarse, 0, 255).astype(np.uint8))
    big = np.asarray(small.resize((gw * cell, gh * cell), Image.BILINEAR), dtype=np.float64)
    big = big[:height, :width]
    big = big + rng.normal(0.0, noise, size=big.shape)
    return np.clip(big, 0, 255)


# cool/neutral background versus warm target colors
_BACKGROUND_PALETTE = np.array(
    [[40, 90, 60], [60, 120, 80], [50, 70, 120], [80, 100, 140], [90, 110, 100], [30, 60, 50]]
)
_TARGET_PALETTE = np.array([[220, 40, 30], [240, 200, 40], [250, 120, 20], [200, 30, 90], [250, 240, 220]])
_OCCLUDER_PALETTE = np.array([[70, 70, 70], [110, 110, 110], [60, 80, 70], [90, 90, 110]])


def generate_synthetic(script: SyntheticScript) -> Sequence:
    rng = np.random.default_rng(script.seed)
    tw, th = script.target_size
    background = _smooth_texture(rng, script.height, script.width, script.background_cells,
                                 _BACKGROUND_PALETTE, script.background_noise)
    target = _smooth_texture(rng, th, tw, max(2, min(tw, th) // 3), _TARGET_PALETTE, 8.0)
    occluder = _smooth_texture(rng, th, tw, max(2, min(tw, th) // 3), _OCCLUDER_PALETTE, 8.0)
    corners = _trajectory(script)

    frames, gts = [], []
    for t in range(1, script.length + 1):
        img = background.copy()
        x, y = corners[t - 1]
        img[y:y + th, x:x + tw] = target
        for ev in script.occlusions:
            if ev.start <= t < ev.start + ev.duration and ev.coverage > 0:
                cols = int(math.ceil(ev.coverage * tw - 1e-9))
                img[y:y + th, x:x + cols] = occluder[:, :cols]
        for ev in script.illuminations:
            if ev.start <= t < ev.start + ev.duration:
                img = img * ev.gain
        frames.append(Frame(t, np.clip(np.rint(img), 0, 255).astype(np.uint8)))
        annotated = t == 1 or t % script.annotation_stride == 0
        gts.append(BoundingBox(float(x), float(y), float(tw), float(th)) if annotated else None)

    tags = set()
    if script.occlusions:
        tags.add("OCC")
    if script.illuminations:
        tags.add("IV")
    name = script.name or f"synth{script.seed}"
    return Sequence(name, frames, gts, frozenset(tags))


# --------------------------------------------------------------------------
# Script files
#
#   [script]
#   seed = 3
#   length = 120
#   waypoints = [[40, 60], [120, 60]]
#   speed = 1.0
#   annotation_stride = 1
#   [[occlusion]]
#   start = 50
#   duration = 8
#   coverage = 1.0
#   [[illumination]]
#   start = 80
#   duration = 10
#   gain = 1.4


def script_from_dict(data: dict) -> SyntheticScript:
    body = dict(data.get("script", {}))
    try:
        body["waypoints"] = tuple(tuple(float(c) for c in p) for p in body.get("waypoints", ()))
        if "target_size" in body:
            body["target_size"] = tuple(int(v) for v in body["target_size"])
        body["occlusions"] = tuple(OcclusionEvent(**ev) for ev in data.get("occlusion", []))
        body["illuminations"] = tuple(IlluminationEvent(**ev) for ev in data.get("illumination", []))
        return SyntheticScript(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic script: {exc}") from exc


def load_script(path: str | Path) -> SyntheticScript:
    with open(path, "rb") as fh:
        return script_from_dict(tomllib.load(fh))


def dump_script(script: SyntheticScript) -> str:
    body = {
        "seed": script.seed, "length": script.length,
        "waypoints": [list(p) for p in script.waypoints], "speed": script.speed,
        "width": script.width, "height": script.height, "target_size": list(script.target_size),
        "background_cells": script.background_cells, "background_noise": script.background_noise,
        "annotation_stride": script.annotation_stride, "name": script.name,
    }
    text = dump_toml({"script": body})
    for key, events in (("occlusion", script.occlusions), ("illumination", script.illuminations)):
        for ev in events:
            text += dump_toml({key: ev.__dict__}).replace(f"[{key}]", f"[[{key}]]", 1)
    return text


def random_script(rng: np.random.Generator, length: int = 400, annotation_stride: int = 25,
                  occlusion_prob: float = 0.7, illumination_prob: float = 0.3,
                  width: int = 160, height: int = 120, name: str = "") -> SyntheticScript:
    """Draw a random training script: wandering target, maybe occluded or relit."""
    size = int(rng.integers(20, 29))
    margin = size
    n_way = int(rng.integers(2, 5))
    waypoints = tuple(
        (float(rng.uniform(margin, width - margin)), float(rng.uniform(margin, height - margin)))
        for _ in range(n_way)
    )
    occlusions = []
    if rng.random() < occlusion_prob and length >= 20:
        dur = int(rng.integers(4, max(5, min(16, length // 5))))
        start = int(rng.integers(5, length - dur + 1))
        occlusions.append(OcclusionEvent(start, dur, float(rng.choice([0.5, 0.75, 1.0]))))
    illuminations = []
    if rng.random() < illumination_prob and length >= 20:
        dur = int(rng.integers(5, max(6, length // 4)))
        start = int(rng.integers(2, length - dur + 1))
        illuminations.append(IlluminationEvent(start, dur, float(rng.uniform(0.6, 1.5))))
    return SyntheticScript(
        seed=int(rng.integers(0, 2**31 - 1)), length=length, waypoints=waypoints,
        speed=float(rng.uniform(0.5, 2.0)), width=width, height=height, target_size=(size, size),
        occlusions=tuple(occlusions), illuminations=tuple(illuminations),
        annotation_stride=annotation_stride, name=name,
    )


def full_occlusion_suite(seed: int, count: int = 10, length: int = 100,
                         annotation_stride: int = 1) -> list[SyntheticScript]:
    """Held-out scripts where every sequence has one fully covering occluder."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        s = random_script(rng, length, annotation_stride, occlusion_prob=1.0, name=f"heldout{i:02d}")
        occ = s.occlusions[0]
        out.append(replace(s, occlusions=(OcclusionEvent(occ.start, occ.duration, 1.0),)))
    return out
