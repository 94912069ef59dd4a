"""Deterministic candidate grids and HOG + color-name patch features."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from qact.config import FeatureConfig
from qact.geometry import BoundingBox
from qact.sequences import Frame

COLOR_NAMES = ("black", "blue", "brown", "gray", "green", "orange", "pink", "purple", "red", "white", "yellow")
N_COLORS = len(COLOR_NAMES)


class TargetLostError(RuntimeError):
    """The search region around the last estimate does not intersect the frame."""


@dataclass(frozen=True)
class SampleGrid:
    n_s: int
    scales: tuple[float, ...]
    region: BoundingBox
    positions: np.ndarray  # (n_s, 3): cx, cy, scale
    base_size: tuple[float, float]

    def boxes(self) -> np.ndarray:
        """Candidate boxes as an (n_s, 4) array of x, y, w, h."""
        w = self.base_size[0] * self.positions[:, 2]
        h = self.base_size[1] * self.positions[:, 2]
        return np.column_stack([self.positions[:, 0] - w / 2, self.positions[:, 1] - h / 2, w, h])

    def box(self, j: int) -> BoundingBox:
        return BoundingBox(*(float(v) for v in self.boxes()[j]))


def make_grid(last: BoundingBox, frame_dims: tuple[int, int], n_s: int,
              scales=(0.95, 1.0, 1.05), search_factor: float = 3.0) -> SampleGrid:
    """Equi-spaced candidate centers over the search region, one square grid per scale.

    The region has the center of ``last`` and ``search_factor`` times its
    width and height, clipped to the frame. Each scale gets a side x side
    grid whose points sit at the centers of equal cells of the region.
    """
    width, height = frame_dims
    region = BoundingBox.from_center(last.cx, last.cy, search_factor * last.w, search_factor * last.h)
    region = region.clip(width, height)
    if region is None:
        raise TargetLostError(f"search region around {last} lies outside the {width}x{height} frame")
    scales = tuple(float(s) for s in scales)
    per_scale, rem = divmod(n_s, len(scales))
    side = math.isqrt(per_scale)
    if rem or side * side != per_scale:
        raise ValueError(f"n_s={n_s} is not a perfect square per scale over {len(scales)} scales")

    frac = (np.arange(side) + 0.5) / side
    xs = region.x + frac * region.w
    ys = region.y + frac * region.h
    gx, gy = np.meshgrid(xs, ys)  # row-major: y outer, x inner
    pos = []
    for s in scales:
        pos.append(np.column_stack([gx.ravel(), gy.ravel(), np.full(per_scale, s)]))
    return SampleGrid(n_s, scales, region, np.vstack(pos), (last.w, last.h))


@lru_cache(maxsize=1)
def color_prototypes() -> tuple[np.ndarray, np.ndarray]:
    """(rgb prototypes (m, 3), name index per prototype (m,)) from the shipped table."""
    text = resources.files("qact").joinpath("data/color_names.txt").read_text()
    rows = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            r, g, b, idx = (int(v) for v in line.split())
            if not 0 <= idx < N_COLORS:
                raise ValueError(f"color table row has bad name index: {line}")
            rows.append((r, g, b, idx))
    table = np.array(rows, dtype=np.int64)
    return table[:, :3].astype(np.float64), table[:, 3]


def color_name_map(pixels: np.ndarray) -> np.ndarray:
    """Name index of every pixel of an (..., 3) RGB array, nearest prototype in RGB."""
    protos, names = color_prototypes()
    flat = pixels.reshape(-1, 3).astype(np.float64)
    d = (flat**2).sum(1)[:, None] - 2.0 * flat @ protos.T + (protos**2).sum(1)[None, :]
    return names[np.argmin(d, axis=1)].reshape(pixels.shape[:-1])


def feature_length(cfg: FeatureConfig) -> int:
    cells = cfg.patch_size // cfg.hog_cell
    blocks = cells - cfg.hog_block + 1
    return blocks * blocks * cfg.hog_block * cfg.hog_block * cfg.hog_bins + N_COLORS


def _sample_indices(boxes: np.ndarray, width: int, height: int, size: int):
    frac = (np.arange(size) + 0.5) / size
    xs = np.floor(boxes[:, 0:1] + frac[None, :] * boxes[:, 2:3]).astype(np.int64)
    ys = np.floor(boxes[:, 1:2] + frac[None, :] * boxes[:, 3:4]).astype(np.int64)
    # clamp-to-edge for candidates partly outside the frame
    return np.clip(xs, 0, width - 1), np.clip(ys, 0, height - 1)


def hog(gray: np.ndarray, cell: int = 8, block: int = 2, bins: int = 9) -> np.ndarray:
    """HOG of a batch of square patches, (n, P, P) -> (n, n_features).

    Central-difference gradients with replicated borders, unsigned
    orientations split linearly between neighbouring bins, L2-normalized
    overlapping blocks (stride one cell).
    """
    n, P, _ = gray.shape
    gray = np.asarray(gray, dtype=np.float32)
    idx = np.arange(P)
    gx = np.empty_like(gray)
    gy = np.empty_like(gray)
    gx[:, :, 1:-1] = gray[:, :, 2:] - gray[:, :, :-2]
    gx[:, :, 0] = gray[:, :, 1] - gray[:, :, 0]
    gx[:, :, -1] = gray[:, :, -1] - gray[:, :, -2]
    gy[:, 1:-1, :] = gray[:, 2:, :] - gray[:, :-2, :]
    gy[:, 0, :] = gray[:, 1, :] - gray[:, 0, :]
    gy[:, -1, :] = gray[:, -1, :] - gray[:, -2, :]
    mag = np.sqrt(gx * gx + gy * gy)
    pos = np.mod(np.arctan2(gy, gx) * np.float32(bins / np.pi), np.float32(bins)) - np.float32(0.5)
    lo = np.floor(pos)
    w_hi = pos - lo
    lo = lo.astype(np.int64) % bins
    hi = (lo + 1) % bins
    c = P // cell
    cell_id = (idx[:, None] // cell) * c + idx[None, :] // cell  # (P, P)
    base = (np.arange(n)[:, None, None] * (c * c) + cell_id[None]) * bins
    size = n * c * c * bins
    cells = np.bincount((base + lo).ravel(), weights=(mag * (1.0 - w_hi)).ravel(), minlength=size)
    cells += np.bincount((base + hi).ravel(), weights=(mag * w_hi).ravel(), minlength=size)
    cells = cells.reshape(n, c, c, bins)  # float64 from bincount
    nb = c - block + 1
    out = np.empty((n, nb, nb, block * block * bins))
    for by in range(nb):
        for bx in range(nb):
            v = cells[:, by:by + block, bx:bx + block, :].reshape(n, -1)
            out[:, by, bx, :] = v / np.sqrt((v**2).sum(1, keepdims=True) + 1e-12)
    return out.reshape(n, -1)


def extract_batch(frame: Frame, boxes: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Features for every row of an (n, 4) x/y/w/h array; HOG first, color names last."""
    cfg = cfg or FeatureConfig()
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    W, H = frame.width, frame.height
    outside = (boxes[:, 0] >= W) | (boxes[:, 1] >= H) | (boxes[:, 0] + boxes[:, 2] <= 0) | (boxes[:, 1] + boxes[:, 3] <= 0)
    if outside.any():
        j = int(np.argmax(outside))
        raise ValueError(f"candidate {boxes[j].tolist()} lies fully outside the {W}x{H} frame")

    P = cfg.patch_size
    xs, ys = _sample_indices(boxes, W, H, P)
    x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
    crop = frame.pixels[y0:y1, x0:x1]
    xs, ys = xs - x0, ys - y0
    patches = crop[ys[:, :, None], xs[:, None, :]].astype(np.float32)  # (n, P, P, 3)

    gray = patches @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    hog_part = hog(gray, cfg.hog_cell, cfg.hog_block, cfg.hog_bins)

    names = color_name_map(crop)[ys[:, :, None], xs[:, None, :]].reshape(len(boxes), -1)
    keys = np.arange(len(boxes))[:, None] * N_COLORS + names
    counts = np.bincount(keys.ravel(), minlength=len(boxes) * N_COLORS).reshape(len(boxes), N_COLORS)
    return np.hstack([hog_part, counts / (P * P)])


def extract_features(frame: Frame, candidate: BoundingBox, cfg: FeatureConfig | None = None) -> np.ndarray:
    return extract_batch(frame, np.array([candidate.as_tuple()]), cfg)[0]
