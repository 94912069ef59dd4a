import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qact.config import FeatureConfig
from qact.features import (
    COLOR_NAMES, N_COLORS, TargetLostError, color_name_map, extract_batch, extract_features, feature_length, hog,
    make_grid,
)
from qact.geometry import BoundingBox
from qact.sequences import Frame

CFG = FeatureConfig()


def naive_hog(gray, cell=8, block=2, bins=9):
    """Per-pixel loop version of the HOG descriptor (float64)."""
    P = gray.shape[0]
    g = gray.astype(np.float64)
    c = P // cell
    hist = np.zeros((c, c, bins))
    for y in range(P):
        for x in range(P):
            dx = g[y, min(x + 1, P - 1)] - g[y, max(x - 1, 0)]
            dy = g[min(y + 1, P - 1), x] - g[max(y - 1, 0), x]
            mag = np.hypot(dx, dy)
            angle = np.arctan2(dy, dx) % np.pi
            pos = angle / np.pi * bins - 0.5
            lo = int(np.floor(pos))
            frac = pos - lo
            hist[y // cell, x // cell, lo % bins] += mag * (1 - frac)
            hist[y // cell, x // cell, (lo + 1) % bins] += mag * frac
    out = []
    for by in range(c - block + 1):
        for bx in range(c - block + 1):
            v = hist[by:by + block, bx:bx + block].ravel()
            out.append(v / np.sqrt(np.sum(v**2) + 1e-12))
    return np.concatenate(out)


def test_hog_matches_loop_oracle(rng):
    patches = rng.uniform(0, 255, size=(3, 32, 32)).astype(np.float32)
    fast = hog(patches)
    for i in range(3):
        np.testing.assert_allclose(fast[i], naive_hog(patches[i]), atol=2e-5)


def test_hog_of_edge_points_one_way():
    patch = np.zeros((1, 32, 32), np.float32)
    patch[:, :, 16:] = 100.0  # vertical edge: horizontal gradient, orientation 0
    v = hog(patch).reshape(-1, 9)
    assert v.argmax(axis=1)[v.max(axis=1) > 0].tolist() == [0] * int((v.max(axis=1) > 0).sum())


def test_grid_region_example():
    g = make_grid(BoundingBox(40, 40, 20, 20), (200, 200), 147, (0.95, 1.0, 1.05))
    assert g.region == BoundingBox(20, 20, 60, 60)
    assert len(g.positions) == 147
    one_scale = g.positions[g.positions[:, 2] == 1.0]
    assert len(one_scale) == 49
    assert len(np.unique(one_scale[:, 0])) == len(np.unique(one_scale[:, 1])) == 7


@settings(max_examples=50)
@given(st.floats(-4, 155), st.floats(-4, 115), st.floats(5, 60), st.floats(5, 60),
       st.sampled_from([27, 75, 147, 243]))
def test_grid_invariants(x, y, w, h, n_s):
    last = BoundingBox(x, y, w, h)
    g = make_grid(last, (160, 120), n_s)
    assert len(g.positions) == n_s
    r = g.region
    assert np.all((g.positions[:, 0] >= r.x) & (g.positions[:, 0] <= r.x2))
    assert np.all((g.positions[:, 1] >= r.y) & (g.positions[:, 1] <= r.y2))
    for s in g.scales:
        p = g.positions[g.positions[:, 2] == s]
        for axis in (0, 1):
            d = np.diff(np.unique(p[:, axis]))
            if len(d):
                assert np.ptp(d) <= 1e-9
    again = make_grid(last, (160, 120), n_s)
    assert np.array_equal(g.positions, again.positions)


def test_grid_outside_frame_signals_lost():
    with pytest.raises(TargetLostError):
        make_grid(BoundingBox(500, 500, 10, 10), (160, 120), 147)


def test_feature_length():
    assert feature_length(CFG) == 3 * 3 * 4 * 9 + 11 == 335


def test_gray_patch():
    frame = Frame(1, np.full((60, 60, 3), 128, np.uint8))
    v = extract_features(frame, BoundingBox(10, 10, 20, 20))
    assert np.all(v[:-N_COLORS] == 0)
    assert v[-N_COLORS:][COLOR_NAMES.index("gray")] == 1.0
    assert v[-N_COLORS:].sum() == 1.0


def test_red_patch():
    px = np.zeros((60, 60, 3), np.uint8)
    px[..., 0] = 255
    v = extract_features(Frame(1, px), BoundingBox(10, 10, 20, 20))
    expected = np.zeros(N_COLORS)
    expected[COLOR_NAMES.index("red")] = 1.0
    assert np.array_equal(v[-N_COLORS:], expected)


def test_color_name_lookup():
    px = np.array([[[255, 0, 0], [0, 0, 0], [255, 255, 255], [0, 0, 255]]], np.uint8)
    assert [COLOR_NAMES[i] for i in color_name_map(px).ravel()] == ["red", "black", "white", "blue"]


def test_translation_invariance(rng):
    patch = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
    px = np.zeros((100, 100, 3), np.uint8)
    px[5:25, 5:25] = patch
    px[60:80, 40:60] = patch
    frame = Frame(1, px)
    a = extract_features(frame, BoundingBox(5, 5, 20, 20))
    b = extract_features(frame, BoundingBox(40, 60, 20, 20))
    assert np.array_equal(a, b)


def test_hog_invariant_to_brightness_offset(rng):
    px = rng.integers(0, 200, size=(50, 50, 3), dtype=np.uint8)
    box = BoundingBox(5, 5, 32, 32)
    a = extract_features(Frame(1, px), box)
    b = extract_features(Frame(1, px + np.uint8(40)), box)
    np.testing.assert_allclose(a[:-N_COLORS], b[:-N_COLORS], atol=1e-5)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(-3.5, 79), st.floats(-3.5, 59), st.floats(4, 40), st.floats(4, 40))
def test_features_finite_and_normalized(seed, x, y, w, h):
    px = np.random.default_rng(seed).integers(0, 256, size=(60, 80, 3), dtype=np.uint8)
    v = extract_features(Frame(1, px), BoundingBox(x, y, w, h))
    assert v.shape == (feature_length(CFG),)
    assert np.all(np.isfinite(v))
    assert abs(v[-N_COLORS:].sum() - 1.0) <= 1e-9


def test_batch_matches_single(rng):
    frame = Frame(1, rng.integers(0, 256, size=(120, 160, 3), dtype=np.uint8))
    grid = make_grid(BoundingBox(60, 40, 24, 24), (160, 120), 27)
    batch = extract_batch(frame, grid.boxes())
    for j in (0, 13, 26):
        np.testing.assert_array_equal(batch[j], extract_features(frame, grid.box(j)))


def test_candidate_outside_frame_rejected():
    frame = Frame(1, np.zeros((50, 50, 3), np.uint8))
    with pytest.raises(ValueError):
        extract_features(frame, BoundingBox(60, 0, 10, 10))
