import numpy as np
import pytest

from mptomo.geometry import EMPTY, Rectangle
from mptomo.recon import build_test_grid
from mptomo.render import read_ppm, render_image, write_ppm

R = 0.3
GRID = build_test_grid(R, 0.05, 0.03)


def pixel(x, y, size=800):
    half = 1.05 * R
    col = int((x + half) / (2 * half) * size)
    row = int((half - y) / (2 * half) * size)
    return row, col


def cells(accepted):
    return [(float(c[0]), float(c[1]), bool(a)) for c, a in zip(GRID.centers, accepted)]


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_empty_mask_has_no_white():
    img = render_image(R, cells(np.zeros(len(GRID), bool)), 0.05)
    assert img.shape == (800, 800, 3)
    assert not np.all(img == 255, axis=2).any()
    assert tuple(img[0, 0]) == (128, 128, 128)
    # the disk boundary is black
    assert tuple(img[pixel(R, 0.0)]) == (0, 0, 0) or tuple(img[pixel(R - 0.001, 0.0)]) == (0, 0, 0)


def test_full_mask_all_cells_white():
    img = render_image(R, cells(np.ones(len(GRID), bool)), 0.05)
    for cx, cy in GRID.centers:
        assert tuple(img[pixel(cx, cy)]) == (255, 255, 255)


def test_outline_covered_by_estimate():
    # cell-aligned rectangle rendered over exactly its own cells
    rect = Rectangle((0.025, 0.0), 0.15, 0.1)
    inside = rect.contains(GRID.centers)
    img = render_image(R, cells(inside), 0.05, rect)
    red = np.all(img == (220, 0, 0), axis=2)
    white = np.all(img == 255, axis=2)
    # outline length 0.5 m, at least one pixel thick
    assert red.sum() >= 0.5 / (2.1 * R / 800)
    # every red pixel touches the white region within two pixels
    grown = white.copy()
    for _ in range(2):
        grown[1:] |= grown[:-1].copy()
        grown[:-1] |= grown[1:].copy()
        grown[:, 1:] |= grown[:, :-1].copy()
        grown[:, :-1] |= grown[:, 1:].copy()
    assert np.all(grown[red])


def test_no_outline_without_anomaly():
    img = render_image(R, cells(np.ones(len(GRID), bool)), 0.05, EMPTY)
    assert not np.all(img == (220, 0, 0), axis=2).any()


def test_read_rejects_other_formats(tmp_path):
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "p3.ppm")
