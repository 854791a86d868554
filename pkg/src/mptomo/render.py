"""Binary PPM (P6) rendering of a reconstruction over the inspection disk."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import EMPTY, Region

GRAY = (128, 128, 128)
BLACK = (0, 0, 0)
WHITE = (255, 255, 255)
RED = (220, 0, 0)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported max value {maxval}")
    pixels = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8)
    return pixels.reshape(h, w, 3)


def _outline(inside: np.ndarray) -> np.ndarray:
    pad = np.pad(inside, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    edge = inside & ~interior
    # thicken to about two pixels
    grown = edge.copy()
    grown[1:] |= edge[:-1]
    grown[:, 1:] |= edge[:, :-1]
    return grown


def render_image(
    radius: float,
    cells: Iterable[tuple[float, float, bool]],
    side: float,
    anomaly: Region = EMPTY,
    size: int = 800,
) -> np.ndarray:
    """Raster of the disk: gray background, accepted cells white, disk
    boundary black and the true anomaly outline red."""
    half = 1.05 * radius
    centers = (np.arange(size) + 0.5) / size * 2.0 * half - half
    x, y = np.meshgrid(centers, -centers)
    pts = np.stack([x, y], axis=-1)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = GRAY

    for cx, cy, accepted in cells:
        if accepted:
            sel = (np.abs(x - cx) <= 0.5 * side) & (np.abs(y - cy) <= 0.5 * side)
            img[sel] = WHITE

    px = 2.0 * half / size
    img[np.abs(np.hypot(x, y) - radius) <= 1.5 * px] = BLACK
    if anomaly != EMPTY:
        img[_outline(anomaly.contains(pts))] = RED
    return img


def render(path: str | Path, radius: float, cells, side: float, anomaly: Region = EMPTY, size: int = 800) -> None:
    write_ppm(path, render_image(radius, cells, side, anomaly, size))
