"""Seeded procedural textures used as clean source imagery and ground albedo."""
from __future__ import annotations

import numpy as np


def _upsample_bilinear(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinearly resample a small 2D grid to (h, w)."""
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - wx) + grid[np.ix_(y0, x1)] * wx
    bot = grid[np.ix_(y1, x0)] * (1 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def value_noise(
    h: int, w: int, rng: np.random.Generator, *, octaves: int = 3, base_cells: int = 4
) -> np.ndarray:
    """Multi-octave value noise in [0, 1], float64, deterministic from rng."""
    acc = np.zeros((h, w))
    amp = 1.0
    cells = base_cells
    for _ in range(octaves):
        grid = rng.random((cells + 1, cells + 1))
        acc += amp * _upsample_bilinear(grid, h, w)
        amp *= 0.5
        cells *= 2
    lo, hi = acc.min(), acc.max()
    if hi > lo:
        acc = (acc - lo) / (hi - lo)
    return acc


def random_texture(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """A colorful (h, w, 3) float64 texture: noise-lerped palette + shapes.

    Values stay inside (0, 1) with a little headroom so ISP edits and
    shading still have room to move pixels in both directions.
    """
    noise = value_noise(h, w, rng)
    c0 = rng.uniform(0.1, 0.9, size=3)
    c1 = rng.uniform(0.1, 0.9, size=3)
    img = c0 + noise[..., None] * (c1 - c0)

    for _ in range(int(rng.integers(2, 6))):
        color = rng.uniform(0.05, 0.95, size=3)
        alpha = rng.uniform(0.4, 1.0)
        if rng.random() < 0.5:  # rectangle
            y0 = int(rng.integers(0, h))
            x0 = int(rng.integers(0, w))
            y1 = min(h, y0 + int(rng.integers(h // 8 + 1, h // 2 + 2)))
            x1 = min(w, x0 + int(rng.integers(w // 8 + 1, w // 2 + 2)))
            region = img[y0:y1, x0:x1]
            img[y0:y1, x0:x1] = (1 - alpha) * region + alpha * color
        else:  # ellipse
            cy = rng.uniform(0, h)
            cx = rng.uniform(0, w)
            ry = rng.uniform(h / 12, h / 3) + 1.0
            rx = rng.uniform(w / 12, w / 3) + 1.0
            yy, xx = np.mgrid[0:h, 0:w]
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            img[inside] = (1 - alpha) * img[inside] + alpha * color

    return np.clip(img, 0.02, 0.98)
