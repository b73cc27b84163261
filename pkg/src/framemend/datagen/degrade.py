"""Artifact stream: procedural reconstruction-style degradations.

Four modes mirror the failure classes of learned novel-view renderers:
`blur` (lost detail via Gaussian blur plus down/up-sampling), `holes`
(missing regions filled with local mean color), `ghost` (a translated
alpha-blended echo), and `spurious` (foreign texture patches).  The clean
frame is always the target.  On clips every frame draws fresh corruption
parameters — the damage pops and shifts frame to frame the way
view-dependent reconstruction errors do — unless a parameter is pinned
via `params`, which then holds for the whole clip.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .sample import PairedSample
from .textures import random_texture

MODES = ("blur", "holes", "ghost", "spurious")


def _rects(rng: np.random.Generator, h: int, w: int, count: int, lo_frac=0.12, hi_frac=0.35):
    out = []
    for _ in range(count):
        rh = int(rng.integers(max(2, int(h * lo_frac)), max(3, int(h * hi_frac)) + 1))
        rw = int(rng.integers(max(2, int(w * lo_frac)), max(3, int(w * hi_frac)) + 1))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        out.append((y0, x0, rh, rw))
    return out


def _frame_params(mode: str, rng: np.random.Generator, h: int, w: int, pinned: dict) -> dict:
    """Draw one frame's corruption parameters; pinned keys are not redrawn."""
    p = dict(pinned)
    if mode == "blur":
        if "sigma" not in p:
            p["sigma"] = float(rng.uniform(0.6, 2.0))
        if "factor" not in p:
            p["factor"] = int(rng.integers(1, 3))
    elif mode in ("holes", "spurious"):
        lo, hi = (0.12, 0.35) if mode == "holes" else (0.1, 0.3)
        if "rects" not in p:
            count = p.get("count") or int(rng.integers(*((3, 8) if mode == "holes" else (2, 7))))
            p["rects"] = _rects(rng, h, w, count, lo, hi)
        if mode == "spurious" and "foreign" not in p:
            p["foreign"] = random_texture(h, w, rng)
    elif mode == "ghost":
        if "alpha" not in p:
            p["alpha"] = float(rng.uniform(0.35, 0.75))
        if "shift" not in p:
            shift = (int(rng.integers(-9, 10)), int(rng.integers(-9, 10)))
            p["shift"] = (3, 0) if shift == (0, 0) else shift
    return p


def _blur_frame(frame: np.ndarray, p: dict) -> tuple[np.ndarray, np.ndarray]:
    sigma, factor = p["sigma"], p["factor"]
    h, w = frame.shape[:2]
    if sigma == 0.0 and factor == 1:
        return frame.copy(), np.zeros((h, w), dtype=bool)
    out = frame
    if sigma > 0.0:
        out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0.0))
    if factor > 1:
        small = out[::factor, ::factor]
        out = ndimage.zoom(
            small, (h / small.shape[0], w / small.shape[1], 1.0), order=1,
            grid_mode=True, mode="nearest",
        )
    return np.clip(out, 0.0, 1.0), np.ones((h, w), dtype=bool)


def _holes_frame(frame, p):
    out = frame.copy()
    edit = np.zeros(frame.shape[:2], dtype=bool)
    for y0, x0, rh, rw in p["rects"]:
        region = frame[y0 : y0 + rh, x0 : x0 + rw, :]
        out[y0 : y0 + rh, x0 : x0 + rw, :] = region.mean(axis=(0, 1))  # local mean color
        edit[y0 : y0 + rh, x0 : x0 + rw] = True
    return out, edit


def _ghost_frame(frame, p):
    alpha = p["alpha"]
    dy, dx = p["shift"]
    h, w = frame.shape[:2]
    out = frame.copy()
    edit = np.zeros((h, w), dtype=bool)
    ys_dst = slice(max(0, dy), min(h, h + dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    # blend a shifted copy where the shifted source exists
    out[ys_dst, xs_dst, :] = (
        (1.0 - alpha) * frame[ys_dst, xs_dst, :] + alpha * frame[ys_src, xs_src, :]
    )
    edit[ys_dst, xs_dst] = True
    return out, edit


def _spurious_frame(frame, p):
    out = frame.copy()
    edit = np.zeros(frame.shape[:2], dtype=bool)
    foreign = p["foreign"]
    for y0, x0, rh, rw in p["rects"]:
        out[y0 : y0 + rh, x0 : x0 + rw, :] = foreign[y0 : y0 + rh, x0 : x0 + rw, :]
        edit[y0 : y0 + rh, x0 : x0 + rw] = True
    return out, edit


_MODE_FNS = {
    "blur": _blur_frame,
    "holes": _holes_frame,
    "ghost": _ghost_frame,
    "spurious": _spurious_frame,
}


def degrade(target, mode: str, seed, params: dict | None = None) -> PairedSample:
    """Corrupt a clean frame/clip into a paired sample (target = original).

    `params` pins individual parameters for every frame (used by tests for
    degenerate configurations, e.g. `sigma=0`).  Deterministic given seed.
    """
    if mode not in _MODE_FNS:
        raise ValueError(f"unknown degradation mode {mode!r} (have {MODES})")
    target = np.asarray(target, dtype=np.float64)
    clip = target if target.ndim == 4 else target[None]
    t, h, w, _ = clip.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    inputs = np.empty_like(clip)
    edit = np.zeros((t, h, w), dtype=bool)
    for i in range(t):
        p = _frame_params(mode, rng, h, w, params or {})
        inputs[i], edit[i] = _MODE_FNS[mode](clip[i], p)
    return PairedSample(
        inputs=inputs,
        targets=clip.copy(),
        stream="artifact",
        temporal=t > 1,
        fg_mask=None,
        edit_mask=edit,
        flows=None,
        flow_valid=None,
        meta={"mode": mode},
    )
