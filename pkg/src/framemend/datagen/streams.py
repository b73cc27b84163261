"""Per-stream sample generators gluing textures, scenes, ISP, and degradations.

Each generator consumes a dedicated numpy Generator and draws every random
quantity from it in a fixed documented order, so a (seed, stream, index)
triple pins a sample bit for bit regardless of generation order.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..frames import quantize
from .degrade import MODES, degrade
from .isp import make_isp_pair, sample_isp_params
from .sample import PairedSample
from .scene import Box, Camera, SceneSpec, Sphere, make_reinsert_pair, make_shadow_pair, relight_fg, render_scene
from .textures import random_texture, value_noise

STREAMS = ("artifact", "isp", "relight", "shadow", "reinsert")


def _to_grid(frames: np.ndarray) -> np.ndarray:
    """Snap float frames onto the exact 8-bit grid (k/255 in float64)."""
    return quantize(frames).astype(np.float64) / 255.0


def _random_primitive(rng: np.random.Generator, size: float, sphere_prob=0.6):
    albedo = tuple(rng.uniform(0.25, 0.9, size=3).tolist())
    checker = float(rng.uniform(4.0, 9.0)) if rng.random() < 0.8 else 0.0
    contrast = float(rng.uniform(0.3, 0.7))
    span = size * 0.3
    x = float(rng.uniform(-span, span))
    z = float(rng.uniform(-span, span))
    if rng.random() < sphere_prob:
        r = float(rng.uniform(size * 0.09, size * 0.2))
        cy = float(rng.uniform(r + 2.0, r + 20.0))
        return Sphere((x, cy, z), r, albedo, checker=checker, checker_contrast=contrast)
    sx = float(rng.uniform(size * 0.12, size * 0.3))
    sy = float(rng.uniform(size * 0.1, size * 0.25))
    sz = float(rng.uniform(size * 0.12, size * 0.3))
    cy = sy / 2.0 + float(rng.uniform(0.0, 6.0))
    return Box((x, cy, z), (sx, sy, sz), albedo, checker=checker, checker_contrast=contrast)


def random_scene(
    rng: np.random.Generator,
    size: int,
    frames: int,
    *,
    n_prims: tuple[int, int] = (1, 3),
    animated: bool = True,
) -> SceneSpec:
    """Sample a scene: textured ground, 1..n primitives, random light/camera,
    and (optionally) integer-pixel constant-velocity translations."""
    ground = random_texture(size, size, rng)
    n = int(rng.integers(n_prims[0], n_prims[1] + 1))
    prims = [_random_primitive(rng, size) for _ in range(n)]

    azimuth = float(rng.uniform(0.0, 2.0 * np.pi))
    elevation = float(rng.uniform(0.6, 1.25))
    light = (
        float(np.cos(elevation) * np.cos(azimuth)),
        float(np.sin(elevation)),
        float(np.cos(elevation) * np.sin(azimuth)),
    )
    softness = 0.0 if rng.random() < 0.3 else float(rng.uniform(0.02, 0.12))
    intensity = float(rng.uniform(0.75, 1.3))
    ambient = float(rng.uniform(0.12, 0.3))
    tilt = float(rng.uniform(0.3, 0.55))

    offsets = None
    if animated and frames > 1 and n:
        vel = rng.integers(-3, 4, size=(n, 2)).astype(np.float64)
        if not np.any(vel):
            vel[0] = (1.0, 0.0)
        steps = np.arange(frames, dtype=np.float64)[:, None, None]
        offsets = steps * vel[None, :, :]

    return SceneSpec(
        width=size,
        height=size,
        ground_albedo=ground,
        primitives=prims,
        light_dir=light,
        light_softness=softness,
        light_intensity=intensity,
        ambient=ambient,
        camera=Camera(tilt=tilt, scale=1.0, height=300.0),
        frames=frames,
        offsets=offsets,
    )


def _blob_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random smooth region covering roughly a third to two thirds of the frame."""
    field = value_noise(h, w, rng)
    thr = float(np.quantile(field, rng.uniform(0.35, 0.65)))
    mask = field > thr
    if not mask.any() or mask.all():  # degenerate noise; take the top half
        mask = field >= np.median(field)
    return mask


def _gen_artifact(rng, size, clip_len, temporal: bool) -> PairedSample:
    src = random_texture(size, size, rng)
    mode = MODES[int(rng.integers(0, len(MODES)))]
    sub_seed = int(rng.integers(0, 2**63))
    if not temporal:
        return degrade(src, mode, sub_seed)
    # Integer-velocity scrolling texture; the corruption redraws per frame so
    # the damage flickers while the underlying content translates exactly.
    vy, vx = (int(v) for v in rng.integers(-2, 3, size=2))
    clean = np.stack(
        [np.roll(src, (t * vy, t * vx), axis=(0, 1)) for t in range(clip_len)]
    )
    sample = degrade(clean, mode, sub_seed)
    flows = np.zeros((clip_len - 1, size, size, 2))
    flows[..., 0] = -float(vx)
    flows[..., 1] = -float(vy)
    valid = np.zeros((size, size), dtype=bool)
    valid[max(0, vy) : size + min(0, vy), max(0, vx) : size + min(0, vx)] = True
    return replace(
        sample,
        flows=flows,
        flow_valid=np.repeat(valid[None], clip_len - 1, axis=0),
        meta={**sample.meta, "velocity": (vy, vx)},
    )


def _gen_isp(rng, size, clip_len, temporal: bool) -> PairedSample:
    if temporal:
        spec = random_scene(rng, size, clip_len, animated=True)
        r = render_scene(spec)
        frames = _to_grid(r.frames)
        mask = r.masks
        params = sample_isp_params(rng)
        inputs, targets, _ = make_isp_pair(frames, mask, params)
        return PairedSample(
            inputs=inputs, targets=targets, stream="isp", temporal=True,
            fg_mask=mask, edit_mask=mask.copy(), flows=r.flows,
            flow_valid=r.flow_valid, meta={"isp": params.to_dict()},
        )
    src = _to_grid(random_texture(size, size, rng))
    mask = _blob_mask(rng, size, size)
    params = sample_isp_params(rng)
    inp, tgt, _ = make_isp_pair(src, mask, params)
    return PairedSample(
        inputs=inp[None], targets=tgt[None], stream="isp", temporal=False,
        fg_mask=mask[None], edit_mask=mask[None].copy(),
        meta={"isp": params.to_dict()},
    )


def _gen_relight(rng, size) -> PairedSample:
    spec = random_scene(rng, size, 1, n_prims=(1, 2), animated=False)
    r = render_scene(spec)
    return relight_fg(r, rng=rng)


def _gen_shadow(rng, size, clip_len) -> PairedSample:
    spec = random_scene(rng, size, clip_len, animated=True)
    return make_shadow_pair(spec)


def _gen_reinsert(rng, size, clip_len) -> PairedSample:
    bg = random_scene(rng, size, clip_len, n_prims=(0, 1), animated=False)
    n_sprites = int(rng.integers(1, 3))
    sprites = [_random_primitive(rng, size) for _ in range(n_sprites)]
    vel = rng.integers(-3, 4, size=(n_sprites, 2)).astype(np.float64)
    steps = np.arange(clip_len, dtype=np.float64)[:, None, None]
    trajectory = steps * vel[None, :, :]
    params = sample_isp_params(rng)
    return make_reinsert_pair(bg, sprites, trajectory, params)


def generate_sample(
    stream: str, kind: str, rng: np.random.Generator, frame_size: int, clip_len: int
) -> PairedSample:
    """Make one sample.  `kind` is "image" or "clip"; artifact and isp
    support both (relight is image-only, shadow/reinsert always clips)."""
    if stream == "artifact":
        return _gen_artifact(rng, frame_size, clip_len, temporal=(kind == "clip"))
    if stream == "isp":
        return _gen_isp(rng, frame_size, clip_len, temporal=(kind == "clip"))
    if stream == "relight":
        return _gen_relight(rng, frame_size)
    if stream == "shadow":
        return _gen_shadow(rng, frame_size, clip_len)
    if stream == "reinsert":
        return _gen_reinsert(rng, frame_size, clip_len)
    raise ValueError(f"unknown stream {stream!r}")
