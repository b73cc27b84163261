"""Software ISP: a fixed-order parametric image pipeline plus pair synthesis.

Stage order (fixed, documented): exposure gain 2^ev -> white-balance
per-channel gains -> saturation (blend each pixel with its luma) -> tone
curve (piecewise-linear over monotone knots, saturating outside [0, 1]) ->
gamma (x ** (1/gamma) on the non-negative part) -> clamp to [0, 1].

Stages whose parameter equals the identity value are skipped outright, so
identity params are an exact no-op bit for bit.  All arithmetic is float64
elementwise in a fixed order, which keeps the vectorized pipeline equal to
a scalar per-pixel evaluation of the same formulas.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Rec. 709 luma weights, applied channelwise in written order.
LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)

IDENTITY_KNOTS = ((0.0, 0.0), (1.0, 1.0))


@dataclass(frozen=True)
class IspParams:
    exposure_ev: float = 0.0
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    saturation: float = 1.0
    tone_knots: tuple[tuple[float, float], ...] = IDENTITY_KNOTS
    gamma: float = 1.0

    def validate(self) -> None:
        if len(self.wb_gains) != 3 or any(g <= 0 for g in self.wb_gains):
            raise ValueError(f"wb_gains must be 3 positive reals, got {self.wb_gains}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.saturation < 0:
            raise ValueError(f"saturation must be >= 0, got {self.saturation}")
        knots = self.tone_knots
        if len(knots) < 2 or knots[0] != (0.0, 0.0) or knots[-1] != (1.0, 1.0):
            raise ValueError("tone_knots must run from (0,0) to (1,1)")
        xs = [k[0] for k in knots]
        ys = [k[1] for k in knots]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("tone knot inputs must be strictly increasing")
        if any(b < a for a, b in zip(ys, ys[1:])):
            raise ValueError("tone curve must be monotone non-decreasing")

    def to_dict(self) -> dict:
        return {
            "exposure_ev": self.exposure_ev,
            "wb_gains": list(self.wb_gains),
            "saturation": self.saturation,
            "tone_knots": [list(k) for k in self.tone_knots],
            "gamma": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IspParams":
        return cls(
            exposure_ev=float(d["exposure_ev"]),
            wb_gains=tuple(float(g) for g in d["wb_gains"]),
            saturation=float(d["saturation"]),
            tone_knots=tuple(tuple(float(v) for v in k) for k in d["tone_knots"]),
            gamma=float(d["gamma"]),
        )


IDENTITY_PARAMS = IspParams()


def _tone_curve(x: np.ndarray, knots) -> np.ndarray:
    """Piecewise-linear map; inputs beyond the end knots saturate."""
    xs = np.array([k[0] for k in knots])
    ys = np.array([k[1] for k in knots])
    idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    x0, x1 = xs[idx], xs[idx + 1]
    y0, y1 = ys[idx], ys[idx + 1]
    t = (x - x0) / (x1 - x0)
    out = y0 + t * (y1 - y0)
    out = np.where(x <= xs[0], ys[0], out)
    out = np.where(x >= xs[-1], ys[-1], out)
    return out


def apply_isp(frame: np.ndarray, params: IspParams) -> np.ndarray:
    """Run the pipeline on (..., 3) float data; returns float64 in [0, 1]."""
    params.validate()
    x = np.asarray(frame, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ValueError(f"apply_isp: expected (..., 3), got {x.shape}")
    if params.exposure_ev != 0.0:
        x = x * (2.0 ** params.exposure_ev)
    if tuple(params.wb_gains) != (1.0, 1.0, 1.0):
        x = x * np.array(params.wb_gains)
    if params.saturation != 1.0:
        luma = (
            x[..., 0] * LUMA_WEIGHTS[0]
            + x[..., 1] * LUMA_WEIGHTS[1]
            + x[..., 2] * LUMA_WEIGHTS[2]
        )[..., None]
        x = luma + params.saturation * (x - luma)
    if tuple(params.tone_knots) != IDENTITY_KNOTS:
        x = _tone_curve(x, params.tone_knots)
    if params.gamma != 1.0:
        x = np.maximum(x, 0.0) ** (1.0 / params.gamma)
    return np.clip(x, 0.0, 1.0)


def sample_isp_params(rng: np.random.Generator) -> IspParams:
    """Draw params from the documented randomization ranges.

    Draw order is fixed: ev, three gains, saturation, gamma, three tone-knot
    x jitters, three tone-knot y jitters.
    """
    ev = float(rng.uniform(-1.5, 1.5))
    gains = tuple(float(g) for g in rng.uniform(0.6, 1.6, size=3))
    saturation = float(rng.uniform(0.5, 1.5))
    gamma = float(rng.uniform(0.7, 1.4))
    # three interior knots around 1/4, 1/2, 3/4 with jitter; x stays strictly
    # increasing because the jitter is smaller than half the spacing
    knot_x = [(i + 1) / 4.0 + float(rng.uniform(-0.08, 0.08)) for i in range(3)]
    knot_y = [
        float(np.clip(kx + rng.uniform(-0.15, 0.15), 0.02, 0.98)) for kx in knot_x
    ]
    knot_y = np.maximum.accumulate(knot_y).tolist()
    knots = ((0.0, 0.0), *zip(knot_x, knot_y), (1.0, 1.0))
    return IspParams(
        exposure_ev=ev,
        wb_gains=gains,
        saturation=saturation,
        tone_knots=knots,
        gamma=gamma,
    )


def make_isp_pair(orig: np.ndarray, mask: np.ndarray, seed_or_params):
    """Composite edit: input = mask * isp(orig) + (1 - mask) * orig.

    `orig` is a frame (H, W, 3) or clip (T, H, W, 3); `mask` is (H, W) or
    (T, H, W) boolean.  The same sampled params apply to every frame.
    Returns `(input_frames, target_frames, params)` in float64; exact where
    untouched because untouched pixels are copied, not recomputed.
    """
    orig = np.asarray(orig, dtype=np.float64)
    clip = orig if orig.ndim == 4 else orig[None]
    mask = np.asarray(mask, dtype=bool)
    m = mask if mask.ndim == 3 else np.broadcast_to(mask, clip.shape[:3])
    if m.shape != clip.shape[:3]:
        raise ValueError(
            f"make_isp_pair: mask shape {mask.shape} does not match frames "
            f"{clip.shape[:3]}"
        )
    if isinstance(seed_or_params, IspParams):
        params = seed_or_params
    else:
        params = sample_isp_params(np.random.Generator(np.random.PCG64(seed_or_params)))
    edited = apply_isp(clip, params)
    mixed = np.where(m[..., None], edited, clip)
    if orig.ndim == 3:
        return mixed[0], clip[0], params
    return mixed, clip, params
