"""Frozen invertible frame <-> latent transform.

The codec folds each non-overlapping p x p pixel patch into a single latent
vector (space-to-depth) and then applies a fixed orthogonal channel mix drawn
from a seeded RNG.  Because the map is exactly invertible (and an isometry),
any enhancement error is attributable to the backbone alone; the codec is
never trained.
"""
from __future__ import annotations

import numpy as np
import torch

from .frames import FrameShapeError


def _orthogonal_mix(channels: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal matrix via QR with sign fixing."""
    rng = np.random.Generator(np.random.PCG64(seed))
    a = rng.standard_normal((channels, channels))
    q, r = np.linalg.qr(a)
    # Fix the QR sign ambiguity so the matrix is unique for a given seed.
    q = q * np.sign(np.diag(r))
    return q


class Codec:
    """Lossless patchify + orthogonal channel-mixing codec.

    Parameters
    ----------
    patch_size:
        Side of the square pixel patches folded into latent channels.
    mixing_seed:
        Seed of the orthogonal channel-mixing matrix.
    """

    def __init__(self, patch_size: int = 2, mixing_seed: int = 0):
        if patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {patch_size}")
        self.patch_size = int(patch_size)
        self.mixing_seed = int(mixing_seed)
        self.latent_channels = 3 * self.patch_size**2
        # float64 so encode/decode round-trips survive the matmul even for
        # large patch sizes; inputs are cast up and back on the way through.
        self._mix = torch.from_numpy(
            _orthogonal_mix(self.latent_channels, self.mixing_seed)
        )

    def config(self) -> dict:
        return {"patch_size": self.patch_size, "mixing_seed": self.mixing_seed}

    @classmethod
    def from_config(cls, cfg: dict) -> "Codec":
        return cls(patch_size=int(cfg["patch_size"]), mixing_seed=int(cfg["mixing_seed"]))

    # -- core transforms ---------------------------------------------------

    def encode(self, frame):
        """Map frames (..., H, W, 3) to latents (..., H/p, W/p, 3p^2).

        Accepts numpy arrays or torch tensors; the return matches the input
        kind and floating dtype.  Differentiable for tensor inputs.
        """
        return self._apply(frame, encode=True)

    def decode(self, latent):
        """Inverse of `encode`: (..., h, w, 3p^2) -> (..., h*p, w*p, 3)."""
        return self._apply(latent, encode=False)

    def _apply(self, x, encode: bool):
        is_numpy = isinstance(x, np.ndarray)
        t = torch.from_numpy(np.ascontiguousarray(x)) if is_numpy else x
        if not torch.is_floating_point(t):
            t = t.to(torch.float64)
        out_dtype = t.dtype
        p = self.patch_size
        c = self.latent_channels
        if encode:
            if t.ndim < 3 or t.shape[-1] != 3:
                raise FrameShapeError(f"encode: expected (..., H, W, 3), got {tuple(t.shape)}")
            h_px, w_px = t.shape[-3], t.shape[-2]
            if h_px % p or w_px % p:
                raise FrameShapeError(
                    f"encode: frame dims {h_px}x{w_px} not divisible by patch size {p}"
                )
            lead = t.shape[:-3]
            t = t.to(torch.float64)
            t = t.reshape(*lead, h_px // p, p, w_px // p, p, 3)
            t = t.movedim(-4, -3)  # (..., h, w, p, p, 3)
            t = t.reshape(*lead, h_px // p, w_px // p, c)
            out = t @ self._mix.T
        else:
            if t.ndim < 3 or t.shape[-1] != c:
                raise FrameShapeError(
                    f"decode: expected (..., h, w, {c}), got {tuple(t.shape)}"
                )
            lead = t.shape[:-3]
            h, w = t.shape[-3], t.shape[-2]
            t = t.to(torch.float64) @ self._mix
            t = t.reshape(*lead, h, w, p, p, 3)
            t = t.movedim(-3, -4)  # (..., h, p, w, p, 3)
            out = t.reshape(*lead, h * p, w * p, 3)
        out = out.to(out_dtype)
        return out.numpy() if is_numpy else out
