"""Frame conventions and image I/O shared by the rest of the package.

A frame is an `(H, W, 3)` float array with values in `[0, 1]`; clips stack
frames along a leading time axis `(T, H, W, 3)`.  Both `numpy.ndarray` and
`torch.Tensor` are accepted by most functions in this package; helpers here
convert between the two without copying when possible.
"""
from __future__ import annotations

import numpy as np
import torch
from PIL import Image


class FrameShapeError(ValueError):
    """Raised when an array does not have a valid frame/clip shape."""


def to_tensor(frame, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Convert a numpy array (or tensor) to a torch tensor of `dtype`."""
    if isinstance(frame, torch.Tensor):
        return frame.to(dtype)
    return torch.from_numpy(np.ascontiguousarray(frame)).to(dtype)


def to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def validate_frame(frame, *, multiple_of: int = 1, name: str = "frame") -> None:
    """Check that `frame` is (H, W, 3), finite, and H/W divide `multiple_of`.

    Raises FrameShapeError on bad shapes and ValueError on non-finite values.
    """
    shape = tuple(frame.shape)
    if len(shape) != 3 or shape[2] != 3:
        raise FrameShapeError(f"{name}: expected (H, W, 3), got {shape}")
    h, w = shape[0], shape[1]
    if h % multiple_of or w % multiple_of:
        raise FrameShapeError(
            f"{name}: spatial dims {h}x{w} must be multiples of {multiple_of}"
        )
    if isinstance(frame, torch.Tensor):
        finite = bool(torch.isfinite(frame).all())
    else:
        finite = bool(np.isfinite(frame).all())
    if not finite:
        raise ValueError(f"{name}: contains non-finite values")


def quantize(frame: np.ndarray) -> np.ndarray:
    """Map a [0, 1] float frame to uint8 by round-to-nearest."""
    arr = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def dequantize(arr: np.ndarray) -> np.ndarray:
    """Inverse of `quantize` up to the /255 grid; returns float32 in [0, 1]."""
    return (arr.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def save_png(path, frame) -> None:
    """Write a frame (float [0,1] or uint8) as an 8-bit RGB PNG."""
    arr = to_numpy(frame)
    if arr.dtype != np.uint8:
        arr = quantize(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise FrameShapeError(f"save_png: expected (H, W, 3), got {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as a float32 frame in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return dequantize(arr)


def save_mask_png(path, mask) -> None:
    """Write a boolean (H, W) mask as an 8-bit grayscale PNG (0/255)."""
    arr = to_numpy(mask).astype(bool)
    if arr.ndim != 2:
        raise FrameShapeError(f"save_mask_png: expected (H, W), got {arr.shape}")
    Image.fromarray(np.where(arr, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def load_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128
