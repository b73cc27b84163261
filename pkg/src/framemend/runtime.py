"""Online streaming enhancement: one frame in, one enhanced frame out.

A session owns a loaded model plus a bounded history of its own previous
outputs (as re-encoded latents).  Each push runs exactly one backbone
evaluation; the first frames of a stream simply see a shorter history, and
`reset` starts a fresh shot without reloading the model.
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import torch

from .backbone import Backbone, TemporalContext
from .checkpoint import load_model
from .codec import Codec


class ConfigMismatchError(ValueError):
    """Session options contradict what the checkpoint was trained with."""


class StreamSession:
    """Sequential frame-by-frame enhancer over a loaded model.

    Frames go in and come out as (H, W, 3) float arrays in [0, 1]; the
    session keeps at most `context_len` latents of its own past outputs.
    Calls must be serialized externally; separate sessions are independent.
    """

    def __init__(self, backbone: Backbone, codec: Codec, *, use_context: bool = True):
        backbone.assert_finite()
        backbone.eval()
        self.backbone = backbone
        self.codec = codec
        self.use_context = bool(use_context)
        self.context_len = backbone.config.context_len
        self.frame_size = (
            backbone.config.tokens_h * codec.patch_size,
            backbone.config.tokens_w * codec.patch_size,
        )
        self.history = TemporalContext(self.context_len)
        self.frame_index = 0
        self.latencies_ms: list[float] = []

    @property
    def history_len(self) -> int:
        return len(self.history)

    def reset(self) -> None:
        """Forget the history; the next frame is a cold start."""
        self.history.clear()

    def push_frame(self, frame) -> np.ndarray:
        frame = np.asarray(frame, dtype=np.float32)
        if frame.shape != (*self.frame_size, 3):
            raise ValueError(
                f"push_frame: expected frame {self.frame_size[0]}x{self.frame_size[1]}x3, "
                f"got {tuple(frame.shape)}"
            )
        if not np.isfinite(frame).all():
            raise ValueError("push_frame: frame contains non-finite values")
        start = time.perf_counter()
        with torch.no_grad():
            x = torch.from_numpy(frame)
            z = self.codec.encode(x)
            ctx = self.history.latents() if self.use_context else []
            pred = self.backbone(z, ctx)
            enhanced = self.codec.decode(pred).clamp(0.0, 1.0)
            self.history.push(self.codec.encode(enhanced), self.frame_index)
        self.latencies_ms.append((time.perf_counter() - start) * 1e3)
        self.frame_index += 1
        return enhanced.numpy()


def open_session(
    checkpoint_path,
    *,
    context_len: int | None = None,
    use_context: bool = True,
) -> StreamSession:
    """Load a checkpoint into a fresh session.

    `context_len`, if given, must match the checkpoint's trained history
    depth — a session cannot change the conditioning the model learned.
    """
    backbone, codec = load_model(Path(checkpoint_path))
    if context_len is not None and context_len != backbone.config.context_len:
        raise ConfigMismatchError(
            f"checkpoint was trained with context_len="
            f"{backbone.config.context_len}, requested {context_len}"
        )
    return StreamSession(backbone, codec, use_context=use_context)


def latency_report(latencies_ms: list[float]) -> dict:
    if not latencies_ms:
        return {}
    arr = np.asarray(latencies_ms, dtype=np.float64)
    return {
        "frames": int(arr.size),
        "mean_ms": float(arr.mean()),
        "median_ms": float(np.median(arr)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


def enhance_clip(checkpoint_path, clip, *, use_context: bool = True):
    """Run a whole clip through a fresh session.

    Returns `(enhanced_clip, report)`; bitwise identical to pushing the
    frames one at a time.  An empty clip yields an empty clip and report.
    """
    clip = np.asarray(clip, dtype=np.float32)
    if clip.shape[0] == 0:
        return clip.copy(), {}
    session = open_session(checkpoint_path, use_context=use_context)
    out = np.stack([session.push_frame(frame) for frame in clip])
    return out, latency_report(session.latencies_ms)
