"""The paired-sample record shared by every data stream."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STREAM_NAMES = ("artifact", "isp", "relight", "shadow", "reinsert")
_MASK_REQUIRED = {"isp", "relight", "reinsert"}


@dataclass
class PairedSample:
    """One training sample: input clip, clean target clip, and side data.

    Frames are stored (T, H, W, 3); single images use T = 1.  `fg_mask` is
    the stream's compositing/foreground mask where the stream has one;
    `edit_mask` marks every pixel where input and target may differ.
    `flows[i]` is the backward flow from frame i+1 into frame i, and
    `flow_valid[i]` its exact-correspondence mask.
    """

    inputs: np.ndarray
    targets: np.ndarray
    stream: str
    temporal: bool
    fg_mask: np.ndarray | None = None
    edit_mask: np.ndarray | None = None
    flows: np.ndarray | None = None
    flow_valid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.inputs.shape[0]


def validate_sample(sample: PairedSample) -> None:
    """Raise ValueError if the sample violates its structural contract."""
    inp, tgt = sample.inputs, sample.targets
    if inp.ndim != 4 or inp.shape[-1] != 3:
        raise ValueError(f"inputs must be (T, H, W, 3), got {inp.shape}")
    if tgt.shape != inp.shape:
        raise ValueError(f"targets shape {tgt.shape} != inputs shape {inp.shape}")
    if sample.stream not in STREAM_NAMES:
        raise ValueError(f"unknown stream {sample.stream!r}")
    t = inp.shape[0]
    if sample.temporal != (t > 1):
        raise ValueError(f"temporal={sample.temporal} inconsistent with {t} frames")
    if sample.stream in _MASK_REQUIRED and sample.fg_mask is None:
        raise ValueError(f"stream {sample.stream!r} requires fg_mask")
    for name in ("fg_mask", "edit_mask"):
        m = getattr(sample, name)
        if m is not None and m.shape != inp.shape[:3]:
            raise ValueError(f"{name} shape {m.shape} != {inp.shape[:3]}")
    if sample.temporal:
        if sample.flows is not None and sample.flows.shape != (t - 1, *inp.shape[1:3], 2):
            raise ValueError(f"flows shape {sample.flows.shape} unexpected")
        if sample.flow_valid is not None and sample.flow_valid.shape != (t - 1, *inp.shape[1:3]):
            raise ValueError(f"flow_valid shape {sample.flow_valid.shape} unexpected")
    for arr, name in ((inp, "inputs"), (tgt, "targets")):
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contain non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name} leave [0, 1]")
