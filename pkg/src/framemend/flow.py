"""Optical-flow utilities: backward warping, block matching, occlusion masks.

Flow convention: a flow field is an `(H, W, 2)` array of `(dx, dy)` pixel
displacements.  `warp(source, flow)` samples `source` at `x + dx, y + dy`
for every target pixel `(x, y)` — i.e. flow points from the target frame
into the source frame (backward warping).
"""
from __future__ import annotations

import struct

import numpy as np
import torch

FLO_MAGIC = b"FLO1"


class FlowFormatError(ValueError):
    """Raised when a flow file does not parse."""


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------


def warp(source, flow):
    """Backward-warp `source` by `flow` with bilinear sampling.

    Parameters
    ----------
    source: (H, W), (H, W, C) or (B, H, W, C) array/tensor.
    flow:   (H, W, 2) or (B, H, W, 2) of (dx, dy) displacements.

    Returns
    -------
    (warped, valid): warped has the shape of `source`; `valid` is a boolean
    (H, W) / (B, H, W) map, False where the continuous sample point falls
    outside the source extent.  Invalid output pixels are set to 0.
    Differentiable with respect to `source` for tensor inputs.
    """
    is_numpy = isinstance(source, np.ndarray)
    src = torch.from_numpy(np.ascontiguousarray(source)) if is_numpy else source
    flo = torch.from_numpy(np.ascontiguousarray(flow)) if isinstance(flow, np.ndarray) else flow
    if not torch.is_floating_point(src):
        src = src.to(torch.float32)
    flo = flo.to(src.dtype)

    squeeze_channel = src.ndim == flo.ndim - 1  # (H, W) against (H, W, 2)
    if squeeze_channel:
        src = src.unsqueeze(-1)
    squeeze_batch = src.ndim == 3
    if squeeze_batch:
        src = src.unsqueeze(0)
        flo = flo.unsqueeze(0)
    if src.ndim != 4 or flo.ndim != 4 or flo.shape[-1] != 2:
        raise ValueError(f"warp: bad shapes source={tuple(src.shape)} flow={tuple(flo.shape)}")
    b, h, w, _ = src.shape
    if flo.shape[:3] != (b, h, w):
        raise ValueError(f"warp: flow {tuple(flo.shape)} does not match source {tuple(src.shape)}")

    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=src.dtype), torch.arange(w, dtype=src.dtype), indexing="ij"
    )
    xs = gx.unsqueeze(0) + flo[..., 0]
    ys = gy.unsqueeze(0) + flo[..., 1]
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    x0 = xs.floor().clamp(0, w - 1)
    y0 = ys.floor().clamp(0, h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    wx = (xs - x0).clamp(0, 1)
    wy = (ys - y0).clamp(0, 1)

    bidx = torch.arange(b).view(b, 1, 1).expand(b, h, w)

    def gather(yi, xi):
        return src[bidx, yi.long(), xi.long(), :]

    v00 = gather(y0, x0)
    v01 = gather(y0, x1)
    v10 = gather(y1, x0)
    v11 = gather(y1, x1)
    wx = wx.unsqueeze(-1)
    wy = wy.unsqueeze(-1)
    out = (
        v00 * (1 - wx) * (1 - wy)
        + v01 * wx * (1 - wy)
        + v10 * (1 - wx) * wy
        + v11 * wx * wy
    )
    out = out * valid.unsqueeze(-1).to(out.dtype)

    if squeeze_batch:
        out = out.squeeze(0)
        valid = valid.squeeze(0)
    if squeeze_channel:
        out = out.squeeze(-1)
    if is_numpy:
        return out.numpy(), valid.numpy()
    return out, valid


# ---------------------------------------------------------------------------
# Block matching (reference estimator; intentionally brute force)
# ---------------------------------------------------------------------------


def block_match_flow(
    prev: np.ndarray, curr: np.ndarray, *, max_displacement: int = 4, block_size: int = 8
) -> np.ndarray:
    """Integer-displacement block matching from `curr` back into `prev`.

    For each block of `curr`, exhaustively scores every integer displacement
    `d` with |dx|,|dy| <= max_displacement by the sum of absolute differences
    against `prev`, and assigns the argmin to every pixel of the block.  Ties
    break toward the smaller displacement magnitude, then lexicographically
    by (dy, dx).  Displacements that would read outside `prev` are skipped
    (d = 0 is always in range).  Returns an (H, W, 2) float32 flow.
    """
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.shape != curr.shape:
        raise ValueError(f"block_match_flow: shape mismatch {prev.shape} vs {curr.shape}")
    if prev.ndim == 2:
        prev = prev[..., None]
        curr = curr[..., None]
    h, w, _ = curr.shape

    # Block partition: every pixel belongs to exactly one block; trailing
    # blocks absorb the remainder rows/cols.
    row_edges = list(range(0, h, block_size)) + [h]
    col_edges = list(range(0, w, block_size)) + [w]
    if len(row_edges) > 2 and row_edges[-1] - row_edges[-2] < block_size:
        row_edges.pop(-2)
    if len(col_edges) > 2 and col_edges[-1] - col_edges[-2] < block_size:
        col_edges.pop(-2)
    nby, nbx = len(row_edges) - 1, len(col_edges) - 1

    m = max_displacement
    candidates = sorted(
        ((dy, dx) for dy in range(-m, m + 1) for dx in range(-m, m + 1)),
        key=lambda d: (d[0] * d[0] + d[1] * d[1], d[0], d[1]),
    )

    best_sad = np.full((nby, nbx), np.inf)
    best = np.zeros((nby, nbx, 2), dtype=np.float32)
    r0 = np.array(row_edges[:-1])
    r1 = np.array(row_edges[1:])
    c0 = np.array(col_edges[:-1])
    c1 = np.array(col_edges[1:])

    for dy, dx in candidates:
        ok_r = (r0 + dy >= 0) & (r1 + dy <= h)
        ok_c = (c0 + dx >= 0) & (c1 + dx <= w)
        feasible = ok_r[:, None] & ok_c[None, :]
        if not feasible.any():
            continue
        # Absolute difference between curr and prev shifted by (dy, dx),
        # evaluated on the overlap region, then box-summed per block.
        ys = slice(max(0, -dy), min(h, h - dy))
        xs = slice(max(0, -dx), min(w, w - dx))
        diff = np.abs(
            curr[ys, xs] - prev[ys.start + dy : ys.stop + dy, xs.start + dx : xs.stop + dx]
        ).sum(axis=2)
        full = np.zeros((h, w))
        full[ys, xs] = diff
        sums = np.add.reduceat(np.add.reduceat(full, r0, axis=0), c0, axis=1)
        better = feasible & (sums < best_sad)
        best_sad = np.where(better, sums, best_sad)
        best[better] = (dx, dy)

    flow = np.zeros((h, w, 2), dtype=np.float32)
    for i in range(nby):
        for j in range(nbx):
            flow[r0[i] : r1[i], c0[j] : c1[j]] = best[i, j]
    return flow


# ---------------------------------------------------------------------------
# Occlusion / consistency masking
# ---------------------------------------------------------------------------


def occlusion_mask(
    flow_fwd: np.ndarray, flow_bwd: np.ndarray, *, tolerance: float = 1.0
) -> np.ndarray:
    """Forward-backward consistency mask.

    A pixel `x` is valid when `x + flow_fwd(x)` lands inside the frame and
    the round trip `flow_fwd(x) + flow_bwd(x + flow_fwd(x))` has Euclidean
    norm at most `tolerance` pixels (backward flow sampled bilinearly).
    """
    flow_fwd = np.asarray(flow_fwd, dtype=np.float32)
    flow_bwd = np.asarray(flow_bwd, dtype=np.float32)
    sampled, in_bounds = warp(flow_bwd, flow_fwd)
    round_trip = flow_fwd + sampled
    err = np.sqrt((round_trip**2).sum(axis=-1))
    return in_bounds & (err <= tolerance)


# ---------------------------------------------------------------------------
# Flow file format: b"FLO1" | u32 height | u32 width | H*W*2 float32 (dx, dy)
# little-endian, row-major
# ---------------------------------------------------------------------------


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"write_flo: expected (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(flow.tobytes(order="C"))


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FLO_MAGIC:
        raise FlowFormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    h, w = struct.unpack("<II", data[4:12])
    expected = 12 + h * w * 2 * 4
    if len(data) != expected:
        raise FlowFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w, 2)
    return arr.astype(np.float32)
