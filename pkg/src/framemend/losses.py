"""Training losses: per-pixel L2, multi-scale perceptual, flow-warped temporal.

All loss functions take torch tensors shaped (H, W, 3) or (B, H, W, 3) and
return scalar tensors.  The perceptual term is a Monte-Carlo estimate over
randomly sized, randomly placed square patches so that one set of feature
weights compares structure at several scales; patch draws come from an
explicit numpy Generator so training remains bitwise reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .features import FeatureExtractor
from .flow import warp


@dataclass
class LossWeights:
    """Loss mixing weights and perceptual patch-sampling parameters."""

    lambda_l2: float = 1.0
    lambda_perc: float = 1.0
    lambda_temp: float = 1.0
    patch_min: int = 16
    patch_max: int = 64
    patches_per_step: int = 4
    layer_weights: tuple[float, ...] | None = None  # None -> uniform 1/L

    def resolved_layer_weights(self, num_stages: int) -> tuple[float, ...]:
        if self.layer_weights is None:
            return tuple(1.0 / num_stages for _ in range(num_stages))
        if len(self.layer_weights) != num_stages:
            raise ValueError(
                f"layer_weights has {len(self.layer_weights)} entries for "
                f"{num_stages} feature stages"
            )
        return tuple(float(w) for w in self.layer_weights)


@dataclass
class TemporalRef:
    """Inputs of the temporal term at one step.

    prev_pred: previous enhanced frame(s), same shape as the current pred.
    flow:      backward flow from the current frame into the previous one.
    valid:     optional boolean mask of trustworthy correspondences.
    """

    prev_pred: torch.Tensor
    flow: torch.Tensor
    valid: torch.Tensor | None = None


def loss_l2(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all pixels and channels."""
    if pred.shape != target.shape:
        raise ValueError(f"loss_l2: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def sample_patch_coords(
    height: int,
    width: int,
    weights: LossWeights,
    rng: np.random.Generator,
) -> list[tuple[int, int, int]]:
    """Draw `patches_per_step` (side, y, x) triples, side uniform on
    [patch_min, patch_max] inclusive, position uniform over valid placements."""
    lo, hi = weights.patch_min, weights.patch_max
    if not (1 <= lo <= hi):
        raise ValueError(f"invalid patch size range [{lo}, {hi}]")
    if hi > min(height, width):
        raise ValueError(
            f"patch_max {hi} exceeds frame size {height}x{width}"
        )
    coords = []
    for _ in range(weights.patches_per_step):
        k = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(0, height - k + 1))
        x = int(rng.integers(0, width - k + 1))
        coords.append((k, y, x))
    return coords


def loss_perceptual(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: FeatureExtractor,
    weights: LossWeights,
    rng: np.random.Generator,
    record: list | None = None,
) -> torch.Tensor:
    """Multi-scale random-patch perceptual loss.

    Averages, over sampled patches, the layer-weighted sum of squared
    feature differences (squared Frobenius norm per stage) between pred and
    target crops taken at identical locations.  When inputs are batched the
    same patch locations apply to every batch element and the per-element
    losses are averaged.  `record`, if given, collects the (side, y, x)
    draws for instrumentation.
    """
    if pred.shape != target.shape:
        raise ValueError(
            f"loss_perceptual: shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}"
        )
    squeeze = pred.ndim == 3
    if squeeze:
        pred = pred.unsqueeze(0)
        target = target.unsqueeze(0)
    _, h, w, _ = pred.shape
    lw = weights.resolved_layer_weights(extractor.num_stages)
    coords = sample_patch_coords(h, w, weights, rng)
    if record is not None:
        record.extend(coords)
    terms = []
    for k, y, x in coords:
        fa = extractor(pred[:, y : y + k, x : x + k, :])
        fb = extractor(target[:, y : y + k, x : x + k, :])
        per_elem = sum(
            lam * ((a - b) ** 2).sum(dim=(1, 2, 3))
            for lam, a, b in zip(lw, fa, fb)
        )
        terms.append(per_elem.mean())
    return torch.stack(terms).mean()


def loss_temporal(
    pred: torch.Tensor,
    prev_pred: torch.Tensor,
    flow: torch.Tensor,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """Flow-warped temporal consistency: mean squared difference (channel
    mean) between `pred` and the previous prediction warped into its frame,
    over pixels that are warp-valid and, if given, `valid`.  An empty pixel
    set yields exactly 0 with zero gradient."""
    warped, wvalid = warp(prev_pred, flow)
    omega = wvalid if valid is None else wvalid & valid.to(torch.bool)
    if int(omega.sum()) == 0:
        return torch.zeros((), dtype=pred.dtype)
    diff2 = ((pred - warped) ** 2).mean(dim=-1)
    return diff2[omega].mean()


def loss_total(
    pred: torch.Tensor,
    target: torch.Tensor,
    extractor: FeatureExtractor,
    weights: LossWeights,
    rng: np.random.Generator,
    temporal: TemporalRef | None = None,
    record: list | None = None,
) -> tuple[torch.Tensor, dict]:
    """Weighted sum of the three terms plus a float breakdown.

    The temporal term requires `temporal` whenever `lambda_temp > 0`;
    callers handling non-temporal batches must zero `lambda_temp` first
    (the trainer does).  Returns `(total, {"l2", "perc", "temp", "total"})`.
    """
    if temporal is None and weights.lambda_temp > 0:
        raise ValueError(
            "loss_total: lambda_temp > 0 but no temporal inputs were given; "
            "zero the weight for non-temporal batches"
        )
    l2 = loss_l2(pred, target)
    perc = loss_perceptual(pred, target, extractor, weights, rng, record=record)
    if temporal is not None and weights.lambda_temp > 0:
        temp = loss_temporal(pred, temporal.prev_pred, temporal.flow, temporal.valid)
    else:
        temp = torch.zeros((), dtype=pred.dtype)
    total = weights.lambda_l2 * l2 + weights.lambda_perc * perc + weights.lambda_temp * temp
    breakdown = {
        "l2": float(l2.detach()),
        "perc": float(perc.detach()),
        "temp": float(temp.detach()),
        "total": float(total.detach()),
    }
    return total, breakdown
