"""Frozen randomly initialized conv feature stack for perceptual terms.

The extractor is a small strided conv pyramid whose weights come from a
seeded generator and are never trained.  Random features are enough to
compare images structurally at several receptive-field sizes, and keeping
the net frozen makes every perceptual number in this package reproducible
from a seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class StageSpec:
    out_channels: int
    kernel_size: int
    stride: int
    activation: bool = True


DEFAULT_STAGES = (
    StageSpec(16, 3, 1),
    StageSpec(32, 3, 2),
    StageSpec(64, 3, 2),
)


class FeatureExtractor(nn.Module):
    """Seeded, frozen multi-stage conv features.

    `forward` maps frames (H, W, 3) or (B, H, W, 3) to a list of per-stage
    feature maps (B, C_l, H_l, W_l), shallowest first.
    """

    def __init__(self, stages=DEFAULT_STAGES, *, seed: int = 0, in_channels: int = 3):
        super().__init__()
        self.stages_spec = tuple(stages)
        self.seed = int(seed)
        gen = torch.Generator().manual_seed(self.seed)
        convs = []
        c_in = in_channels
        for spec in self.stages_spec:
            conv = nn.Conv2d(
                c_in, spec.out_channels, spec.kernel_size, stride=spec.stride,
                padding=spec.kernel_size // 2,
            )
            fan_in = c_in * spec.kernel_size**2
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
                )
                conv.bias.zero_()
            convs.append(conv)
            c_in = spec.out_channels
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(0.2)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def num_stages(self) -> int:
        return len(self.stages_spec)

    @classmethod
    def identity(cls) -> "FeatureExtractor":
        """Single 1x1 stage whose features equal the input exactly (tests)."""
        ext = cls(stages=(StageSpec(3, 1, 1, activation=False),), seed=0)
        with torch.no_grad():
            ext.convs[0].weight.copy_(torch.eye(3).view(3, 3, 1, 1))
            ext.convs[0].bias.zero_()
        return ext

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 4:
            raise ValueError(f"features: expected (B, H, W, C), got {tuple(x.shape)}")
        x = x.to(self.convs[0].weight.dtype)
        x = x.permute(0, 3, 1, 2)  # NHWC -> NCHW
        feats = []
        for spec, conv in zip(self.stages_spec, self.convs):
            x = conv(x)
            if spec.activation:
                x = self.act(x)
            feats.append(x)
        return feats
