"""Single-pass enhancement backbone over codec latents.

The backbone treats each latent grid position as a token.  Every block runs
spatial self-attention over the current frame's tokens, then temporal
attention in which the current tokens attend over themselves plus the token
embeddings of up to `context_len` previous outputs, then a tokenwise MLP.
Context frames contribute keys/values only.  A zero-initialized output
projection feeds a global residual, so a freshly initialized model is an
exact identity map — training starts from "change nothing".

One forward pass per frame; there is no iterative refinement at inference.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class BackboneConfig:
    latent_channels: int = 192
    tokens_h: int = 8
    tokens_w: int = 8
    channels: int = 128
    num_blocks: int = 2
    num_heads: int = 4
    context_len: int = 4

    def __post_init__(self):
        if self.channels % self.num_heads:
            raise ValueError(
                f"channels {self.channels} not divisible by num_heads {self.num_heads}"
            )
        for name in ("latent_channels", "tokens_h", "tokens_w", "channels",
                     "num_blocks", "num_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.context_len < 0:
            raise ValueError("context_len must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**{k: int(v) for k, v in d.items()})


class TemporalContext:
    """Bounded most-recent-first store of previous output latents."""

    def __init__(self, max_len: int):
        if max_len < 0:
            raise ValueError("max_len must be >= 0")
        self.max_len = int(max_len)
        self._entries: deque = deque(maxlen=self.max_len if self.max_len else 1)
        self._indices: deque = deque(maxlen=self.max_len if self.max_len else 1)

    def push(self, latent: torch.Tensor, frame_index: int) -> None:
        if self.max_len == 0:
            return
        self._entries.appendleft(latent)
        self._indices.appendleft(int(frame_index))

    def latents(self) -> list[torch.Tensor]:
        return list(self._entries)

    def frame_indices(self) -> list[int]:
        return list(self._indices)

    def clear(self) -> None:
        self._entries.clear()
        self._indices.clear()

    def __len__(self) -> int:
        return len(self._entries)


class _Attention(nn.Module):
    """Multi-head attention with separate query and key/value inputs."""

    def __init__(self, channels: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = channels // num_heads
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor) -> torch.Tensor:
        b, nq, c = q_in.shape
        nk = kv_in.shape[1]
        h, d = self.num_heads, self.head_dim
        q = self.q(q_in).view(b, nq, h, d).transpose(1, 2)
        k = self.k(kv_in).view(b, nk, h, d).transpose(1, 2)
        v = self.v(kv_in).view(b, nk, h, d).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, nq, c)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, channels: int, num_heads: int):
        super().__init__()
        self.ln_spatial = nn.LayerNorm(channels)
        self.attn_spatial = _Attention(channels, num_heads)
        self.ln_temporal = nn.LayerNorm(channels)
        self.attn_temporal = _Attention(channels, num_heads)
        self.ln_mlp = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, 4 * channels),
            nn.GELU(),
            nn.Linear(4 * channels, channels),
        )

    def forward(self, x: torch.Tensor, ctx: torch.Tensor | None) -> torch.Tensor:
        h = self.ln_spatial(x)
        x = x + self.attn_spatial(h, h)
        q = self.ln_temporal(x)
        kv = q if ctx is None else torch.cat([q, self.ln_temporal(ctx)], dim=1)
        x = x + self.attn_temporal(q, kv)
        x = x + self.mlp(self.ln_mlp(x))
        return x


class Backbone(nn.Module):
    """Latent-to-latent enhancer; see module docstring for the layout."""

    def __init__(self, config: BackboneConfig, *, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = int(seed)
        c = config.channels
        n = config.tokens_h * config.tokens_w
        self.in_proj = nn.Linear(config.latent_channels, c)
        self.pos_emb = nn.Parameter(torch.zeros(1, n, c))
        # slot 0 marks the current frame; slots 1..K mark context recency
        self.offset_emb = nn.Parameter(torch.zeros(config.context_len + 1, 1, c))
        self.blocks = nn.ModuleList(
            _Block(c, config.num_heads) for _ in range(config.num_blocks)
        )
        self.ln_out = nn.LayerNorm(c)
        self.out_proj = nn.Linear(c, config.latent_channels)
        self._init_weights()

    def _init_weights(self) -> None:
        gen = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters(), key=lambda kv: kv[0]):
                if name == "out_proj.weight" or name == "out_proj.bias":
                    p.zero_()  # residual path: identity at init
                elif p.ndim >= 2 or "emb" in name:
                    p.copy_(torch.randn(p.shape, generator=gen) * 0.02)
                elif name.endswith(".bias"):
                    p.zero_()
                else:  # LayerNorm weights
                    p.fill_(1.0)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def assert_finite(self) -> None:
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise ValueError(f"backbone parameter {name} contains non-finite values")

    def _embed(self, latent: torch.Tensor, slot: int) -> torch.Tensor:
        b = latent.shape[0]
        tokens = latent.reshape(b, -1, self.config.latent_channels)
        return self.in_proj(tokens) + self.pos_emb + self.offset_emb[slot]

    def forward(self, latent: torch.Tensor, context=()) -> torch.Tensor:
        """Enhance one latent grid given up to `context_len` previous output
        latents (most recent first).  Shapes: (h, w, c) or (B, h, w, c)."""
        if isinstance(context, TemporalContext):
            context = context.latents()
        cfg = self.config
        squeeze = latent.ndim == 3
        if squeeze:
            latent = latent.unsqueeze(0)
        expected = (cfg.tokens_h, cfg.tokens_w, cfg.latent_channels)
        if latent.ndim != 4 or tuple(latent.shape[1:]) != expected:
            raise ValueError(
                f"backbone: expected latent (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {tuple(latent.shape)}"
            )
        if len(context) > cfg.context_len:
            raise ValueError(
                f"backbone: got {len(context)} context frames, max is {cfg.context_len}"
            )
        ctx_embs = []
        for slot, z in enumerate(context, start=1):
            z = z.unsqueeze(0) if z.ndim == 3 else z
            if tuple(z.shape) != tuple(latent.shape):
                raise ValueError(
                    f"backbone: context latent shape {tuple(z.shape)} does not "
                    f"match current {tuple(latent.shape)}"
                )
            ctx_embs.append(self._embed(z, slot))
        ctx = torch.cat(ctx_embs, dim=1) if ctx_embs else None

        x = self._embed(latent, 0)
        for block in self.blocks:
            x = block(x, ctx)
        delta = self.out_proj(self.ln_out(x))
        out = latent + delta.reshape(latent.shape)
        return out.squeeze(0) if squeeze else out


def enhance_frame(frame: torch.Tensor, codec, backbone: Backbone, context=()):
    """One enhancement step: encode, run the backbone, decode, clamp.

    Takes and returns torch tensors.  Returns `(enhanced, context_latent)`
    where `context_latent` is the re-encoded clamped output — exactly what
    goes into the history for the next frame.
    """
    z = codec.encode(frame)
    y = backbone(z, context)
    enhanced = codec.decode(y).clamp(0.0, 1.0)
    return enhanced, codec.encode(enhanced)
