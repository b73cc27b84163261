"""Two-phase training: image-only pretraining, then mixed clip/image batches.

Phase 1 draws single-frame samples with an empty temporal context and no
temporal loss.  Phase 2 mixes clip batches in: each clip is unrolled frame
by frame, the model conditioning on re-encoded clamps of its OWN previous
outputs (exactly what the streaming runtime feeds it), with a flow-warped
consistency term between consecutive predictions.  Gradients flow through
the whole unroll, including the context latents, unless configured to
detach them.

Everything random comes from three named numpy generators ("data", "patch",
"phase") whose states are serialized into training checkpoints, so an
interrupted run resumes bit for bit.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .backbone import Backbone, BackboneConfig
from .checkpoint import (
    CheckpointError,
    model_tensors,
    read_checkpoint,
    restore_backbone,
    save_model,
    write_checkpoint,
)
from .codec import Codec
from .datagen.dataset import load_manifest, load_sample
from .datagen.sample import PairedSample
from .features import FeatureExtractor
from .losses import LossWeights, loss_l2, loss_perceptual, loss_temporal, loss_total

SCHEDULES = ("bernoulli", "alternate")
CONTEXT_GRADIENT_MODES = ("flow", "detach")


@dataclass
class TrainConfig:
    pretrain_steps: int = 2000
    temporal_steps: int = 1000
    batch_size: int = 4
    temporal_batch_fraction: float = 0.5
    learning_rate: float = 3e-3
    lr_final_fraction: float = 0.05  # cosine-decay floor; 1.0 = constant lr
    weight_decay: float = 0.0
    seed: int = 0
    frame_size: int = 64
    clip_len: int = 5
    patch_size: int = 8
    codec_seed: int = 0
    channels: int = 128
    num_blocks: int = 2
    num_heads: int = 4
    context_len: int = 4
    schedule: str = "bernoulli"
    context_gradient: str = "flow"  # "detach" stops gradients at the history
    use_context: bool = True        # False = no temporal modules ablation
    use_temporal_loss: bool = True
    checkpoint_interval: int = 1000
    feature_seed: int = 0
    # Default weights equalize the raw magnitudes of the three terms at desk
    # scale: perceptual distances land around 1e2 and the warped-difference
    # term around 1e-5 relative to an l2 of a few 1e-3.
    loss: LossWeights = field(
        default_factory=lambda: LossWeights(lambda_perc=1e-5, lambda_temp=25.0)
    )

    def __post_init__(self):
        if self.pretrain_steps < 0 or self.temporal_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.temporal_batch_fraction <= 1.0:
            raise ValueError("temporal_batch_fraction must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise ValueError("lr_final_fraction must be in (0, 1]")
        if self.frame_size % self.patch_size:
            raise ValueError(
                f"frame_size {self.frame_size} not divisible by patch_size {self.patch_size}"
            )
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.context_gradient not in CONTEXT_GRADIENT_MODES:
            raise ValueError(f"context_gradient must be one of {CONTEXT_GRADIENT_MODES}")

    def backbone_config(self) -> BackboneConfig:
        tokens = self.frame_size // self.patch_size
        return BackboneConfig(
            latent_channels=3 * self.patch_size**2,
            tokens_h=tokens,
            tokens_w=tokens,
            channels=self.channels,
            num_blocks=self.num_blocks,
            num_heads=self.num_heads,
            context_len=self.context_len,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = d.pop("loss", {})
        if isinstance(loss, dict):
            lw = dict(loss)
            if lw.get("layer_weights") is not None:
                lw["layer_weights"] = tuple(lw["layer_weights"])
            loss = LossWeights(**lw)
        return cls(loss=loss, **d)


@dataclass
class TrainState:
    config: TrainConfig
    backbone: Backbone
    codec: Codec
    extractor: FeatureExtractor
    optimizer: torch.optim.AdamW
    rngs: dict[str, np.random.Generator]
    step: int = 0
    phase: str = "pretrain"


def init_state(config: TrainConfig) -> TrainState:
    backbone = Backbone(config.backbone_config(), seed=config.seed)
    codec = Codec(config.patch_size, config.codec_seed)
    extractor = FeatureExtractor(seed=config.feature_seed)
    optimizer = torch.optim.AdamW(
        backbone.parameters(),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    children = np.random.SeedSequence(config.seed).spawn(3)
    rngs = {
        name: np.random.Generator(np.random.PCG64(ss))
        for name, ss in zip(("data", "patch", "phase"), children)
    }
    return TrainState(
        config=config,
        backbone=backbone,
        codec=codec,
        extractor=extractor,
        optimizer=optimizer,
        rngs=rngs,
    )


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


class SamplePool:
    """Manifest-backed sample source with an in-memory decode cache."""

    def __init__(self, root, records: list[dict], frame_size: int):
        self.root = Path(root)
        self.records = records
        self.images = [r for r in records if not r["temporal"]]
        self.clips = [r for r in records if r["temporal"]]
        self.frame_size = int(frame_size)
        self._cache: dict[str, PairedSample] = {}

    def load(self, record: dict) -> PairedSample:
        sample = self._cache.get(record["id"])
        if sample is None:
            sample = load_sample(self.root, record)
            h, w = sample.inputs.shape[1:3]
            if (h, w) != (self.frame_size, self.frame_size):
                raise ValueError(
                    f"sample {record['id']} is {h}x{w}, expected "
                    f"{self.frame_size}x{self.frame_size}"
                )
            self._cache[record["id"]] = sample
        return sample

    def draw(self, kind: str, n: int, rng: np.random.Generator) -> list[PairedSample]:
        pool = self.clips if kind == "clip" else self.images
        if not pool:
            raise ValueError(f"manifest has no {kind!r} samples")
        idx = rng.integers(0, len(pool), size=n)
        return [self.load(pool[int(i)]) for i in idx]


def _stack_batch(batch: list[PairedSample]):
    if not batch:
        raise ValueError("train_step: empty batch")
    flags = {bool(s.temporal) for s in batch}
    if len(flags) != 1:
        raise ValueError("train_step: batch mixes temporal and non-temporal samples")
    temporal = flags.pop()
    t = min(s.num_frames for s in batch)
    inputs = torch.from_numpy(
        np.stack([np.asarray(s.inputs[:t], dtype=np.float32) for s in batch])
    )
    targets = torch.from_numpy(
        np.stack([np.asarray(s.targets[:t], dtype=np.float32) for s in batch])
    )
    flows = valid = None
    if temporal and t > 1 and all(s.flows is not None for s in batch):
        flows = torch.from_numpy(
            np.stack([np.asarray(s.flows[: t - 1], dtype=np.float32) for s in batch])
        )
        valid = torch.from_numpy(
            np.stack(
                [
                    np.asarray(
                        s.flow_valid[: t - 1]
                        if s.flow_valid is not None
                        else np.ones((t - 1,) + s.inputs.shape[1:3], dtype=bool)
                    )
                    for s in batch
                ]
            )
        )
    return temporal, inputs, targets, flows, valid


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def _clip_forward(state: TrainState, x, record_context=None):
    """Unroll the model over a clip, conditioning on its own outputs.

    Returns the list of per-frame decoded predictions (pre-clamp).
    """
    cfg = state.config
    history: deque = deque(maxlen=cfg.context_len)
    outputs = []
    for t in range(x.shape[1]):
        z = state.codec.encode(x[:, t])
        ctx = list(history) if cfg.use_context else []
        if record_context is not None:
            record_context.append([c.detach().clone() for c in ctx])
        pred = state.backbone(z, ctx)
        dec = state.codec.decode(pred)
        outputs.append(dec)
        ctx_latent = state.codec.encode(dec.clamp(0.0, 1.0))
        if cfg.context_gradient == "detach":
            ctx_latent = ctx_latent.detach()
        history.appendleft(ctx_latent)
    return outputs


def train_step(
    state: TrainState,
    batch: list[PairedSample],
    record_context: list | None = None,
) -> dict:
    """One optimizer update on a homogeneous batch; returns the loss breakdown."""
    temporal, x, y, flows, valid = _stack_batch(batch)
    cfg = state.config
    weights = cfg.loss
    opt = state.optimizer
    opt.zero_grad(set_to_none=True)

    if not temporal:
        z = state.codec.encode(x[:, 0])
        pred = state.backbone(z, ())
        dec = state.codec.decode(pred)
        img_weights = replace(weights, lambda_temp=0.0)
        total, breakdown = loss_total(
            dec, y[:, 0], state.extractor, img_weights, state.rngs["patch"]
        )
    else:
        outputs = _clip_forward(state, x, record_context=record_context)
        l2_terms, perc_terms, temp_terms = [], [], []
        for t, dec in enumerate(outputs):
            l2_terms.append(loss_l2(dec, y[:, t]))
            perc_terms.append(
                loss_perceptual(dec, y[:, t], state.extractor, weights, state.rngs["patch"])
            )
            if t > 0 and cfg.use_temporal_loss and weights.lambda_temp > 0 and flows is not None:
                temp_terms.append(
                    loss_temporal(dec, outputs[t - 1], flows[:, t - 1], valid[:, t - 1])
                )
        l2 = torch.stack(l2_terms).mean()
        perc = torch.stack(perc_terms).mean()
        temp = torch.stack(temp_terms).mean() if temp_terms else torch.zeros((), dtype=l2.dtype)
        lam_temp = weights.lambda_temp if temp_terms else 0.0
        total = weights.lambda_l2 * l2 + weights.lambda_perc * perc + lam_temp * temp
        breakdown = {
            "l2": float(l2.detach()),
            "perc": float(perc.detach()),
            "temp": float(temp.detach()),
            "total": float(total.detach()),
        }

    total.backward()
    opt.step()
    state.step += 1
    breakdown["kind"] = "clip" if temporal else "image"
    return breakdown


# ---------------------------------------------------------------------------
# Training-state checkpoints
# ---------------------------------------------------------------------------


def save_train_state(path, state: TrainState) -> None:
    tensors = model_tensors(state.backbone)
    opt_sd = state.optimizer.state_dict()
    param_names = [name for name, _ in state.backbone.named_parameters()]
    for i, name in enumerate(param_names):
        entry = opt_sd["state"].get(i)
        if entry is None:
            continue
        for key, val in entry.items():
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            tensors[f"opt.{name}.{key}"] = arr
    extra = {
        "step": state.step,
        "phase": state.phase,
        "train_config": state.config.to_dict(),
        "rng": {name: gen.bit_generator.state for name, gen in state.rngs.items()},
    }
    write_checkpoint(
        path,
        kind="train_state",
        backbone_config=state.backbone.config.to_dict(),
        codec_config=state.codec.config(),
        tensors=tensors,
        extra=extra,
        backbone_seed=state.backbone.seed,
    )


def _generator_from_state(state_dict: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state_dict
    return np.random.Generator(bg)


def load_train_state(path) -> TrainState:
    header, tensors = read_checkpoint(path)
    if header["kind"] != "train_state":
        raise CheckpointError(f"{path}: expected a train_state checkpoint, got {header['kind']!r}")
    extra = header["extra"]
    config = TrainConfig.from_dict(extra["train_config"])
    backbone = restore_backbone(header, tensors)
    codec = Codec.from_config(header["codec"])
    extractor = FeatureExtractor(seed=config.feature_seed)
    optimizer = torch.optim.AdamW(
        backbone.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    sd = optimizer.state_dict()
    param_names = [name for name, _ in backbone.named_parameters()]
    opt_state = {}
    for i, name in enumerate(param_names):
        prefix = f"opt.{name}."
        entry = {
            key[len(prefix) :]: torch.from_numpy(arr.copy())
            for key, arr in tensors.items()
            if key.startswith(prefix)
        }
        if entry:
            opt_state[i] = entry
    sd["state"] = opt_state
    optimizer.load_state_dict(sd)
    rngs = {name: _generator_from_state(s) for name, s in extra["rng"].items()}
    return TrainState(
        config=config,
        backbone=backbone,
        codec=codec,
        extractor=extractor,
        optimizer=optimizer,
        rngs=rngs,
        step=int(extra["step"]),
        phase=str(extra["phase"]),
    )


# ---------------------------------------------------------------------------
# The full run
# ---------------------------------------------------------------------------


def scheduled_lr(config: TrainConfig, step: int) -> float:
    """Cosine decay from learning_rate to learning_rate * lr_final_fraction.

    A pure function of the step counter, so interrupted runs resume on the
    identical schedule with no extra state.
    """
    total = config.pretrain_steps + config.temporal_steps
    if config.lr_final_fraction >= 1.0 or total == 0:
        return config.learning_rate
    progress = min(max(step, 0), total) / total
    floor = config.learning_rate * config.lr_final_fraction
    return floor + 0.5 * (config.learning_rate - floor) * (1.0 + math.cos(math.pi * progress))


def run_training(
    config: TrainConfig,
    manifest_path,
    out_dir,
    *,
    resume=None,
    log_path=None,
) -> TrainState:
    """Run (or resume) the two-phase schedule over a dataset manifest.

    Writes `model.ckpt` (weights only) and `state_final.ckpt` plus periodic
    `state_<step>.ckpt` files and a JSONL log with one record per step.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path)
    if not records:
        raise ValueError(f"{manifest_path}: empty manifest")
    pool = SamplePool(Path(manifest_path).parent, records, config.frame_size)

    if resume is not None:
        state = load_train_state(resume)
        if state.config.to_dict() != config.to_dict():
            raise ValueError("resume checkpoint was written with a different train config")
    else:
        state = init_state(config)

    total_steps = config.pretrain_steps + config.temporal_steps
    if config.pretrain_steps > 0 and not pool.images:
        raise ValueError("pretraining needs non-temporal samples, manifest has none")
    if config.temporal_steps > 0 and not pool.clips:
        raise ValueError("temporal phase needs clip samples, manifest has none")
    if config.temporal_steps > 0 and config.temporal_batch_fraction < 1.0 and not pool.images:
        raise ValueError("mixed phase draws image batches, manifest has none")

    log_file = Path(log_path) if log_path is not None else out_dir / "train_log.jsonl"
    with open(log_file, "a") as log:
        while state.step < total_steps:
            if state.step < config.pretrain_steps:
                state.phase = "pretrain"
                kind = "image"
            else:
                state.phase = "mixed"
                if config.schedule == "bernoulli":
                    take_clip = state.rngs["phase"].random() < config.temporal_batch_fraction
                else:
                    take_clip = (state.step - config.pretrain_steps) % 2 == 0
                kind = "clip" if take_clip else "image"
            lr_now = scheduled_lr(config, state.step)
            for group in state.optimizer.param_groups:
                group["lr"] = lr_now
            batch = pool.draw(kind, config.batch_size, state.rngs["data"])
            breakdown = train_step(state, batch)
            record = {"step": state.step, "phase": state.phase, **breakdown}
            log.write(json.dumps(record, sort_keys=True) + "\n")
            if (
                config.checkpoint_interval
                and state.step % config.checkpoint_interval == 0
                and state.step < total_steps
            ):
                save_train_state(out_dir / f"state_{state.step:06d}.ckpt", state)

    save_model(out_dir / "model.ckpt", state.backbone, state.codec)
    save_train_state(out_dir / "state_final.ckpt", state)
    return state
