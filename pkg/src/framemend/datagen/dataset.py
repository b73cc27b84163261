"""Dataset building: sample serialization, manifests, stream allocation.

On-disk layout per sample (under `<root>/<stream>/<sample_id>/`):
  input_NNN.png / target_NNN.png   8-bit RGB frames, NNN = frame index
  mask_NNN.png                     foreground/compositing mask, where the
                                   stream has one (8-bit, 0/255)
  edit_NNN.png                     region where input may differ from target
  flow_NNN.flo                     backward flow frame NNN -> NNN-1 (NNN >= 1)
  valid_NNN.png                    exact-correspondence mask for that flow
  meta.json                        stream tag, seed info, parameters

The manifest is newline-delimited JSON, one record per sample:
`{"id", "stream", "path", "frames", "temporal"}`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..flow import read_flo, write_flo
from ..frames import load_mask_png, load_png, save_mask_png, save_png
from .sample import PairedSample, validate_sample
from .streams import STREAMS, generate_sample

# Relative stream weights used when the caller does not pin explicit counts.
# Skewed toward artifact repair and camera-pipeline edits, with smaller
# shares for the object-level manipulation streams.
DEFAULT_MIX = {"artifact": 118, "isp": 88, "relight": 46, "shadow": 77, "reinsert": 21}


@dataclass
class DatasetConfig:
    root: Path
    counts: dict[str, int] = field(default_factory=dict)
    frame_size: int = 64
    clip_len: int = 5
    seed: int = 0

    @classmethod
    def from_proportions(
        cls, root, total: int, proportions: dict[str, float], **kw
    ) -> "DatasetConfig":
        return cls(root=Path(root), counts=allocate_stream_counts(total, proportions), **kw)


def allocate_stream_counts(total: int, proportions: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of `total` samples across streams.

    Guarantees the counts sum to `total` and each stream is within one
    sample of its exact proportional share.
    """
    if total < 0:
        raise ValueError("total must be >= 0")
    streams = [s for s in STREAMS if s in proportions]
    weights = np.array([float(proportions[s]) for s in streams])
    if (weights < 0).any() or weights.sum() == 0:
        raise ValueError("proportions must be non-negative and not all zero")
    exact = weights / weights.sum() * total
    base = np.floor(exact).astype(int)
    remainder = total - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    for i in range(remainder):
        base[order[i]] += 1
    return {s: int(c) for s, c in zip(streams, base)}


def _sample_kind(stream: str, index: int) -> str:
    if stream == "relight":
        return "image"
    if stream in ("shadow", "reinsert"):
        return "clip"
    # artifact and isp alternate so both training phases see them
    return "image" if index % 2 == 0 else "clip"


def save_sample(sample_dir: Path, sample: PairedSample) -> None:
    sample_dir = Path(sample_dir)
    sample_dir.mkdir(parents=True, exist_ok=True)
    t = sample.num_frames
    for i in range(t):
        save_png(sample_dir / f"input_{i:03d}.png", sample.inputs[i])
        save_png(sample_dir / f"target_{i:03d}.png", sample.targets[i])
        if sample.fg_mask is not None:
            save_mask_png(sample_dir / f"mask_{i:03d}.png", sample.fg_mask[i])
        if sample.edit_mask is not None:
            save_mask_png(sample_dir / f"edit_{i:03d}.png", sample.edit_mask[i])
    if sample.temporal and sample.flows is not None:
        for i in range(1, t):
            write_flo(sample_dir / f"flow_{i:03d}.flo", sample.flows[i - 1])
            if sample.flow_valid is not None:
                save_mask_png(sample_dir / f"valid_{i:03d}.png", sample.flow_valid[i - 1])
    meta = {
        "stream": sample.stream,
        "temporal": sample.temporal,
        "frames": t,
        "params": sample.meta,
    }
    (sample_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_sample(root: Path, record: dict) -> PairedSample:
    """Load a sample directory back into memory (frames as float32)."""
    sample_dir = Path(root) / record["path"]
    t = int(record["frames"])
    inputs = np.stack([load_png(sample_dir / f"input_{i:03d}.png") for i in range(t)])
    targets = np.stack([load_png(sample_dir / f"target_{i:03d}.png") for i in range(t)])
    fg = edit = flows = valid = None
    if (sample_dir / "mask_000.png").exists():
        fg = np.stack([load_mask_png(sample_dir / f"mask_{i:03d}.png") for i in range(t)])
    if (sample_dir / "edit_000.png").exists():
        edit = np.stack([load_mask_png(sample_dir / f"edit_{i:03d}.png") for i in range(t)])
    if t > 1 and (sample_dir / "flow_001.flo").exists():
        flows = np.stack([read_flo(sample_dir / f"flow_{i:03d}.flo") for i in range(1, t)])
        if (sample_dir / "valid_001.png").exists():
            valid = np.stack(
                [load_mask_png(sample_dir / f"valid_{i:03d}.png") for i in range(1, t)]
            )
    meta = json.loads((sample_dir / "meta.json").read_text())
    return PairedSample(
        inputs=inputs,
        targets=targets,
        stream=record["stream"],
        temporal=bool(record["temporal"]),
        fg_mask=fg,
        edit_mask=edit,
        flows=flows,
        flow_valid=valid,
        meta=meta.get("params", {}),
    )


def build_dataset(config: DatasetConfig) -> Path:
    """Generate all configured samples and write the manifest.

    Each sample derives its RNG from (seed, stream index, sample index), so
    the tree is byte-identical across runs with the same config and seed.
    """
    root = Path(config.root)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for s_idx, stream in enumerate(STREAMS):
        n = int(config.counts.get(stream, 0))
        for i in range(n):
            ss = np.random.SeedSequence([config.seed, s_idx, i])
            rng = np.random.Generator(np.random.PCG64(ss))
            sample = generate_sample(
                stream, _sample_kind(stream, i), rng, config.frame_size, config.clip_len
            )
            validate_sample(sample)
            sample_id = f"{stream}_{i:04d}"
            rel = f"{stream}/{sample_id}"
            save_sample(root / rel, sample)
            records.append(
                {
                    "id": sample_id,
                    "stream": stream,
                    "path": rel,
                    "frames": sample.num_frames,
                    "temporal": sample.temporal,
                }
            )
    manifest = root / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def load_manifest(path) -> list[dict]:
    path = Path(path)
    records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return records
