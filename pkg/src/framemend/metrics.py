"""Evaluation metrics and the holdout evaluation / ablation drivers.

PSNR and SSIM are the classical fidelity measures; perceptual and
structural distances reuse the package's shared frozen feature extractor so
the numbers are reproducible from seeds alone; the flicker score measures
temporal consistency as one minus the mean absolute difference between each
frame and its flow-warped predecessor over trustworthy pixels.  All scores
here are comparable across runs of this package, not against externally
published numbers computed with different reference networks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .datagen.dataset import load_manifest, load_sample
from .features import FeatureExtractor
from .flow import warp
from .runtime import open_session

PSNR_CAP_DB = 100.0
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_RADIUS = 5  # 11-tap window


def _gaussian_window(taps: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(taps, dtype=np.float64) - (taps - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


_SSIM_WINDOW = _gaussian_window()

_shared_extractor: FeatureExtractor | None = None


def default_extractor() -> FeatureExtractor:
    """The package-wide frozen extractor (seed 0), built once."""
    global _shared_extractor
    if _shared_extractor is None:
        _shared_extractor = FeatureExtractor(seed=0)
    return _shared_extractor


# ---------------------------------------------------------------------------
# Frame fidelity
# ---------------------------------------------------------------------------


def psnr(pred, ref, region=None) -> float:
    """Peak signal-to-noise ratio in dB for unit-range frames.

    Works on any matching shapes with a trailing channel axis; `region` is a
    boolean mask over the pixel axes.  A zero MSE returns the documented
    100 dB cap (values above the cap also clip to it).
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"psnr: shape mismatch {pred.shape} vs {ref.shape}")
    sq = (pred - ref) ** 2
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if region.shape != pred.shape[:-1]:
            raise ValueError(f"psnr: region {region.shape} does not match {pred.shape[:-1]}")
        if not region.any():
            raise ValueError("psnr: empty region")
        sq = sq[region]
    mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _window_means(channel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted window means, valid interior only."""
    out = correlate1d(channel, _SSIM_WINDOW, axis=0, mode="constant")
    out = correlate1d(out, _SSIM_WINDOW, axis=1, mode="constant")
    r = _SSIM_RADIUS
    return out[r:-r, r:-r]


def ssim(pred, ref, region=None) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    `region` selects window CENTER pixels (same grid as the frame); windows
    whose centers fall within `_SSIM_RADIUS` of the border are never scored.
    Channels are averaged after the per-channel SSIM map.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"ssim: shape mismatch {pred.shape} vs {ref.shape}")
    if pred.ndim == 2:
        pred = pred[..., None]
        ref = ref[..., None]
    h, w, _ = pred.shape
    r = _SSIM_RADIUS
    if h < 2 * r + 1 or w < 2 * r + 1:
        raise ValueError(f"ssim: frame {h}x{w} smaller than the 11x11 window")
    maps = []
    for c in range(pred.shape[-1]):
        p, q = pred[..., c], ref[..., c]
        mu_p = _window_means(p)
        mu_q = _window_means(q)
        var_p = _window_means(p * p) - mu_p * mu_p
        var_q = _window_means(q * q) - mu_q * mu_q
        cov = _window_means(p * q) - mu_p * mu_q
        num = (2.0 * mu_p * mu_q + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
        den = (mu_p * mu_p + mu_q * mu_q + _SSIM_C1) * (var_p + var_q + _SSIM_C2)
        maps.append(num / den)
    smap = np.mean(maps, axis=0)
    if region is None:
        return float(smap.mean())
    region = np.asarray(region, dtype=bool)
    if region.shape != (h, w):
        raise ValueError(f"ssim: region {region.shape} does not match frame {(h, w)}")
    inner = region[r:-r, r:-r]
    if not inner.any():
        raise ValueError("ssim: region empty after excluding the window border")
    return float(smap[inner].mean())


# ---------------------------------------------------------------------------
# Feature-space distances
# ---------------------------------------------------------------------------


def _to_frame_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    if t.ndim != 3:
        raise ValueError(f"expected a single (H, W, C) frame, got {tuple(t.shape)}")
    return t


def perceptual_distance(pred, ref, *, extractor: FeatureExtractor | None = None) -> float:
    """Layer-averaged mean squared feature difference over the full frame.

    Each stage contributes its squared feature difference normalized by that
    stage's feature count; stages are averaged.  Zero iff the inputs are
    identical (the extractor is deterministic), and exactly symmetric.
    """
    extractor = extractor or default_extractor()
    a = _to_frame_tensor(pred)
    b = _to_frame_tensor(ref)
    if a.shape != b.shape:
        raise ValueError(f"perceptual_distance: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    with torch.no_grad():
        fa = extractor(a)
        fb = extractor(b)
        terms = [((x - y) ** 2).mean() for x, y in zip(fa, fb)]
        return float(torch.stack(terms).mean())


def feature_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity along the LAST axis, elementwise over the rest.

    Identical vectors score exactly 1 (the ratio is short-circuited); a zero
    vector against a non-zero one scores 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = (a * b).sum(axis=-1)
    sa = (a * a).sum(axis=-1)
    sb = (b * b).sum(axis=-1)
    denom = np.sqrt(sa * sb)
    exact = (sa == sb) & (dot == sa)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(exact, 1.0, np.where(denom > 0.0, dot / np.where(denom > 0, denom, 1.0), 0.0))
    return cos


def struct_distance(inp, out, *, extractor: FeatureExtractor | None = None) -> float:
    """1 - mean cosine similarity between deepest-stage features of the two
    frames, compared location by location."""
    extractor = extractor or default_extractor()
    a = _to_frame_tensor(inp)
    b = _to_frame_tensor(out)
    if a.shape != b.shape:
        raise ValueError(f"struct_distance: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    with torch.no_grad():
        fa = extractor(a)[-1][0].numpy()  # (C, h, w)
        fb = extractor(b)[-1][0].numpy()
    cos = feature_cosine(np.moveaxis(fa, 0, -1), np.moveaxis(fb, 0, -1))
    return float(1.0 - cos.mean())


# ---------------------------------------------------------------------------
# Temporal consistency
# ---------------------------------------------------------------------------


def flicker_score(clip, flows, validity=None) -> float:
    """1 - mean warped absolute difference between consecutive frames.

    `clip` is (T, H, W, C) in [0, 1], `flows` (T-1, H, W, 2) backward flow,
    `validity` an optional (T-1, H, W) mask ANDed with the warp's own
    in-bounds mask.  Pairs with no valid pixels are skipped; a clip with no
    scorable pair at all raises.
    """
    clip = np.asarray(clip, dtype=np.float64)
    flows = np.asarray(flows)
    if clip.ndim != 4:
        raise ValueError(f"flicker_score: expected (T, H, W, C) clip, got {clip.shape}")
    t = clip.shape[0]
    if t < 2:
        raise ValueError("flicker_score: need at least two frames")
    if flows.shape[0] != t - 1:
        raise ValueError(f"flicker_score: {flows.shape[0]} flows for {t} frames")
    scores = []
    for i in range(1, t):
        warped, wvalid = warp(clip[i - 1], flows[i - 1].astype(np.float64))
        ok = wvalid if validity is None else wvalid & np.asarray(validity[i - 1], dtype=bool)
        if not ok.any():
            continue
        mad = np.abs(clip[i] - warped).mean(axis=-1)[ok].mean()
        scores.append(1.0 - float(mad))
    if not scores:
        raise ValueError("flicker_score: no frame pair has valid correspondences")
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Spectral residual analysis
# ---------------------------------------------------------------------------


def high_frequency_energy(pred, ref) -> float:
    """Residual energy concentrated in the top radial-frequency quartile.

    Computes the orthonormal 2D FFT of (pred - ref) per channel and averages
    |F|^2 over the 25% of frequency bins with the largest radial frequency
    (so the DC bin never contributes).  Checkerboard-like residuals, whose
    energy sits at the Nyquist corner, score high; smooth residuals score
    near zero.  The scale is size-independent but only comparable between
    frames of equal resolution.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape or pred.ndim != 3:
        raise ValueError(
            f"high_frequency_energy: expected matching (H, W, C) frames, "
            f"got {pred.shape} vs {ref.shape}"
        )
    h, w, _ = pred.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    band = radius >= np.quantile(radius, 0.75)
    spectrum = np.fft.fft2(pred - ref, axes=(0, 1), norm="ortho")
    power = (spectrum.real**2 + spectrum.imag**2).mean(axis=-1)
    return float(power[band].mean())


# ---------------------------------------------------------------------------
# Holdout evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    model: str
    dataset: str
    clips: list[dict]
    aggregate: dict

    def to_lines(self) -> list[str]:
        lines = []
        for clip in self.clips:
            for metric, value in clip.items():
                if metric in ("id", "stream") or value is None:
                    continue
                lines.append(
                    json.dumps(
                        {"clip": clip["id"], "metric": metric, "value": value},
                        sort_keys=True,
                    )
                )
        for metric, value in self.aggregate.items():
            lines.append(json.dumps({"aggregate": metric, "value": value}, sort_keys=True))
        return lines


def _clip_region(sample) -> np.ndarray | None:
    if sample.edit_mask is not None and sample.edit_mask.any():
        return np.asarray(sample.edit_mask, dtype=bool)
    return None


def evaluate(
    checkpoint_path,
    manifest_path,
    out_path=None,
    *,
    use_context: bool = True,
    model_id: str = "model",
) -> EvalReport:
    """Stream every manifest clip through the model and score the outputs.

    The region of interest is each sample's edit mask (full frame when the
    sample has none).  Aggregates are plain means over the clips that carry
    the metric; every reported value is finite.
    """
    records = load_manifest(manifest_path)
    if not records:
        raise ValueError(f"{manifest_path}: empty manifest, nothing to evaluate")
    root = Path(manifest_path).parent
    session = open_session(checkpoint_path, use_context=use_context)

    clip_rows = []
    for rec in records:
        sample = load_sample(root, rec)
        session.reset()
        outputs = np.stack([session.push_frame(f) for f in sample.inputs])
        targets = np.asarray(sample.targets, dtype=np.float64)
        inputs = np.asarray(sample.inputs, dtype=np.float64)
        region = _clip_region(sample)

        row = {"id": rec["id"], "stream": rec["stream"]}
        row["psnr_out"] = psnr(outputs, targets, region)
        row["psnr_in"] = psnr(inputs, targets, region)
        ssim_vals = []
        for i in range(outputs.shape[0]):
            frame_region = region[i] if region is not None else None
            try:
                ssim_vals.append(ssim(outputs[i], targets[i], frame_region))
            except ValueError:
                continue
        row["ssim"] = float(np.mean(ssim_vals)) if ssim_vals else ssim(outputs[0], targets[0])
        row["perceptual"] = float(
            np.mean([perceptual_distance(outputs[i], targets[i]) for i in range(len(outputs))])
        )
        row["struct"] = float(
            np.mean([struct_distance(inputs[i], outputs[i]) for i in range(len(outputs))])
        )
        if sample.temporal and sample.flows is not None:
            try:
                row["flicker"] = flicker_score(outputs, sample.flows, sample.flow_valid)
            except ValueError:
                row["flicker"] = None
        else:
            row["flicker"] = None
        clip_rows.append(row)

    metric_names = ("psnr_out", "psnr_in", "ssim", "perceptual", "struct", "flicker")
    aggregate = {}
    for name in metric_names:
        values = [r[name] for r in clip_rows if r.get(name) is not None]
        if values:
            aggregate[name] = float(np.mean(values))
    report = EvalReport(
        model=model_id,
        dataset=str(manifest_path),
        clips=clip_rows,
        aggregate=aggregate,
    )
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text("\n".join(report.to_lines()) + "\n")
    return report


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "no_temporal_loss", "no_temporal_modules")


def ablation_config(base, variant: str):
    """Derive a variant's train config from the full model's."""
    if variant == "full":
        return base
    if variant == "no_temporal_loss":
        return replace(base, use_temporal_loss=False)
    if variant == "no_temporal_modules":
        return replace(base, use_context=False, use_temporal_loss=False)
    raise ValueError(f"unknown ablation variant {variant!r} (have {ABLATION_VARIANTS})")


def ablate(base_config, train_manifest, out_dir, *, eval_manifest=None) -> dict:
    """Train and evaluate the temporal-ablation triplet from one base config.

    Returns {variant: EvalReport}; each variant trains in its own
    subdirectory of `out_dir` and is evaluated with the context enabled only
    if its architecture used it.
    """
    from .trainer import run_training

    eval_manifest = eval_manifest or train_manifest
    out_dir = Path(out_dir)
    reports = {}
    for variant in ABLATION_VARIANTS:
        cfg = ablation_config(base_config, variant)
        run_dir = out_dir / variant
        run_training(cfg, train_manifest, run_dir)
        reports[variant] = evaluate(
            run_dir / "model.ckpt",
            eval_manifest,
            out_path=run_dir / "eval_report.jsonl",
            use_context=cfg.use_context,
            model_id=variant,
        )
    return reports
