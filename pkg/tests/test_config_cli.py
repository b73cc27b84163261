"""Config-file parsing and end-to-end CLI runs on tiny sizes."""
from __future__ import annotations

import json

import numpy as np
import pytest

from framemend.cli import main
from framemend.config import (
    build_train_config,
    format_train_config,
    load_train_config,
    parse_config_text,
)
from framemend.frames import load_png, save_png
from framemend.losses import LossWeights
from framemend.trainer import TrainConfig

TINY_CONFIG = """
# toy run
pretrain_steps = 2
temporal_steps = 2
batch_size = 2
learning_rate = 1e-3
frame_size = 32
clip_len = 3
patch_size = 8
channels = 16
num_blocks = 1
num_heads = 2
checkpoint_interval = 100
loss.patch_min = 4
loss.patch_max = 8
loss.patches_per_step = 2
loss.lambda_perc = 0.001
"""


def test_parse_config_text_basics():
    pairs = parse_config_text("a = 1 # trailing\n\n# comment only\nb=two\n")
    assert pairs == {"a": "1", "b": "two"}


def test_parse_config_text_errors():
    with pytest.raises(ValueError, match="key = value"):
        parse_config_text("just words\n")
    with pytest.raises(ValueError, match="duplicate"):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ValueError, match="empty key"):
        parse_config_text("= 3\n")


def test_build_train_config_types_and_values():
    cfg = build_train_config(parse_config_text(TINY_CONFIG))
    assert cfg.pretrain_steps == 2 and isinstance(cfg.pretrain_steps, int)
    assert cfg.learning_rate == pytest.approx(1e-3)
    assert cfg.loss.patches_per_step == 2
    assert cfg.loss.lambda_perc == pytest.approx(1e-3)
    assert cfg.schedule == "bernoulli"  # untouched default


def test_unknown_keys_rejected():
    with pytest.raises(ValueError, match="unknown config key 'warmup'"):
        build_train_config({"warmup": "5"})
    with pytest.raises(ValueError, match="loss.alpha"):
        build_train_config({"loss.alpha": "5"})
    with pytest.raises(ValueError, match="unknown config key 'loss'"):
        build_train_config({"loss": "x"})


def test_bool_and_layer_weight_coercion():
    cfg = build_train_config(
        {"use_context": "false", "loss.layer_weights": "1.0, 0.5 ,0.25".replace(" ", "")}
    )
    assert cfg.use_context is False
    assert cfg.loss.layer_weights == (1.0, 0.5, 0.25)
    assert build_train_config({"loss.layer_weights": "none"}).loss.layer_weights is None
    with pytest.raises(ValueError, match="boolean"):
        build_train_config({"use_context": "maybe"})


def test_format_parse_round_trip():
    cfg = TrainConfig(
        pretrain_steps=7,
        schedule="alternate",
        use_temporal_loss=False,
        loss=LossWeights(lambda_perc=0.25, layer_weights=(1.0, 2.0)),
    )
    again = build_train_config(parse_config_text(format_train_config(cfg)))
    assert again == cfg


def test_load_train_config_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    cfg = load_train_config(path, {"pretrain_steps": "9", "loss.lambda_perc": "0.5"})
    assert cfg.pretrain_steps == 9
    assert cfg.loss.lambda_perc == 0.5


# ---------------------------------------------------------------------------
# CLI end-to-end on tiny sizes
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """dataset -> train once; later tests reuse the outputs."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CONFIG)
    assert (
        main(
            [
                "dataset", "--out", str(data), "--counts", "isp=4,shadow=2",
                "--seed", "3", "--frame-size", "32", "--clip-len", "3",
            ]
        )
        == 0
    )
    manifest = data / "manifest.jsonl"
    assert manifest.exists()
    assert (
        main(
            ["train", "--config", str(cfg), "--data", str(manifest), "--out", str(run),
             "--log", str(root / "log.jsonl")]
        )
        == 0
    )
    return root, data, manifest, run


def test_cli_dataset_and_train_outputs(cli_run):
    root, data, manifest, run = cli_run
    records = [json.loads(l) for l in manifest.read_text().strip().splitlines()]
    assert len(records) == 6
    assert (run / "model.ckpt").exists()
    log_rows = [json.loads(l) for l in (root / "log.jsonl").read_text().strip().splitlines()]
    assert len(log_rows) == 4


def test_cli_train_set_override(cli_run, tmp_path):
    root, _, manifest, _ = cli_run
    out = tmp_path / "short"
    code = main(
        ["train", "--config", str(root / "run.cfg"), "--data", str(manifest),
         "--out", str(out), "--set", "pretrain_steps=1", "--set", "temporal_steps=0"]
    )
    assert code == 0
    assert (out / "model.ckpt").exists()


def test_cli_enhance_round_trip(cli_run, tmp_path):
    _, _, _, run = cli_run
    rng = np.random.default_rng(0)
    src = tmp_path / "in"
    dst = tmp_path / "out"
    src.mkdir()
    for i in range(3):
        save_png(src / f"frame_{i:03d}.png", rng.random((32, 32, 3)).astype(np.float32))
    report_path = tmp_path / "latency.json"
    code = main(
        ["enhance", "--ckpt", str(run / "model.ckpt"), "--frames-in", str(src),
         "--frames-out", str(dst), "--report", str(report_path)]
    )
    assert code == 0
    outs = sorted(dst.glob("*.png"))
    assert [p.name for p in outs] == [f"frame_{i:03d}.png" for i in range(3)]
    first = load_png(outs[0])
    assert first.shape == (32, 32, 3) and np.isfinite(first).all()
    report = json.loads(report_path.read_text())
    assert report["frames"] == 3 and report["mean_ms"] > 0


def test_cli_enhance_empty_dir_fails(cli_run, tmp_path):
    _, _, _, run = cli_run
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(SystemExit):
        main(["enhance", "--ckpt", str(run / "model.ckpt"), "--frames-in", str(empty),
              "--frames-out", str(tmp_path / "o")])


def test_cli_eval(cli_run, tmp_path, capsys):
    _, _, manifest, run = cli_run
    out = tmp_path / "metrics.jsonl"
    code = main(["eval", "--ckpt", str(run / "model.ckpt"), "--data", str(manifest),
                 "--out", str(out)])
    assert code == 0
    agg = json.loads(capsys.readouterr().out.strip())
    assert "psnr_out" in agg
    assert out.exists()


def test_cli_bad_counts_entry(tmp_path):
    with pytest.raises(SystemExit):
        main(["dataset", "--out", str(tmp_path / "d"), "--counts", "nosuch=3"])
