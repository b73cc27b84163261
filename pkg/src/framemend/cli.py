"""``framemend`` command-line interface.

Subcommands cover the full loop: generate a corpus, train, enhance a
directory of frames, evaluate a checkpoint, and run the ablation grid.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path


def _parse_counts(text: str) -> dict[str, int]:
    from .datagen.streams import STREAMS

    counts: dict[str, int] = {}
    for chunk in text.split(","):
        name, sep, num = chunk.partition("=")
        name = name.strip()
        if not sep or name not in STREAMS:
            raise SystemExit(
                f"bad --counts entry {chunk!r}; expected stream=N with stream in {STREAMS}"
            )
        counts[name] = int(num)
    return counts


def _parse_overrides(items: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise SystemExit(f"bad --set entry {item!r}; expected key=value")
        overrides[key.strip()] = value.strip()
    return overrides


def cmd_dataset(args) -> int:
    from .datagen.dataset import DEFAULT_MIX, DatasetConfig, build_dataset

    common = dict(frame_size=args.frame_size, clip_len=args.clip_len, seed=args.seed)
    if args.counts:
        cfg = DatasetConfig(root=args.out, counts=_parse_counts(args.counts), **common)
    else:
        cfg = DatasetConfig.from_proportions(args.out, args.total, DEFAULT_MIX, **common)
    manifest = build_dataset(cfg)
    total = sum(cfg.counts.values())
    print(f"wrote {total} samples; manifest at {manifest}")
    return 0


def cmd_train(args) -> int:
    from .config import load_train_config
    from .trainer import run_training

    cfg = load_train_config(args.config, _parse_overrides(args.set))
    state = run_training(cfg, args.data, args.out, resume=args.resume, log_path=args.log)
    print(f"finished at step {state.step}; model at {Path(args.out) / 'model.ckpt'}")
    return 0


def cmd_enhance(args) -> int:
    from .frames import load_png, save_png
    from .runtime import latency_report, open_session

    paths = sorted(Path(args.frames_in).glob("*.png"))
    if not paths:
        raise SystemExit(f"no .png frames found in {args.frames_in}")
    session = open_session(args.ckpt, use_context=not args.no_context)
    out_dir = Path(args.frames_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        save_png(out_dir / path.name, session.push_frame(load_png(path)))
    report = latency_report(session.latencies_ms)
    if args.report:
        Path(args.report).write_text(json.dumps(report, sort_keys=True) + "\n")
    print(
        f"enhanced {report['frames']} frames -> {out_dir} "
        f"(mean {report['mean_ms']:.2f} ms/frame)"
    )
    return 0


def cmd_eval(args) -> int:
    from .metrics import evaluate

    report = evaluate(
        args.ckpt, args.data, out_path=args.out, use_context=not args.no_context
    )
    print(json.dumps(report.aggregate, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    from .config import load_train_config
    from .metrics import ablate

    cfg = load_train_config(args.config)
    reports = ablate(cfg, args.data, args.out, eval_manifest=args.eval_data)
    for variant, report in reports.items():
        print(variant, json.dumps(report.aggregate, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framemend")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate a paired training corpus")
    p.add_argument("--out", required=True, type=Path, help="corpus root directory")
    p.add_argument("--total", type=int, default=64, help="sample count under the default mix")
    p.add_argument("--counts", help="explicit per-stream counts, e.g. isp=8,shadow=4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frame-size", type=int, default=64)
    p.add_argument("--clip-len", type=int, default=5)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path, help="manifest.jsonl path")
    p.add_argument("--out", required=True, type=Path, help="run directory")
    p.add_argument("--resume", type=Path, help="training-state checkpoint to continue")
    p.add_argument("--log", type=Path, help="JSONL loss log path")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="run a checkpoint over a directory of PNG frames")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--frames-in", required=True, type=Path)
    p.add_argument("--frames-out", required=True, type=Path)
    p.add_argument("--report", type=Path, help="write a JSON latency report here")
    p.add_argument("--no-context", action="store_true", help="disable temporal conditioning")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="JSONL metrics report path")
    p.add_argument("--no-context", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score the ablation variants")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--eval-data", type=Path, help="separate holdout manifest")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
