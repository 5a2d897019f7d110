"""Command line entry point (``srdeg``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint
from .degrade import DegradationSpec, degrade
from .imgio import load_pgm, read_dataset, read_pairs_dir, save_pgm, synth_texture
from .models import build_model
from .runner import (
    ExperimentConfig,
    ResultRow,
    ad_protocol,
    collect_rows,
    emit_report,
    load_source_images,
    prepare_dataset,
    rs_protocol,
    run_grid,
)
from .train import TrainConfig, history_csv, train


def _spec(text: str) -> DegradationSpec:
    text = text.strip()
    if text.startswith("{"):
        return DegradationSpec.from_dict(json.loads(text))
    return DegradationSpec.preset(text)


def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        save_pgm(out / f"{i:04d}.pgm", synth_texture(args.width, args.height, args.seed + i))


def cmd_degrade(args):
    save_pgm(args.output, degrade(load_pgm(args.input), _spec(args.spec), args.seed))


def cmd_prepare(args):
    cfg = ExperimentConfig.load(args.config)
    spec = _spec(args.degradation)
    directory = args.out or Path(cfg.output_dir, "datasets", spec.tag)
    split = prepare_dataset(cfg, spec, seed=args.seed, directory=directory)
    print(f"wrote {len(split.train)} train / {len(split.val)} val pairs to {directory}")


def cmd_train(args):
    data, _ = read_dataset(args.data)
    tc = TrainConfig.from_dict(json.loads(Path(args.train_config).read_text())) if args.train_config else TrainConfig()
    overrides = {k: v for k, v in (("max_epochs", args.max_epochs), ("batch_size", args.batch_size),
                                   ("seed", args.seed), ("patience_epochs", args.patience)) if v is not None}
    tc = TrainConfig.from_dict({**tc.to_dict(), **overrides})
    model_cfg = json.loads(args.model_config) if args.model_config else {}
    model_cfg.setdefault("seed", tc.seed)
    model = build_model(args.model, model_cfg)
    model, history = train(model, data, tc)
    checkpoint.save_model(args.out, model)
    if args.history:
        Path(args.history).write_text(history_csv(history))
    best = max(history, key=lambda r: r.val_psnr)
    print(f"epochs={len(history)} best_epoch={best.epoch} val_psnr={best.val_psnr:.4f}")


def cmd_evaluate(args):
    model = checkpoint.load_model(args.checkpoint)
    rows = []
    if args.test_hr_dir:
        images = [img for _, img in load_source_images(args.test_hr_dir)]
        specs = [_spec(t) for t in args.spec or ["bicubic"]]
        for s in specs:
            kind = "AD" if len(specs) == 1 else f"AD:{s.tag}"
            rows.append(ResultRow(args.dataset, "-", model.kind, kind, ad_protocol(model, images, s, args.seed)))
    if args.pairs_dir:
        rows.append(ResultRow(args.dataset, "-", model.kind, "RS", rs_protocol(model, read_pairs_dir(args.pairs_dir))))
    if not rows:
        raise SystemExit("nothing to evaluate: pass --test-hr-dir and/or --pairs-dir")
    sys.stdout.write(emit_report(rows).decode())


def cmd_grid(args):
    cfg = ExperimentConfig.load(args.config)
    rows = run_grid(cfg, threads=args.threads, progress=lambda m: print(m, file=sys.stderr))
    failed = [r for r in rows if r.status != "ok"]
    sys.stdout.write(emit_report(rows).decode())
    if failed:
        print(f"{len(failed)} row(s) failed", file=sys.stderr)
        return 1


def cmd_report(args):
    data = emit_report(collect_rows(args.output_dir))
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srdeg", description="Degradation study toolkit for CNN super-resolution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic texture PGMs")
    s.add_argument("out_dir")
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("degrade", help="degrade one PGM")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--spec", required=True, help='kind name or JSON, e.g. {"kind": "lanczos-bn"}')
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("prepare", help="build one LR/HR patch dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--degradation", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train a model on a prepared dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--model", default="fsrcnn-tiny")
    s.add_argument("--model-config")
    s.add_argument("--train-config", help="JSON file with TrainConfig fields")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--history")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on AD test images and/or RS pairs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--test-hr-dir")
    s.add_argument("--spec", action="append")
    s.add_argument("--pairs-dir")
    s.add_argument("--dataset", default="-")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("grid", help="run the full degradation x model grid")
    s.add_argument("--config", required=True)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("report", help="assemble results.csv from finished cells")
    s.add_argument("output_dir")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
