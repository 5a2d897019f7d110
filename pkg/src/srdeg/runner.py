"""Experiment orchestration: dataset preparation, training grid and reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .degrade import DegradationSpec, degrade
from .imgio import (
    DatasetSplit,
    PatchPair,
    list_images,
    load_pgm,
    read_dataset,
    read_pairs_dir,
    read_pgm,
    sample_patch_positions,
    save_pgm,
    write_dataset,
    write_pgm,
)
from .metrics import MetricReport, evaluate_all
from .models import build_model
from .train import TrainConfig, history_csv, train

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["dataset", "degradation", "model", "test_kind"] + MetricReport.columns()


def derive_seed(master: int, *keys: int) -> int:
    """Independent 32-bit seed for ``keys`` under ``master``."""
    # the key count is mixed in because SeedSequence ignores trailing zero words
    return int(np.random.SeedSequence([master, len(keys), *keys]).generate_state(1)[0])


@dataclass
class DatasetConfig:
    tag: str = "synthetic"
    count_train: int = 200
    count_val: int = 20
    hr_size: int = 64


@dataclass
class ModelEntry:
    kind: str
    config: dict = field(default_factory=dict)
    tag: str | None = None

    @property
    def name(self) -> str:
        return self.tag or self.kind


@dataclass
class EvalConfig:
    test_hr_dir: str | None = None
    test_degradations: list[DegradationSpec] = field(
        default_factory=lambda: [DegradationSpec.preset("bicubic")]
    )
    external_pairs_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        specs = d.get("test_degradations")
        return cls(
            test_hr_dir=d.get("test_hr_dir"),
            test_degradations=[DegradationSpec.from_dict(s) for s in specs]
            if specs
            else [DegradationSpec.preset("bicubic")],
            external_pairs_dir=d.get("external_pairs_dir"),
        )


@dataclass
class ExperimentConfig:
    source_image_dir: str
    output_dir: str
    degradations: list[DegradationSpec]
    models: list[ModelEntry]
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.degradations:
            raise ValueError("at least one degradation is required")
        if not self.models:
            raise ValueError("at least one model is required")
        test_dir = self.eval.test_hr_dir
        if test_dir and Path(test_dir).resolve() == Path(self.source_image_dir).resolve():
            raise ValueError("eval.test_hr_dir must differ from source_image_dir")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | os.PathLike | None = None) -> "ExperimentConfig":
        """Parse the JSON config; relative paths resolve against ``base_dir``."""

        def path(p):
            if p is None or base_dir is None:
                return p
            return str(Path(base_dir, p)) if not Path(p).is_absolute() else p

        ev = EvalConfig.from_dict(d.get("eval", {}))
        ev.test_hr_dir = path(ev.test_hr_dir)
        ev.external_pairs_dir = path(ev.external_pairs_dir)
        models = []
        for m in d["models"]:
            models.append(ModelEntry(m) if isinstance(m, str) else ModelEntry(m["kind"], m.get("config", {}), m.get("tag")))
        return cls(
            source_image_dir=path(d["source_image_dir"]),
            output_dir=path(d["output_dir"]),
            degradations=[DegradationSpec.from_dict(s) for s in d["degradations"]],
            models=models,
            train=TrainConfig.from_dict(d.get("train", {})),
            eval=ev,
            dataset=DatasetConfig(**d.get("dataset", {})),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


@dataclass
class ResultRow:
    dataset: str
    degradation: str
    model: str
    test_kind: str
    metrics: MetricReport
    status: str = "ok"

    def to_dict(self) -> dict:
        d = {"dataset": self.dataset, "degradation": self.degradation, "model": self.model,
             "test_kind": self.test_kind, "status": self.status}
        d.update(zip(MetricReport.columns(), self.metrics.as_row()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRow":
        metrics = MetricReport(*(float(d[c]) for c in MetricReport.columns()))
        return cls(d["dataset"], d["degradation"], d["model"], d["test_kind"], metrics, d.get("status", "ok"))


# -- dataset preparation -------------------------------------------------------

def load_source_images(directory: str | os.PathLike) -> list[tuple[str, np.ndarray]]:
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no PGM images in {directory}")
    return [(p.name, load_pgm(p)) for p in paths]


def _distinct_positions(shapes, count, hr_size, seed):
    """``count`` distinct patch positions, drawn in seeded rounds."""
    seen: dict[tuple, None] = {}
    rnd = 0
    while len(seen) < count:
        for pos in sample_patch_positions(shapes, count - len(seen), hr_size, derive_seed(seed, rnd)):
            seen.setdefault(pos)
        rnd += 1
        if rnd > 100:
            raise ValueError(f"source imagery cannot supply {count} distinct {hr_size}px patches")
    return list(seen)


def prepare_dataset(cfg: ExperimentConfig, spec: DegradationSpec, seed: int | None = None,
                    directory: str | os.PathLike | None = None) -> DatasetSplit:
    """Extract HR patches, degrade them with ``spec`` and write the archive.

    HR patches are quantised to 8 bits before degradation so the stored LR
    is exactly the degraded stored HR (up to LR quantisation).
    """
    seed = cfg.seed if seed is None else seed
    dc = cfg.dataset
    directory = Path(directory or Path(cfg.output_dir, "datasets", spec.tag))
    sources = load_source_images(cfg.source_image_dir)
    hr_size = dc.hr_size
    if hr_size % spec.scale:
        raise ValueError(f"HR patch size {hr_size} not divisible by scale {spec.scale}")
    total = dc.count_train + dc.count_val
    positions = _distinct_positions([im.shape for _, im in sources], total, hr_size, seed)
    pairs = []
    for i, (src, y, x) in enumerate(positions):
        name, img = sources[src]
        hr = read_pgm(write_pgm(img[y : y + hr_size, x : x + hr_size]))
        lr = degrade(hr, spec, derive_seed(seed, 1, i))
        pairs.append(PatchPair(lr, hr, f"{name}@{y},{x}"))
    split = DatasetSplit(pairs[: dc.count_train], pairs[dc.count_train :])
    meta = {
        "dataset": dc.tag,
        "degradation": spec.to_dict(),
        "seed": seed,
        "hr_size": hr_size,
        "lr_size": hr_size // spec.scale,
        "count_train": dc.count_train,
        "count_val": dc.count_val,
    }
    write_dataset(directory, split, meta)
    return split


# -- evaluation ----------------------------------------------------------------

def _reconstruct(model, lr: np.ndarray) -> np.ndarray:
    fn = model.upscale if hasattr(model, "upscale") else model
    return np.clip(np.asarray(fn(lr), dtype=np.float64), 0.0, 1.0)


def ad_protocol(model, hr_images: list[np.ndarray], test_spec: DegradationSpec, seed: int = 0,
                keep: list | None = None) -> MetricReport:
    """Degrade each HR test image, reconstruct it and score against the HR original.

    ``model`` is a :class:`ModelGraph` or any callable mapping an LR image to
    an SR image. If ``keep`` is a list, ``(lr, sr)`` for each image is appended.
    """
    if not hr_images:
        raise ValueError("no test images")
    reports = []
    for i, hr in enumerate(hr_images):
        if hr.shape[0] % test_spec.scale or hr.shape[1] % test_spec.scale:
            raise ValueError(f"test image {i} of shape {hr.shape} is not divisible by {test_spec.scale}")
        lr = degrade(hr, test_spec, derive_seed(seed, 2, i))
        sr = _reconstruct(model, lr)
        if sr.shape != hr.shape:
            raise ValueError(f"reconstruction shape {sr.shape} does not match HR {hr.shape}")
        if keep is not None:
            keep.append((lr, sr))
        reports.append(evaluate_all(hr, sr))
    return MetricReport.mean(reports)


def rs_protocol(model, pairs: list[tuple[str, np.ndarray, np.ndarray]]) -> MetricReport:
    """Score reconstructions of externally supplied, pre-registered LR/HR pairs."""
    if not pairs:
        raise ValueError("no external pairs")
    reports = []
    for stem, lr, hr in pairs:
        sr = _reconstruct(model, lr)
        if sr.shape != hr.shape:
            raise ValueError(f"pair {stem}: reconstruction {sr.shape} does not match HR {hr.shape}")
        reports.append(evaluate_all(hr, sr))
    return MetricReport.mean(reports)


def triptych(lr: np.ndarray, sr: np.ndarray, hr: np.ndarray) -> np.ndarray:
    """Side-by-side LR (pixel-replicated), SR and HR strip with 2-pixel gaps."""
    s = hr.shape[0] // lr.shape[0]
    lr_up = np.kron(lr, np.ones((s, s)))
    gap = np.ones((hr.shape[0], 2))
    return np.hstack([lr_up, gap, sr, gap, hr])


def emit_report(rows: list[ResultRow]) -> bytes:
    """Table-style CSV sorted by (degradation, model), six decimals per metric."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.degradation, r.model)):
        vals = [f"{v:.6f}" if math.isfinite(v) else "nan" for v in r.metrics.as_row()]
        w.writerow([r.dataset, r.degradation, r.model, r.test_kind, *vals])
    return buf.getvalue().encode("utf-8")


# -- grid ----------------------------------------------------------------------

def _test_kinds(cfg: ExperimentConfig) -> list[tuple[str, DegradationSpec | None]]:
    kinds = []
    if cfg.eval.test_hr_dir:
        specs = cfg.eval.test_degradations
        for spec in specs:
            kinds.append(("AD" if len(specs) == 1 else f"AD:{spec.tag}", spec))
    if cfg.eval.external_pairs_dir:
        kinds.append(("RS", None))
    return kinds


def cell_dir(cfg: ExperimentConfig, spec: DegradationSpec, entry: ModelEntry) -> Path:
    return Path(cfg.output_dir, "cells", f"{spec.tag}__{entry.name}")


def _failed_rows(cfg, spec, entry, status):
    nan = MetricReport(*([math.nan] * len(MetricReport.columns())))
    return [ResultRow(cfg.dataset.tag, spec.tag, entry.name, kind, nan, status) for kind, _ in _test_kinds(cfg)]


def run_cell(cfg: ExperimentConfig, spec: DegradationSpec, entry: ModelEntry) -> list[ResultRow]:
    """Train and evaluate one (degradation, model) cell; failures become status rows."""
    out = cell_dir(cfg, spec, entry)
    result_path = out / "result.json"
    ckpt_path = out / "model.srrw"
    if result_path.exists() and ckpt_path.exists():
        return [ResultRow.from_dict(d) for d in json.loads(result_path.read_text())["rows"]]
    try:
        out.mkdir(parents=True, exist_ok=True)
        data, _ = read_dataset(Path(cfg.output_dir, "datasets", spec.tag))
        config = dict(entry.config)
        config.setdefault("seed", cfg.train.seed)
        model = build_model(entry.kind, config)
        model, history = train(model, data, cfg.train)
        (out / "history.csv").write_text(history_csv(history))
        checkpoint.save_model(ckpt_path.with_suffix(".tmp"), model)
        # evaluate the stored float32 weights so resumed runs score identically
        model = checkpoint.load_model(ckpt_path.with_suffix(".tmp"))
        rows = []
        kinds = _test_kinds(cfg)
        test_images = [img for _, img in load_source_images(cfg.eval.test_hr_dir)] if cfg.eval.test_hr_dir else []
        for n, (kind, test_spec) in enumerate(kinds):
            if test_spec is not None:
                keep = [] if n == 0 else None
                report = ad_protocol(model, test_images, test_spec, cfg.seed, keep=keep)
                if keep:
                    lr, sr = keep[0]
                    hr = test_images[0]
                    save_pgm(out / "lr.pgm", lr)
                    save_pgm(out / "sr.pgm", sr)
                    save_pgm(out / "hr.pgm", hr)
                    save_pgm(out / "triptych.pgm", triptych(lr, sr, hr))
            else:
                report = rs_protocol(model, read_pairs_dir(cfg.eval.external_pairs_dir))
            rows.append(ResultRow(cfg.dataset.tag, spec.tag, entry.name, kind, report))
        os.replace(ckpt_path.with_suffix(".tmp"), ckpt_path)
        result_path.write_text(json.dumps({"rows": [r.to_dict() for r in rows]}, indent=2) + "\n")
        return rows
    except Exception as exc:  # a diverging or broken cell must not sink the grid
        log.error("cell %s/%s failed: %s", spec.tag, entry.name, exc)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.txt").write_text(traceback.format_exc())
        return _failed_rows(cfg, spec, entry, f"failed: {exc}")


def _run_cell_args(args):
    return run_cell(*args)


def run_grid(cfg: ExperimentConfig, threads: int | None = None,
             progress: Callable[[str], None] | None = None) -> list[ResultRow]:
    """Run every (degradation, model) cell and write ``results.csv``.

    Cells with an existing checkpoint and result file are reused. Up to
    ``threads`` cells (default: ``SRR_THREADS`` or 1) run in parallel
    processes; rows are always assembled in fixed cell order.
    """
    if threads is None:
        threads = int(os.environ.get("SRR_THREADS", "1") or 1)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not _test_kinds(cfg):
        raise ValueError("no test set configured: set eval.test_hr_dir and/or eval.external_pairs_dir")
    for spec in cfg.degradations:
        ds_dir = out / "datasets" / spec.tag
        if not (ds_dir / "manifest.json").exists():
            if progress:
                progress(f"preparing dataset {spec.tag}")
            prepare_dataset(cfg, spec, directory=ds_dir)
    cells = [(cfg, spec, entry) for spec in cfg.degradations for entry in cfg.models]
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(cells))) as pool:
            results = list(pool.map(_run_cell_args, cells))
    else:
        results = []
        for c in cells:
            if progress:
                progress(f"cell {c[1].tag} x {c[2].name}")
            results.append(run_cell(*c))
    rows = [r for cell_rows in results for r in cell_rows]
    (out / "results.csv").write_bytes(emit_report(rows))
    return rows


def collect_rows(output_dir: str | os.PathLike) -> list[ResultRow]:
    """Rows from every finished cell under ``output_dir``."""
    rows = []
    for path in sorted(Path(output_dir, "cells").glob("*/result.json")):
        rows += [ResultRow.from_dict(d) for d in json.loads(path.read_text())["rows"]]
    return rows
