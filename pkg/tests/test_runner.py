import csv
import io
import json
import math

import numpy as np
import pytest

from srdeg import cli
from srdeg.degrade import DegradationSpec, degrade, resample_down
from srdeg.imgio import load_pgm, read_dataset, save_pgm, synth_texture
from srdeg.metrics import MetricReport
from srdeg.models import build_model
from srdeg.runner import (
    REPORT_COLUMNS,
    ExperimentConfig,
    ResultRow,
    ad_protocol,
    cell_dir,
    collect_rows,
    derive_seed,
    emit_report,
    prepare_dataset,
    rs_protocol,
    run_grid,
    triptych,
)

TINY_MODEL = {"kind": "fsrcnn", "config": {"d": 4, "s": 2, "m": 1}}


def make_workspace(tmp_path, n_src=1, src_size=96, n_test=2, test_size=32):
    src = tmp_path / "src"
    test = tmp_path / "test"
    src.mkdir()
    test.mkdir()
    for i in range(n_src):
        save_pgm(src / f"s{i}.pgm", synth_texture(src_size, src_size, 100 + i))
    for i in range(n_test):
        save_pgm(test / f"t{i}.pgm", synth_texture(test_size, test_size, 200 + i))
    return src, test


def grid_config(tmp_path, degradations=("bicubic", "nn"), models=(TINY_MODEL,), out="out", **extra):
    src, test = make_workspace(tmp_path)
    d = {
        "source_image_dir": "src",
        "output_dir": out,
        "degradations": [{"kind": k} for k in degradations],
        "models": list(models),
        "train": {"max_epochs": 2, "batch_size": 2, "patience_epochs": 5},
        "eval": {"test_hr_dir": "test"},
        "dataset": {"count_train": 4, "count_val": 2, "hr_size": 16},
        "seed": 3,
    }
    for key, value in extra.items():
        d[key] = {**d.get(key, {}), **value} if isinstance(value, dict) else value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(d))
    return path


def row(deg="bicubic", model="fsrcnn", vals=(30.0, 0.9, 0.8, 0.7, 50.0)):
    return ResultRow("synthetic", deg, model, "AD", MetricReport(*vals))


class TestPrepare:
    def test_counts_and_manifest(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        save_pgm(src / "a.pgm", synth_texture(512, 512, 0))
        cfg = ExperimentConfig.from_dict({
            "source_image_dir": str(src), "output_dir": str(tmp_path / "out"),
            "degradations": [{"kind": "bicubic"}], "models": ["fsrcnn-tiny"],
            "dataset": {"count_train": 4, "count_val": 2, "hr_size": 64},
        })
        split = prepare_dataset(cfg, cfg.degradations[0])
        assert (len(split.train), len(split.val)) == (4, 2)
        ds = tmp_path / "out" / "datasets" / "bicubic"
        assert len(list(ds.glob("*_lr.pgm"))) == 6 and len(list(ds.glob("*_hr.pgm"))) == 6
        manifest = json.loads((ds / "manifest.json").read_text())
        assert manifest["degradation"]["kind"] == "bicubic"
        assert [p["split"] for p in manifest["pairs"]] == ["train"] * 4 + ["val"] * 2

    def test_bicubic_lr_is_resampled_hr(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        prepare_dataset(cfg, DegradationSpec.preset("bicubic"))
        split, _ = read_dataset(tmp_path / "out" / "datasets" / "bicubic")
        for pair in split.train + split.val:
            assert np.max(np.abs(pair.lr - resample_down(pair.hr, 2, "bicubic"))) <= 0.5 / 255 + 1e-12

    def test_byte_identical_rerun(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        spec = DegradationSpec.preset("lanczos-bn")
        prepare_dataset(cfg, spec, directory=tmp_path / "a")
        prepare_dataset(cfg, spec, directory=tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()

    def test_patches_distinct(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        split = prepare_dataset(cfg, DegradationSpec.preset("nn"))
        ids = [p.source_id for p in split.train + split.val]
        assert len(set(ids)) == len(ids)

    def test_insufficient_imagery(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path, dataset={"hr_size": 128}))
        with pytest.raises(ValueError):
            prepare_dataset(cfg, DegradationSpec.preset("nn"))


class TestConfig:
    def test_requires_degradation_and_model(self, tmp_path):
        base = {"source_image_dir": "s", "output_dir": "o", "degradations": [], "models": ["fsrcnn"]}
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(base)
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({**base, "degradations": [{"kind": "nn"}], "models": []})

    def test_test_dir_must_be_disjoint(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"source_image_dir": "s", "output_dir": "o", "models": ["fsrcnn"],
                                        "degradations": [{"kind": "nn"}], "eval": {"test_hr_dir": "s"}})

    def test_relative_paths(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        assert cfg.output_dir == str(tmp_path / "out")
        assert cfg.eval.test_hr_dir == str(tmp_path / "test")
        assert [d.kind for d in cfg.degradations] == ["bicubic", "nn"]

    def test_derive_seed(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert len({derive_seed(1, 2), derive_seed(1, 3), derive_seed(2, 2), derive_seed(1, 2, 0)}) == 4


class TestProtocols:
    def test_oracle_model(self):
        hrs = [synth_texture(40, 40, s) for s in range(2)]
        lookup = {}

        def oracle(lr):
            return lookup[lr.tobytes()]

        for i, hr in enumerate(hrs):
            lookup[degrade(hr, DegradationSpec.preset("bicubic"), derive_seed(0, 2, i)).tobytes()] = hr
        rep = ad_protocol(oracle, hrs, DegradationSpec.preset("bicubic"))
        assert rep.psnr == 100.0 and rep.ssim == pytest.approx(1, abs=1e-9)
        assert rep.kfs == 100.0

    def test_zero_weight_model(self):
        model = build_model("fsrcnn-tiny")
        for _, p in model.named_params():
            p.value[:] = 0
        model.layers[-1].bias.value[:] = 0.5
        hrs = [synth_texture(40, 40, s) for s in range(3)]
        keep = []
        rep = ad_protocol(model, hrs, DegradationSpec.preset("bicubic"), keep=keep)
        assert all(np.all(sr == 0.5) for _, sr in keep)
        assert abs(rep.uiqi) < 1e-9

    def test_ten_500px_ad_set(self):
        hrs = [np.full((500, 500), v) for v in np.linspace(0.1, 0.9, 10)]
        rep = ad_protocol(lambda lr: np.kron(lr, np.ones((2, 2))), hrs, DegradationSpec.preset("bicubic"))
        assert rep.psnr == 100.0

    def test_odd_size_rejected(self):
        with pytest.raises(ValueError):
            ad_protocol(lambda lr: lr, [np.zeros((33, 32))], DegradationSpec.preset("nn"))

    def test_rs_protocol(self):
        hr = synth_texture(32, 32, 1)
        lr = resample_down(hr, 2, "nn")
        rep = rs_protocol(lambda x: np.kron(x, np.ones((2, 2))), [("0000", lr, hr)])
        assert 0 < rep.psnr < 100

    def test_triptych(self):
        lr, sr, hr = np.zeros((4, 4)), np.full((8, 8), 0.5), np.ones((8, 8))
        t = triptych(lr, sr, hr)
        assert t.shape == (8, 28)
        assert t.min() >= 0 and t.max() <= 1


class TestReport:
    def test_header_only(self):
        assert emit_report([]) == b"dataset,degradation,model,test_kind,psnr,ssim,uiqi,vif,kfs\n"

    def test_roundtrip(self):
        r = row(vals=(31.25, 0.912345678, 0.5, 0.25, 12.5))
        parsed = list(csv.DictReader(io.StringIO(emit_report([r]).decode())))
        assert list(parsed[0]) == REPORT_COLUMNS
        assert parsed[0]["psnr"] == "31.250000" and parsed[0]["ssim"] == "0.912346"
        assert float(parsed[0]["kfs"]) == 12.5

    def test_sorted(self):
        rows = [row("nn", "srresnet"), row("bicubic", "srresnet"), row("nn", "fsrcnn")]
        lines = emit_report(rows).decode().splitlines()[1:]
        assert [tuple(line.split(",")[1:3]) for line in lines] == [
            ("bicubic", "srresnet"), ("nn", "fsrcnn"), ("nn", "srresnet")]

    def test_column_order(self):
        assert REPORT_COLUMNS[4:] == ["psnr", "ssim", "uiqi", "vif", "kfs"]

    def test_nan(self):
        text = emit_report([row(vals=(math.nan,) * 5)]).decode()
        assert text.splitlines()[1].endswith("nan,nan,nan,nan,nan")


class TestGrid:
    def test_cardinality_and_artifacts(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        rows = run_grid(cfg)
        assert len(rows) == 2
        text = (tmp_path / "out" / "results.csv").read_text().splitlines()
        assert len(text) == 3
        for spec in cfg.degradations:
            d = cell_dir(cfg, spec, cfg.models[0])
            for name in ("model.srrw", "history.csv", "result.json", "lr.pgm", "sr.pgm", "hr.pgm", "triptych.pgm"):
                assert (d / name).exists(), name

    def test_multiple_test_kinds(self, tmp_path):
        pairs = tmp_path / "pairs"
        pairs.mkdir()
        hr = synth_texture(32, 32, 9)
        save_pgm(pairs / "0000_hr.pgm", hr)
        save_pgm(pairs / "0000_lr.pgm", resample_down(hr, 2, "bicubic"))
        cfg = ExperimentConfig.load(grid_config(
            tmp_path, degradations=("nn",),
            eval={"test_degradations": [{"kind": "bicubic"}, {"kind": "nn"}], "external_pairs_dir": "pairs"}))
        rows = run_grid(cfg)
        assert sorted(r.test_kind for r in rows) == ["AD:bicubic", "AD:nn", "RS"]

    def test_resume_skips_finished_cells(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        first = (run_grid(cfg), (tmp_path / "out" / "results.csv").read_bytes())
        d = cell_dir(cfg, cfg.degradations[0], cfg.models[0])
        mtime = (d / "model.srrw").stat().st_mtime_ns
        other = cell_dir(cfg, cfg.degradations[1], cfg.models[0])
        for p in other.iterdir():
            p.unlink()
        run_grid(cfg)
        assert (d / "model.srrw").stat().st_mtime_ns == mtime
        assert (tmp_path / "out" / "results.csv").read_bytes() == first[1]

    def test_failure_isolated(self, tmp_path):
        bad = {"kind": "fsrcnn", "config": {"d": 4, "s": 2, "m": 1, "scale": 3}, "tag": "broken"}
        cfg = ExperimentConfig.load(grid_config(tmp_path, degradations=("nn",), models=(TINY_MODEL, bad)))
        rows = run_grid(cfg)
        status = {r.model: r.status for r in rows}
        assert status["fsrcnn"] == "ok" and status["broken"].startswith("failed")
        assert (cell_dir(cfg, cfg.degradations[0], cfg.models[1]) / "error.txt").exists()
        assert "nan" in (tmp_path / "out" / "results.csv").read_text()

    def test_threads_match_serial(self, tmp_path, monkeypatch):
        a = tmp_path / "a"
        a.mkdir()
        serial = run_grid(ExperimentConfig.load(grid_config(a)))
        b = tmp_path / "b"
        b.mkdir()
        monkeypatch.setenv("SRR_THREADS", "2")
        parallel = run_grid(ExperimentConfig.load(grid_config(b)))
        assert (a / "out" / "results.csv").read_bytes() == (b / "out" / "results.csv").read_bytes()
        assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]

    def test_collect_rows(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path))
        rows = run_grid(cfg)
        assert emit_report(collect_rows(cfg.output_dir)) == emit_report(rows)

    def test_sr_outputs_in_range(self, tmp_path):
        cfg = ExperimentConfig.load(grid_config(tmp_path, degradations=("nn",)))
        run_grid(cfg)
        sr = load_pgm(cell_dir(cfg, cfg.degradations[0], cfg.models[0]) / "sr.pgm")
        assert sr.min() >= 0 and sr.max() <= 1


class TestCli:
    def test_synth_and_degrade(self, tmp_path):
        assert cli.main(["synth", str(tmp_path / "s"), "--count", "2", "--width", "32", "--height", "24"]) == 0
        imgs = sorted((tmp_path / "s").glob("*.pgm"))
        assert len(imgs) == 2 and load_pgm(imgs[0]).shape == (24, 32)
        out = tmp_path / "lr.pgm"
        assert cli.main(["degrade", str(imgs[0]), str(out), "--spec", '{"kind": "lanczos-bn"}']) == 0
        assert load_pgm(out).shape == (12, 16)

    def test_prepare_train_evaluate_report(self, tmp_path, capsys):
        cfg_path = grid_config(tmp_path)
        assert cli.main(["prepare", "--config", str(cfg_path), "--degradation", "bicubic"]) == 0
        ds = tmp_path / "out" / "datasets" / "bicubic"
        ck = tmp_path / "m.srrw"
        assert cli.main(["train", "--data", str(ds), "--model", "fsrcnn", "--model-config", '{"d": 4, "s": 2, "m": 1}',
                         "--max-epochs", "2", "--out", str(ck), "--history", str(tmp_path / "h.csv")]) == 0
        assert ck.exists() and len((tmp_path / "h.csv").read_text().splitlines()) == 3
        capsys.readouterr()
        assert cli.main(["evaluate", "--checkpoint", str(ck), "--test-hr-dir", str(tmp_path / "test")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == ",".join(REPORT_COLUMNS) and len(out) == 2

    def test_grid_and_report(self, tmp_path, capsys):
        cfg_path = grid_config(tmp_path, degradations=("nn",))
        assert cli.main(["grid", "--config", str(cfg_path)]) == 0
        assert cli.main(["report", str(tmp_path / "out"), "--out", str(tmp_path / "r.csv")]) == 0
        assert (tmp_path / "r.csv").read_bytes() == (tmp_path / "out" / "results.csv").read_bytes()
