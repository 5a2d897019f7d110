import math

import numpy as np
import pytest

from srdeg.checkpoint import CheckpointError, dumps, load_model, loads, save_model
from srdeg.imgio import DatasetSplit, PatchPair
from srdeg.models import build_model
from srdeg.nn import Param
from srdeg.optim import Adam, AdamState, adam_step
from srdeg.train import EpochRecord, TrainConfig, history_csv, train


def scalar_adam(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    p, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(p)
    return out


class TestAdam:
    def test_matches_scalar_reference(self):
        grads = [0.3, -1.2, 2.0, 0.0, 0.7]
        p = np.zeros(1)
        st = AdamState.zeros_like([p])
        got = []
        for g in grads:
            adam_step([p], [np.array([g])], st, 1e-3)
            got.append(p[0])
        np.testing.assert_allclose(got, scalar_adam(grads), rtol=1e-12)
        assert st.t == 5

    def test_zero_grad_no_move(self):
        p = np.array([1.0, -2.0])
        adam_step([p], [np.zeros(2)], AdamState.zeros_like([p]), 1e-3)
        assert p.tolist() == [1.0, -2.0]

    def test_first_step_is_lr_sign(self):
        p = np.zeros(3)
        adam_step([p], [np.array([5.0, -0.01, 1e3])], AdamState.zeros_like([p]), 1e-3)
        np.testing.assert_allclose(p, [-1e-3, 1e-3, -1e-3], rtol=1e-5)

    def test_minimises_quadratic(self):
        param = Param(np.array([3.0, -4.0]))
        opt = Adam([param], lr=0.05)
        for _ in range(2000):
            param.zero_grad()
            param.grad += 2 * param.value
            opt.step()
        np.testing.assert_allclose(param.value, 0, atol=1e-3)

    def test_shape_mismatch(self):
        p = np.zeros(2)
        with pytest.raises(ValueError):
            adam_step([p], [np.zeros(3)], AdamState.zeros_like([p]), 1e-3)


def tiny_data(n=6, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        hr = rng.random((8, 8))
        lr = hr.reshape(4, 2, 4, 2).mean(axis=(1, 3))
        pairs.append(PatchPair(lr, hr, f"s{i}"))
    return DatasetSplit(train=pairs[:4], val=pairs[4:])


TINY = {"d": 4, "s": 2, "m": 1, "seed": 0}


class TestTrain:
    @pytest.mark.parametrize("peak,patience", [(3, 2), (1, 4), (6, 1)])
    def test_patience_with_scripted_curve(self, peak, patience):
        model = build_model("fsrcnn", TINY)
        snapshots = {}
        calls = []

        def validate(m):
            calls.append(1)
            e = len(calls)
            snapshots[e] = m.state()
            return -abs(e - peak)

        cfg = TrainConfig(patience_epochs=patience, max_epochs=100, batch_size=2)
        model, hist = train(model, tiny_data(), cfg, validate=validate)
        assert len(hist) == peak + patience
        assert [r.epoch for r in hist] == list(range(1, peak + patience + 1))
        for name, value in model.state().items():
            np.testing.assert_array_equal(value, snapshots[peak][name])

    def test_max_epochs_cap(self):
        cfg = TrainConfig(patience_epochs=50, max_epochs=3, batch_size=2)
        _, hist = train(build_model("fsrcnn", TINY), tiny_data(), cfg)
        assert len(hist) == 3

    def test_max_steps(self):
        cfg = TrainConfig(max_epochs=100, batch_size=1, max_steps=6)
        _, hist = train(build_model("fsrcnn", TINY), tiny_data(), cfg)
        assert len(hist) == 2

    def test_deterministic(self):
        cfg = TrainConfig(max_epochs=3, batch_size=2, seed=5)
        a, ha = train(build_model("fsrcnn", TINY), tiny_data(), cfg)
        b, hb = train(build_model("fsrcnn", TINY), tiny_data(), cfg)
        assert ha == hb
        for name, value in a.state().items():
            np.testing.assert_array_equal(value, b.state()[name])

    def test_loss_decreases(self):
        cfg = TrainConfig(max_epochs=40, batch_size=4, patience_epochs=40, learning_rate=3e-3)
        _, hist = train(build_model("fsrcnn", TINY), tiny_data(), cfg)
        assert hist[-1].train_loss < hist[0].train_loss

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            train(build_model("fsrcnn", TINY), DatasetSplit(), TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(patience_epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(val_metric="ssim")
        assert TrainConfig.from_dict(TrainConfig(seed=3).to_dict()) == TrainConfig(seed=3)

    def test_history_csv(self):
        text = history_csv([EpochRecord(1, 0.5, 20.0), EpochRecord(2, 0.25, 21.5)])
        assert text.splitlines() == ["epoch,train_loss,val_psnr", "1,0.5,20.000000", "2,0.25,21.500000"]


class TestCheckpoint:
    @pytest.mark.parametrize("kind,cfg", [("fsrcnn", TINY), ("srresnet", {"n_rb": 1, "base_channels": 4, "seed": 2})])
    def test_roundtrip(self, tmp_path, kind, cfg):
        model = build_model(kind, cfg)
        save_model(tmp_path / "m.srrw", model)
        back = load_model(tmp_path / "m.srrw")
        assert back.kind == model.kind and back.config == model.config
        for name, value in model.state().items():
            np.testing.assert_array_equal(back.state()[name], value.astype(np.float32))
        x = np.random.default_rng(0).random((1, 1, 6, 6))
        np.testing.assert_allclose(back(x), model(x), atol=1e-5)

    def test_layout(self):
        data = dumps({"model": "x"}, {"w": np.array([[1.0, 2.0]])})
        assert data[:4] == b"SRRW" and data[4] == 1
        header, tensors = loads(data)
        assert header == {"model": "x"}
        assert tensors["w"].tolist() == [[1.0, 2.0]]
        assert data[-8:] == np.array([1.0, 2.0], dtype="<f4").tobytes()

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            loads(b"XXXX\x01")

    def test_bad_version(self):
        with pytest.raises(CheckpointError):
            loads(b"SRRW\x09" + b"\x00" * 8)

    def test_truncated(self):
        data = dumps({"model": "x"}, {"w": np.ones((4, 4))})
        with pytest.raises(CheckpointError):
            loads(data[:-3])
        with pytest.raises(CheckpointError):
            loads(data[:12])
