import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esdnet.errors import ContractError, NaNError
from esdnet.loss import LossConfig, build_extractor
from esdnet.model import ModelConfig, build_model
from esdnet.synth import MoireParams, apply_degradation, gen_dataset
from esdnet.train import (TrainConfig, TrainState, adam_step, center_crop, cosine_lr, evaluate,
                          random_crop, train)


class TestCosine:
    cfg = TrainConfig()

    def test_start_is_lr_max(self):
        assert cosine_lr(0, self.cfg) == 2e-4

    def test_midpoint(self):
        assert cosine_lr(25, self.cfg) == pytest.approx((2e-4 + 1e-6) / 2, rel=1e-12)

    def test_restart_at_boundary(self):
        assert cosine_lr(50 - 1e-9, self.cfg) == pytest.approx(1e-6, abs=1e-12)
        assert cosine_lr(50, self.cfg) == 2e-4
        assert cosine_lr(100, self.cfg) == 2e-4

    @settings(max_examples=100, deadline=None)
    @given(e=st.floats(0, 150))
    def test_periodic(self, e):
        assert cosine_lr(e, self.cfg) == pytest.approx(cosine_lr(e + 50, self.cfg), rel=1e-9, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(e=st.floats(0, 49.99))
    def test_non_increasing_within_cycle(self, e):
        assert cosine_lr(e, self.cfg) >= cosine_lr(e + 0.01, self.cfg)


class TestAdam:
    def test_zero_gradient(self):
        params = {"w": np.array([1.0, -2.0])}
        state = TrainState(m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.1, 0.1])}, step=3)
        before = params["w"].copy()
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.0)
        np.testing.assert_array_equal(params["w"], before)
        np.testing.assert_allclose(state.m["w"], 0.45)
        np.testing.assert_allclose(state.v["w"], 0.0999)

    def test_first_step_closed_form(self):
        g = np.array([0.3, -2.0, 1e-3])
        params = {"w": np.zeros(3)}
        state = TrainState()
        adam_step(params, {"w": g}, state, lr=0.01)
        np.testing.assert_allclose(params["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        assert state.step == 1

    def test_quadratic_oracle(self):
        cfg = TrainConfig()
        params = {"theta": np.array(1.0)}
        state = TrainState()
        for _ in range(100):
            adam_step(params, {"theta": 2 * params["theta"]}, state, lr=0.1, cfg=cfg)
        assert abs(float(params["theta"])) < 0.05

    def test_nan_names_parameter(self):
        params = {"a": np.zeros(2), "b": np.zeros(2)}
        with pytest.raises(NaNError, match="b"):
            adam_step(params, {"a": np.zeros(2), "b": np.array([0.0, np.nan])}, TrainState(), 0.1)

    def test_key_mismatch(self):
        with pytest.raises(ContractError):
            adam_step({"a": np.zeros(1)}, {"b": np.zeros(1)}, TrainState(), 0.1)

    def test_does_not_mutate_arrays(self):
        w = np.ones(3)
        params = {"w": w}
        adam_step(params, {"w": np.ones(3)}, TrainState(), 0.1)
        assert np.all(w == 1) and params["w"] is not w


class TestCrop:
    def test_full_size_is_identity(self, rng):
        a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        ca, cb = random_crop((a, b), 8, rng)
        assert np.array_equal(ca, a) and np.array_equal(cb, b)

    def test_pair_stays_aligned(self):
        clean = np.zeros((3, 20, 20))
        moire = np.zeros((3, 20, 20))
        clean[:, 7, 11] = 1
        moire[:, 7, 11] = 1
        r = np.random.default_rng(0)
        for _ in range(20):
            c, m = random_crop((clean, moire), 10, r)
            assert np.array_equal(c, m)

    def test_reproducible(self, rng):
        img = rng.random((3, 30, 30))
        a = random_crop((img, img), 8, np.random.default_rng(5))[0]
        b = random_crop((img, img), 8, np.random.default_rng(5))[0]
        assert np.array_equal(a, b)

    def test_too_small(self, rng):
        with pytest.raises(ContractError):
            random_crop((np.zeros((3, 4, 4)), np.zeros((3, 4, 4))), 8, rng)


class TestConfig:
    def test_patch_alignment(self):
        with pytest.raises(ContractError):
            TrainConfig(patch=48)

    def test_lr_order(self):
        with pytest.raises(ContractError):
            TrainConfig(lr_max=1e-6, lr_min=1e-5)

    def test_full_scale(self):
        cfg = TrainConfig.full_scale()
        assert (cfg.patch, cfg.total_epochs, cfg.batch, cfg.lr_max, cfg.cycle_epochs) == (768, 150, 2, 2e-4, 50)


@pytest.fixture(scope="module")
def tiny_run():
    data = [d[:2] for d in gen_dataset(4, 32, 32, seed=1)]
    cfg = TrainConfig(patch=32, total_epochs=100, batch=2, lr_max=1e-3)
    loss_cfg = LossConfig(perceptual_block=1)
    ext = build_extractor(1, seed=0)
    before = {k: v.copy() for k, v in ext.params.items()}
    model, log = train(build_model(ModelConfig(width_div=8), seed=0), data, cfg, loss_cfg, ext)
    return model, log, ext, before, data, cfg, loss_cfg


class TestTrain:
    def test_log_fields_and_steps(self, tiny_run):
        _, log, *_ = tiny_run
        assert len(log) == 200
        assert [r["step"] for r in log] == list(range(1, 201))
        assert set(log[0]) == {"step", "epoch", "lr", "loss", "l1_term", "perceptual_term"}

    def test_loss_decreases(self, tiny_run):
        _, log, *_ = tiny_run
        assert log[199]["loss"] < log[0]["loss"]

    def test_lr_follows_schedule(self, tiny_run):
        _, log, *_ = tiny_run
        assert log[0]["lr"] == 1e-3
        assert log[2]["lr"] == pytest.approx(cosine_lr(1.0, TrainConfig(lr_max=1e-3)))

    def test_extractor_unchanged(self, tiny_run):
        _, _, ext, before, *_ = tiny_run
        assert all(np.array_equal(before[k], ext.params[k]) for k in before)

    def test_deterministic(self, tiny_run):
        model, log, ext, _, data, cfg, loss_cfg = tiny_run
        cfg = TrainConfig(patch=32, total_epochs=5, batch=2, lr_max=1e-3)
        runs = [train(build_model(ModelConfig(width_div=8), seed=0), data, cfg, loss_cfg, ext) for _ in range(2)]
        assert runs[0][1] == runs[1][1]
        assert all(runs[0][0][k].tobytes() == runs[1][0][k].tobytes() for k in runs[0][0].params)

    def test_empty_dataset(self):
        with pytest.raises(ContractError):
            train(build_model(ModelConfig(width_div=8)), [], TrainConfig(patch=32))

    def test_nan_reports_step(self):
        model = build_model(ModelConfig(width_div=8))
        model.params["head.conv.bias"] = np.full_like(model["head.conv.bias"], np.nan)
        data = [d[:2] for d in gen_dataset(2, 32, 32)]
        with pytest.raises(NaNError, match="step 1"):
            train(model, data, TrainConfig(patch=32, total_epochs=1), LossConfig(lam=0))


class TestEvaluate:
    def test_identity_degradation_finite(self, small_model):
        pairs = [(c, apply_degradation(c, MoireParams()), p) for c, _, p in gen_dataset(3, 40, 40, seed=2)]
        report = evaluate(small_model, pairs)
        assert len(report["rows"]) == 3
        assert all(math.isfinite(report[k]) for k in ("psnr", "ssim"))
        assert report["input_psnr"] == 100.0

    def test_centre_crop(self):
        img = np.arange(3 * 40 * 70).reshape(3, 40, 70)
        out = center_crop(img)
        assert out.shape == (3, 32, 64)
        assert out[0, 0, 0] == img[0, 4, 3]

    def test_perfect_model_is_capped(self, monkeypatch, small_model):
        T = sys.modules["esdnet.train"]

        def identity(model, x):
            return (T.ad.Tensor(x),)

        monkeypatch.setattr(T, "forward", identity)
        clean = gen_dataset(2, 32, 32)
        report = evaluate(small_model, [(c, c) for c, _, _ in clean])
        assert report["psnr"] == 100.0 and report["ssim"] == 1.0

    def test_empty(self, small_model):
        with pytest.raises(ContractError):
            evaluate(small_model, [])
