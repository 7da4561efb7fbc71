import json

import numpy as np
import pytest

from raft_stereo.autograd import ContractError, ShapeError, Tensor, check_gradients
from raft_stereo.config import ModelConfig
from raft_stereo.io import load_checkpoint
from raft_stereo.model import RAFTStereo
from raft_stereo.training import (
    AdamW,
    AugmentConfig,
    LRConfig,
    NonFiniteLossError,
    SyntheticConfig,
    SyntheticStream,
    TrainConfig,
    augment,
    clip_grad_norm,
    generate_synthetic,
    one_cycle_lr,
    sequence_loss,
    sequence_weights,
    train,
)
from raft_stereo.training.synthetic import collate, sample_columns


def warp_residual(sample):
    """|left(j) - right(j - d)| on visible pixels, right sampled linearly."""
    H, W = sample.disp.shape
    cols = np.broadcast_to(np.arange(W, dtype=np.float64), (H, W))
    warped = sample_columns(sample.right.astype(np.float64), cols - sample.disp)
    return np.abs(warped - sample.left)[:, sample.mask]


class TestSequenceLoss:
    def test_single_prediction_is_masked_mean(self, rng):
        pred = rng.standard_normal((2, 1, 4, 5))
        gt = rng.standard_normal((2, 4, 5))
        mask = rng.random((2, 4, 5)) > 0.3
        loss = sequence_loss([Tensor(pred)], gt, mask)
        assert loss.item() == pytest.approx(np.abs(pred[:, 0] - gt)[mask].mean(), rel=1e-6)

    def test_three_unit_errors(self):
        gt = np.zeros((1, 3, 3))
        preds = [Tensor(np.ones((1, 1, 3, 3))) for _ in range(3)]
        assert sequence_loss(preds, gt, gamma=0.9).item() == pytest.approx(2.71, abs=1e-6)

    @pytest.mark.parametrize("gamma", [0.9, 0.5, 0.8])
    def test_weight_ratio(self, gamma):
        w = sequence_weights(6, gamma)
        np.testing.assert_allclose(w[1:] / w[:-1], 1.0 / gamma, rtol=1e-12)
        assert w[-1] == 1.0

    def test_empty_mask(self):
        with pytest.raises(ContractError):
            sequence_loss([Tensor(np.zeros((1, 1, 2, 2)))], np.zeros((1, 2, 2)), np.zeros((1, 2, 2), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sequence_loss([Tensor(np.zeros((1, 1, 2, 3)))], np.zeros((1, 2, 2)))

    def test_gradient(self, rng):
        preds = [Tensor(rng.standard_normal((1, 1, 3, 4)), requires_grad=True, dtype=np.float64) for _ in range(3)]
        gt = rng.standard_normal((1, 3, 4))
        mask = rng.random((1, 3, 4)) > 0.2
        res = check_gradients(lambda: sequence_loss(preds, gt, mask), preds)
        assert res.rel_error < 1e-6


def gradient_model():
    cfg = ModelConfig(levels=1, feature_dim=8, widths=(8, 8, 8), blocks_per_stage=1, hidden_dim=8,
                      motion_branch_dim=8, head_dim=8)
    return RAFTStereo(cfg, seed=3).astype(np.float64)


class TestEndToEndGradients:
    """2 iterations of a 1-level model on an 8x8 coarse grid, in double precision."""

    def _setup(self, rng):
        model = gradient_model()
        left = Tensor(rng.random((1, 3, 64, 64)), dtype=np.float64)
        right = Tensor(rng.random((1, 3, 64, 64)), dtype=np.float64)
        gt = rng.uniform(0, 10, size=(1, 64, 64))
        return model, left, right, gt

    def test_parameters(self, rng):
        model, left, right, gt = self._setup(rng)

        def loss():
            return sequence_loss(model(left, right, iters=2).predictions, gt)

        res = check_gradients(loss, model.parameters(), max_per_tensor=2, rng=np.random.default_rng(0))
        assert res.rel_error < 1e-3

    def test_intermediate_disparity(self, rng):
        model, left, right, gt = self._setup(rng)
        probe = Tensor(np.zeros((1, 1, 8, 8)), requires_grad=True, dtype=np.float64)

        def hook(it, disp):
            return disp + probe if it == 1 else disp

        def loss():
            return sequence_loss(model(left, right, iters=2, disp_hook=hook).predictions, gt)

        res = check_gradients(loss, [probe])
        assert res.checked == 64
        assert res.rel_error < 1e-3


class TestOneCycle:
    cfg = LRConfig(peak=2e-4, floor=1e-4, pct_start=0.1, div_factor=2.0)

    def test_start_value(self):
        assert one_cycle_lr(0, 100, self.cfg) == pytest.approx(1e-4)
        cfg = LRConfig(peak=1e-3, floor=1e-5, div_factor=25.0)
        assert one_cycle_lr(0, 100, cfg) == pytest.approx(1e-3 / 25)

    def test_apex_is_peak(self):
        lrs = [one_cycle_lr(s, 100, self.cfg) for s in range(100)]
        assert max(lrs) == pytest.approx(2e-4)
        assert int(np.argmax(lrs)) == 10

    def test_floor(self):
        cfg = LRConfig(peak=1e-3, floor=1e-4, div_factor=25.0)
        assert min(one_cycle_lr(s, 1000, cfg) for s in range(1000)) >= 1e-4

    def test_shape(self):
        lrs = np.array([one_cycle_lr(s, 200, self.cfg) for s in range(200)])
        assert np.all(np.diff(lrs[:20]) > 0)
        assert np.all(np.diff(lrs[20:]) < 0)
        assert lrs[-1] == pytest.approx(1e-4)

    @pytest.mark.parametrize("step", [-1, 100, 250])
    def test_out_of_range(self, step):
        with pytest.raises(ContractError):
            one_cycle_lr(step, 100)


class TestAdamW:
    def test_first_step_is_signed_lr_plus_decay(self):
        p = Tensor(np.array([1.0, -2.0, 3.0], np.float32), requires_grad=True)
        p.grad = np.array([0.5, -4.0, 0.0], np.float32)
        opt = AdamW([("p", p)], weight_decay=0.1)
        opt.step(0.01)
        expected = np.array([1.0, -2.0, 3.0]) * (1 - 0.01 * 0.1) - 0.01 * np.array([1.0, -1.0, 0.0])
        np.testing.assert_allclose(p.data, expected, rtol=1e-6)
        assert opt.t == 1

    def test_state_round_trip(self, rng):
        p = Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        opt = AdamW([("p", p)])
        for _ in range(3):
            p.grad = rng.standard_normal(4).astype(np.float32)
            opt.step(1e-3)
        other = AdamW([("p", Tensor(p.data.copy(), requires_grad=True))])
        other.load_state_dict(opt.state_dict())
        assert other.t == 3
        np.testing.assert_array_equal(other.m["p"], opt.m["p"])

    def test_clip_grad_norm(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
        total = np.sqrt(np.sum(a.grad ** 2) + np.sum(b.grad ** 2))
        assert total == pytest.approx(1.0, rel=1e-5)
        np.testing.assert_allclose(a.grad / b.grad[0], [0.75, 0.0])


class TestSynthetic:
    def test_constant_disparity_warp(self, rng):
        s = generate_synthetic(rng, SyntheticConfig(mode="a", disparity=5))
        valid = s.mask[:, :-5]
        diff = np.abs(s.right[:, :, :-5] - s.left[:, :, 5:])
        assert diff.max() < 1e-3
        assert not s.mask[:, :5].any() and s.mask[:, 5:].all()
        assert valid.sum() > 0

    def test_zero_disparity(self, rng):
        s = generate_synthetic(rng, SyntheticConfig(mode="a", disparity=0))
        np.testing.assert_array_equal(s.left, s.right)
        assert s.mask.all()

    @pytest.mark.parametrize("mode", ["a", "b", "c"])
    def test_out_of_view_excluded(self, rng, mode):
        s = generate_synthetic(rng, SyntheticConfig(mode=mode, max_disp=12))
        cols = np.arange(s.disp.shape[1])[None]
        assert not np.any(s.mask & (cols - s.disp < 0))
        assert 0 <= s.disp.min() and s.disp.max() <= 12

    @pytest.mark.parametrize("mode", ["a", "b", "c"])
    def test_warp_consistency(self, rng, mode):
        s = generate_synthetic(rng, SyntheticConfig(mode=mode))
        assert warp_residual(s).mean() < 0.06

    def test_rectangles_have_occlusions(self):
        rng = np.random.default_rng(5)
        fractions = [generate_synthetic(rng, SyntheticConfig(mode="b")).mask.mean() for _ in range(5)]
        assert min(fractions) < 1.0
        assert len(np.unique(generate_synthetic(rng, SyntheticConfig(mode="b")).disp)) > 1

    def test_max_disp_contract(self):
        with pytest.raises(ContractError):
            SyntheticConfig(width=32, max_disp=16)

    def test_seeded(self):
        a = generate_synthetic(np.random.default_rng(7), SyntheticConfig(mode="b"))
        b = generate_synthetic(np.random.default_rng(7), SyntheticConfig(mode="b"))
        np.testing.assert_array_equal(a.right, b.right)


class TestAugment:
    def _sample(self, seed=0, **kw):
        return generate_synthetic(np.random.default_rng(seed), SyntheticConfig(height=80, width=160, **kw))

    def test_zero_saturation_is_grey(self):
        cfg = AugmentConfig(saturation=(0.0, 0.0), stretch=None, vertical=0.0, crop=None)
        out = augment(self._sample(), cfg, np.random.default_rng(0))
        for img in (out.left, out.right):
            np.testing.assert_array_equal(img[0], img[1])
            np.testing.assert_array_equal(img[1], img[2])

    def test_stretch_scales_disparity_exactly(self):
        sample = self._sample(mode="a", disparity=6.0)
        cfg = AugmentConfig(saturation=None, stretch=(1.25, 1.25), vertical=0.0, crop=None)
        out = augment(sample, cfg, np.random.default_rng(0))
        assert out.disp.shape == (80, 200)
        np.testing.assert_array_equal(out.disp, np.float32(6.0) * np.float32(1.25))

    def test_stretch_keeps_correspondence(self):
        sample = self._sample(mode="a", disparity=4.0)
        cfg = AugmentConfig(saturation=None, stretch=(1.3, 1.3), vertical=0.0, crop=None)
        out = augment(sample, cfg, np.random.default_rng(0))
        assert warp_residual(out).mean() < 0.06

    def test_vertical_jitter_only_moves_right_image(self):
        sample = self._sample(mode="a", disparity=3.0)
        cfg = AugmentConfig(saturation=None, stretch=None, vertical=0.5, crop=None)
        out = augment(sample, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(out.left, sample.left)
        assert not np.array_equal(out.right, sample.right)

    def test_no_vertical_jitter_preserves_rows(self):
        sample = self._sample(mode="b")
        cfg = AugmentConfig(saturation=None, stretch=None, vertical=0.0, crop=(64, 128))
        out = augment(sample, cfg, np.random.default_rng(3))
        assert warp_residual(out).mean() <= warp_residual(sample).mean() * 1.5

    def test_reproducible(self):
        sample = self._sample(mode="b")
        a = augment(sample, AugmentConfig(), np.random.default_rng(11))
        b = augment(sample, AugmentConfig(), np.random.default_rng(11))
        for k in ("left", "right", "disp", "mask"):
            assert getattr(a, k).tobytes() == getattr(b, k).tobytes()

    def test_crop_too_large(self):
        with pytest.raises(ContractError):
            augment(self._sample(), AugmentConfig(crop=(96, 128), stretch=None), np.random.default_rng(0))


def tiny_setup(seed=0):
    model = RAFTStereo(ModelConfig.toy(), seed=seed)
    stream = SyntheticStream(batch=1, height=32, width=64, max_disp=8.0, seed=seed)
    return model, stream


class TestTrainLoop:
    def test_single_step_descends_on_fixed_batch(self):
        model, stream = tiny_setup()
        batch = next(stream)
        cfg = TrainConfig(steps=1, batch=1, iters=3, lr=LRConfig(peak=1e-4, floor=1e-4, div_factor=1.0))
        before = self._loss(model, batch, cfg)
        train(model, iter([batch]), cfg)
        assert self._loss(model, batch, cfg) < before

    @staticmethod
    def _loss(model, batch, cfg):
        out = model(Tensor(batch.left), Tensor(batch.right), iters=cfg.iters)
        return sequence_loss(out.predictions, batch.disp, batch.mask).item()

    def test_reproducible_loss_curve(self):
        cfg = TrainConfig(steps=3, batch=1, iters=2)
        curves = []
        for _ in range(2):
            model, stream = tiny_setup()
            curves.append([h["loss"] for h in train(model, stream, cfg).history])
        assert curves[0] == curves[1]

    def test_non_finite_loss_aborts(self):
        model, stream = tiny_setup()
        batch = next(stream)
        batch.left[...] = np.nan
        with pytest.raises(NonFiniteLossError, match="step 0"):
            train(model, iter([batch]), TrainConfig(steps=1, batch=1, iters=2))

    def test_log_and_checkpoint(self, tmp_path):
        model, stream = tiny_setup()
        val = [generate_synthetic(np.random.default_rng(9), SyntheticConfig(32, 64, 8.0))]
        cfg = TrainConfig(steps=3, batch=1, iters=2, val_every=2, val_iters=2, ckpt_every=2,
                          ckpt_path=str(tmp_path / "m.ckpt"), log_path=str(tmp_path / "log.jsonl"))
        train(model, stream, cfg, val_set=val)
        records = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in records] == [0, 1, 2]
        assert set(records[0]) == {"step", "lr", "loss", "val_epe"}
        assert records[0]["val_epe"] is None and records[1]["val_epe"] is not None
        ckpt = load_checkpoint(tmp_path / "m.ckpt")
        assert ckpt.meta["step"] == 3
        assert ckpt.optimizer["step"] == 3

    def test_rejects_bad_config(self):
        model, stream = tiny_setup()
        with pytest.raises(ValueError):
            train(model, stream, TrainConfig(steps=0))

    def test_collate_shapes(self, rng):
        samples = [generate_synthetic(rng, SyntheticConfig(32, 64, 8.0)) for _ in range(3)]
        b = collate(samples)
        assert b.left.shape == (3, 3, 32, 64) and b.mask.dtype == bool
