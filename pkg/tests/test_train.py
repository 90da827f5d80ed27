import csv
import math

import numpy as np
import pytest

from haanet import checkpoint
from haanet.net import NetConfig
from haanet.tensor import Tape, Tensor, reduce_mean
from haanet.train import (AdamState, NonFiniteGradient, TrainConfig, TrainingDiverged,
                          adam_step, cosine_lr, load_network, make_pairs, sample_batch,
                          scene_seed, train)

TINY = dict(total_steps=4, batch_size=2, crop=16, n_train=3, n_val=2, scene_size=20, val_every=2)


class TestCosine:
    def test_endpoints_and_midpoint(self):
        cfg = TrainConfig()
        assert cosine_lr(0, cfg) == pytest.approx(1.5e-4, rel=1e-15)
        assert cosine_lr(cfg.total_steps, cfg) == pytest.approx(1e-6, rel=1e-12)
        assert cosine_lr(cfg.total_steps // 2, cfg) == pytest.approx((1.5e-4 + 1e-6) / 2, rel=1e-12)

    def test_monotone(self):
        cfg = TrainConfig(total_steps=50)
        lrs = [cosine_lr(s, cfg) for s in range(51)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    @pytest.mark.parametrize("step", [-1, 2001])
    def test_out_of_range(self, step):
        with pytest.raises(ValueError):
            cosine_lr(step, TrainConfig())


class TestAdam:
    def test_first_step_is_sign(self):
        cfg = TrainConfig()
        p = Tensor(np.zeros((1, 1, 2, 2)), dtype=np.float64)
        p.grad = np.array([3.0, -0.5, 7.0, -2.0]).reshape(1, 1, 2, 2)
        adam_step([("p", p)], AdamState(), 0.01, cfg)
        np.testing.assert_allclose(p.data, -0.01 * np.sign(p.grad), rtol=1e-6)

    def test_zero_gradient_fixed_point(self):
        cfg = TrainConfig()
        p = Tensor(np.full((1, 1, 1, 3), 0.7), dtype=np.float64)
        state = AdamState()
        for _ in range(10):
            p.grad = np.zeros(p.shape)
            adam_step([("p", p)], state, 0.1, cfg)
        np.testing.assert_array_equal(p.data, 0.7)
        assert state.t == 10 and np.all(state.v["p"] >= 0)

    def test_quadratic(self):
        cfg = TrainConfig(lr_max=0.1)
        w = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
        state = AdamState()
        for _ in range(100):
            w.grad = None
            with Tape() as tape:
                d = w - 3.0
                loss = reduce_mean(d * d)
            tape.backward(loss)
            adam_step([("w", w)], state, 0.1, cfg)
        assert abs(w.item() - 3.0) < 0.5

    def test_non_finite_aborts_before_mutation(self):
        a = Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64)
        b = Tensor(np.ones((1, 1, 1, 1)), dtype=np.float64)
        a.grad = np.ones(a.shape)
        b.grad = np.full(b.shape, np.nan)
        state = AdamState()
        with pytest.raises(NonFiniteGradient, match="'b'"):
            adam_step([("a", a), ("b", b)], state, 0.1, TrainConfig())
        assert a.item() == 1.0 and state.t == 0


class TestData:
    def test_scene_seeds_distinct_per_split(self):
        seeds = {scene_seed(0, s, i) for s in (0, 1) for i in range(50)}
        assert len(seeds) == 100

    def test_batch_stream_reproducible(self):
        data = make_pairs(0, 0, 3, 20)
        a = sample_batch(np.random.default_rng(5), data, 4, 16)
        b = sample_batch(np.random.default_rng(5), data, 4, 16)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
        assert a[0].shape == (4, 3, 16, 16)

    def test_crop_divisibility(self):
        with pytest.raises(ValueError):
            TrainConfig(crop=63)


class TestTrain:
    def test_tiny_run_is_bit_deterministic(self, tmp_path):
        cfg = TrainConfig(**TINY)
        r1 = train(cfg, NetConfig.desk(), 0, tmp_path / "a")
        r2 = train(cfg, NetConfig.desk(), 0, tmp_path / "b")
        assert (tmp_path / "a" / "checkpoint.haan").read_bytes() == (tmp_path / "b" / "checkpoint.haan").read_bytes()
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert r1.checkpoint_bytes() == r2.checkpoint_bytes()

    def test_log_and_checkpoint_contents(self, tmp_path):
        cfg = TrainConfig(**TINY)
        train(cfg, NetConfig.desk(), 3, tmp_path)
        with open(tmp_path / "metrics.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["step", "lr", "loss", "val_psnr", "val_ssim"]
        assert [int(r["step"]) for r in rows] == list(range(5))
        assert [r["val_psnr"] != "" for r in rows] == [True, False, True, False, True]
        _, meta = checkpoint.load(tmp_path / "checkpoint.haan")
        assert meta["train.lr_max"] == "0.00015" and meta["train.gamma"] == "0.25"
        assert meta["dataset_seed"] == "3" and meta["net.base_channels"] == "16"
        net, _ = load_network(tmp_path / "checkpoint.haan")
        assert net.config == NetConfig.desk()

    def test_different_seed_differs(self):
        a = train(TrainConfig(**TINY), NetConfig.desk(), 0)
        b = train(TrainConfig(**{**TINY, "seed": 1}), NetConfig.desk(), 0)
        assert a.checkpoint_bytes() != b.checkpoint_bytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_keeps_last_good(self, tmp_path):
        cfg = TrainConfig(**{**TINY, "lr_max": 1e30, "lr_min": 1e30})
        with pytest.raises(TrainingDiverged) as exc:
            train(cfg, NetConfig.desk(), 0, tmp_path)
        assert (tmp_path / "last_good.haan").exists()
        tensors, _ = checkpoint.load(tmp_path / "last_good.haan")
        assert set(tensors) == set(exc.value.last_good)

    def test_loss_decreases(self):
        cfg = TrainConfig(**{**TINY, "total_steps": 60, "lr_max": 1e-3, "val_every": 60})
        log = train(cfg, NetConfig.desk(), 0).log
        early = np.mean([r["loss"] for r in log[:10]])
        late = np.mean([r["loss"] for r in log[-11:-1]])
        assert late < early
