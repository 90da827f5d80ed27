import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from haanet.losses import (CrExtractor, cr_loss, l1_loss, psnr, ssim, total_loss, SSIM_C1,
                           SSIM_C2)
from haanet.tensor import ShapeError, Tape, Tensor, finite_diff_check

F64 = np.float64


def img(seed, shape=(1, 3, 16, 16), lo=0.0, hi=1.0):
    return Tensor(np.random.default_rng(seed).uniform(lo, hi, shape), dtype=F64)


@pytest.fixture(scope="module")
def ext():
    return CrExtractor.create(3, F64)


class TestL1:
    def test_identical(self):
        x = img(0)
        assert l1_loss(x, x).item() == 0.0

    def test_constant_offset(self):
        x = img(1)
        assert l1_loss(x + 0.1, x).item() == pytest.approx(0.1, abs=1e-15)

    def test_scalar_loop(self):
        a, b = img(2, (1, 2, 3, 4)), img(3, (1, 2, 3, 4))
        total = 0.0
        for v, w in zip(a.data.ravel(), b.data.ravel()):
            total += abs(v - w)
        assert l1_loss(a, b).item() == pytest.approx(total / 24, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(img(0, (1, 3, 4, 4)), img(0, (1, 3, 4, 5)))


class TestCr:
    def test_extractor_layout(self, ext):
        assert [(s.in_channels, s.out_channels, s.stride) for s in ext.stages] == [(3, 16, 2), (16, 32, 2), (32, 64, 2)]
        assert ext.stage_weights == (1 / 8, 1 / 4, 1 / 2) and ext.eps == 1e-7
        again = CrExtractor.create(3, F64)
        for s, t in zip(ext.stages, again.stages):
            assert s.weight.data.tobytes() == t.weight.data.tobytes()

    def test_zero_at_ground_truth(self, ext):
        gt, hazy = img(4), img(5)
        assert cr_loss(gt, gt, hazy, ext).item() == 0.0

    def test_degenerate_denominator(self, ext):
        gt, hazy = img(4), img(5)
        assert cr_loss(hazy, gt, hazy, ext).item() > 1e4

    def test_line_scan_decreases(self, ext):
        gt, hazy = img(6), img(7)
        values = [cr_loss(hazy + (gt - hazy) * a, gt, hazy, ext).item() for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_only_pred_receives_gradient(self, ext):
        pred = Tensor(img(8).data, requires_grad=True)
        gt = Tensor(img(9).data, requires_grad=True)
        hazy = Tensor(img(10).data, requires_grad=True)
        with Tape() as tape:
            loss = cr_loss(pred, gt, hazy, ext)
        tape.backward(loss)
        assert pred.grad is not None and np.any(pred.grad != 0)
        assert gt.grad is None and hazy.grad is None

    def test_stage_sum_reference(self, ext):
        pred, gt, hazy = img(11), img(12), img(13)
        fp, fg, fh = ext.features(pred), ext.features(gt), ext.features(hazy)
        expected = sum(w * np.abs(a.data - p.data).mean() / (np.abs(a.data - n.data).mean() + 1e-7)
                       for w, a, p, n in zip((1 / 8, 1 / 4, 1 / 2), fp, fg, fh))
        assert cr_loss(pred, gt, hazy, ext).item() == pytest.approx(expected, rel=1e-12)


class TestTotal:
    def test_lambda_zero_is_l1(self, ext):
        p, g, h = img(1), img(2), img(3)
        assert total_loss(p, g, h, ext, 0.0).item() == l1_loss(p, g).item()

    def test_zero_at_ground_truth(self, ext):
        g = img(2)
        assert total_loss(g, g, img(3), ext).item() == 0.0

    def test_recomposition(self, ext):
        p, g, h = img(1), img(2), img(3)
        expected = 0.2 * cr_loss(p, g, h, ext).item() + l1_loss(p, g).item()
        assert total_loss(p, g, h, ext, 0.2).item() == pytest.approx(expected, rel=1e-14)

    def test_negative_lambda(self, ext):
        with pytest.raises(ValueError):
            total_loss(img(1), img(2), img(3), ext, -0.1)

    def test_gradient(self, ext):
        g, h = img(2, (1, 3, 8, 8)), img(3, (1, 3, 8, 8))
        err = finite_diff_check(lambda p: total_loss(p, g, h, ext, 0.2), img(1, (1, 3, 8, 8)), step=1e-5)
        assert err < 1e-5


class TestPsnr:
    def test_cap(self):
        x = np.random.default_rng(0).random((3, 8, 8))
        assert psnr(x, x) == 100.0

    def test_uniform_error(self):
        x = np.full((3, 8, 8), 0.5)
        assert psnr(x + 0.1, x) == pytest.approx(20.0, abs=1e-6)

    def test_scalar_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 5, 5)), rng.random((3, 5, 5))
        se = 0.0
        for v, w in zip(a.ravel(), b.ravel()):
            se += (v - w) ** 2
        assert psnr(a, b) == pytest.approx(10 * math.log10(1 / (se / a.size)), rel=1e-12)

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(2)
        x = rng.random((3, 16, 16))
        noise = rng.uniform(-1, 1, x.shape)
        values = [psnr(x + amp * noise, x) for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestSsim:
    def test_identity(self):
        x = np.random.default_rng(0).random((3, 20, 20))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_negative_image(self):
        x = np.random.default_rng(1).random((3, 20, 20))
        assert ssim(x, 1 - x) < 1.0

    def test_constant_pair_closed_form(self):
        a, b = np.full((16, 16), 0.5), np.full((16, 16), 0.6)
        expected = (2 * 0.5 * 0.6 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_constants(self):
        assert SSIM_C1 == pytest.approx(1e-4) and SSIM_C2 == pytest.approx(9e-4)

    def test_too_small(self):
        with pytest.raises(ShapeError):
            ssim(np.zeros((3, 10, 20)), np.zeros((3, 10, 20)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(11, 24))
def test_ssim_symmetric(seed, size):
    rng = np.random.default_rng(seed)
    a, b = rng.random((3, size, size)), rng.random((3, size, size))
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12
    assert -1 <= ssim(a, b) <= 1
