from __future__ import annotations

import time

import numpy as np
import pytest

from sodkit import hda_loss as hl
from sodkit import topology as tp
from sodkit.morphology import expand_gt


@pytest.fixture(scope="module")
def net():
    return tp.Topology(tp.TopologyConfig(64, 64, 8, seed=3))


@pytest.fixture(scope="module")
def zero_net():
    return tp.Topology(tp.TopologyConfig(64, 64, 8, seed=3, zero_bias=True))


def conv_loop(x, w, b, stride, dilation):
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    out = np.zeros((c_out, (h - 1) // stride + 1, (wd - 1) // stride + 1))
    for o in range(c_out):
        for r in range(out.shape[1]):
            for c in range(out.shape[2]):
                acc = b[o]
                for ci in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            rr = r * stride + i * dilation - pad
                            cc = c * stride + j * dilation - pad
                            if 0 <= rr < h and 0 <= cc < wd:
                                acc += w[o, ci, i, j] * x[ci, rr, cc]
                out[o, r, c] = acc
    return out


class TestPrimitives:
    @pytest.mark.parametrize("k,stride,dilation", [(1, 1, 1), (3, 1, 1), (3, 2, 1), (3, 1, 2)])
    def test_conv_matches_loops(self, rng, k, stride, dilation):
        x = rng.normal(size=(2, 7, 6))
        w = rng.normal(size=(3, 2, k, k))
        b = rng.normal(size=3)
        np.testing.assert_allclose(tp.conv2d(x, w, b, stride, dilation), conv_loop(x, w, b, stride, dilation),
                                   atol=1e-12)

    def test_conv_channel_contract(self):
        with pytest.raises(tp.TopologyError):
            tp.conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 1, 1)), None)

    def test_upsample_half_pixel(self):
        x = np.array([[[1.0, 3.0]]])
        np.testing.assert_allclose(tp.upsample(x, (1, 4)), [[[1.0, 1.5, 2.5, 3.0]]])

    def test_upsample_constant_and_identity(self, rng):
        np.testing.assert_allclose(tp.upsample(np.full((2, 3, 3), 0.7), (12, 9)), 0.7)
        x = rng.random((2, 4, 4))
        assert tp.upsample(x, (4, 4)) is x

    def test_batch_norm_inference(self):
        np.testing.assert_allclose(tp.batch_norm(np.array([1.0])), [1 / np.sqrt(1 + 1e-5)])


class TestConfig:
    @pytest.mark.parametrize("kw", [{"input_height": 48}, {"input_width": 0}, {"base_channels": 6},
                                    {"base_channels": 2}])
    def test_invalid(self, kw):
        with pytest.raises(tp.TopologyError):
            tp.TopologyConfig(**kw)

    def test_image_shape_checked(self, net):
        with pytest.raises(tp.TopologyError):
            net.forward(np.zeros((3, 32, 32)))


class TestStages:
    def test_encoder_shapes(self, net, rng):
        pyr = net.encoder_stub(rng.random((3, 64, 64)))
        shapes = [pyr.level(i).shape for i in tp.LEVELS]
        assert shapes == [(32, 16, 16), (64, 8, 8), (128, 4, 4), (256, 2, 2)]

    def test_encoder_320(self):
        cfg = tp.TopologyConfig(320, 320, 8)
        spatial = [r["shape"][1:] for r in tp.contract_table(cfg) if r["name"] in ("F2", "F3", "F4", "F5")]
        assert spatial == [(80, 80), (40, 40), (20, 20), (10, 10)]

    def test_zero_image_zero_features(self, zero_net):
        pyr = zero_net.encoder_stub(np.zeros((3, 64, 64)))
        assert all(not pyr.level(i).any() for i in tp.LEVELS)

    def test_ts_branch(self, net, rng):
        pyr = net.encoder_stub(rng.random((3, 64, 64)))
        f_e4, f_e3, f_e2, ts = net.ts_branch(pyr)
        assert (f_e4.shape, f_e3.shape, f_e2.shape) == ((32, 4, 4), (32, 8, 8), (32, 16, 16))
        assert ts.shape == (64, 64) and ts.min() > 0 and ts.max() < 1

    def test_global_context_zero_input(self, zero_net):
        f5 = np.zeros((256, 2, 2))
        f_h5, f_gc = zero_net.global_context(f5)
        assert f_h5.shape == (32, 2, 2) and f_gc.shape == (32, 2, 2)
        # zero input: both gates sit at sigmoid(0) = 0.5 but gate a zero signal
        assert not f_gc.any() and not f_h5.any()
        w_s = tp.sigmoid(tp.batch_norm(zero_net.gc_spatial(f_h5)))
        np.testing.assert_array_equal(w_s, 0.5)

    def test_global_context_deterministic(self, rng):
        f5 = rng.random((256, 2, 2))
        a = tp.Topology(tp.TopologyConfig(seed=5)).global_context(f5)
        b = tp.Topology(tp.TopologyConfig(seed=5)).global_context(f5)
        np.testing.assert_array_equal(a[1], b[1])

    def test_interaction_with_zero_ts_features(self, zero_net, rng):
        # coa(conv(0)) = 0 without biases, so F_i = 0 * F_fa + F_fa = F_fa
        f_fa = rng.random((32, 8, 8))
        f_ii = zero_net.interact(3, np.zeros((32, 8, 8)), f_fa)
        np.testing.assert_array_equal(f_ii, f_fa)
        np.testing.assert_array_equal(zero_net.refine(3, f_ii), zero_net.refine(3, f_fa))

    def test_cascade(self, net, rng):
        img = rng.random((3, 64, 64))
        pyr = net.encoder_stub(img)
        f_e4, f_e3, f_e2, _ = net.ts_branch(pyr)
        f_h5, f_gc = net.global_context(pyr.f5)
        trace = {}
        preds = net.fa_fi_cascade(pyr, f_h5, f_gc, (f_e4, f_e3, f_e2), trace)
        assert len(preds) == 4 and all(p.shape == (64, 64) and 0 < p.min() and p.max() < 1 for p in preds)
        assert [trace[f"F_h{i}"][1] for i in (4, 3, 2)] == [4, 8, 16]

        with pytest.raises(tp.TopologyError):
            net.fa_fi_cascade(pyr, f_h5, f_gc, (f_e4, f_e3))


class TestForward:
    def test_outputs(self, net, rng):
        res = net.forward(rng.random((3, 64, 64)))
        maps = [res.ts_pred, *res.os_preds]
        assert len(maps) == 5
        for m in maps:
            assert m.shape == (64, 64) and np.all((m > 0) & (m < 1))

    def test_same_seed_bit_identical(self, rng):
        img = rng.random((3, 64, 64))
        cfg = tp.TopologyConfig(seed=11)
        a, b = tp.forward(img, cfg), tp.forward(img, cfg)
        for x, y in zip([a.ts_pred, *a.os_preds], [b.ts_pred, *b.os_preds]):
            np.testing.assert_array_equal(x, y)
        c = tp.forward(img, tp.TopologyConfig(seed=12))
        assert not np.array_equal(a.ts_pred, c.ts_pred)

    def test_audit(self):
        for h, w in [(64, 64), (64, 96)]:
            rows = tp.audit_shapes(tp.TopologyConfig(h, w, 8))
            assert all(r["ok"] for r in rows), [r for r in rows if not r["ok"]]

    def test_reference_width_column(self):
        rows = {r["name"]: r for r in tp.contract_table(tp.TopologyConfig(320, 320))}
        assert rows["F5"]["reference_shape"] == (2048, 10, 10)
        assert rows["F_e2"]["reference_shape"] == (256, 80, 80)

    def test_feeds_loss(self, net, rng):
        res = net.forward(rng.random((3, 64, 64)))
        gt = np.zeros((64, 64), np.uint8)
        gt[16:48, 20:40] = 1
        _, exp = expand_gt(gt)
        t = hl.total_loss(res.ts_pred, exp, res.os_preds, gt)
        assert np.isfinite(t.total)
        assert all(np.all(np.isfinite(g)) for g in (t.ts_grad, *t.os_grads))

    def test_320_budget(self, rng):
        cfg = tp.TopologyConfig(320, 320, 8)
        net = tp.Topology(cfg)
        img = rng.random((3, 320, 320))
        start = time.perf_counter()
        res = net.forward(img)
        elapsed = time.perf_counter() - start
        assert res.ts_pred.shape == (320, 320)
        assert elapsed < 2.0, f"320x320 forward took {elapsed:.2f}s"

    def test_short_fuzz(self, net, rng):
        for _ in range(20):
            kind = rng.integers(3)
            img = [rng.random((3, 64, 64)), (rng.random((3, 64, 64)) < 0.5) * 1.0,
                   np.full((3, 64, 64), rng.random())][kind]
            res = net.forward(img)
            assert all(np.all(np.isfinite(m)) for m in [res.ts_pred, *res.os_preds])
