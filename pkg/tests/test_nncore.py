import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopmap import nncore
from stopmap.errors import ConfigError, NumericError, ShapeError
from stopmap.nncore import TrainConfig

from oracles import conv_direct


def small_params(seed=0, t=3, n=8):
    return nncore.init_params(t, n, seed)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9, dtype=float).reshape(1, 3, 3)
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = nncore.conv2d(x, w, np.zeros(1))
        assert np.array_equal(out, x)

    def test_constant_input_all_ones_kernel(self):
        c = 2.5
        x = np.full((1, 6, 6), c)
        w = np.ones((1, 1, 3, 3))
        out = nncore.conv2d(x, w, np.zeros(1))
        assert np.allclose(out[0, 1:-1, 1:-1], 9 * c)

    def test_matches_direct_oracle(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 5, 5))
            w = rng.normal(size=(3, 2, 3, 3))
            b = rng.normal(size=3)
            assert np.abs(nncore.conv2d(x, w, b) - conv_direct(x, w, b)).max() < 1e-12

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            nncore.conv2d(np.zeros((2, 5, 5)), np.zeros((3, 4, 3, 3)), np.zeros(3))

    def test_even_kernel_raises(self):
        with pytest.raises(ShapeError):
            nncore.conv2d(np.zeros((1, 5, 5)), np.zeros((1, 1, 4, 4)), np.zeros(1))


class TestRelu:
    def test_basic(self):
        assert np.array_equal(nncore.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_all_negative(self):
        assert np.array_equal(nncore.relu(-np.ones((2, 3))), np.zeros((2, 3)))

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    def test_idempotent(self, values):
        x = np.array(values)
        assert np.array_equal(nncore.relu(nncore.relu(x)), nncore.relu(x))


class TestMaxPool:
    def test_2x2(self):
        out = nncore.maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 4.0

    def test_constant(self):
        out = nncore.maxpool2d(np.full((2, 4, 4), 7.0))
        assert np.all(out == 7.0)

    def test_default_grid_30_to_15(self):
        out = nncore.maxpool2d(np.zeros((16, 30, 30)))
        assert out.shape == (16, 15, 15)

    def test_too_small_raises(self):
        with pytest.raises(ShapeError):
            nncore.maxpool2d(np.zeros((1, 1, 4)))

    def test_output_bounded_by_input_max(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 7, 9))
        assert nncore.maxpool2d(x).max() <= x.max()

    def test_backward_routes_all_gradient(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 3, 6, 6))
        out, idx = nncore._pool_forward(x)
        dy = rng.normal(size=out.shape)
        dx = nncore._pool_backward(idx, dy, x.shape)
        assert np.isclose(dx.sum(), dy.sum())
        # gradient lands only where the max was
        assert np.count_nonzero(dx) <= dy.size


class TestForward:
    def test_zero_input_gives_linear_bias(self):
        p = small_params()
        p.linear_bias = np.array([0.5, -1.0, 2.0, 0.0])
        logits = nncore.forward(p, np.zeros((3, 8, 8)))
        assert np.array_equal(logits, p.linear_bias)

    def test_default_shape_feature_length(self):
        assert nncore.feature_dim(30) == 7200
        p = nncore.init_params(72, 30, 0)
        assert p.linear_weights.shape == (4, 7200)

    def test_zero_params_tie_break(self):
        p = small_params()
        for name in nncore.PARAM_NAMES:
            getattr(p, name)[:] = 0.0
        x = np.random.default_rng(0).normal(size=(3, 8, 8))
        assert np.array_equal(nncore.forward(p, x), np.zeros(4))
        assert nncore.predict(p, x) == 0

    def test_deterministic(self):
        p = small_params(5)
        x = np.random.default_rng(7).normal(size=(3, 8, 8))
        assert np.array_equal(nncore.forward(p, x), nncore.forward(p, x))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nncore.forward(small_params(), np.zeros((4, 8, 8)))


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, _ = nncore.softmax_cross_entropy(np.zeros(4), 2)
        assert np.isclose(loss, np.log(4), atol=1e-12)

    def test_saturated(self):
        loss, _ = nncore.softmax_cross_entropy(np.array([100.0, 0, 0, 0]), 0)
        assert loss < 1e-10

    def test_matches_extended_precision(self):
        import mpmath

        mpmath.mp.dps = 50
        rng = np.random.default_rng(0)
        for _ in range(30):
            logits = rng.normal(scale=5, size=4)
            label = int(rng.integers(4))
            loss, grad = nncore.softmax_cross_entropy(logits, label)
            zs = [mpmath.mpf(v) for v in logits]
            lse = mpmath.log(sum(mpmath.e**z for z in zs))
            ref = float(lse - zs[label])
            assert abs(loss - ref) < 1e-12
            assert abs(grad.sum()) < 1e-12

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            nncore.softmax_cross_entropy(np.zeros(4), 4)


class TestBackprop:
    def test_zero_lr_leaves_params_bit_identical(self):
        p = small_params()
        x = np.random.default_rng(0).normal(size=(3, 8, 8))
        cfg = TrainConfig(learning_rate=0.0)
        loss, p2, _ = nncore.backprop_batch(p, [(x, 1)], cfg)
        assert loss > 0
        for name in nncore.PARAM_NAMES:
            assert np.array_equal(getattr(p, name), getattr(p2, name))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        p = small_params(3)
        samples = [(rng.normal(size=(3, 8, 8)), 0), (rng.normal(size=(3, 8, 8)), 3)]
        assert nncore.grad_check(p, samples) < 1e-5

    def test_overfit_four_classes(self):
        rng = np.random.default_rng(0)
        data = [(rng.normal(size=(3, 8, 8)), c) for c in range(4)]
        p = small_params(0)
        cfg = TrainConfig(learning_rate=0.05, batch_size=4)
        vel = None
        for _ in range(500):
            _, p, vel = nncore.backprop_batch(p, data, cfg, vel)
        assert all(nncore.predict(p, x) == c for x, c in data)

    def test_nonfinite_gradient_names_layer(self):
        p = small_params()
        p.conv_a_weights[0, 0, 0, 0] = np.inf
        x = np.random.default_rng(0).normal(size=(3, 8, 8))
        with np.errstate(invalid="ignore"), pytest.raises(NumericError):
            nncore.backprop_batch(p, [(x, 0)], TrainConfig())


class TestGradCheck:
    def test_corrupted_conv_gradient_detected(self, monkeypatch):
        orig = nncore._conv_param_grads

        def corrupted(cols, dy, kshape):
            dw, db = orig(cols, dy, kshape)
            return 3.0 * dw, db

        monkeypatch.setattr(nncore, "_conv_param_grads", corrupted)
        rng = np.random.default_rng(1)
        p = small_params(1)
        err = nncore.grad_check(p, (rng.normal(size=(3, 8, 8)), 2))
        assert err > 0.5

    def test_bad_h(self):
        with pytest.raises(ConfigError):
            nncore.grad_check(small_params(), (np.zeros((3, 8, 8)), 0), h=0)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        p = small_params(11)
        path = tmp_path / "weights.json"
        nncore.save_params(p, path)
        q = nncore.load_params(path)
        assert q.t_bins == p.t_bins and q.grid_n == p.grid_n
        for name in nncore.PARAM_NAMES:
            assert np.array_equal(getattr(p, name), getattr(q, name))

    def test_file_is_json_with_expected_layout(self, tmp_path):
        p = small_params()
        path = tmp_path / "w.json"
        nncore.save_params(p, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"config", "tensors"}
        assert set(doc["tensors"]) == set(nncore.PARAM_NAMES)


class TestInvariants:
    @settings(deadline=None, max_examples=20)
    @given(st.integers(0, 10_000))
    def test_forward_finite_on_random_input(self, seed):
        rng = np.random.default_rng(seed)
        p = small_params(seed % 7)
        x = rng.normal(size=(3, 8, 8))
        assert np.all(np.isfinite(nncore.forward(p, x)))

    def test_grad_check_five_seeds(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            p = small_params(seed)
            samples = [
                (rng.normal(size=(3, 8, 8)), int(rng.integers(4))) for _ in range(2)
            ]
            assert nncore.grad_check(p, samples) < 1e-5
