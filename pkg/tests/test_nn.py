"""Tests for layers, the optimizer, seeding, and checkpoint I/O."""
import numpy as np
import pytest

from frontdoor.checkpoint import CheckpointError, load_tensors, save_tensors
from frontdoor.nn import (
    AvgPool2d,
    Conv2d,
    Dense,
    Flatten,
    Module,
    ReLU,
    Sequential,
    UpsampleNearest,
    kaiming_uniform,
)
from frontdoor.optim import SGD, NonFiniteGradient, schedule_lr
from frontdoor.rng import stream, stream_seed
from frontdoor.tensor import Tensor

from conftest import finite_difference, max_rel_err


def make_rng(seed=0):
    return np.random.default_rng(seed)


class TestInit:
    def test_kaiming_bound(self):
        rng = make_rng()
        w = kaiming_uniform(rng, (64, 100), 100)
        bound = np.sqrt(6.0 / 100)
        assert np.all(np.abs(w) <= bound)
        # with 6400 draws the extremes should come close to the bound
        assert w.max() > 0.9 * bound and w.min() < -0.9 * bound

    def test_dense_bias_zero(self):
        layer = Dense(make_rng(), 4, 3)
        np.testing.assert_array_equal(layer.bias.data, 0.0)

    def test_conv_bias_zero_and_fan_in(self):
        layer = Conv2d(make_rng(), 3, 8, kernel_size=3)
        np.testing.assert_array_equal(layer.bias.data, 0.0)
        bound = np.sqrt(6.0 / (3 * 3 * 3))
        assert np.all(np.abs(layer.weight.data) <= bound)


class TestDense:
    def test_identity_weight(self):
        layer = Dense(make_rng(), 3, 3)
        layer.weight.data = np.eye(3)
        layer.bias.data = np.zeros(3)
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(layer(Tensor(x)).data, x)

    def test_scalar_affine(self):
        # weight [[3]], bias [1], input [[2]] -> [[7]]
        layer = Dense(make_rng(), 1, 1)
        layer.weight.data = np.array([[3.0]])
        layer.bias.data = np.array([1.0])
        out = layer(Tensor(np.array([[2.0]])))
        np.testing.assert_array_equal(out.data, [[7.0]])

    def test_gradcheck_4x8(self):
        rng = make_rng(1)
        x = rng.normal(size=(4, 8))
        layer = Dense(make_rng(2), 8, 5)
        probe = rng.normal(size=(4, 5))

        def run():
            return float((layer(Tensor(x)).data * probe).sum())

        xt = Tensor(x.copy(), requires_grad=True)
        loss = (layer(xt) * Tensor(probe)).sum()
        loss.backward()
        analytic = [xt.grad, layer.weight.grad, layer.bias.grad]
        num = finite_difference(run, [x, layer.weight.data, layer.bias.data])
        for a, n in zip(analytic, num):
            assert max_rel_err(a, n) < 1e-6


class TestModuleProtocol:
    def test_named_parameters_nested(self):
        net = Sequential(
            Conv2d(make_rng(), 1, 2, kernel_size=3),
            ReLU(),
            Flatten(),
            Dense(make_rng(), 2 * 4 * 4, 3),
        )
        names = [name for name, _ in net.named_parameters()]
        assert len(names) == 4
        assert len(set(names)) == 4
        for name in names:
            assert "weight" in name or "bias" in name

    def test_zero_grad(self):
        layer = Dense(make_rng(), 2, 2)
        out = layer(Tensor(np.ones((1, 2)), requires_grad=True)).sum()
        out.backward()
        assert np.any(layer.weight.grad != 0)
        layer.zero_grad()
        assert layer.weight.grad is None and layer.bias.grad is None

    def test_state_dict_round_trip(self):
        a = Dense(make_rng(0), 3, 2)
        b = Dense(make_rng(9), 3, 2)
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.weight.data, b.weight.data)
        np.testing.assert_array_equal(a.bias.data, b.bias.data)

    def test_load_state_dict_layout_mismatch(self):
        a = Dense(make_rng(), 3, 2)
        state = a.state_dict()
        del state["bias"]
        with pytest.raises(ValueError, match="bias"):
            Dense(make_rng(), 3, 2).load_state_dict(state)

    def test_load_state_dict_shape_mismatch(self):
        a = Dense(make_rng(), 3, 2)
        with pytest.raises(ValueError, match="shape"):
            Dense(make_rng(), 4, 2).load_state_dict(a.state_dict())

    def test_pool_upsample_layers(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        pooled = AvgPool2d(2)(x)
        np.testing.assert_allclose(pooled.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])
        up = UpsampleNearest(2)(pooled)
        assert up.shape == (1, 1, 4, 4)
        assert up.data[0, 0, 0, 0] == up.data[0, 0, 1, 1] == 2.5


class TestSGD:
    def test_momentum_zero_is_vanilla(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.array([0.5, -1.0])
        SGD([p], lr=0.1, momentum=0.0).step()
        np.testing.assert_allclose(p.data, [0.95, 2.1])

    def test_zero_grad_is_fixed_point(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        p.grad = np.zeros(1)
        opt = SGD([p], lr=0.1, momentum=0.9)
        for _ in range(5):
            opt.step()
        np.testing.assert_array_equal(p.data, [3.0])

    def test_momentum_two_step_unroll(self):
        # constant gradient g: first step moves lr*g, second lr*(1.9)*g
        g = np.array([2.0])
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = SGD([p], lr=0.1, momentum=0.9)
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(p.data, -0.1 * g)
        before = p.data.copy()
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(before - p.data, 0.1 * 1.9 * g)

    def test_weight_decay_pulls_toward_zero(self):
        p = Tensor(np.array([10.0]), requires_grad=True)
        p.grad = np.zeros(1)
        SGD([p], lr=0.1, momentum=0.0, weight_decay=0.5).step()
        np.testing.assert_allclose(p.data, [9.5])

    def test_nonfinite_grad_raises(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient):
            SGD([p], lr=0.1).step()

    def test_step_schedule(self):
        assert schedule_lr("step", 0.1, 0, 60) == pytest.approx(0.1)
        assert schedule_lr("step", 0.1, 19, 60) == pytest.approx(0.1)
        assert schedule_lr("step", 0.1, 20, 60) == pytest.approx(0.01)
        assert schedule_lr("step", 0.1, 40, 60) == pytest.approx(0.001)

    def test_cosine_schedule(self):
        assert schedule_lr("cosine", 0.1, 0, 100) == pytest.approx(0.1)
        assert schedule_lr("cosine", 0.1, 50, 100) == pytest.approx(0.05)
        assert schedule_lr("cosine", 0.1, 100, 100) == pytest.approx(0.0, abs=1e-12)

    def test_unknown_schedule(self):
        with pytest.raises(ValueError, match="schedule"):
            schedule_lr("linear", 0.1, 0, 10)


class TestSeeding:
    def test_stream_seed_deterministic(self):
        assert stream_seed(42, "nst") == stream_seed(42, "nst")

    def test_streams_differ_by_name(self):
        seeds = {stream_seed(42, name) for name in ["nst", "classifier", "data", "aug"]}
        assert len(seeds) == 4

    def test_streams_differ_by_master(self):
        assert stream_seed(1, "data") != stream_seed(2, "data")

    def test_stream_generator_reproducible(self):
        a = stream(7, "aug").normal(size=5)
        b = stream(7, "aug").normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_forward_bit_identical_across_runs(self):
        def build_and_run():
            rng = stream(123, "model")
            net = Sequential(
                Conv2d(rng, 3, 4, kernel_size=3, stride=2, padding=1),
                ReLU(),
                Flatten(),
                Dense(rng, 4 * 4 * 4, 2),
            )
            x = stream(123, "data").normal(size=(2, 3, 8, 8))
            return net(Tensor(x)).data

        np.testing.assert_array_equal(build_and_run(), build_and_run())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "model.fdt"
        named = {
            "enc.weight": np.arange(24.0).reshape(2, 3, 2, 2),
            "enc.bias": np.zeros(2),
            "head.weight": np.array([[1.5]]),
        }
        save_tensors(path, named)
        loaded = load_tensors(path)
        assert list(loaded) == list(named)
        for key in named:
            np.testing.assert_array_equal(loaded[key], named[key])
            assert loaded[key].dtype == np.float64

    def test_scalar_rank_zero(self, tmp_path):
        path = tmp_path / "s.fdt"
        save_tensors(path, {"alpha": np.array(0.7)})
        loaded = load_tensors(path)
        assert loaded["alpha"].shape == ()
        assert float(loaded["alpha"]) == 0.7

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fdt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_tensors(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc.fdt"
        save_tensors(path, {"w": np.ones((4, 4))})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_tensors(path)

    def test_duplicate_name(self, tmp_path):
        path = tmp_path / "dup.fdt"
        save_tensors(path, {"w": np.ones(2)})
        with open(path, "ab") as fh:
            fh.write(path.read_bytes()[4:])
        with pytest.raises(CheckpointError, match="duplicate"):
            load_tensors(path)

    def test_model_state_round_trip(self, tmp_path):
        path = tmp_path / "net.fdt"
        net = Sequential(Conv2d(make_rng(3), 1, 2), Flatten(), Dense(make_rng(4), 32, 2))
        save_tensors(path, net.state_dict())
        other = Sequential(Conv2d(make_rng(8), 1, 2), Flatten(), Dense(make_rng(9), 32, 2))
        other.load_state_dict(load_tensors(path))
        x = Tensor(make_rng(5).normal(size=(1, 1, 4, 4)))
        np.testing.assert_array_equal(net(x).data, other(x).data)
