import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partialnet import tensor as T
from partialnet.tensor import Rng, Tensor


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestConv:
    def test_hand_example(self):
        x = t([[[[1, 2], [3, 4]]]])
        w = t([[[[1, 0], [0, 1]]]])
        out = T.conv2d(x, w, t([0.0]))
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 5.0

    def test_zero_filter_gives_bias(self):
        x = t(Rng(0).normal((2, 3, 5, 5), dtype=np.float64))
        out = T.conv2d(x, t(np.zeros((4, 3, 3, 3))), t([1.5, -2, 0, 7]), pad=1)
        for c, v in enumerate([1.5, -2, 0, 7]):
            assert np.all(out.data[:, c] == v)

    def test_identity_filter(self):
        x = t(Rng(1).normal((2, 3, 4, 4), dtype=np.float64))
        w = np.eye(3).reshape(3, 3, 1, 1)
        np.testing.assert_array_equal(T.conv2d(x, t(w)).data, x.data)

    def test_stride_and_pad_shape(self):
        x = t(np.ones((1, 2, 8, 8)))
        assert T.conv2d(x, t(np.ones((3, 2, 3, 3))), stride=2, pad=1).shape == (1, 3, 4, 4)

    def test_matches_direct_loop(self):
        rng = Rng(2)
        x = rng.normal((2, 3, 6, 5), dtype=np.float64)
        w = rng.normal((4, 3, 3, 3), dtype=np.float64)
        out = T.conv2d(t(x), t(w), stride=2, pad=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for i in range(out.shape[2]):
            for j in range(out.shape[3]):
                patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            T.conv2d(t(np.ones((1, 2, 4, 4))), t(np.ones((1, 3, 3, 3))))


class TestBatchNorm:
    def _run(self, gamma, beta):
        x = t(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
        running = {"mean": np.zeros(1), "var": np.ones(1)}
        return T.batchnorm2d(x, t([gamma]), t([beta]), running, True).data.ravel(), running

    def test_hand_example(self):
        out, _ = self._run(1.0, 0.0)
        np.testing.assert_allclose(out, [-0.999995, 0.999995], atol=1e-6)

    def test_affine(self):
        out, _ = self._run(2.0, 1.0)
        np.testing.assert_allclose(out, [-0.99999, 2.99999], atol=1e-5)

    def test_running_stats_update(self):
        _, running = self._run(1.0, 0.0)
        # mean 2, unbiased variance 2 over two samples
        np.testing.assert_allclose(running["mean"], [0.2])
        np.testing.assert_allclose(running["var"], [0.9 + 0.1 * 2.0])

    def test_constant_batch_gives_beta(self):
        x = t(np.full((4, 2, 3, 3), 0.7))
        out = T.batchnorm2d(x, t([1.0, 1.0]), t([0.25, -1.0]), {"mean": np.zeros(2), "var": np.ones(2)}, True)
        assert np.abs(out.data[:, 0] - 0.25).max() < 1e-2
        assert np.abs(out.data[:, 1] + 1.0).max() < 1e-2

    def test_eval_uses_running(self):
        x = t(np.full((1, 1, 1, 1), 5.0))
        running = {"mean": np.array([1.0]), "var": np.array([4.0])}
        out = T.batchnorm2d(x, t([1.0]), t([0.0]), running, False)
        assert out.data.item() == pytest.approx(4.0 / np.sqrt(4.0 + 1e-5))
        assert running["mean"][0] == 1.0


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(T.relu(t([-1, 0, 2])).data, [0, 0, 2])

    @given(st.lists(st.floats(-1e6, -1e-3), min_size=1, max_size=20))
    def test_relu_negative(self, xs):
        assert np.all(T.relu(t(xs)).data == 0)

    @given(st.lists(st.floats(1e-3, 1e6), min_size=1, max_size=20))
    def test_relu_positive(self, xs):
        np.testing.assert_array_equal(T.relu(t(xs)).data, xs)

    def test_linear_examples(self):
        np.testing.assert_array_equal(T.linear(t([[1, 2]]), t(np.eye(2)), t([0, 0])).data, [[1, 2]])
        out = T.linear(t(np.ones((3, 2))), t(np.zeros((2, 2))), t([3, 4])).data
        np.testing.assert_array_equal(out, [[3, 4]] * 3)
        assert T.linear(t([[1, 1]]), t([[2, 3]]), t([1])).data.tolist() == [[6.0]]

    def test_global_avg_pool(self):
        assert T.global_avg_pool(t([[[[1, 2], [3, 4]]]])).data.tolist() == [[2.5]]
        assert np.all(T.global_avg_pool(t(np.full((2, 3, 4, 4), 1.25))).data == 1.25)
        x = t(Rng(0).normal((3, 4, 1, 1), dtype=np.float64))
        np.testing.assert_array_equal(T.global_avg_pool(x).data, x.data[:, :, 0, 0])

    def test_avg_pool2d(self):
        x = t(np.arange(16.0).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(T.avg_pool2d(x).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_concat(self):
        a, b = t(np.zeros((2, 1, 2, 2))), t(np.ones((2, 3, 2, 2)))
        assert T.concat([a, b]).shape == (2, 4, 2, 2)


class TestCrossEntropy:
    def test_ln2(self):
        assert T.softmax_cross_entropy(t([[0, 0]]), [0]).data == pytest.approx(np.log(2), abs=1e-12)

    @pytest.mark.parametrize("c", [2, 5, 10, 100])
    def test_uniform(self, c):
        assert T.softmax_cross_entropy(t(np.zeros((3, c))), [0, 1, c - 1]).data == pytest.approx(np.log(c))

    def test_confident(self):
        assert T.softmax_cross_entropy(t([[20.0, 0.0, 0.0]]), [0]).data < 1e-4

    @settings(max_examples=30)
    @given(st.floats(-50, 50))
    def test_shift_invariance(self, shift):
        logits = Rng(3).normal((4, 6), dtype=np.float64)
        a = T.softmax_cross_entropy(t(logits), [0, 1, 2, 3]).data
        b = T.softmax_cross_entropy(t(logits + shift), [0, 1, 2, 3]).data
        assert abs(a - b) < 1e-9

    def test_large_logits_finite(self):
        assert np.isfinite(T.softmax_cross_entropy(t([[1e4, -1e4]]), [1]).data)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            T.softmax_cross_entropy(t(np.zeros((1, 3))), [3])


class TestBackward:
    def test_square(self):
        w = t([3.0], grad=True)
        T.backward((w * w).sum())
        assert w.grad.tolist() == [6.0]

    def test_inactive_relu(self):
        w = t([1.0], grad=True)
        T.backward(T.relu(-w).sum())
        assert w.grad.tolist() == [0.0]

    def test_non_scalar(self):
        w = t([1.0, 2.0], grad=True)
        with pytest.raises(ValueError):
            T.backward(w * w)

    def test_shared_node_accumulates(self):
        w = t([2.0], grad=True)
        y = w * w
        T.backward((y + y).sum())
        assert w.grad.tolist() == [8.0]

    def test_constant_gets_no_grad(self):
        w, c = t([1.0], grad=True), t([5.0])
        T.backward((w * c).sum())
        assert c.grad is None and w.grad.tolist() == [5.0]


class TestInit:
    def test_statistics(self):
        x = T.init_kaiming((1000, 1000), 2, Rng(0), dtype=np.float64).data
        assert abs(x.mean()) < 0.01
        assert abs(x.var() - 1.0) < 0.01

    def test_deterministic(self):
        a = T.init_kaiming((4, 3, 3, 3), 27, Rng(5)).data
        b = T.init_kaiming((4, 3, 3, 3), 27, Rng(5)).data
        assert a.tobytes() == b.tobytes()

    def test_zero_shape(self):
        with pytest.raises(ValueError):
            T.init_kaiming((0, 3), 3, Rng(0))

    def test_spawn_independent(self):
        r = Rng(0)
        assert not np.array_equal(r.spawn(1).normal((5,)), r.spawn(2).normal((5,)))
        np.testing.assert_array_equal(r.spawn(1).normal((5,)), Rng(0).spawn(1).normal((5,)))
