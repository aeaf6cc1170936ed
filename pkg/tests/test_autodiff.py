import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from genhints import autodiff as ad
from genhints.autodiff import ComputationTape, Tensor, TensorError, tensor_new

from conftest import numeric_grad, rel_err


def leaf(values, grad=True):
    return Tensor(np.asarray(values, dtype=float), requires_grad=grad)


class TestTensorNew:
    def test_two_by_two(self):
        t = tensor_new([2, 2], [1, 2, 3, 4])
        assert t.shape == (2, 2)
        assert t.size == 4
        assert t.grad is None
        np.testing.assert_array_equal(t.data, [[1, 2], [3, 4]])

    def test_zero_vector(self):
        np.testing.assert_array_equal(tensor_new([3], [0, 0, 0]).data, np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(TensorError):
            tensor_new([2], [1, 2, 3])

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(TensorError):
            tensor_new([2], [1.0, bad])

    def test_non_positive_dimension(self):
        with pytest.raises(TensorError):
            tensor_new([0, 2], [])

    def test_leaf_copies_input(self):
        src = np.ones(3)
        t = Tensor(src)
        src[0] = 5
        assert t.data[0] == 1


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(ad.add(leaf([1, 2]), leaf([3, 4])).data, [4, 6])

    def test_mul_by_zeros(self):
        np.testing.assert_array_equal(ad.mul(leaf([1.5, -2]), leaf([0, 0])).data, [0, 0])

    def test_grad_of_sum_of_squares(self):
        x = leaf([1, 2, 3])
        ad.backward(ad.sum_all(ad.mul(x, x)))
        np.testing.assert_array_equal(x.grad, [2, 4, 6])

    @pytest.mark.parametrize("kind,expect_a,expect_b", [("add", 1, 1), ("sub", 1, -1)])
    def test_linear_rules(self, kind, expect_a, expect_b):
        a, b = leaf([1, 2]), leaf([3, 5])
        ad.backward(ad.sum_all(ad.elementwise(kind, a, b)))
        np.testing.assert_array_equal(a.grad, [expect_a] * 2)
        np.testing.assert_array_equal(b.grad, [expect_b] * 2)

    def test_mul_rule_swaps_operands(self):
        a, b = leaf([1, 2]), leaf([3, 5])
        ad.backward(ad.sum_all(ad.elementwise("mul", a, b)))
        np.testing.assert_array_equal(a.grad, [3, 5])
        np.testing.assert_array_equal(b.grad, [1, 2])

    def test_scale_by_constant(self):
        a = leaf([1, -2])
        out = ad.elementwise("scale_by_constant", a, 3.0)
        ad.backward(ad.sum_all(out))
        np.testing.assert_array_equal(out.data, [3, -6])
        np.testing.assert_array_equal(a.grad, [3, 3])

    def test_shape_mismatch(self):
        with pytest.raises(TensorError):
            ad.add(leaf([1, 2]), leaf([1, 2, 3]))

    def test_unknown_kind(self):
        with pytest.raises(TensorError):
            ad.elementwise("pow", leaf([1]), leaf([1]))


class TestMatmul:
    def test_identity(self, rng):
        m = rng.normal(size=(2, 3))
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_hand_product(self):
        out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5], [6]]))
        np.testing.assert_array_equal(out.data, [[17], [39]])

    def test_inner_dimension_mismatch(self):
        with pytest.raises(TensorError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_vs_finite_differences(self, rng):
        a = leaf(rng.normal(size=(3, 3)))
        b = leaf(rng.normal(size=(3, 3)))
        w = rng.normal(size=(3, 3))
        f = lambda: float(((a.data @ b.data) * w).sum())  # noqa: E731
        ad.backward(ad.sum_all(ad.mul(ad.matmul(a, b), Tensor(w))))
        assert rel_err(a.grad, numeric_grad(f, a.data)) < 1e-6
        assert rel_err(b.grad, numeric_grad(f, b.data)) < 1e-6


class TestConv2d:
    def test_one_by_one_identity(self, rng):
        x = rng.normal(size=(2, 1, 5, 5))
        out = ad.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x)

    def test_three_by_three_ones_on_constant(self):
        c = 0.7
        out = ad.conv2d(
            Tensor(np.full((1, 1, 5, 5), c)),
            Tensor(np.ones((1, 1, 3, 3))),
            Tensor(np.zeros(1)),
            padding="valid",
        )
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out.data, 9 * c, rtol=0, atol=1e-14)

    def test_same_padding_keeps_size(self, rng):
        out = ad.conv2d(Tensor(rng.random((2, 3, 6, 7))), Tensor(rng.random((4, 3, 3, 3))), Tensor(np.zeros(4)))
        assert out.shape == (2, 4, 6, 7)

    def test_matches_direct_loop(self, rng):
        x = rng.normal(size=(2, 2, 5, 6))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), padding="valid").data
        ref = np.zeros((2, 3, 3, 4))
        for n in range(2):
            for f in range(3):
                for i in range(3):
                    for j in range(4):
                        ref[n, f, i, j] = (x[n, :, i : i + 3, j : j + 3] * k[f]).sum() + b[f]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    @pytest.mark.parametrize("channels,padding", [(1, "same"), (1, "valid"), (3, "same"), (2, "valid")])
    def test_gradient_vs_finite_differences(self, rng, channels, padding):
        x = leaf(rng.normal(size=(1, channels, 4, 4)))
        k = leaf(rng.normal(size=(2, channels, 3, 3)))
        b = leaf(rng.normal(size=2))
        w = rng.normal(size=ad.conv2d(x, k, b, padding).shape)
        f = lambda: float((ad.conv2d(x, k, b, padding).data * w).sum())  # noqa: E731
        ad.backward(ad.sum_all(ad.mul(ad.conv2d(x, k, b, padding), Tensor(w))))
        for t in (x, k, b):
            assert rel_err(t.grad, numeric_grad(f, t.data)) < 1e-5

    def test_channel_mismatch(self):
        with pytest.raises(TensorError):
            ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_even_kernel_rejected(self):
        with pytest.raises(TensorError):
            ad.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))

    def test_valid_kernel_larger_than_input(self):
        with pytest.raises(TensorError):
            ad.conv2d(
                Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)), "valid"
            )


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(ad.activation_relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_positive_unchanged(self):
        np.testing.assert_array_equal(ad.relu(Tensor([0.5, 3.0])).data, [0.5, 3.0])

    def test_indicator_gradient(self):
        x = leaf([-1.0, 2.0])
        ad.backward(ad.sum_all(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0, 1])

    def test_subgradient_zero_at_zero(self):
        x = leaf([0.0])
        ad.backward(ad.sum_all(ad.relu(x)))
        np.testing.assert_array_equal(x.grad, [0])


class TestLogSoftmax:
    def test_uniform_pair(self):
        np.testing.assert_allclose(ad.log_softmax(Tensor([0.0, 0.0])).data, [-math.log(2)] * 2, atol=1e-15)

    def test_large_logits_stay_finite(self):
        out = ad.log_softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == 0.0

    def test_one_two_three(self):
        # softmax([1,2,3]) = e^k / (e + e^2 + e^3)
        denom = math.e + math.e**2 + math.e**3
        expected = [math.e / denom, math.e**2 / denom, math.e**3 / denom]
        probs = np.exp(ad.log_softmax(Tensor([1.0, 2.0, 3.0])).data)
        np.testing.assert_allclose(probs, expected, rtol=1e-14)
        np.testing.assert_allclose(probs, [0.0900, 0.2447, 0.6652], atol=5e-5)

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)),
                  elements=st.floats(-500, 500)))
    def test_normalised(self, x):
        probs = np.exp(ad.log_softmax(Tensor(x), axis=1).data)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_gradient_vs_finite_differences(self, rng):
        x = leaf(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        f = lambda: float((ad.log_softmax(Tensor(x.data), axis=1).data * w).sum())  # noqa: E731
        ad.backward(ad.sum_all(ad.mul(ad.log_softmax(x, axis=1), Tensor(w))))
        assert rel_err(x.grad, numeric_grad(f, x.data)) < 1e-6


class TestReduce:
    def test_mean(self):
        assert ad.reduce("mean", Tensor([2.0, 4.0])).item() == 3.0

    def test_sum_zeros(self):
        assert ad.reduce("sum", Tensor(np.zeros(5))).item() == 0.0

    def test_mean_gradient(self):
        x = leaf(np.arange(4.0))
        ad.backward(ad.reduce("mean", x))
        np.testing.assert_array_equal(x.grad, [0.25] * 4)

    def test_mean_axes_is_average_pool(self, rng):
        x = leaf(rng.normal(size=(2, 3, 4, 4)))
        out = ad.mean_axes(x, (2, 3))
        np.testing.assert_allclose(out.data, x.data.mean(axis=(2, 3)))
        ad.backward(ad.sum_all(out))
        np.testing.assert_allclose(x.grad, np.full(x.shape, 1 / 16))


class TestBackward:
    def test_linear(self):
        x = leaf([5.0, 7.0])
        ad.backward(ad.sum_all(x))
        np.testing.assert_array_equal(x.grad, [1, 1])

    def test_accumulates_without_reset(self):
        x = leaf([1.0, 2.0, 3.0])
        loss = ad.sum_all(ad.mul(x, x))
        ad.backward(loss)
        ad.backward(loss)
        np.testing.assert_array_equal(x.grad, [4, 8, 12])
        ad.zero_grad([x])
        assert x.grad is None

    def test_non_scalar_loss(self):
        with pytest.raises(TensorError):
            ad.backward(leaf([1.0, 2.0]))

    def test_composite_cross_entropy_gradient(self, rng):
        from genhints.losses import cross_entropy

        w = leaf(rng.normal(size=(4, 3)))
        x = rng.normal(size=(5, 4))
        labels = np.array([0, 2, 1, 1, 0])
        f = lambda: cross_entropy(Tensor(x @ w.data), labels).item()  # noqa: E731
        ad.backward(cross_entropy(ad.matmul(Tensor(x), w), labels))
        assert rel_err(w.grad, numeric_grad(f, w.data)) < 1e-4

    def test_shared_subexpression_counted_once_per_path(self):
        x = leaf([3.0])
        y = ad.mul(x, x)
        ad.backward(ad.sum_all(ad.add(y, y)))  # d/dx 2x^2 = 4x
        np.testing.assert_array_equal(x.grad, [12.0])

    def test_tape_is_topological_and_unique(self, rng):
        x = leaf(rng.normal(size=3))
        y = ad.mul(x, x)
        z = ad.sum_all(ad.add(ad.exp(y), y))
        tape = ComputationTape(z)
        ids = [id(n) for n in tape.nodes]
        assert len(ids) == len(set(ids))
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                if parent.requires_grad:
                    assert pos[id(parent)] < pos[id(node)]

    def test_forward_bit_identical(self, rng):
        x = rng.normal(size=(2, 1, 6, 6))
        k = rng.normal(size=(3, 1, 3, 3))
        a = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(3))).data
        b = ad.conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(3))).data
        assert a.tobytes() == b.tobytes()


@given(arrays(np.float64, st.integers(1, 64), elements=st.floats(-3, 3)))
def test_exp_and_relu_gradients_random(values):
    x = leaf(values)
    ad.backward(ad.sum_all(ad.add(ad.exp(x), ad.relu(x))))
    expected = np.exp(values) + (values > 0)
    np.testing.assert_allclose(x.grad, expected, rtol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-10, 10)))
def test_identities_are_exact(m):
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(m.shape[0])), Tensor(m)).data, m)
    pos = np.abs(m)
    np.testing.assert_array_equal(ad.relu(Tensor(pos)).data, pos)
