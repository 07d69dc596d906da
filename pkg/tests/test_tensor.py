import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipunc import tensor as T
from unipunc.tensor import Tensor

from conftest import check_grads


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = T.matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_row_by_column(self):
        np.testing.assert_array_equal(T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient(self, rng):
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        check_grads(lambda: T.sum(T.matmul(a, b)), [a, b])

    def test_batched_broadcast_gradient(self, rng):
        a, b = leaf(rng.normal(size=(2, 3, 4))), leaf(rng.normal(size=(4, 5)))
        w = Tensor(rng.normal(size=(2, 3, 5)))
        check_grads(lambda: T.sum(T.mul(T.matmul(a, b), w)), [a, b])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], atol=1e-15)

    def test_saturation(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor([[1000.0, 0.0, 0.0]])).data, [[1, 0, 0]], atol=1e-9)

    def test_matches_scalar_oracle(self):
        x = [1.0, 2.0, 3.0]
        total = math.fsum(math.exp(v) for v in x)
        expected = [math.exp(v) / total for v in x]
        np.testing.assert_allclose(T.softmax_rows(Tensor([x])).data[0], expected, rtol=1e-14)

    def test_mask_gives_exact_zero(self):
        y = T.softmax_rows(Tensor([[5.0, 1.0, 2.0]]), np.array([[False, True, True]]))
        assert y.data[0, 0] == 0.0
        assert abs(y.data.sum() - 1) < 1e-12

    def test_fully_masked_row_rejected(self):
        with pytest.raises(T.DimensionError):
            T.softmax_rows(Tensor([[1.0, 2.0]]), np.array([[False, False]]))

    def test_gradient(self, rng):
        x = leaf(rng.normal(size=(3, 5)))
        w = Tensor(rng.normal(size=(3, 5)))
        check_grads(lambda: T.sum(T.mul(T.softmax_rows(x), w)), [x])

    @given(st.lists(st.lists(st.floats(-50, 50), min_size=4, max_size=4), min_size=1, max_size=6))
    def test_rows_sum_to_one(self, rows):
        y = T.softmax_rows(Tensor(rows)).data
        assert np.all(np.abs(y.sum(axis=1) - 1) <= 1e-9)
        assert np.all((y >= 0) & (y <= 1))


class TestConv1d:
    def test_length_formula_examples(self):
        assert T.conv_output_length(15, 15, 5) == 1
        first = T.conv_output_length(100, 15, 5)
        assert (first, T.conv_output_length(first, 15, 5)) == (18, 1)

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(7, 3))
        w = np.eye(3).reshape(1, 3, 3)
        out = T.conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(3)), stride=1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_direct_loop(self, rng):
        x, w, b = rng.normal(size=(23, 3)), rng.normal(size=(4, 3, 2)), rng.normal(size=2)
        out = T.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=3).data
        expected = np.array([
            [sum(x[3 * i + k] @ w[k][:, o] for k in range(4)) + b[o] for o in range(2)]
            for i in range((23 - 4) // 3 + 1)
        ])
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_too_short(self):
        with pytest.raises(T.InputTooShortError) as err:
            T.conv1d(Tensor(np.zeros((4, 2))), Tensor(np.zeros((5, 2, 1))), Tensor(np.zeros(1)), 1)
        assert (err.value.length, err.value.kernel) == (4, 5)

    def test_gradient(self, rng):
        x, w, b = leaf(rng.normal(size=(17, 3))), leaf(rng.normal(size=(5, 3, 2))), leaf(rng.normal(size=2))
        wt = Tensor(rng.normal(size=(5, 2)))
        check_grads(lambda: T.sum(T.mul(T.conv1d(x, w, b, 3), wt)), [x, w, b])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 200), st.integers(1, 20), st.integers(1, 8))
    def test_length_property(self, m, kernel, stride):
        if m < kernel:
            return
        out = T.conv1d(Tensor(np.ones((m, 1))), Tensor(np.ones((kernel, 1, 1))), Tensor(np.zeros(1)), stride)
        assert out.shape[0] == (m - kernel) // stride + 1


class TestLayerNorm:
    def test_constant_row(self):
        out = T.layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])

    def test_already_normalized(self):
        out = T.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-5)
        np.testing.assert_allclose(out.data, np.array([[1.0, -1.0]]) / math.sqrt(1 + 1e-5), rtol=1e-15)

    def test_gradient(self, rng):
        x, g, b = leaf(rng.normal(size=(4, 8))), leaf(rng.normal(size=8)), leaf(rng.normal(size=8))
        wt = Tensor(rng.normal(size=(4, 8)))
        check_grads(lambda: T.sum(T.mul(T.layer_norm(x, g, b), wt)), [x, g, b])


class TestEmbedding:
    def test_single_row(self):
        out = T.embedding_lookup(Tensor([[1.0, 2.0], [3.0, 4.0]]), [0])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0]])

    def test_repeated_ids_accumulate(self):
        table = leaf(np.zeros((5, 2)))
        T.backward(T.sum(T.embedding_lookup(table, [3, 3])))
        np.testing.assert_array_equal(table.grad[3], [2.0, 2.0])
        assert not table.grad[[0, 1, 2, 4]].any()

    def test_gather_order(self, rng):
        table = rng.normal(size=(4, 3))
        out = T.embedding_lookup(Tensor(table), [2, 0, 1])
        np.testing.assert_array_equal(out.data, table[[2, 0, 1]])

    def test_out_of_range_names_position(self):
        with pytest.raises(IndexError, match=r"position \(2,\)"):
            T.embedding_lookup(Tensor(np.zeros((3, 2))), [0, 1, 7])


class TestCrossEntropy:
    def test_confident_correct(self):
        loss = T.cross_entropy(Tensor([[10.0, -10.0, -10.0, -10.0]]), [0], [True])
        assert float(loss.data) < 1e-4

    def test_uniform(self):
        loss = T.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 2], [True] * 3)
        assert float(loss.data) == pytest.approx(math.log(4), abs=1e-12)

    def test_gradient(self, rng):
        z = leaf(rng.normal(size=(5, 4)))
        targets, mask = [0, 3, 1, 2, 2], [True, False, True, True, True]
        check_grads(lambda: T.cross_entropy(z, targets, mask), [z])

    def test_all_masked_is_zero(self, rng):
        z = leaf(rng.normal(size=(2, 4)))
        loss = T.cross_entropy(z, [0, 1], [False, False])
        T.backward(loss)
        assert float(loss.data) == 0.0
        assert not z.grad.any()

    def test_masked_mean(self, rng):
        z = rng.normal(size=(3, 4))
        full = float(T.cross_entropy(Tensor(z[:2]), [1, 2], [True, True]).data)
        masked = float(T.cross_entropy(Tensor(z), [1, 2, 0], [True, True, False]).data)
        assert masked == pytest.approx(full, rel=1e-15)


class TestElementwise:
    def test_dropout_inference_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 3)))
        assert T.dropout(x, 0.1, training=False, rng=rng) is x

    def test_dropout_survivor_fraction(self):
        out = T.dropout(Tensor(np.ones(100_000)), 0.5, True, np.random.default_rng(0))
        frac = np.count_nonzero(out.data) / out.data.size
        assert 0.49 <= frac <= 0.51
        assert set(np.unique(out.data)) <= {0.0, 2.0}

    def test_add_gradient_passthrough(self, rng):
        a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(2, 3)))
        w = rng.normal(size=(2, 3))
        T.backward(T.sum(T.mul(T.add(a, b), Tensor(w))))
        np.testing.assert_array_equal(a.grad, w)
        np.testing.assert_array_equal(b.grad, w)

    def test_add_shape_mismatch(self):
        with pytest.raises(T.DimensionError):
            T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_structural_gradients(self, rng):
        a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(3, 3)))

        def fn():
            rows = T.slice_rows(T.concat_rows([a, b]), 1, 4)
            return T.sum(T.mul(T.transpose(T.scale(rows, 1.5)), w))

        check_grads(fn, [a, b])

    def test_pad_stack_gradient(self, rng):
        a, b = leaf(rng.normal(size=(2, 3))), leaf(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(2, 4, 3)))
        stacked, mask = T.pad_stack([a, b])
        assert mask.tolist() == [[True, True, False, False], [True] * 4]
        check_grads(lambda: T.sum(T.mul(T.pad_stack([a, b])[0], w)), [a, b])

    def test_relu_gradient(self, rng):
        x = leaf(rng.normal(size=(4, 4)))
        check_grads(lambda: T.sum(T.mul(T.relu(x), x)), [x])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_surfaces(self):
        with pytest.raises(T.NonFiniteError):
            T.mul(Tensor([1e200]), Tensor([1e200]))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = leaf(rng.normal(size=(3, 2)))
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 2)))

    def test_square(self, rng):
        x = leaf(rng.normal(size=(3, 2)))
        T.backward(T.sum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-15)

    def test_composite_graph(self, rng):
        x = leaf(rng.normal(size=(4, 3)))
        w = leaf(rng.normal(size=(3, 5)))
        check_grads(lambda: T.cross_entropy(T.softmax_rows(T.matmul(x, w)), [0, 4, 2, 1], [True] * 4), [x, w])

    def test_non_scalar_rejected(self, rng):
        with pytest.raises(T.BackwardError):
            T.backward(T.mul(leaf([1.0, 2.0]), leaf([3.0, 4.0])))

    def test_double_backward_requires_zero_grads(self, rng):
        x = leaf(rng.normal(size=3))
        loss = T.sum(T.mul(x, x))
        T.backward(loss)
        with pytest.raises(T.BackwardError, match="zero_grads"):
            T.backward(loss)
        T.zero_grads([x])
        T.backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_each_node_visited_once(self, rng):
        x = leaf(rng.normal(size=(2, 2)))
        y = T.mul(x, x)            # 1 node, used twice below
        z = T.add(y, y)
        loss = T.sum(T.add(z, y))
        graph = T.Graph(loss)
        assert [t._seq for t in graph.nodes] == sorted(t._seq for t in graph.nodes)
        assert T.backward(loss) == len(graph) == 5
        np.testing.assert_allclose(x.grad, 6 * x.data)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            x = leaf(rng.normal(size=(6, 4)))
            w = leaf(rng.normal(size=(4, 4)))
            h = T.dropout(T.softmax_rows(T.matmul(x, w)), 0.2, True, rng)
            loss = T.cross_entropy(h, [0, 1, 2, 3, 0, 1], [True] * 6)
            T.backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        for a, b in zip(run(), run()):
            assert a.tobytes() == b.tobytes()
