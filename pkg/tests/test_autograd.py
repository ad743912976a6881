import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shlight import autograd as ag
from shlight.autograd import Tensor, finite_diff_grad, no_grad
from shlight.errors import InvalidArgument, InvalidState, ShapeError

from gradcheck import OPS, SEEDS, away_from_zero, check_grads


@pytest.mark.parametrize("op", sorted(OPS))
@pytest.mark.parametrize("seed", SEEDS)
def test_gradient_matches_finite_differences(op, seed):
    build, shapes = OPS[op]
    rng = np.random.default_rng(seed)
    inputs = [away_from_zero(rng, s) for s in shapes]
    check_grads(build, inputs, rng)


@pytest.mark.parametrize("seed", SEEDS)
def test_composed_graph(seed):
    rng = np.random.default_rng(seed)
    x = away_from_zero(rng, (2, 6, 6, 2))
    w = rng.normal(size=(3, 3, 2, 4)) * 0.5
    fc = rng.normal(size=(4, 3))
    target = rng.normal(size=(2, 3))

    def build(t):
        h = ag.relu(ag.conv2d(t[0], t[1], pad=1))
        h = ag.global_avg_pool(ag.maxpool2d(h))
        return ag.mse(ag.softsign(ag.linear(h, t[2])), Tensor(target))

    check_grads(build, [x, w, fc], rng)


class TestForward:
    def test_relu(self):
        assert ag.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]

    def test_softsign(self):
        assert ag.softsign(Tensor([1.0, 0.0, -3.0])).data.tolist() == [0.5, 0.0, -0.75]

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 5, 4, 3))
        k = np.zeros((3, 3, 3, 3))
        k[1, 1] = np.eye(3)
        assert np.allclose(ag.conv2d(Tensor(x), Tensor(k), pad=1).data, x)

    def test_conv_against_direct_loop(self, rng):
        x = rng.normal(size=(1, 5, 6, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        out = ag.conv2d(Tensor(x), Tensor(w), stride=2).data
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                patch = x[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                assert np.allclose(out[0, i, j], np.einsum("abc,abcd->d", patch, w))

    def test_maxpool_2x2_fast_path(self, rng):
        x = rng.normal(size=(2, 8, 6, 3))
        xt = Tensor(x, requires_grad=True)
        out = ag.maxpool2d(xt)
        blocks = x.reshape(2, 4, 2, 3, 2, 3)
        assert np.array_equal(out.data, blocks.max(axis=(2, 4)))
        ag.sum_all(out).backward()
        hit = (blocks == blocks.max(axis=(2, 4), keepdims=True)).reshape(x.shape)
        assert np.array_equal(xt.grad, hit.astype(float))

    def test_maxpool_general_path(self, rng):
        from numpy.lib.stride_tricks import sliding_window_view
        x = rng.normal(size=(1, 9, 7, 2))
        ref = sliding_window_view(x, (3, 3), axis=(1, 2))[:, ::2, ::2].max(axis=(-2, -1))
        assert np.array_equal(ag.maxpool2d(Tensor(x), 3, 2).data, ref)

    def test_maxpool_ties_pick_one(self):
        xt = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        ag.sum_all(ag.maxpool2d(xt)).backward()
        assert xt.grad.sum() == 1.0

    def test_resize_identity(self, rng):
        x = rng.normal(size=(1, 4, 5, 2))
        assert np.allclose(ag.resize_bilinear(Tensor(x), 4, 5).data, x)

    def test_resample_rows_sum_to_one(self):
        for aa in (False, True):
            m = ag.resample_matrix(17, 5, antialias=aa)
            assert np.allclose(m.sum(axis=1), 1.0)

    def test_dropout_eval_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 3)))
        assert ag.dropout(x, 0.5, training=False) is x

    def test_dropout_expectation(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones(10_000))
        out = ag.dropout(x, 0.5, training=True, rng=rng).data
        assert out.mean() == pytest.approx(1.0, rel=0.02)
        assert set(np.unique(out)) <= {0.0, 2.0}


class TestBackward:
    def test_mse_gradient(self):
        x = Tensor(np.array([1.0, 2.0, 4.0]), requires_grad=True)
        ag.mse(x, Tensor(np.array([0.0, 2.0, 1.0]))).backward()
        assert np.allclose(x.grad, 2 * np.array([1.0, 0.0, 3.0]) / 3)

    def test_softsign_derivative(self):
        x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
        ag.sum_all(ag.softsign(x)).backward()
        assert x.grad.tolist() == [1.0, 0.25]

    def test_without_graph_is_invalid_state(self):
        with pytest.raises(InvalidState):
            Tensor([1.0]).backward()

    def test_non_scalar_needs_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(InvalidArgument):
            ag.scale(x, 2.0).backward()

    def test_gradients_reset_between_calls(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = ag.sum_all(ag.mul(x, x))
        y.backward()
        y.backward()
        assert x.grad.tolist() == [6.0]

    def test_shared_input_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        ag.sum_all(ag.add(ag.scale(x, 3.0), ag.mul(x, x))).backward()
        assert x.grad.tolist() == [7.0]

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with no_grad():
            assert not ag.is_grad_enabled()
            y = ag.scale(x, 2.0)
        assert ag.is_grad_enabled()
        assert not y.requires_grad and y.parents == ()

    def test_topological_order(self):
        a = Tensor(np.ones(1), requires_grad=True)
        b = ag.scale(a, 2.0)
        c = ag.add(b, a)
        order = ag.topological_order(c)
        assert order.index(a) < order.index(b) < order.index(c)


class TestErrors:
    def test_shape_error_names_node(self):
        with pytest.raises(ShapeError, match=r"conv2d\[fire3\]"):
            ag.conv2d(Tensor(np.ones((1, 4, 4, 3))), Tensor(np.ones((1, 1, 2, 4))), name="fire3")

    @pytest.mark.parametrize("call", [
        lambda: ag.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,)))),
        lambda: ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))),
        lambda: ag.mse(Tensor(np.ones(2)), Tensor(np.ones(3))),
        lambda: ag.concat([Tensor(np.ones((1, 2, 2, 1))), Tensor(np.ones((1, 3, 2, 1)))]),
        lambda: ag.maxpool2d(Tensor(np.ones((1, 1, 4, 1)))),
        lambda: ag.global_avg_pool(Tensor(np.ones((2, 2)))),
        lambda: ag.reshape(Tensor(np.ones(6)), (4, 2)),
    ])
    def test_shape_mismatch(self, call):
        with pytest.raises(ShapeError):
            call()

    def test_dropout_args(self):
        with pytest.raises(InvalidArgument):
            ag.dropout(Tensor(np.ones(2)), 1.0, True, np.random.default_rng(0))
        with pytest.raises(InvalidArgument):
            ag.dropout(Tensor(np.ones(2)), 0.5, True, None)


class TestFiniteDiff:
    def test_square(self):
        assert finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]))[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        assert np.all(finite_diff_grad(lambda x: 1.0, np.zeros(4)) == 0)


@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_softsign_bounded(x):
    out = ag.softsign(Tensor(x)).data
    assert np.all(np.abs(out) < 1)
