import sys
from pathlib import Path
import threading
import unittest

import numpy as np
import pytest

THIS_DIR = Path(__file__).absolute().parent

# Add project root to import path
PROJECT_ROOT = THIS_DIR.parent
if PROJECT_ROOT not in [Path(s).absolute() for s in sys.path]:
    sys.path.insert(0, str(PROJECT_ROOT))

from cpnet.ndtensor import (
    Tensor,
    Tape,
    active_tape,
    backward,
    square,
    sum_all,
    mean_all,
    matmul,
    bmatvec,
    concat,
    getitem,
    scatter_add_rows,
    add_rowwise,
    scale_rows,
    swap_axes01,
    activation,
    layer_norm,
    conv1d_periodic,
    conv2d_periodic,
    depthwise_conv2d_periodic,
    AdamState,
    adam_step,
    ExponentialDecay,
    ConstantRate,
    minimize,
    numerical_gradient,
)
from cpnet.utils import ShapeError, NonFiniteError


def check_gradient(testcase, f, tensors, rtol=1e-5, atol=1e-6):
    """Compare tape gradients of the scalar f() against central differences"""
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, tensors)
    for tensor, grad in zip(tensors, grads):
        expected = numerical_gradient(lambda: f().item(), tensor)
        np.testing.assert_allclose(grad, expected, rtol=rtol, atol=atol)


class TapeTests(unittest.TestCase):
    def test_untracked_ops_are_not_recorded(self):
        a = Tensor(np.ones(3))
        with Tape() as tape:
            sum_all(square(a))
        self.assertEqual(len(tape), 0)

    def test_tracking_spreads_from_parameters(self):
        w = Tensor(np.ones(3), requires_grad=True)
        x = Tensor(np.arange(3.0))
        with Tape() as tape:
            y = w * x
            z = sum_all(y)
        self.assertEqual(len(tape), 2)
        self.assertTrue(tape.tracks(y))
        self.assertTrue(tape.tracks(z))
        self.assertFalse(tape.tracks(x))

    def test_tapes_nest(self):
        self.assertIsNone(active_tape())
        with Tape() as outer:
            with Tape() as inner:
                self.assertIs(active_tape(), inner)
            self.assertIs(active_tape(), outer)
        self.assertIsNone(active_tape())

    def test_tape_is_per_thread(self):
        seen = []
        with Tape():
            thread = threading.Thread(target=lambda: seen.append(active_tape()))
            thread.start()
            thread.join()
        self.assertEqual(seen, [None])

    def test_unused_parameter_gets_zero_gradient(self):
        w = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            loss = sum_all(square(w))
        grads = backward(tape, loss, [w, unused])
        np.testing.assert_array_equal(grads[0], 2 * np.ones(2))
        np.testing.assert_array_equal(grads[1], np.zeros((2, 2)))

    def test_reused_node_accumulates(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        with Tape() as tape:
            loss = sum_all(w * w + w)
        backward(tape, loss, [w])
        np.testing.assert_allclose(w.grad, [7.0])

    def test_non_scalar_loss_rejected(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = w * 2.0
        with self.assertRaises(ShapeError):
            backward(tape, y, [w])

    def test_loss_from_other_tape_rejected(self):
        w = Tensor(np.ones(2), requires_grad=True)
        with Tape():
            loss = sum_all(w)
        with Tape() as other:
            pass
        with self.assertRaises(ValueError):
            backward(other, loss, [w])


class OpTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_elementwise_shapes(self):
        a = Tensor(np.ones(3))
        with self.assertRaises(ShapeError):
            a + Tensor(np.ones(4))
        np.testing.assert_array_equal((a * 2.0).data, 2 * np.ones(3))
        np.testing.assert_array_equal((1.0 - a).data, np.zeros(3))

    def test_elementwise_gradients(self):
        a = Tensor(self.rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(self.rng.uniform(1, 2, size=(3, 2)), requires_grad=True)
        s = Tensor(np.array(1.5), requires_grad=True)
        check_gradient(self, lambda: sum_all((a - b) * a / b + s * a), [a, b, s])

    def test_matmul_gradient(self):
        a = Tensor(self.rng.normal(size=(4, 3)), requires_grad=True)
        b = Tensor(self.rng.normal(size=(3, 2)), requires_grad=True)
        check_gradient(self, lambda: mean_all(square(matmul(a, b))), [a, b])
        with self.assertRaises(ShapeError):
            matmul(a, a)

    def test_bmatvec_gradient(self):
        m = Tensor(self.rng.normal(size=(5, 2, 3)), requires_grad=True)
        v = Tensor(self.rng.normal(size=(5, 3)), requires_grad=True)
        expected = np.stack([m.data[i] @ v.data[i] for i in range(5)])
        np.testing.assert_allclose(bmatvec(m, v).data, expected)
        check_gradient(self, lambda: sum_all(square(bmatvec(m, v))), [m, v])

    def test_concat_and_getitem_gradients(self):
        a = Tensor(self.rng.normal(size=(4, 2)), requires_grad=True)
        b = Tensor(self.rng.normal(size=(4, 3)), requires_grad=True)
        index = np.array([0, 2, 2, 3])
        check_gradient(self, lambda: sum_all(square(getitem(concat([a, b]), index))), [a, b])

    def test_scatter_add_rows(self):
        x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        out = scatter_add_rows(x, [1, 1, 0], 3)
        np.testing.assert_array_equal(out.data, [[4, 5], [2, 4], [0, 0]])
        check_gradient(self, lambda: sum_all(square(scatter_add_rows(x, [1, 1, 0], 3))), [x])
        with self.assertRaises(IndexError):
            scatter_add_rows(x, [0, 1, 3], 3)
        with self.assertRaises(ShapeError):
            scatter_add_rows(x, [0, 1], 3)

    def test_rowwise_ops(self):
        x = Tensor(self.rng.normal(size=(4, 3)), requires_grad=True)
        v = Tensor(self.rng.normal(size=3), requires_grad=True)
        s = Tensor(self.rng.normal(size=4), requires_grad=True)
        check_gradient(self, lambda: sum_all(square(scale_rows(add_rowwise(x, v), s))), [x, v, s])
        with self.assertRaises(ShapeError):
            add_rowwise(x, Tensor(np.ones(4)))
        with self.assertRaises(ShapeError):
            scale_rows(x, Tensor(np.ones(3)))

    def test_swap_axes(self):
        x = Tensor(self.rng.normal(size=(2, 3, 4)), requires_grad=True)
        self.assertEqual(swap_axes01(x).shape, (3, 2, 4))
        check_gradient(self, lambda: sum_all(square(swap_axes01(x)) * 0.5), [x])

    def test_activations(self):
        x = Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), requires_grad=True)
        np.testing.assert_array_equal(activation('relu', x).data, [0, 0, 0.5, 2.0])
        self.assertIs(activation('identity', x), x)
        sig = 1 / (1 + np.exp(-x.data))
        np.testing.assert_allclose(activation('swish', x).data, x.data * sig)
        check_gradient(self, lambda: sum_all(square(activation('swish', x))), [x])
        with self.assertRaises(ValueError):
            activation('tanh', x)

    def test_swish_does_not_overflow(self):
        x = Tensor(np.array([-1e4, 1e4]))
        with np.errstate(over='raise'):
            out = activation('swish', x).data
        np.testing.assert_allclose(out, [0.0, 1e4])

    def test_layer_norm(self):
        x = Tensor(self.rng.normal(size=(5, 4)) * 3 + 1, requires_grad=True)
        gain = Tensor(self.rng.uniform(0.5, 1.5, size=4), requires_grad=True)
        bias = Tensor(self.rng.normal(size=4), requires_grad=True)
        out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1, rtol=1e-4)
        w = self.rng.normal(size=(5, 4))
        check_gradient(self, lambda: sum_all(layer_norm(x, gain, bias) * w), [x, gain, bias])


class ConvolutionTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_conv1d_is_periodic_cross_correlation(self):
        u = self.rng.normal(size=(7, 1))
        kernel = np.array([1.0, -2.0, 3.0]).reshape(3, 1, 1)
        out = conv1d_periodic(Tensor(u), Tensor(kernel)).data[:, 0]
        expected = np.roll(u[:, 0], 1) - 2 * u[:, 0] + 3 * np.roll(u[:, 0], -1)
        np.testing.assert_allclose(out, expected)

    def test_conv1d_gradient(self):
        u = Tensor(self.rng.normal(size=(6, 2)), requires_grad=True)
        kernel = Tensor(self.rng.normal(size=(3, 2, 3)), requires_grad=True)
        check_gradient(self, lambda: sum_all(square(conv1d_periodic(u, kernel))), [u, kernel])

    def test_even_kernel_rejected(self):
        with self.assertRaises(ShapeError):
            conv1d_periodic(Tensor(np.ones((5, 1))), Tensor(np.ones((2, 1, 1))))
        with self.assertRaises(ShapeError):
            conv2d_periodic(Tensor(np.ones((5, 5, 1))), Tensor(np.ones((3, 2, 1, 1))))

    def test_conv2d_axes(self):
        u = self.rng.normal(size=(5, 4, 1))
        kernel = np.zeros((3, 3, 1, 1))
        # Weight on the first-axis neighbour i + 1 only:
        kernel[2, 1, 0, 0] = 1.0
        out = conv2d_periodic(Tensor(u), Tensor(kernel)).data
        np.testing.assert_allclose(out, np.roll(u, -1, axis=0))

    def test_conv2d_gradient(self):
        u = Tensor(self.rng.normal(size=(4, 5, 2)), requires_grad=True)
        kernel = Tensor(self.rng.normal(size=(3, 3, 2, 2)), requires_grad=True)
        check_gradient(self, lambda: sum_all(square(conv2d_periodic(u, kernel))), [u, kernel])

    def test_depthwise_matches_per_channel_conv(self):
        u = self.rng.normal(size=(5, 5, 2))
        kernel = self.rng.normal(size=(3, 3, 2))
        out = depthwise_conv2d_periodic(Tensor(u), Tensor(kernel)).data
        for c in range(2):
            single = conv2d_periodic(Tensor(u[..., c : c + 1]), Tensor(kernel[:, :, c : c + 1, None]))
            np.testing.assert_allclose(out[..., c], single.data[..., 0])

    def test_depthwise_gradient(self):
        u = Tensor(self.rng.normal(size=(4, 4, 2)), requires_grad=True)
        kernel = Tensor(self.rng.normal(size=(3, 3, 2)), requires_grad=True)
        check_gradient(
            self, lambda: sum_all(square(depthwise_conv2d_periodic(u, kernel))), [u, kernel]
        )


class AdamTests(unittest.TestCase):
    def test_first_step_moves_by_lr(self):
        w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        state = AdamState([w], lr=0.1)
        w.grad = np.array([0.5, -3.0])
        adam_step(state)
        # Bias correction makes the first step exactly lr * sign(grad), up to eps:
        np.testing.assert_allclose(w.data, [0.9, -0.9], rtol=1e-6)

    def test_zero_gradient_leaves_params(self):
        w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        state = AdamState([w], lr=0.1)
        adam_step(state, [w], [np.zeros(2)])
        np.testing.assert_array_equal(w.data, [1.0, -1.0])
        self.assertEqual(state.step_count, 1)

    def test_descends_a_parabola(self):
        theta = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState([theta], lr=0.1)
        previous = 1.0
        for _ in range(10):
            adam_step(state, [theta], [2 * theta.data])
            self.assertLess(abs(theta.data[0]), previous)
            previous = abs(theta.data[0])

    def test_mismatched_gradients_rejected(self):
        w = Tensor(np.ones(2), requires_grad=True)
        state = AdamState([w])
        with self.assertRaises(ShapeError):
            adam_step(state, [w], [np.ones(3)])

    def test_exponential_decay_endpoints(self):
        schedule = ExponentialDecay(0.01, 1e-4, 300)
        self.assertAlmostEqual(schedule(0), 0.01)
        self.assertAlmostEqual(schedule(299), 1e-4)
        self.assertEqual(ExponentialDecay(0.1, 0.01, 1)(0), 0.1)
        with self.assertRaises(ValueError):
            ExponentialDecay(0.0, 0.1, 10)

    def test_minimize_fits_linear_model(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 3))
        true_w = np.array([[1.0], [-2.0], [0.5]])
        samples = [(x[i : i + 1], x[i : i + 1] @ true_w) for i in range(20)]
        w = Tensor(np.zeros((3, 1)), requires_grad=True)

        def loss_fn(sample):
            xi, yi = sample
            return mean_all(square(matmul(Tensor(xi), w) - Tensor(yi)))

        curve = minimize([w], samples, loss_fn, 200, ExponentialDecay(0.05, 1e-3, 200), rng=rng)
        self.assertEqual(len(curve), 200)
        self.assertLess(curve[-1], 1e-4)
        np.testing.assert_allclose(w.data, true_w, atol=1e-2)

    def test_minimize_raises_on_non_finite_loss(self):
        w = Tensor(np.ones(1), requires_grad=True)
        with self.assertRaises(NonFiniteError):
            minimize([w], [None], lambda s: sum_all(w * np.inf), 1, ConstantRate(0.1))


class OracleTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)

    def test_matmul_matches_triple_loop(self):
        a = self.rng.normal(size=(4, 3))
        b = self.rng.normal(size=(3, 2))
        expected = np.zeros((4, 2))
        for i in range(4):
            for j in range(2):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, expected, rtol=0, atol=1e-12)

    def test_conv1d_matches_index_loop(self):
        n, k = 16, 3
        u = self.rng.normal(size=(n, 1))
        kernel = self.rng.normal(size=(k, 1, 1))
        expected = np.zeros(n)
        for i in range(n):
            for d in range(k):
                expected[i] += kernel[d, 0, 0] * u[(i + d - 1) % n, 0]
        out = conv1d_periodic(Tensor(u), Tensor(kernel)).data[:, 0]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_conv2d_matches_quadruple_loop(self):
        n = 8
        u = self.rng.normal(size=(n, n, 1))
        kernel = self.rng.normal(size=(3, 3, 1, 1))
        expected = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                for dx in range(3):
                    for dy in range(3):
                        expected[i, j] += kernel[dx, dy, 0, 0] * u[(i + dx - 1) % n, (j + dy - 1) % n, 0]
        out = conv2d_periodic(Tensor(u), Tensor(kernel)).data[..., 0]
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)

    def test_layer_norm_small_row(self):
        out = layer_norm(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        np.testing.assert_allclose(out[0], [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_swish_gradient_at_points(self):
        x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
        check_gradient(self, lambda: sum_all(activation('swish', x)), [x])


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
