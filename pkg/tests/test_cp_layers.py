import sys
from pathlib import Path
import tempfile
import unittest

import numpy as np
import pytest

THIS_DIR = Path(__file__).absolute().parent

# Add project root to import path
PROJECT_ROOT = THIS_DIR.parent
if PROJECT_ROOT not in [Path(s).absolute() for s in sys.path]:
    sys.path.insert(0, str(PROJECT_ROOT))

from cpnet.ndtensor import Tensor, Tape, backward, sum_all, square, numerical_gradient
from cpnet.cp_layers import (
    CpDenseParams,
    cp_dense_forward,
    DenseParams,
    dense_forward,
    ConvParams,
    conv_forward,
    CpConvBranch,
    CpConvParams,
    cp_conv_forward,
    CpMpParams,
    GhostEdgeSet,
    cp_mp_forward,
    save_parameters,
    load_parameters,
)
from cpnet.utils import ShapeError, MeshError


class CpDenseTests(unittest.TestCase):
    def test_self_conditioned_layer_squares_its_input(self):
        params = CpDenseParams(1, 1, 1)
        params.assign({'W': [[1.0]], 'B': [[0.0]], 'b': [0.0]})
        u = np.linspace(-2, 2, 9).reshape(-1, 1)
        h = cp_dense_forward(u, u, params)
        np.testing.assert_allclose(h.data, u ** 2)

    def test_homogeneous_quadratic_form(self):
        rng = np.random.default_rng(6)
        Q = rng.normal(size=(2, 2))
        params = CpDenseParams(2, 1, 2)
        params.assign({'W': Q, 'B': np.zeros((1, 2)), 'b': np.zeros(1)})
        for _ in range(3):
            u = rng.normal(size=2)
            self.assertAlmostEqual(cp_dense_forward(u, u, params).data[0], u @ Q @ u, places=12)

    def test_matches_two_stage_loop(self):
        rng = np.random.default_rng(4)
        params = CpDenseParams(3, 2, 2, rng=rng)
        params.assign({'W': params.W.data, 'B': params.B.data, 'b': rng.normal(size=2)})
        u = rng.normal(size=3)
        p = rng.normal(size=2)
        W, B, b = params.W.data, params.B.data, params.b.data
        matrix = np.zeros((2, 3))
        for h in range(2):
            for k in range(3):
                matrix[h, k] = B[h, k] + sum(W[h * 3 + k, m] * p[m] for m in range(2))
        expected = np.array([sum(matrix[h, k] * u[k] for k in range(3)) + b[h] for h in range(2)])
        np.testing.assert_allclose(cp_dense_forward(u, p, params).data, expected, rtol=0, atol=1e-12)

    def test_linear_in_input_for_fixed_condition(self):
        rng = np.random.default_rng(5)
        params = CpDenseParams(3, 2, 2, rng=rng)
        params.assign({'W': params.W.data, 'B': params.B.data, 'b': np.zeros(2)})
        p = rng.normal(size=2)
        x, y = rng.normal(size=3), rng.normal(size=3)

        def f(u):
            return cp_dense_forward(u, p, params).data

        np.testing.assert_allclose(f(x + y), f(x) + f(y), atol=1e-12)
        np.testing.assert_allclose(f(2.5 * x), 2.5 * f(x), atol=1e-12)

    def test_weights_vary_with_condition(self):
        rng = np.random.default_rng(0)
        params = CpDenseParams(3, 2, 2, rng=rng)
        u = np.ones(3)
        a = cp_dense_forward(u, np.array([1.0, 0.0]), params).data
        b = cp_dense_forward(u, np.array([0.0, 1.0]), params).data
        self.assertEqual(a.shape, (2,))
        self.assertFalse(np.allclose(a, b))

    def test_parameter_count(self):
        params = CpDenseParams(3, 4, 5, rng=np.random.default_rng(0))
        self.assertEqual(params.n_parameters(), CpDenseParams.count(3, 4, 5))
        self.assertEqual(CpDenseParams.count(3, 4, 5), 4 * 3 * 5 + 4 * 3 + 4)

    def test_shape_mismatch(self):
        params = CpDenseParams(3, 2, 2)
        with self.assertRaises(ShapeError):
            cp_dense_forward(np.ones((4, 3)), np.ones((5, 2)), params)
        with self.assertRaises(ShapeError):
            cp_dense_forward(np.ones((4, 2)), np.ones((4, 2)), params)

    def test_unknown_activation(self):
        with self.assertRaises(ValueError):
            CpDenseParams(1, 1, 1, inner='tanh')

    def test_gradient(self):
        rng = np.random.default_rng(1)
        params = CpDenseParams(2, 3, 2, inner='swish', outer='swish', rng=rng)
        u = rng.normal(size=(4, 2))
        p = rng.normal(size=(4, 2))

        def f():
            return sum_all(square(cp_dense_forward(u, p, params)))

        with Tape() as tape:
            loss = f()
        grads = backward(tape, loss, params.parameters())
        for tensor, grad in zip(params.parameters(), grads):
            expected = numerical_gradient(lambda: f().item(), tensor)
            np.testing.assert_allclose(grad, expected, rtol=1e-5, atol=1e-6)

    def test_dense_layer(self):
        params = DenseParams(2, 1, activation='relu')
        params.assign({'W': [[1.0, -1.0]], 'b': [0.5]})
        out = dense_forward(np.array([[1.0, 3.0], [2.0, 0.0]]), params)
        np.testing.assert_allclose(out.data, [[0.0], [2.5]])


class CpConvTests(unittest.TestCase):
    def test_plain_conv_with_bias(self):
        params = ConvParams((3, 1, 1), bias=True)
        params.assign({'kernel': np.array([1.0, -2.0, 1.0]).reshape(3, 1, 1), 'bias': [1.0]})
        u = np.ones((6, 1))
        np.testing.assert_allclose(conv_forward(u, params).data, np.ones((6, 1)))

    def test_condition_field_scales_pointwise(self):
        laplacian = np.array([1.0, -2.0, 1.0]).reshape(3, 1, 1)
        params = CpConvParams([CpConvBranch(laplacian, condition=0, trainable=False)])
        x = np.arange(8.0)
        u = (x ** 2).reshape(-1, 1)
        p = np.linspace(0.5, 1.0, 8)
        out = cp_conv_forward(u, [p], params).data[:, 0]
        # Interior second differences of x^2 are 2:
        np.testing.assert_allclose(out[1:-1], 2 * p[1:-1])
        self.assertEqual(params.n_parameters(), 0)

    def test_scalar_condition(self):
        kernel = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
        params = CpConvParams([CpConvBranch(kernel), CpConvBranch(kernel, condition=1)])
        u = np.arange(5.0).reshape(-1, 1)
        out = cp_conv_forward(u, [2.0, 3.0], params).data
        np.testing.assert_allclose(out, 5 * u)

    def test_y_axis_branch(self):
        kernel = np.zeros((3, 1, 1, 1))
        kernel[2, 0, 0, 0] = 1.0
        u = np.random.default_rng(0).normal(size=(4, 5, 1))
        x_branch = CpConvParams([CpConvBranch(kernel, axis='x')])
        y_branch = CpConvParams([CpConvBranch(kernel, axis='y')])
        np.testing.assert_allclose(cp_conv_forward(u, [1.0], x_branch).data, np.roll(u, -1, axis=0))
        np.testing.assert_allclose(cp_conv_forward(u, [1.0], y_branch).data, np.roll(u, -1, axis=1))

    def test_missing_condition_field(self):
        params = CpConvParams([CpConvBranch(np.ones((3, 1, 1)), condition=2)])
        with self.assertRaises(ShapeError):
            cp_conv_forward(np.ones((5, 1)), [1.0], params)

    def test_non_periodic_rejected(self):
        params = CpConvParams([CpConvBranch(np.ones((3, 1, 1)))])
        with self.assertRaises(ValueError):
            cp_conv_forward(np.ones((5, 1)), [1.0], params, periodic=False)

    def test_global_condition(self):
        kernel = np.array([1.0, -2.0, 1.0]).reshape(3, 1, 1)
        params = CpConvParams([CpConvBranch(kernel), CpConvBranch(np.ones((3, 1, 1)), condition=1)])
        u = np.array([0.0, 1.0, 0.0]).reshape(-1, 1)
        out = cp_conv_forward(u, [0.5, 0.0], params).data[:, 0]
        np.testing.assert_allclose(out, [0.5, -1.0, 0.5])

    def test_shared_kernel_tensor(self):
        shared = Tensor(np.ones((3, 1, 1)), requires_grad=True)
        params = CpConvParams([CpConvBranch(shared), CpConvBranch(shared, condition=1)])
        self.assertIs(params.branches[0].kernel, params.branches[1].kernel)


class CpMpTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.edges = np.array([[0, 1], [1, 0], [1, 2], [2, 1]])
        self.encodings = self.rng.normal(size=(4, 3))
        self.weights = np.ones(4)

    def test_single_edge_by_hand(self):
        params = CpMpParams(1, 3, 2, weight_activation='identity', message_activation='identity')
        params.assign({'W': np.zeros((6, 2)), 'B': np.ones((3, 2))})
        u = np.array([[1.0], [2.0]])
        h = cp_mp_forward(u, np.ones((1, 2)), [[0, 1]], [2.0], [], params).data
        np.testing.assert_allclose(h, [[6.0, 6.0, 6.0], [0.0, 0.0, 0.0]])

    def test_output_shape_and_isolated_nodes(self):
        params = CpMpParams(2, 5, 3, rng=self.rng)
        u = self.rng.normal(size=(4, 2))
        h = cp_mp_forward(u, self.encodings, self.edges, self.weights, [], params)
        self.assertEqual(h.shape, (4, 5))
        # Node 3 receives no messages:
        np.testing.assert_array_equal(h.data[3], np.zeros(5))

    def test_flux_weights_scale_messages(self):
        params = CpMpParams(2, 5, 3, rng=self.rng)
        u = self.rng.normal(size=(4, 2))
        h1 = cp_mp_forward(u, self.encodings, self.edges, self.weights, [], params).data
        h2 = cp_mp_forward(u, self.encodings, self.edges, 2 * self.weights, [], params).data
        np.testing.assert_allclose(h2, 2 * h1)

    def test_ghost_edges(self):
        params = CpMpParams(2, 5, 3, boundary_types=['wall'], rng=self.rng)
        u = self.rng.normal(size=(4, 2))
        ghost = GhostEdgeSet('wall', [3], self.rng.normal(size=(1, 3)), [1.0])
        with_ghost = cp_mp_forward(u, self.encodings, self.edges, self.weights, [ghost], params)
        without = cp_mp_forward(u, self.encodings, self.edges, self.weights, [], params)
        np.testing.assert_allclose(with_ghost.data[:3], without.data[:3])
        self.assertEqual(params.n_parameters(), CpMpParams.count(2, 5, 3, 1))
        with self.assertRaises(MeshError):
            cp_mp_forward(u, self.encodings, self.edges, self.weights, [GhostEdgeSet('inlet', [0], np.ones((1, 3)), [1.0])], params)

    def test_edge_endpoint_out_of_range(self):
        params = CpMpParams(2, 5, 3, rng=self.rng)
        with self.assertRaises(IndexError):
            cp_mp_forward(np.ones((2, 2)), self.encodings, self.edges, self.weights, [], params)

    def test_permuting_nodes_permutes_output(self):
        params = CpMpParams(2, 4, 3, rng=self.rng)
        u = self.rng.normal(size=(4, 2))
        perm = np.array([2, 0, 3, 1])
        inverse = np.argsort(perm)
        h = cp_mp_forward(u, self.encodings, self.edges, self.weights, [], params).data
        h_perm = cp_mp_forward(u[perm], self.encodings, inverse[self.edges], self.weights, [], params).data
        np.testing.assert_allclose(h_perm, h[perm])


class ParameterStreamTests(unittest.TestCase):
    def test_save_and_load(self):
        params = CpMpParams(2, 3, 4, boundary_types=['wall', 'heated'], rng=np.random.default_rng(3))
        with tempfile.TemporaryDirectory() as directory:
            save_parameters(directory, params)
            values = load_parameters(directory)
            with open(Path(directory) / 'params.txt') as f:
                manifest = f.read().splitlines()
        self.assertEqual(list(values), [name for name, _ in params.named_tensors()])
        self.assertEqual(manifest[1], 'W [12,4] 0')
        fresh = CpMpParams(2, 3, 4, boundary_types=['wall', 'heated'])
        fresh.assign(values)
        for (name, a), (_, b) in zip(params.named_tensors(), fresh.named_tensors()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_assign_checks_names_and_shapes(self):
        params = DenseParams(2, 1)
        with self.assertRaises(KeyError):
            params.assign({'W': np.zeros((1, 2))})
        with self.assertRaises(ShapeError):
            params.assign({'W': np.zeros((2, 1)), 'b': np.zeros(1)})


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
