import sys
from pathlib import Path
from dataclasses import replace
from collections import deque
import tempfile
import unittest

import numpy as np
import pytest

THIS_DIR = Path(__file__).absolute().parent

# Add project root to import path
PROJECT_ROOT = THIS_DIR.parent
if PROJECT_ROOT not in [Path(s).absolute() for s in sys.path]:
    sys.path.insert(0, str(PROJECT_ROOT))

from cpnet.cp_gnet import (
    CpGnetConfig,
    CpGnet,
    GNet,
    build_model,
    matched_baseline_width,
    baseline_config,
    make_training_pairs,
    increment_loss,
    train,
    rollout,
    save_model,
    load_model,
    model_graph,
)
from cpnet.fv_graph import (
    cartesian_mesh,
    channel_mesh,
    build_graph,
    add_ghost_edges,
    mark_known_value_nodes,
    ScalingSpec,
)
from cpnet.ndtensor import Tape, backward, numerical_gradient
from cpnet.pde_lab import Trajectory
from cpnet.utils import ConfigError, MeshError, ShapeError


def channel_graph(nx=6, ny=4, ghosts=('wall', 'heated'), known=('inlet', 'outlet')):
    mesh = channel_mesh(nx, ny, rng=np.random.default_rng(0))
    graph = add_ghost_edges(build_graph(mesh), mesh, list(ghosts))
    return mark_known_value_nodes(graph, list(known)), mesh


def hop_distances(graph, source):
    neighbours = [[] for _ in range(graph.n_nodes)]
    for i, j in graph.edges:
        neighbours[i].append(j)
    distance = np.full(graph.n_nodes, -1)
    distance[source] = 0
    queue = deque([source])
    while queue:
        i = queue.popleft()
        for j in neighbours[i]:
            if distance[j] < 0:
                distance[j] = distance[i] + 1
                queue.append(j)
    return distance


class ConfigTests(unittest.TestCase):
    def test_published_counts(self):
        self.assertEqual(CpGnet.count(CpGnetConfig.published()), 1272953)
        self.assertEqual(GNet.count(CpGnetConfig.published_baseline()), 2016949)

    def test_counts_match_built_models(self):
        config = CpGnetConfig.desk()
        self.assertEqual(CpGnet(config, np.random.default_rng(0)).n_parameters(), CpGnet.count(config))
        self.assertEqual(GNet(config, np.random.default_rng(0)).n_parameters(), GNet.count(config))
        no_norm = replace(config, layer_norm=False)
        self.assertEqual(CpGnet(no_norm).n_parameters(), CpGnet.count(no_norm))

    def test_matched_baseline(self):
        config = CpGnetConfig.desk()
        width = matched_baseline_width(config)
        target = CpGnet.count(config)
        gap = abs(GNet.count(replace(config, width=width, edge_width=width)) - target)
        for other in (width - 1, width + 1):
            self.assertLessEqual(gap, abs(GNet.count(replace(config, width=other, edge_width=other)) - target))
        self.assertEqual(baseline_config(config).edge_width, width)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            CpGnetConfig(width=0)
        with self.assertRaises(ConfigError):
            CpGnetConfig(mp_layers=-1)
        with self.assertRaises(ConfigError):
            build_model('transformer', CpGnetConfig())

    def test_one_ghost_weight_set_per_boundary_type(self):
        model = CpGnet(CpGnetConfig.desk(), np.random.default_rng(1))
        for block in model.blocks:
            for layer, _ in block.mp:
                self.assertEqual(list(layer.ghosts), ['wall', 'heated'])

    def test_graph_follows_saved_ghost_settings(self):
        mesh = channel_mesh(6, 4, rng=np.random.default_rng(0))
        raw_config = replace(CpGnetConfig.desk(), ghost_unit_norm=False, ghost_flux_weight=False)
        model = build_model('cp-gnet', raw_config, np.random.default_rng(5))
        with tempfile.TemporaryDirectory() as directory:
            save_model(directory, model)
            loaded = load_model(directory)
        self.assertFalse(loaded.config.ghost_unit_norm)
        self.assertFalse(loaded.config.ghost_flux_weight)
        raw = model_graph(loaded.config, mesh, ['inlet', 'outlet'])
        expected = add_ghost_edges(build_graph(mesh), mesh, ['wall', 'heated'], unit_norm=False, flux_weight=False)
        for t in ('wall', 'heated'):
            np.testing.assert_array_equal(raw.ghosts[t].vectors, expected.ghosts[t].vectors)
            np.testing.assert_array_equal(raw.ghosts[t].weights, 1.0)
        graph, _ = channel_graph()
        np.testing.assert_array_equal(raw.known_nodes, graph.known_nodes)
        unit = model_graph(CpGnetConfig.desk(), mesh)
        np.testing.assert_allclose(np.linalg.norm(unit.ghosts['wall'].vectors, axis=1), 1.0)
        self.assertEqual(len(unit.known_nodes), 0)
        bare = model_graph(replace(CpGnetConfig.desk(), boundary_types=()), mesh)
        self.assertEqual(bare.n_ghost_edges, 0)


class ModelTests(unittest.TestCase):
    def setUp(self):
        self.graph, self.mesh = channel_graph()
        self.config = CpGnetConfig.desk()
        self.q = np.random.default_rng(2).uniform(size=(self.graph.n_nodes, 1))

    def test_output_shapes(self):
        for kind in ('cp-gnet', 'gnet'):
            model = build_model(kind, self.config, np.random.default_rng(3))
            self.assertEqual(model(self.graph, self.q).shape, (self.graph.n_nodes, 1))
        with self.assertRaises(ShapeError):
            model(self.graph, self.q[:-1])

    def test_unknown_ghost_type(self):
        model = CpGnet(replace(self.config, boundary_types=('wall',)), np.random.default_rng(4))
        with self.assertRaises(MeshError):
            model(self.graph, self.q)

    def test_permutation_equivariance(self):
        for kind in ('cp-gnet', 'gnet'):
            model = build_model(kind, self.config, np.random.default_rng(5))
            perm = np.random.default_rng(6).permutation(self.graph.n_nodes)
            q_perm = np.empty_like(self.q)
            q_perm[perm] = self.q
            out = model(self.graph, self.q).data
            out_perm = model(self.graph.permuted(perm), q_perm).data
            np.testing.assert_allclose(out_perm[perm], out, rtol=0, atol=1e-12)

    def test_translation_invariance(self):
        mesh = cartesian_mesh(5, 4, 0.25, 0.5, periodic=False, boundary_names=('inlet', 'outlet', 'wall', 'heated'))
        model = CpGnet(self.config, np.random.default_rng(7))
        q = np.random.default_rng(8).uniform(size=(mesh.n_cells, 1))
        outputs = []
        for m in (mesh, mesh.translated((4.0, -2.0))):
            graph = add_ghost_edges(build_graph(m), m, ['wall', 'heated'])
            outputs.append(model(graph, q).data)
        np.testing.assert_array_equal(outputs[0], outputs[1])

    def test_locality_radius(self):
        model = CpGnet(self.config, np.random.default_rng(9))
        source = 0
        distance = hop_distances(self.graph, source)
        radius = self.config.blocks * self.config.mp_layers
        perturbed = self.q.copy()
        perturbed[source] += 0.5
        before = model(self.graph, self.q).data
        after = model(self.graph, perturbed).data
        far = distance > radius
        self.assertTrue(np.any(far))
        np.testing.assert_array_equal(after[far], before[far])
        self.assertFalse(np.array_equal(after[distance == 1], before[distance == 1]))

    def test_gradient_at_toy_width(self):
        mesh = cartesian_mesh(3, 3, 0.5, 0.5, periodic=False, boundary_names=('inlet', 'outlet', 'wall', 'heated'))
        graph = add_ghost_edges(build_graph(mesh), mesh, ['wall'])
        config = CpGnetConfig(
            width=4,
            edge_width=2,
            condition_width=3,
            blocks=1,
            mp_layers=1,
            dense_layers=1,
            boundary_types=('wall',),
            mp_weight_activation='swish',
            mp_message_activation='swish',
        )
        rng = np.random.default_rng(10)
        model = CpGnet(config, rng)
        q = rng.uniform(size=(mesh.n_cells, 1))
        target = rng.normal(size=(mesh.n_cells, 1))
        params = model.parameters()
        with Tape() as tape:
            loss = increment_loss(model, graph, q, target)
        grads = backward(tape, loss, params)
        for tensor, grad in zip(params, grads):
            expected = numerical_gradient(lambda: increment_loss(model, graph, q, target).item(), tensor)
            np.testing.assert_allclose(grad, expected, rtol=1e-5, atol=1e-6)


class TrainingTests(unittest.TestCase):
    def setUp(self):
        self.graph, self.mesh = channel_graph()
        self.scaling = ScalingSpec({'c': 1.0}, 0.05)
        rng = np.random.default_rng(11)
        frames = np.cumsum(rng.normal(scale=0.01, size=(6, self.graph.n_nodes, 1)), axis=0)
        self.trajectory = Trajectory(frames, None, ('c',))

    def test_noise_compensation_identity(self):
        inputs, targets = make_training_pairs(self.trajectory, self.scaling, 0.0013, 12)
        self.assertEqual(len(inputs), 5)
        for k, (x, y) in enumerate(zip(inputs, targets)):
            self.assertFalse(np.array_equal(x, self.trajectory.frames[k]))
            np.testing.assert_allclose(x + self.scaling.increment * y, self.trajectory.frames[k + 1], rtol=0, atol=1e-15)

    def test_noise_free_pairs(self):
        inputs, targets = make_training_pairs(self.trajectory, self.scaling, 0.0, None, steps=3)
        self.assertEqual(len(inputs), 3)
        np.testing.assert_array_equal(inputs[0], self.trajectory.frames[0])

    def test_train_returns_curve(self):
        model = CpGnet(CpGnetConfig.desk(), np.random.default_rng(13))
        curve = train(model, self.graph, self.trajectory, self.scaling, 2, 0.002, rng=np.random.default_rng(14))
        self.assertEqual(len(curve), 2)
        self.assertTrue(np.all(np.isfinite(curve)))

    def test_rollout_overwrites_known_nodes(self):
        model = CpGnet(CpGnetConfig.desk(), np.random.default_rng(15))
        frames = self.trajectory.frames
        result = rollout(model, self.graph, frames[0], 5, self.scaling, schedule=frames)
        known = self.graph.known_nodes
        self.assertEqual(result.frames.shape, frames.shape)
        self.assertIsNone(result.diverged_at)
        np.testing.assert_array_equal(result.frames[:, known], frames[:, known])
        with self.assertRaises(ValueError):
            rollout(model, self.graph, frames[0], 5, self.scaling)
        with self.assertRaises(ShapeError):
            rollout(model, self.graph, frames[0], 8, self.scaling, schedule=frames)

    def test_save_and_load(self):
        for kind in ('cp-gnet', 'gnet'):
            model = build_model(kind, CpGnetConfig.desk(), np.random.default_rng(16))
            with tempfile.TemporaryDirectory() as directory:
                save_model(directory, model)
                loaded = load_model(directory)
            self.assertEqual(loaded.kind, kind)
            self.assertEqual(loaded.config, model.config)
            q = self.trajectory.frames[0]
            np.testing.assert_array_equal(loaded(self.graph, q).data, model(self.graph, q).data)
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ConfigError):
                load_model(directory)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
