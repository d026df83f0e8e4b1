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

from cpnet.fv_graph import (
    FvMesh,
    cartesian_mesh,
    channel_mesh,
    build_graph,
    add_ghost_edges,
    mark_known_value_nodes,
    near_wall_nodes,
    ScalingSpec,
    normalize,
    denormalize,
    normalize_increment,
    denormalize_increment,
    CHANNEL_BOUNDARIES,
)
from cpnet.utils import MeshError, ShapeError


class MeshTests(unittest.TestCase):
    def test_periodic_cartesian_mesh(self):
        mesh = cartesian_mesh(4, 3, 0.5, 0.25)
        self.assertEqual(mesh.n_cells, 12)
        self.assertEqual(mesh.n_faces, 24)
        self.assertEqual(mesh.boundary_types, ())
        np.testing.assert_allclose(mesh.volumes, 0.125)
        np.testing.assert_allclose(mesh.centers[1], [0.25, 0.375])

    def test_channel_boundaries(self):
        mesh = channel_mesh(6, 4, rng=np.random.default_rng(0))
        self.assertEqual(mesh.boundary_types, CHANNEL_BOUNDARIES)
        faces = mesh.boundary_faces()
        self.assertEqual([len(faces[t]) for t in CHANNEL_BOUNDARIES], [4, 4, 6, 6])
        self.assertAlmostEqual(mesh.volumes.sum(), 2.0)
        self.assertTrue(np.all(mesh.face_cells[mesh.interior_faces(), 1] >= 0))

    def test_jitter_is_reproducible(self):
        a = channel_mesh(rng=np.random.default_rng(3))
        b = channel_mesh(rng=np.random.default_rng(3))
        np.testing.assert_array_equal(a.centers, b.centers)
        self.assertGreater(np.ptp(a.volumes), 0.0)

    def test_invalid_meshes(self):
        centers = [(0.5, 0.5), (1.5, 0.5)]
        with self.assertRaises(MeshError):
            FvMesh(centers, [1.0, 0.0], [(0, 1)], [1.0], [(1.0, 0.5)])
        with self.assertRaises(MeshError):
            FvMesh(centers, [1.0, 1.0], [(0, 2)], [1.0], [(1.0, 0.5)])
        with self.assertRaises(MeshError):
            FvMesh(centers, [1.0, 1.0], [(0, -1)], [1.0], [(0.0, 0.5)])
        with self.assertRaises(MeshError):
            FvMesh(centers, [1.0, 1.0], [(0, 1)], [1.0], [(1.0, 0.5)], ['wall'])

    def test_save_and_load(self):
        mesh = channel_mesh(5, 3, rng=np.random.default_rng(1))
        with tempfile.TemporaryDirectory() as directory:
            mesh.save(directory)
            loaded = FvMesh.load(directory)
        np.testing.assert_array_equal(loaded.centers, mesh.centers)
        np.testing.assert_array_equal(loaded.face_cells, mesh.face_cells)
        np.testing.assert_array_equal(loaded.face_shifts, mesh.face_shifts)
        self.assertEqual(loaded.face_types, mesh.face_types)
        self.assertEqual(loaded.name, 'channel')

    def test_load_rejects_garbage(self):
        with tempfile.TemporaryDirectory() as directory:
            with open(Path(directory) / 'mesh.txt', 'w') as f:
                f.write('cell 0 0.5 0.5\n')
            with self.assertRaises(MeshError):
                FvMesh.load(directory)


class GraphTests(unittest.TestCase):
    def setUp(self):
        self.mesh = channel_mesh(6, 4, rng=np.random.default_rng(2))
        self.graph = build_graph(self.mesh)

    def test_two_edges_per_interior_face(self):
        self.assertEqual(self.graph.n_nodes, self.mesh.n_cells)
        self.assertEqual(self.graph.n_edges, 2 * len(self.mesh.interior_faces()))

    def test_edge_vectors_antisymmetric_unit(self):
        vectors = self.graph.edge_vectors
        np.testing.assert_array_equal(vectors[0::2], -vectors[1::2])
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-12)
        i, j = self.graph.edges[0]
        expected = self.mesh.centers[i] - self.mesh.centers[j]
        np.testing.assert_allclose(vectors[0], expected / np.linalg.norm(expected))

    def test_flux_weights(self):
        faces = self.mesh.interior_faces()
        i = self.graph.edges[0, 0]
        self.assertAlmostEqual(self.graph.flux_weights[0], self.mesh.face_areas[faces[0]] / self.mesh.volumes[i])

    def test_row_of_cells_by_hand(self):
        centers = [(0.5, 0.5), (1.5, 0.5), (2.5, 0.5)]
        mesh = FvMesh(centers, [1.0, 1.0, 1.0], [(0, 1), (1, 2)], [1.0, 1.0], [(1.0, 0.5), (2.0, 0.5)])
        graph = build_graph(mesh)
        self.assertEqual(graph.edges.tolist(), [[0, 1], [1, 0], [1, 2], [2, 1]])
        np.testing.assert_allclose(graph.edge_vectors[0], [-1.0, 0.0])
        np.testing.assert_array_equal(graph.flux_weights, 1.0)
        small = FvMesh([(0.25, 0.25), (0.75, 0.25)], [0.25, 0.25], [(0, 1)], [0.5], [(0.5, 0.25)])
        np.testing.assert_array_equal(build_graph(small).flux_weights, [2.0, 2.0])

    def test_flux_weights_sum_to_interior_perimeter(self):
        mesh = cartesian_mesh(4, 3, 0.5, 0.25)
        graph = build_graph(mesh)
        totals = np.zeros(mesh.n_cells)
        np.add.at(totals, graph.edges[:, 0], graph.flux_weights * mesh.volumes[graph.edges[:, 0]])
        np.testing.assert_allclose(totals, 2 * (0.5 + 0.25))
        self.assertEqual(add_ghost_edges(graph, mesh, []).n_ghost_edges, 0)

    def test_periodic_edges_use_nearest_image(self):
        mesh = cartesian_mesh(4, 4, 0.25, 0.25)
        graph = build_graph(mesh)
        # Every edge joins neighbours one cell apart along x or y:
        np.testing.assert_allclose(np.abs(graph.edge_vectors).sum(axis=1), 1.0)

    def test_ghost_edges(self):
        graph = add_ghost_edges(self.graph, self.mesh, ['wall', 'heated'])
        self.assertEqual(graph.ghost_types, ('wall', 'heated'))
        self.assertEqual(graph.n_ghost_edges, 12)
        wall = graph.ghosts['wall']
        np.testing.assert_allclose(wall.vectors, [[0.0, -1.0]] * 6, atol=1e-12)
        faces = self.mesh.boundary_faces()['wall']
        np.testing.assert_allclose(wall.weights, self.mesh.face_areas[faces] / self.mesh.volumes[wall.nodes])
        raw = add_ghost_edges(self.graph, self.mesh, ['wall'], unit_norm=False, flux_weight=False)
        np.testing.assert_array_equal(raw.ghosts['wall'].weights, 1.0)
        self.assertTrue(np.all(np.linalg.norm(raw.ghosts['wall'].vectors, axis=1) < 1.0))
        with self.assertRaises(MeshError):
            add_ghost_edges(self.graph, self.mesh, ['roof'])

    def test_single_wall_face_gives_single_ghost_edge(self):
        centers = [(0.5, 0.5), (1.5, 0.5)]
        mesh = FvMesh(centers, [1.0, 1.0], [(0, 1), (1, -1)], [1.0, 1.0], [(1.0, 0.5), (1.5, 0.0)], [None, 'wall'])
        graph = add_ghost_edges(build_graph(mesh), mesh, ['wall'])
        self.assertEqual(len(graph.ghosts['wall']), 1)
        self.assertEqual(graph.ghosts['wall'].nodes.tolist(), [1])

    def test_known_value_nodes(self):
        graph = mark_known_value_nodes(self.graph, ['inlet', 'outlet'])
        self.assertEqual(len(graph.known_nodes), 8)
        self.assertEqual(graph.known_types, ('inlet', 'outlet'))
        near = near_wall_nodes(graph, ['wall'])
        self.assertEqual(len(near), 6)
        self.assertEqual(len(graph.known_nodes), 8)

    def test_permuted(self):
        graph = mark_known_value_nodes(add_ghost_edges(self.graph, self.mesh, ['wall']), ['inlet'])
        perm = np.random.default_rng(4).permutation(graph.n_nodes)
        relabelled = graph.permuted(perm)
        np.testing.assert_array_equal(relabelled.positions[perm], graph.positions)
        np.testing.assert_array_equal(relabelled.edges, perm[graph.edges])
        np.testing.assert_array_equal(relabelled.ghosts['wall'].nodes, perm[graph.ghosts['wall'].nodes])
        np.testing.assert_array_equal(relabelled.known_nodes, np.sort(perm[graph.known_nodes]))
        with self.assertRaises(ValueError):
            graph.permuted(np.zeros(graph.n_nodes))

    def test_translation_keeps_edge_vectors(self):
        mesh = cartesian_mesh(4, 3, 0.25, 0.5, periodic=False)
        moved = build_graph(mesh.translated((4.0, -2.0)))
        np.testing.assert_array_equal(moved.edge_vectors, build_graph(mesh).edge_vectors)

    def test_to_csv(self):
        graph = add_ghost_edges(self.graph, self.mesh, ['heated'])
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / 'edges.csv'
            graph.to_csv(str(path))
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'kind,receiver,sender,nx,ny,weight')
        self.assertEqual(len(lines), 1 + graph.n_edges + 6)
        self.assertTrue(lines[-1].startswith('ghost:heated,'))


class ScalingTests(unittest.TestCase):
    def test_round_trip(self):
        spec = ScalingSpec.reacting_flow()
        q = np.random.default_rng(5).normal(size=(7, 5)) * [5e5, 200, 200, 2500, 1]
        back = denormalize(normalize(q, spec), spec)
        np.testing.assert_allclose(back, q, rtol=1e-14)
        dq = normalize_increment(q, spec)
        np.testing.assert_allclose(dq, q / (spec.scales() * 0.01))
        np.testing.assert_allclose(denormalize_increment(dq, spec), q, rtol=1e-14)

    def test_channel_subset_and_errors(self):
        spec = ScalingSpec.reacting_flow()
        np.testing.assert_array_equal(spec.scales(['T']), [2500.0])
        with self.assertRaises(KeyError):
            spec.scales(['rho'])
        with self.assertRaises(ShapeError):
            normalize(np.ones((3, 2)), spec)
        with self.assertRaises(ValueError):
            ScalingSpec({'c': 0.0})
        with self.assertRaises(ValueError):
            ScalingSpec({})


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
