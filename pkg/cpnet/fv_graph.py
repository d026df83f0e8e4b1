"""Finite-volume meshes and the graphs CP-GNet runs on.

An FvMesh is a bag of cells (center, volume) and faces (one or two adjacent cells,
measure, face center). Interior faces of periodic meshes carry a shift vector: the
neighbour cell's center plus the shift is its image on the owner's side of the wrap.
Boundary faces reference one cell (the second cell id is -1) and carry the name of
their boundary type.

build_graph() turns a mesh into an FvGraph with one node per cell, in cell order, and
two directed edges per interior face. Edges are stored as (receiver i, sender j)
pairs with edge vector n_ij = (x_i - x_j) / |x_i - x_j| and flux weight
w_ij = A_ij / Omega_i. Boundary faces can then be turned into typed ghost edges, and
the cells of boundaries with prescribed values marked as known-value nodes.
"""

import os
from collections import OrderedDict

import numpy as np

from cpnet.utils import MeshError, ShapeError

MESH_MANIFEST = 'mesh.txt'
MESH_HEADER = """\
# cpnet finite-volume mesh
# cell <id> <x> <y> <volume>
# face <id> <cell a> <cell b, -1 on boundaries> <measure> <center x> <center y> \
<shift x> <shift y> <boundary type, - for interior faces>"""

CHANNEL_BOUNDARIES = ('inlet', 'outlet', 'wall', 'heated')


class FvMesh(object):
    def __init__(
        self,
        centers,
        volumes,
        face_cells,
        face_areas,
        face_centers,
        face_types=None,
        face_shifts=None,
        name='mesh',
    ):
        self.centers = np.array(centers, dtype=np.float64).reshape(-1, 2)
        self.volumes = np.array(volumes, dtype=np.float64).reshape(-1)
        self.face_cells = np.array(face_cells, dtype=np.intp).reshape(-1, 2)
        self.face_areas = np.array(face_areas, dtype=np.float64).reshape(-1)
        self.face_centers = np.array(face_centers, dtype=np.float64).reshape(-1, 2)
        n_faces = len(self.face_cells)
        if face_types is None:
            face_types = [None] * n_faces
        self.face_types = [None if t in (None, '-') else str(t) for t in face_types]
        if face_shifts is None:
            face_shifts = np.zeros((n_faces, 2))
        self.face_shifts = np.array(face_shifts, dtype=np.float64).reshape(-1, 2)
        self.name = name
        self.validate()

    @property
    def n_cells(self):
        return len(self.volumes)

    @property
    def n_faces(self):
        return len(self.face_cells)

    @property
    def boundary_types(self):
        """Boundary type names in order of first appearance"""
        names = []
        for t in self.face_types:
            if t is not None and t not in names:
                names.append(t)
        return tuple(names)

    def interior_faces(self):
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    def boundary_faces(self):
        """Face indices of each boundary type, keyed in registry order"""
        faces = OrderedDict((t, []) for t in self.boundary_types)
        for f, t in enumerate(self.face_types):
            if t is not None:
                faces[t].append(f)
        return OrderedDict((t, np.array(f, dtype=np.intp)) for t, f in faces.items())

    def validate(self):
        n = self.n_cells
        if len(self.centers) != n:
            raise MeshError('%d cell centers for %d cell volumes' % (len(self.centers), n))
        m = self.n_faces
        for name, array in [
            ('face measures', self.face_areas),
            ('face centers', self.face_centers),
            ('face shifts', self.face_shifts),
            ('face types', self.face_types),
        ]:
            if len(array) != m:
                raise MeshError('%d %s for %d faces' % (len(array), name, m))
        if n and np.min(self.volumes) <= 0:
            raise MeshError('cell %d has non-positive volume' % int(np.argmin(self.volumes)))
        if m and np.min(self.face_areas) <= 0:
            raise MeshError('face %d has non-positive measure' % int(np.argmin(self.face_areas)))
        for f, ((a, b), t) in enumerate(zip(self.face_cells, self.face_types)):
            if a < 0 or a >= n:
                raise MeshError('face %d references missing cell %d' % (f, a))
            if b >= n or b < -1:
                raise MeshError('face %d references missing cell %d' % (f, b))
            if b == -1 and t is None:
                raise MeshError('boundary face %d has no boundary type' % f)
            if b >= 0 and t is not None:
                raise MeshError('interior face %d is tagged with boundary type %s' % (f, t))
            if b == a:
                raise MeshError('face %d joins cell %d to itself' % (f, a))
            if b >= 0:
                offset = self.centers[b] + self.face_shifts[f] - self.centers[a]
                if not np.any(offset):
                    raise MeshError('cells of face %d have coincident centers' % f)
            elif not np.any(self.face_centers[f] - self.centers[a]):
                raise MeshError('boundary face %d is centered on its cell center' % f)

    def translated(self, offset):
        """The same mesh rigidly moved by offset"""
        offset = np.asarray(offset, dtype=np.float64)
        return FvMesh(
            self.centers + offset,
            self.volumes,
            self.face_cells,
            self.face_areas,
            self.face_centers + offset,
            self.face_types,
            self.face_shifts,
            self.name,
        )

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        lines = [MESH_HEADER, 'name = %s' % self.name]
        for i, ((x, y), volume) in enumerate(zip(self.centers, self.volumes)):
            lines.append('cell %d %r %r %r' % (i, float(x), float(y), float(volume)))
        for f in range(self.n_faces):
            a, b = self.face_cells[f]
            cx, cy = self.face_centers[f]
            sx, sy = self.face_shifts[f]
            t = self.face_types[f] or '-'
            values = (f, a, b, float(self.face_areas[f]), float(cx), float(cy), float(sx), float(sy), t)
            lines.append('face %d %d %d %r %r %r %r %r %s' % values)
        with open(os.path.join(directory, MESH_MANIFEST), 'w') as f:
            f.write('\n'.join(lines) + '\n')

    @classmethod
    def load(cls, directory):
        name = 'mesh'
        cells = []
        faces = []
        with open(os.path.join(directory, MESH_MANIFEST)) as f:
            for number, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith('#'):
                    continue
                if line.startswith('name = '):
                    name = line[len('name = '):]
                    continue
                fields = line.split()
                if fields[0] == 'cell' and len(fields) == 5:
                    cells.append(fields)
                elif fields[0] == 'face' and len(fields) == 10:
                    faces.append(fields)
                else:
                    raise MeshError('%s line %d: cannot parse %r' % (MESH_MANIFEST, number, line))
        if [int(c[1]) for c in cells] != list(range(len(cells))):
            raise MeshError('cell ids in %s are not 0..n-1 in order' % MESH_MANIFEST)
        if [int(c[1]) for c in faces] != list(range(len(faces))):
            raise MeshError('face ids in %s are not 0..n-1 in order' % MESH_MANIFEST)
        return cls(
            [(float(c[2]), float(c[3])) for c in cells],
            [float(c[4]) for c in cells],
            [(int(c[2]), int(c[3])) for c in faces],
            [float(c[4]) for c in faces],
            [(float(c[5]), float(c[6])) for c in faces],
            [c[9] for c in faces],
            [(float(c[7]), float(c[8])) for c in faces],
            name,
        )


def _rectilinear_mesh(x_edges, y_edges, periodic, boundary_names, name):
    # Cell (i, j) gets index i * ny + j, so a field shaped (nx, ny) ravels onto the
    # cells in order.
    x_edges = np.asarray(x_edges, dtype=np.float64)
    y_edges = np.asarray(y_edges, dtype=np.float64)
    nx, ny = len(x_edges) - 1, len(y_edges) - 1
    widths = np.diff(x_edges)
    heights = np.diff(y_edges)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    yc = 0.5 * (y_edges[:-1] + y_edges[1:])
    centers = np.stack(np.meshgrid(xc, yc, indexing='ij'), axis=-1).reshape(-1, 2)
    volumes = np.outer(widths, heights).reshape(-1)
    length = x_edges[-1] - x_edges[0]
    height = y_edges[-1] - y_edges[0]
    left, right, bottom, top = boundary_names

    def cell(i, j):
        return i * ny + j

    face_cells = []
    areas = []
    face_centers = []
    types = []
    shifts = []
    # Faces normal to x, swept left to right:
    for i in range(nx + 1):
        for j in range(ny):
            position = (x_edges[i], yc[j])
            if 0 < i < nx:
                face_cells.append((cell(i - 1, j), cell(i, j)))
                types.append(None)
                shifts.append((0.0, 0.0))
            elif periodic:
                if i == nx:
                    continue
                face_cells.append((cell(nx - 1, j), cell(0, j)))
                types.append(None)
                shifts.append((length, 0.0))
                position = (x_edges[nx], yc[j])
            else:
                face_cells.append((cell(0 if i == 0 else nx - 1, j), -1))
                types.append(left if i == 0 else right)
                shifts.append((0.0, 0.0))
            areas.append(heights[j])
            face_centers.append(position)
    # Faces normal to y, swept bottom to top:
    for j in range(ny + 1):
        for i in range(nx):
            position = (xc[i], y_edges[j])
            if 0 < j < ny:
                face_cells.append((cell(i, j - 1), cell(i, j)))
                types.append(None)
                shifts.append((0.0, 0.0))
            elif periodic:
                if j == ny:
                    continue
                face_cells.append((cell(i, ny - 1), cell(i, 0)))
                types.append(None)
                shifts.append((0.0, height))
                position = (xc[i], y_edges[ny])
            else:
                face_cells.append((cell(i, 0 if j == 0 else ny - 1), -1))
                types.append(bottom if j == 0 else top)
                shifts.append((0.0, 0.0))
            areas.append(widths[i])
            face_centers.append(position)
    return FvMesh(centers, volumes, face_cells, areas, face_centers, types, shifts, name)


def cartesian_mesh(nx, ny, dx, dy, periodic=True, origin=(0.0, 0.0), boundary_names=('left', 'right', 'bottom', 'top')):
    """Uniform nx x ny grid of dx x dy cells. Cell centers sit at
    origin + ((i + 1/2) dx, (j + 1/2) dy)."""
    x_edges = origin[0] + dx * np.arange(nx + 1)
    y_edges = origin[1] + dy * np.arange(ny + 1)
    return _rectilinear_mesh(x_edges, y_edges, periodic, boundary_names, 'cartesian')


def channel_mesh(nx=24, ny=12, length=2.0, height=1.0, jitter=0.1, rng=None):
    """Rectangular channel of non-uniform rectangular cells: interior grid lines are
    moved by up to jitter/2 of the mean spacing. Boundaries are the inlet (left),
    outlet (right), wall (bottom) and heated wall (top)."""
    x_edges = np.linspace(0.0, length, nx + 1)
    y_edges = np.linspace(0.0, height, ny + 1)
    if rng is not None and jitter:
        x_edges[1:-1] += jitter * (length / nx) * rng.uniform(-0.5, 0.5, size=nx - 1)
        y_edges[1:-1] += jitter * (height / ny) * rng.uniform(-0.5, 0.5, size=ny - 1)
    return _rectilinear_mesh(x_edges, y_edges, False, CHANNEL_BOUNDARIES, 'channel')


class GhostEdges(object):
    """The ghost edges of one boundary type"""

    def __init__(self, boundary_type, nodes, vectors, weights, faces):
        self.boundary_type = boundary_type
        self.nodes = np.asarray(nodes, dtype=np.intp)
        self.vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.intp)

    def __len__(self):
        return len(self.nodes)


class FvGraph(object):
    def __init__(
        self,
        positions,
        edges,
        edge_vectors,
        flux_weights,
        boundary_cells,
        ghosts=None,
        known_nodes=(),
        known_types=(),
    ):
        self.positions = positions
        self.edges = edges
        self.edge_vectors = edge_vectors
        self.flux_weights = flux_weights
        # boundary type -> (cells, faces), for every boundary face of the mesh:
        self.boundary_cells = boundary_cells
        self.ghosts = OrderedDict() if ghosts is None else ghosts
        self.known_nodes = np.asarray(known_nodes, dtype=np.intp)
        self.known_types = tuple(known_types)

    @property
    def n_nodes(self):
        return len(self.positions)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_types(self):
        return tuple(self.boundary_cells)

    @property
    def ghost_types(self):
        return tuple(self.ghosts)

    @property
    def n_ghost_edges(self):
        return sum(len(g) for g in self.ghosts.values())

    def _replace(self, **changes):
        fields = dict(
            positions=self.positions,
            edges=self.edges,
            edge_vectors=self.edge_vectors,
            flux_weights=self.flux_weights,
            boundary_cells=self.boundary_cells,
            ghosts=self.ghosts,
            known_nodes=self.known_nodes,
            known_types=self.known_types,
        )
        fields.update(changes)
        return FvGraph(**fields)

    def permuted(self, perm):
        """The same graph with node i relabelled perm[i]. Edge and ghost edge order is
        kept, so per-node sums accumulate in the same order."""
        perm = np.asarray(perm, dtype=np.intp)
        if sorted(perm.tolist()) != list(range(self.n_nodes)):
            raise ValueError('not a permutation of %d nodes' % self.n_nodes)
        positions = np.empty_like(self.positions)
        positions[perm] = self.positions
        ghosts = OrderedDict(
            (t, GhostEdges(t, perm[g.nodes], g.vectors, g.weights, g.faces))
            for t, g in self.ghosts.items()
        )
        boundary_cells = OrderedDict(
            (t, (perm[cells], faces)) for t, (cells, faces) in self.boundary_cells.items()
        )
        return self._replace(
            positions=positions,
            edges=perm[self.edges],
            boundary_cells=boundary_cells,
            ghosts=ghosts,
            known_nodes=np.sort(perm[self.known_nodes]),
        )

    def to_csv(self, path):
        """Every interior and ghost edge with its vector and flux weight"""
        with open(path, 'w') as f:
            f.write('kind,receiver,sender,nx,ny,weight\n')
            for (i, j), (vx, vy), w in zip(self.edges, self.edge_vectors, self.flux_weights):
                f.write('edge,%d,%d,%r,%r,%r\n' % (i, j, float(vx), float(vy), float(w)))
            for t, group in self.ghosts.items():
                for i, (vx, vy), w in zip(group.nodes, group.vectors, group.weights):
                    f.write('ghost:%s,%d,,%r,%r,%r\n' % (t, i, float(vx), float(vy), float(w)))


def build_graph(mesh):
    mesh.validate()
    interior = mesh.interior_faces()
    owners = mesh.face_cells[interior, 0]
    neighbours = mesh.face_cells[interior, 1]
    offsets = mesh.centers[owners] - (mesh.centers[neighbours] + mesh.face_shifts[interior])
    unit = offsets / np.linalg.norm(offsets, axis=1)[:, None]
    areas = mesh.face_areas[interior]
    n = len(interior)
    edges = np.empty((2 * n, 2), dtype=np.intp)
    edges[0::2, 0], edges[0::2, 1] = owners, neighbours
    edges[1::2, 0], edges[1::2, 1] = neighbours, owners
    vectors = np.empty((2 * n, 2))
    vectors[0::2] = unit
    vectors[1::2] = -unit
    weights = np.empty(2 * n)
    weights[0::2] = areas / mesh.volumes[owners]
    weights[1::2] = areas / mesh.volumes[neighbours]
    boundary_cells = OrderedDict(
        (t, (mesh.face_cells[faces, 0], faces)) for t, faces in mesh.boundary_faces().items()
    )
    return FvGraph(mesh.centers.copy(), edges, vectors, weights, boundary_cells)


def _check_types(graph, types):
    for t in types:
        if t not in graph.boundary_cells:
            msg = 'unknown boundary type %r, the mesh has %s' % (t, list(graph.boundary_types))
            raise MeshError(msg)


def add_ghost_edges(graph, mesh, types, unit_norm=True, flux_weight=True):
    """One ghost edge per boundary face of each listed type, anchored at the face's
    cell, with vector x_face - x_i (unit-normalised if unit_norm) and flux weight
    A_face / Omega_i (1 if not flux_weight)"""
    _check_types(graph, types)
    ghosts = OrderedDict(graph.ghosts)
    for t in types:
        cells, faces = graph.boundary_cells[t]
        mesh_cells = mesh.face_cells[faces, 0]
        vectors = mesh.face_centers[faces] - mesh.centers[mesh_cells]
        if unit_norm:
            vectors = vectors / np.linalg.norm(vectors, axis=1)[:, None]
        if flux_weight:
            weights = mesh.face_areas[faces] / mesh.volumes[mesh_cells]
        else:
            weights = np.ones(len(faces))
        ghosts[t] = GhostEdges(t, cells, vectors, weights, faces)
    return graph._replace(ghosts=ghosts)


def mark_known_value_nodes(graph, types):
    """Flag the cells adjacent to boundaries of the listed types as known-value nodes"""
    _check_types(graph, types)
    nodes = [graph.boundary_cells[t][0] for t in types]
    known = np.unique(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=np.intp)
    return graph._replace(known_nodes=known, known_types=tuple(types))


def near_wall_nodes(graph, types):
    _check_types(graph, types)
    nodes = [graph.boundary_cells[t][0] for t in types]
    return np.unique(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=np.intp)


class ScalingSpec(object):
    """Per-channel scale coefficients C_c and the increment factor C_delta. Normalised
    states are q / C_c; normalised increments are dq / (C_c C_delta)."""

    def __init__(self, coefficients, increment=0.01):
        self.coefficients = OrderedDict((str(k), float(v)) for k, v in coefficients.items())
        self.increment = float(increment)
        if not self.coefficients:
            raise ValueError('a scaling spec needs at least one channel')
        if min(self.coefficients.values()) <= 0 or self.increment <= 0:
            raise ValueError('scale coefficients must be positive')

    @classmethod
    def reacting_flow(cls):
        return cls(OrderedDict([('p', 5e5), ('u', 200.0), ('v', 200.0), ('T', 2500.0), ('Y', 1.0)]), 0.01)

    @property
    def channels(self):
        return tuple(self.coefficients)

    def scales(self, channels=None):
        if channels is None:
            channels = self.channels
        missing = [c for c in channels if c not in self.coefficients]
        if missing:
            raise KeyError('no scale coefficient for channels %s' % missing)
        return np.array([self.coefficients[c] for c in channels])

    def _check(self, q, channels):
        scales = self.scales(channels)
        q = np.asarray(q, dtype=np.float64)
        if q.shape[-1] != len(scales):
            raise ShapeError('fields have %d channels, scaling has %d' % (q.shape[-1], len(scales)))
        return q, scales


def normalize(q, spec, channels=None):
    q, scales = spec._check(q, channels)
    return q / scales


def denormalize(q_hat, spec, channels=None):
    q_hat, scales = spec._check(q_hat, channels)
    return q_hat * scales


def normalize_increment(dq, spec, channels=None):
    dq, scales = spec._check(dq, channels)
    return dq / (scales * spec.increment)


def denormalize_increment(dq_hat, spec, channels=None):
    dq_hat, scales = spec._check(dq_hat, channels)
    return dq_hat * (scales * spec.increment)
