"""CP-GNet: an encoder-processor-decoder graph network built from CP layers, and the
GNet baseline with plain dense layers in their place.

Both models map normalised node states Q (n_v x n_channels) on an FvGraph to
normalised increments. The physical increment is C_delta * C_c * output, applied by
rollout() through fv_graph.denormalize_increment().

    node encoder   two self-conditioned CP-Dense layers, each followed by LayerNorm
    edge encoder   two self-conditioned CP-Dense layers, no LayerNorm; interior edge
                   vectors and ghost edge vectors go through it as one batch
    processor      `blocks` blocks, each a CP-MP section then a CP-Dense section, with
                   a residual connection around the whole block
    decoder        two CP-Dense layers re-encoding Q into a condition vector d, then a
                   CP-Dense layer transforming the processor output conditioned on d
"""

import os
import logging
import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from cpnet.ndtensor import (
    Tensor,
    add,
    concat,
    getitem,
    mean_all,
    scale_rows,
    scatter_add_rows,
    square,
    sub,
    minimize,
    ConstantRate,
    ExponentialDecay,
    AdamState,
)
from cpnet.cp_layers import (
    ParameterSet,
    CpDenseParams,
    CpMpParams,
    DenseParams,
    LayerNormParams,
    GhostEdgeSet,
    cp_dense_forward,
    cp_mp_forward,
    dense_forward,
    layer_norm_forward,
    save_parameters,
    load_parameters,
)
from cpnet.fv_graph import (
    build_graph,
    add_ghost_edges,
    mark_known_value_nodes,
    normalize,
    denormalize_increment,
)
from cpnet.pde_lab import Trajectory
from cpnet.utils import MeshError, ShapeError, ConfigError

logger = logging.getLogger(__name__)

MODEL_MANIFEST = 'model.ini'
MODEL_KINDS = ('cp-gnet', 'gnet')


@dataclass
class CpGnetConfig:
    """Architecture of a graph network. boundary_types, ghost_unit_norm and
    ghost_flux_weight describe the ghost edges of the graph the network reads;
    model_graph() builds that graph from a mesh."""

    n_channels: int = 1
    width: int = 36
    edge_width: int = 4
    condition_width: int = 8
    blocks: int = 5
    mp_layers: int = 2
    dense_layers: int = 4
    boundary_types: tuple = ()
    spatial_dims: int = 2
    dense_inner: str = 'identity'
    dense_outer: str = 'swish'
    mp_weight_activation: str = 'relu'
    mp_message_activation: str = 'relu'
    noise_std: float = 0.0013
    layer_norm: bool = True
    ghost_unit_norm: bool = True
    ghost_flux_weight: bool = True
    channels: tuple = field(default=('c',))

    def __post_init__(self):
        self.boundary_types = tuple(self.boundary_types)
        self.channels = tuple(self.channels)
        for name in ('n_channels', 'width', 'edge_width', 'condition_width', 'blocks'):
            if getattr(self, name) < 1:
                raise ConfigError('%s must be at least 1, got %r' % (name, getattr(self, name)))
        if self.mp_layers < 0 or self.dense_layers < 0:
            raise ConfigError('section depths must not be negative')

    @classmethod
    def published(cls, blocks=5, n_channels=5):
        """Node width 36 and edge width 4 as published, with two ghost-edge boundary
        types. Five blocks give about 1.3M parameters."""
        return cls(
            n_channels=n_channels,
            blocks=blocks,
            boundary_types=('wall', 'heated'),
            channels=('p', 'u', 'v', 'T', 'Y')[:n_channels],
        )

    @classmethod
    def published_baseline(cls, blocks=15, n_channels=5):
        """The 128-unit GNet, one layer per section; fifteen blocks give about 2.0M
        parameters"""
        return cls(
            n_channels=n_channels,
            width=128,
            edge_width=128,
            blocks=blocks,
            mp_layers=1,
            dense_layers=1,
            boundary_types=('wall', 'heated'),
            channels=('p', 'u', 'v', 'T', 'Y')[:n_channels],
        )

    @classmethod
    def desk(cls, boundary_types=('wall', 'heated'), channels=('c',)):
        return cls(
            n_channels=len(channels),
            width=16,
            edge_width=4,
            condition_width=8,
            blocks=2,
            mp_layers=1,
            dense_layers=1,
            boundary_types=boundary_types,
            channels=channels,
        )


def _cp_dense(n_u, n_h, n_p, config, rng, outer=None):
    return CpDenseParams(
        n_u, n_h, n_p, config.dense_inner, config.dense_outer if outer is None else outer, rng
    )


class _GraphModel(ParameterSet):
    kind = None

    def __init__(self, config):
        super(_GraphModel, self).__init__()
        self.config = config

    def _norm(self, name, d):
        if self.config.layer_norm:
            return self._child(name, LayerNormParams(d))
        return None

    @staticmethod
    def _apply_norm(x, norm):
        return x if norm is None else layer_norm_forward(x, norm)

    def _edge_inputs(self, graph):
        """All edge vectors, interior first then each ghost type in registry order,
        with the row range each ghost type occupies"""
        for t in graph.ghost_types:
            if t not in self.config.boundary_types:
                raise MeshError('model has no ghost weights for boundary type %r' % t)
        vectors = [graph.edge_vectors] + [g.vectors for g in graph.ghosts.values()]
        stacked = np.concatenate(vectors, axis=0) if vectors else np.zeros((0, 2))
        ranges = []
        start = graph.n_edges
        for g in graph.ghosts.values():
            ranges.append((g, start, start + len(g)))
            start += len(g)
        return stacked, ranges

    def _check_states(self, graph, q_hat):
        q_hat = q_hat if isinstance(q_hat, Tensor) else Tensor(q_hat)
        if q_hat.shape != (graph.n_nodes, self.config.n_channels):
            msg = 'node states have shape %s, expected (%d, %d)'
            raise ShapeError(msg % (q_hat.shape, graph.n_nodes, self.config.n_channels))
        return q_hat

    def forward(self, graph, q_hat):
        q_hat = self._check_states(graph, q_hat)
        h = self.encode_nodes(q_hat)
        vectors, ranges = self._edge_inputs(graph)
        encoded = self.encode_edges(Tensor(vectors))
        h = self.process(graph, h, encoded, ranges)
        return self.decode(q_hat, h)

    def __call__(self, graph, q_hat):
        return self.forward(graph, q_hat)

    def process(self, graph, h, encoded, ranges):
        interior = getitem(encoded, slice(0, graph.n_edges))
        ghosts = [(g, getitem(encoded, slice(a, b))) for g, a, b in ranges]
        for block in self.blocks:
            h = add(h, self.block_forward(block, graph, h, interior, ghosts))
        return h


def _block_norm(block, name, config):
    if config.layer_norm:
        return block._child(name, LayerNormParams(config.width))
    return None


class _CpBlock(ParameterSet):
    def __init__(self, config, rng):
        super(_CpBlock, self).__init__()
        self.mp = []
        self.dense = []
        w, e = config.width, config.edge_width
        for i in range(config.mp_layers):
            layer = CpMpParams(
                w,
                w,
                e,
                config.boundary_types,
                config.mp_weight_activation,
                config.mp_message_activation,
                rng,
            )
            self.mp.append((self._child('mp%d' % i, layer), _block_norm(self, 'mp%d_norm' % i, config)))
        for i in range(config.dense_layers):
            layer = _cp_dense(w, w, w, config, rng)
            self.dense.append((self._child('dense%d' % i, layer), _block_norm(self, 'dense%d_norm' % i, config)))


class CpGnet(_GraphModel):
    kind = 'cp-gnet'

    def __init__(self, config, rng=None):
        super(CpGnet, self).__init__(config)
        c, w, e, q = config.n_channels, config.width, config.edge_width, config.condition_width
        self.node1 = self._child('node1', _cp_dense(c, w, c, config, rng))
        self.node1_norm = self._norm('node1_norm', w)
        self.node2 = self._child('node2', _cp_dense(w, w, w, config, rng))
        self.node2_norm = self._norm('node2_norm', w)
        d = config.spatial_dims
        self.edge1 = self._child('edge1', _cp_dense(d, e, d, config, rng))
        self.edge2 = self._child('edge2', _cp_dense(e, e, e, config, rng))
        self.blocks = [self._child('block%d' % b, _CpBlock(config, rng)) for b in range(config.blocks)]
        self.cond1 = self._child('cond1', _cp_dense(c, q, c, config, rng))
        self.cond1_norm = self._norm('cond1_norm', q)
        self.cond2 = self._child('cond2', _cp_dense(q, q, q, config, rng))
        self.out = self._child('out', CpDenseParams(w, c, q, 'identity', 'identity', rng))

    @staticmethod
    def count(config):
        c, w, e, q = config.n_channels, config.width, config.edge_width, config.condition_width
        d = config.spatial_dims
        ln = 2 if config.layer_norm else 0
        total = CpDenseParams.count(c, w, c) + CpDenseParams.count(w, w, w) + 2 * ln * w
        total += CpDenseParams.count(d, e, d) + CpDenseParams.count(e, e, e)
        mp = CpMpParams.count(w, w, e, len(config.boundary_types)) + ln * w
        dense = CpDenseParams.count(w, w, w) + ln * w
        total += config.blocks * (config.mp_layers * mp + config.dense_layers * dense)
        total += CpDenseParams.count(c, q, c) + ln * q + CpDenseParams.count(q, q, q)
        return total + CpDenseParams.count(w, c, q)

    def encode_nodes(self, q_hat):
        h = self._apply_norm(cp_dense_forward(q_hat, q_hat, self.node1), self.node1_norm)
        return self._apply_norm(cp_dense_forward(h, h, self.node2), self.node2_norm)

    def encode_edges(self, vectors):
        if vectors.shape[0] == 0:
            return Tensor(np.zeros((0, self.config.edge_width)))
        e = cp_dense_forward(vectors, vectors, self.edge1)
        return cp_dense_forward(e, e, self.edge2)

    def block_forward(self, block, graph, h, interior, ghosts):
        x = h
        for layer, norm in block.mp:
            ghost_sets = [GhostEdgeSet(g.boundary_type, g.nodes, enc, g.weights) for g, enc in ghosts]
            x = cp_mp_forward(x, interior, graph.edges, graph.flux_weights, ghost_sets, layer)
            x = self._apply_norm(x, norm)
        for layer, norm in block.dense:
            x = self._apply_norm(cp_dense_forward(x, x, layer), norm)
        return x

    def decode(self, q_hat, h):
        d = self._apply_norm(cp_dense_forward(q_hat, q_hat, self.cond1), self.cond1_norm)
        d = cp_dense_forward(d, d, self.cond2)
        return cp_dense_forward(h, d, self.out)


class _DenseBlock(ParameterSet):
    def __init__(self, config, rng):
        super(_DenseBlock, self).__init__()
        w, e = config.width, config.edge_width
        self.mp = []
        self.dense = []
        for i in range(config.mp_layers):
            message = self._child('mp%d' % i, DenseParams(2 * w + e, w, config.mp_message_activation, rng))
            ghosts = {}
            for t in config.boundary_types:
                ghost = DenseParams(w + e, w, config.mp_message_activation, rng)
                ghosts[t] = self._child('mp%d_ghost_%s' % (i, t), ghost)
            self.mp.append((message, ghosts, _block_norm(self, 'mp%d_norm' % i, config)))
        for i in range(config.dense_layers):
            layer = self._child('dense%d' % i, DenseParams(w, w, config.dense_outer, rng))
            self.dense.append((layer, _block_norm(self, 'dense%d_norm' % i, config)))


class GNet(_GraphModel):
    """The baseline: every CP layer replaced by a dense layer. A layer conditioned on
    node features takes the input alone; a layer conditioned on edge features takes
    the input concatenated with the edge features. The final decoder layer takes the
    processor output concatenated with the re-encoded state."""

    kind = 'gnet'

    def __init__(self, config, rng=None):
        super(GNet, self).__init__(config)
        c, w, e, q = config.n_channels, config.width, config.edge_width, config.condition_width
        act = config.dense_outer
        self.node1 = self._child('node1', DenseParams(c, w, act, rng))
        self.node1_norm = self._norm('node1_norm', w)
        self.node2 = self._child('node2', DenseParams(w, w, act, rng))
        self.node2_norm = self._norm('node2_norm', w)
        self.edge1 = self._child('edge1', DenseParams(config.spatial_dims, e, act, rng))
        self.edge2 = self._child('edge2', DenseParams(e, e, act, rng))
        self.blocks = [self._child('block%d' % b, _DenseBlock(config, rng)) for b in range(config.blocks)]
        self.cond1 = self._child('cond1', DenseParams(c, q, act, rng))
        self.cond1_norm = self._norm('cond1_norm', q)
        self.cond2 = self._child('cond2', DenseParams(q, q, act, rng))
        self.out = self._child('out', DenseParams(w + q, c, 'identity', rng))

    @staticmethod
    def count(config):
        c, w, e, q = config.n_channels, config.width, config.edge_width, config.condition_width
        ln = 2 if config.layer_norm else 0
        total = DenseParams.count(c, w) + DenseParams.count(w, w) + 2 * ln * w
        total += DenseParams.count(config.spatial_dims, e) + DenseParams.count(e, e)
        mp = DenseParams.count(2 * w + e, w) + ln * w
        mp += len(config.boundary_types) * DenseParams.count(w + e, w)
        dense = DenseParams.count(w, w) + ln * w
        total += config.blocks * (config.mp_layers * mp + config.dense_layers * dense)
        total += DenseParams.count(c, q) + ln * q + DenseParams.count(q, q)
        return total + DenseParams.count(w + q, c)

    def encode_nodes(self, q_hat):
        h = self._apply_norm(dense_forward(q_hat, self.node1), self.node1_norm)
        return self._apply_norm(dense_forward(h, self.node2), self.node2_norm)

    def encode_edges(self, vectors):
        if vectors.shape[0] == 0:
            return Tensor(np.zeros((0, self.config.edge_width)))
        return dense_forward(dense_forward(vectors, self.edge1), self.edge2)

    def block_forward(self, block, graph, h, interior, ghosts):
        x = h
        n_v = graph.n_nodes
        for message, ghost_layers, norm in block.mp:
            total = Tensor(np.zeros((n_v, self.config.width)))
            if graph.n_edges:
                receivers, senders = graph.edges[:, 0], graph.edges[:, 1]
                inputs = concat([getitem(x, receivers), getitem(x, senders), interior], axis=1)
                m = scale_rows(dense_forward(inputs, message), Tensor(graph.flux_weights))
                total = scatter_add_rows(m, receivers, n_v)
            for g, enc in ghosts:
                if not len(g):
                    continue
                inputs = concat([getitem(x, g.nodes), enc], axis=1)
                m = scale_rows(dense_forward(inputs, ghost_layers[g.boundary_type]), Tensor(g.weights))
                total = add(total, scatter_add_rows(m, g.nodes, n_v))
            x = self._apply_norm(total, norm)
        for layer, norm in block.dense:
            x = self._apply_norm(dense_forward(x, layer), norm)
        return x

    def decode(self, q_hat, h):
        d = self._apply_norm(dense_forward(q_hat, self.cond1), self.cond1_norm)
        d = dense_forward(d, self.cond2)
        return dense_forward(concat([h, d], axis=1), self.out)


def build_gnet_baseline(config, rng=None):
    model = GNet(config, rng)
    logger.info('GNet baseline: width %d, %d blocks, %d parameters', config.width, config.blocks, model.n_parameters())
    return model


def build_model(kind, config, rng=None):
    if kind == 'cp-gnet':
        return CpGnet(config, rng)
    if kind == 'gnet':
        return build_gnet_baseline(config, rng)
    raise ConfigError('unknown model kind %r, expected one of %s' % (kind, MODEL_KINDS))


def model_graph(config, mesh, known_types=()):
    """The graph of mesh as a network built from config reads it: ghost edges for
    each of config.boundary_types, with known-value nodes next to known_types"""
    graph = build_graph(mesh)
    if config.boundary_types:
        graph = add_ghost_edges(
            graph,
            mesh,
            list(config.boundary_types),
            config.ghost_unit_norm,
            config.ghost_flux_weight,
        )
    return mark_known_value_nodes(graph, list(known_types))


def matched_baseline_width(config, max_width=512):
    """Width of the GNet (with edge width equal to its node width, as in the
    published baseline) whose parameter count is closest to the CP-GNet's"""
    target = CpGnet.count(config)
    best = None
    for width in range(1, max_width + 1):
        n = GNet.count(replace(config, width=width, edge_width=width))
        if best is None or abs(n - target) < best[1]:
            best = (width, abs(n - target))
    return best[0]


def baseline_config(config):
    width = matched_baseline_width(config)
    return replace(config, width=width, edge_width=width)


def make_training_pairs(trajectory, scaling, noise_std, rng, steps=None):
    """Noisy normalised inputs and noise-compensated targets, one pair per step k:

        input  = Q^k / C + eps
        target = (Q^(k+1) / C - input) / C_delta

    so that input + C_delta * target is the true next normalised state."""
    frames = trajectory.frames if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    if len(frames) < 2:
        raise ShapeError('training pairs need at least two frames')
    if steps is None:
        steps = len(frames) - 1
    if isinstance(rng, (int, np.integer)) or rng is None:
        rng = np.random.default_rng(rng)
    normalized = normalize(frames[: steps + 1], scaling)
    inputs = []
    targets = []
    for k in range(steps):
        if noise_std > 0:
            noisy = normalized[k] + rng.normal(0.0, noise_std, size=normalized[k].shape)
        else:
            noisy = normalized[k].copy()
        inputs.append(noisy)
        targets.append((normalized[k + 1] - noisy) / scaling.increment)
    return inputs, targets


def increment_loss(model, graph, q_input, target):
    prediction = model.forward(graph, q_input)
    return mean_all(square(sub(prediction, Tensor(target))))


def train(model, graph, trajectory, scaling, epochs, lr, noise_std=None, rng=None, steps=None, lr_final=None, name=None):
    """Adam at batch size 1 on the MSE between predicted and target normalised
    increments. Training pairs are redrawn with fresh noise at the start of every
    epoch. Returns the per-epoch mean loss."""
    if noise_std is None:
        noise_std = model.config.noise_std
    if rng is None:
        rng = np.random.default_rng()
    name = name or model.kind

    def samples(epoch):
        inputs, targets = make_training_pairs(trajectory, scaling, noise_std, rng, steps)
        return list(zip(inputs, targets))

    schedule = ConstantRate(lr) if lr_final is None else ExponentialDecay(lr, lr_final, epochs)
    params = model.parameters()
    curve = minimize(
        params,
        samples,
        lambda pair: increment_loss(model, graph, pair[0], pair[1]),
        epochs,
        schedule,
        AdamState(params),
        name=name,
    )
    if curve:
        logger.info('trained %s for %d epochs, final loss %.6e', name, epochs, curve[-1])
    return curve


def rollout(model, graph, q0, steps, scaling, schedule=None):
    """Autoregressive prediction from the physical state q0. Each step overwrites the
    known-value nodes with schedule[k], normalises, predicts, adds the physical
    increment and overwrites the known-value nodes with schedule[k + 1]. Stops at the
    first non-finite state, leaving later frames NaN and recording the step in
    diverged_at."""
    q = np.array(q0, dtype=np.float64)
    known = graph.known_nodes
    if len(known) and schedule is None:
        raise ValueError('graph has known-value nodes but no boundary schedule was given')
    if schedule is not None and len(schedule) < steps + 1:
        raise ShapeError('boundary schedule covers %d frames, rollout needs %d' % (len(schedule), steps + 1))
    frames = np.full((steps + 1,) + q.shape, np.nan)
    if len(known):
        q[known] = schedule[0][known]
    frames[0] = q
    diverged_at = None
    for k in range(steps):
        if len(known):
            q[known] = schedule[k][known]
        out = model.forward(graph, normalize(q, scaling))
        out = out.data if isinstance(out, Tensor) else np.asarray(out)
        with np.errstate(over='ignore', invalid='ignore'):
            q = q + denormalize_increment(out, scaling)
        if len(known):
            q[known] = schedule[k + 1][known]
        if not np.all(np.isfinite(q)):
            diverged_at = k + 1
            logger.warning('rollout diverged at step %d', diverged_at)
            break
        frames[k + 1] = q
    return Trajectory(frames, None, scaling.channels, {'steps': steps}, diverged_at=diverged_at)


def save_model(directory, model):
    """Checkpoint: the parameter stream plus model.ini recording the model kind and
    every config field"""
    save_parameters(directory, model)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser['model'] = {'kind': model.kind}
    parser['config'] = {f.name: _format_field(getattr(model.config, f.name)) for f in fields(model.config)}
    with open(os.path.join(directory, MODEL_MANIFEST), 'w') as f:
        parser.write(f)


def _format_field(value):
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    return str(value)


def load_model(directory):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(os.path.join(directory, MODEL_MANIFEST)):
        raise ConfigError('no %s in %s' % (MODEL_MANIFEST, directory))
    defaults = CpGnetConfig()
    values = {}
    for f in fields(CpGnetConfig):
        text = parser['config'][f.name]
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            values[f.name] = text == 'True'
        elif isinstance(default, tuple):
            values[f.name] = tuple(v for v in text.split(',') if v)
        else:
            values[f.name] = type(default)(text)
    model = build_model(parser['model']['kind'], CpGnetConfig(**values))
    model.assign(load_parameters(directory))
    return model
