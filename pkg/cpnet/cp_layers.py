"""Conditionally parameterized layers.

A CP layer computes its weights from a condition vector p instead of holding them
fixed. For the dense case

    h = sigma_out(sigma_in(<W, p> + B) u + b)

where W has shape (n_h * n_u, n_p), so that <W, p> reshapes to an (n_h, n_u) weight
matrix. Conditioning a layer on its own input (p = u) lets a single layer represent
quadratic terms exactly.

Every layer here is split into a parameter container (a ParameterSet holding the
tensors and activation choices) and a plain forward function taking that container.
All forward functions accept batches: rows of u are independent samples (graph nodes,
grid points), each with its own row of p.
"""

import os
from collections import OrderedDict

import numpy as np

from cpnet.ndtensor import (
    Tensor,
    as_tensor,
    ACTIVATIONS,
    activation,
    add,
    add_rowwise,
    bmatvec,
    concat,
    conv1d_periodic,
    conv2d_periodic,
    depthwise_conv2d_periodic,
    getitem,
    layer_norm,
    matmul,
    mul,
    reshape,
    scale_rows,
    scatter_add_rows,
    swap_axes01,
    transpose,
)
from cpnet.utils import ShapeError, MeshError, FLOAT_DTYPE

MANIFEST_NAME = 'params.txt'
STREAM_NAME = 'params.bin'
MANIFEST_HEADER = '# cpnet parameter stream: name [shape] byte-offset, little-endian float64'


def _uniform(rng, shape, fan_in):
    if rng is None:
        return np.zeros(shape)
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _check_activation(kind):
    if kind not in ACTIVATIONS:
        raise ValueError('unknown activation %r, expected one of %s' % (kind, ACTIVATIONS))
    return kind


class ParameterSet(object):
    """Base class for anything holding tensors to train or save. Subclasses set
    self._tensors (name -> Tensor) and self._children (name -> ParameterSet) in
    insertion order; that order defines the parameter order for the optimizer and the
    on-disk layout."""

    def __init__(self):
        self._tensors = OrderedDict()
        self._children = OrderedDict()

    def _tensor(self, name, data, trainable=True):
        tensor = Tensor(data, requires_grad=trainable, name=name)
        self._tensors[name] = tensor
        return tensor

    def _child(self, name, child):
        self._children[name] = child
        return child

    def named_tensors(self, prefix=''):
        """All tensors, trainable or not, as (dotted name, Tensor) pairs"""
        for name, tensor in self._tensors.items():
            yield prefix + name, tensor
        for name, child in self._children.items():
            for item in child.named_tensors(prefix + name + '.'):
                yield item

    def named_parameters(self, prefix=''):
        for name, tensor in self.named_tensors(prefix):
            if tensor.requires_grad:
                yield name, tensor

    def parameters(self):
        return [tensor for _, tensor in self.named_parameters()]

    def n_parameters(self):
        return int(sum(t.size for t in self.parameters()))

    def assign(self, values):
        """Overwrite every tensor with the array of the same dotted name in values"""
        for name, tensor in self.named_tensors():
            if name not in values:
                raise KeyError('no value for parameter %s' % name)
            array = np.asarray(values[name], dtype=np.float64)
            if array.shape != tensor.shape:
                msg = 'parameter %s has shape %s, value has shape %s'
                raise ShapeError(msg % (name, tensor.shape, array.shape))
            tensor.data[...] = array

    def values(self):
        return OrderedDict((name, t.data.copy()) for name, t in self.named_tensors())


class CpDenseParams(ParameterSet):
    def __init__(self, n_u, n_h, n_p, inner='identity', outer='identity', rng=None):
        super(CpDenseParams, self).__init__()
        self.n_u = n_u
        self.n_h = n_h
        self.n_p = n_p
        self.inner = _check_activation(inner)
        self.outer = _check_activation(outer)
        self.W = self._tensor('W', _uniform(rng, (n_h * n_u, n_p), n_u * n_p))
        self.B = self._tensor('B', _uniform(rng, (n_h, n_u), n_u))
        self.b = self._tensor('b', np.zeros(n_h))

    @staticmethod
    def count(n_u, n_h, n_p):
        return n_h * n_u * n_p + n_h * n_u + n_h


def _as_rows(x, width, what):
    x = as_tensor(x)
    if x.ndim == 1:
        x = reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError('%s has shape %s, expected rows of length %d' % (what, x.shape, width))
    return x


def _generate_weights(p, W, B, rows, cols):
    """sigma-free part of the weight generator: <W, p> + B, one (rows, cols) matrix per
    row of p"""
    n = p.shape[0]
    generated = add_rowwise(matmul(p, transpose(W)), reshape(B, (rows * cols,)))
    return reshape(generated, (n, rows, cols))


def cp_dense_forward(u, p, params):
    single = as_tensor(u).ndim == 1
    u = _as_rows(u, params.n_u, 'CP-Dense input')
    p = _as_rows(p, params.n_p, 'CP-Dense condition')
    if u.shape[0] != p.shape[0]:
        raise ShapeError('CP-Dense: %d inputs but %d conditions' % (u.shape[0], p.shape[0]))
    weights = activation(params.inner, _generate_weights(p, params.W, params.B, params.n_h, params.n_u))
    h = activation(params.outer, add_rowwise(bmatvec(weights, u), params.b))
    if single:
        return reshape(h, (params.n_h,))
    return h


class DenseParams(ParameterSet):
    def __init__(self, n_u, n_h, activation='identity', rng=None):
        super(DenseParams, self).__init__()
        self.n_u = n_u
        self.n_h = n_h
        self.activation = _check_activation(activation)
        self.W = self._tensor('W', _uniform(rng, (n_h, n_u), n_u))
        self.b = self._tensor('b', np.zeros(n_h))

    @staticmethod
    def count(n_u, n_h):
        return n_h * n_u + n_h


def dense_forward(u, params):
    single = as_tensor(u).ndim == 1
    u = _as_rows(u, params.n_u, 'dense input')
    h = activation(params.activation, add_rowwise(matmul(u, transpose(params.W)), params.b))
    if single:
        return reshape(h, (params.n_h,))
    return h


class LayerNormParams(ParameterSet):
    def __init__(self, d):
        super(LayerNormParams, self).__init__()
        self.d = d
        self.gain = self._tensor('gain', np.ones(d))
        self.bias = self._tensor('bias', np.zeros(d))


def layer_norm_forward(x, params):
    return layer_norm(x, params.gain, params.bias)


class ConvParams(ParameterSet):
    """Plain periodic convolution. kernel_shape is (k, c_in, c_out) for 1D fields,
    (kx, ky, c_in, c_out) for 2D fields, or (kx, ky, c) for a depthwise 2D kernel."""

    def __init__(self, kernel_shape, bias=False, activation='identity', rng=None):
        super(ConvParams, self).__init__()
        kernel_shape = tuple(kernel_shape)
        self.activation = _check_activation(activation)
        fan_in = int(np.prod(kernel_shape[:-1]))
        self.kernel = self._tensor('kernel', _uniform(rng, kernel_shape, fan_in))
        self.bias = None
        if bias:
            self.bias = self._tensor('bias', np.zeros(kernel_shape[-1]))


def _convolve(u, kernel):
    if u.ndim == 2:
        return conv1d_periodic(u, kernel)
    if u.ndim == 3 and kernel.ndim == 4:
        return conv2d_periodic(u, kernel)
    if u.ndim == 3 and kernel.ndim == 3:
        return depthwise_conv2d_periodic(u, kernel)
    raise ShapeError('no periodic convolution of a %s field with a %s kernel' % (u.shape, kernel.shape))


def conv_forward(u, params):
    u = as_tensor(u)
    out = _convolve(u, params.kernel)
    if params.bias is not None:
        out = add_rowwise(out, params.bias)
    return activation(params.activation, out)


AXES = ('x', 'y', 'none')


class CpConvBranch(ParameterSet):
    """One term p * (kernel conv u) of a CP-Conv layer. `condition` selects the
    parameter field by index. Branches with axis 'y' convolve the transposed field,
    so a kernel written for the x direction acts along y."""

    def __init__(self, kernel, condition=0, axis='none', trainable=True):
        super(CpConvBranch, self).__init__()
        if axis not in AXES:
            raise ValueError('unknown axis %r, expected one of %s' % (axis, AXES))
        self.condition = condition
        self.axis = axis
        if isinstance(kernel, Tensor):
            self.kernel = kernel
            self._tensors['kernel'] = kernel
        else:
            self.kernel = self._tensor('kernel', kernel, trainable=trainable)


class CpConvParams(ParameterSet):
    def __init__(self, branches):
        super(CpConvParams, self).__init__()
        self.branches = list(branches)
        for i, branch in enumerate(self.branches):
            self._child('branch%d' % i, branch)


def _apply_condition(out, p, grid_shape):
    if isinstance(p, (int, float, np.floating, np.integer)):
        return mul(out, float(p))
    p = as_tensor(p)
    if p.shape == ():
        return mul(out, p)
    if p.shape == grid_shape:
        return scale_rows(out, p)
    if p.shape == out.shape:
        return mul(out, p)
    raise ShapeError('CP-Conv condition of shape %s does not match grid %s' % (p.shape, grid_shape))


def cp_conv_forward(u, param_fields, params, periodic=True):
    """Sum over branches of p_branch * (kernel_branch conv u). Scaling the output of a
    standard convolution pointwise is the same as scaling the kernel locally, so each
    branch is an ordinary periodic convolution followed by a multiplication."""
    if not periodic:
        raise ValueError('CP-Conv only supports periodic boundaries')
    u = as_tensor(u)
    grid_shape = u.shape[:-1]
    total = None
    for branch in params.branches:
        if branch.condition >= len(param_fields):
            msg = 'branch uses parameter field %d but only %d were given'
            raise ShapeError(msg % (branch.condition, len(param_fields)))
        if branch.axis == 'y':
            if u.ndim != 3:
                raise ShapeError('y-axis branches need a 2D field, got %s' % (u.shape,))
            out = swap_axes01(_convolve(swap_axes01(u), branch.kernel))
        else:
            out = _convolve(u, branch.kernel)
        out = _apply_condition(out, param_fields[branch.condition], grid_shape)
        total = out if total is None else add(total, out)
    if total is None:
        raise ValueError('CP-Conv layer has no branches')
    return total


class GhostWeights(ParameterSet):
    def __init__(self, n_u, n_h, n_e, rng=None):
        super(GhostWeights, self).__init__()
        self.W = self._tensor('W', _uniform(rng, (n_h * n_u, n_e), n_u * n_e))
        self.B = self._tensor('B', _uniform(rng, (n_h, n_u), n_u))


class CpMpParams(ParameterSet):
    """Weights of a CP message-passing layer. The interior generator maps an encoded
    edge to an (n_h, 2 n_u) matrix acting on [u_i; u_j]. Each boundary type gets its
    own generator of (n_h, n_u) matrices acting on u_i alone."""

    def __init__(
        self,
        n_u,
        n_h,
        n_e,
        boundary_types=(),
        weight_activation='relu',
        message_activation='relu',
        rng=None,
    ):
        super(CpMpParams, self).__init__()
        self.n_u = n_u
        self.n_h = n_h
        self.n_e = n_e
        self.weight_activation = _check_activation(weight_activation)
        self.message_activation = _check_activation(message_activation)
        self.W = self._tensor('W', _uniform(rng, (n_h * 2 * n_u, n_e), 2 * n_u * n_e))
        self.B = self._tensor('B', _uniform(rng, (n_h, 2 * n_u), 2 * n_u))
        self.ghosts = OrderedDict()
        for boundary_type in boundary_types:
            ghost = GhostWeights(n_u, n_h, n_e, rng=rng)
            self.ghosts[boundary_type] = self._child('ghost_' + boundary_type, ghost)

    @staticmethod
    def count(n_u, n_h, n_e, n_boundary_types):
        interior = n_h * 2 * n_u * n_e + n_h * 2 * n_u
        return interior + n_boundary_types * (n_h * n_u * n_e + n_h * n_u)


class GhostEdgeSet(object):
    """Ghost edges of one boundary type: anchor nodes, their encoded ghost vectors and
    their flux weights"""

    def __init__(self, boundary_type, nodes, encodings, weights):
        self.boundary_type = boundary_type
        self.nodes = np.asarray(nodes, dtype=np.intp)
        self.encodings = encodings
        self.weights = np.asarray(weights, dtype=np.float64)

    def __len__(self):
        return len(self.nodes)


def _check_indices(indices, n_v):
    if len(indices) and (indices.min() < 0 or indices.max() >= n_v):
        raise IndexError('edge endpoint out of range for %d nodes' % n_v)


def cp_mp_forward(node_states, edge_encodings, edges, flux_weights, ghost_edges, params):
    """h_i = sum over edges (i, j) of w_ij sigma(W_ij [u_i; u_j]), with
    W_ij = sigma(<W, e_ij> + B), plus one term per ghost edge at i using the weights of
    that ghost edge's boundary type on u_i alone. edges holds (receiver i, sender j)
    pairs."""
    u = as_tensor(node_states)
    n_v = u.shape[0]
    if u.ndim != 2 or u.shape[1] != params.n_u:
        raise ShapeError('CP-MP node states have shape %s, expected (n, %d)' % (u.shape, params.n_u))
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    _check_indices(edges.reshape(-1), n_v)
    total = None
    if len(edges):
        receivers, senders = edges[:, 0], edges[:, 1]
        encodings = _as_rows(edge_encodings, params.n_e, 'edge encodings')
        if encodings.shape[0] != len(edges):
            raise ShapeError('%d edge encodings for %d edges' % (encodings.shape[0], len(edges)))
        pairs = concat([getitem(u, receivers), getitem(u, senders)], axis=1)
        weights = _generate_weights(encodings, params.W, params.B, params.n_h, 2 * params.n_u)
        weights = activation(params.weight_activation, weights)
        messages = activation(params.message_activation, bmatvec(weights, pairs))
        messages = scale_rows(messages, Tensor(np.asarray(flux_weights, dtype=np.float64)))
        total = scatter_add_rows(messages, receivers, n_v)
    for group in ghost_edges:
        if group.boundary_type not in params.ghosts:
            raise MeshError('no ghost weights for boundary type %r' % group.boundary_type)
        if not len(group):
            continue
        _check_indices(group.nodes, n_v)
        ghost = params.ghosts[group.boundary_type]
        encodings = _as_rows(group.encodings, params.n_e, 'ghost edge encodings')
        weights = _generate_weights(encodings, ghost.W, ghost.B, params.n_h, params.n_u)
        weights = activation(params.weight_activation, weights)
        messages = activation(params.message_activation, bmatvec(weights, getitem(u, group.nodes)))
        messages = scale_rows(messages, Tensor(group.weights))
        contribution = scatter_add_rows(messages, group.nodes, n_v)
        total = contribution if total is None else add(total, contribution)
    if total is None:
        total = Tensor(np.zeros((n_v, params.n_h)))
    return total


def _format_shape(shape):
    return '[' + ','.join(str(n) for n in shape) + ']'


def _parse_shape(text):
    inner = text.strip()[1:-1]
    if not inner:
        return ()
    return tuple(int(n) for n in inner.split(','))


def save_parameters(directory, named):
    """Write tensors to directory/params.bin as one flat little-endian float64 stream,
    with directory/params.txt listing name, shape and byte offset of each. `named` is a
    ParameterSet or an iterable of (name, Tensor or array) pairs."""
    if isinstance(named, ParameterSet):
        named = named.named_tensors()
    os.makedirs(directory, exist_ok=True)
    lines = [MANIFEST_HEADER]
    offset = 0
    with open(os.path.join(directory, STREAM_NAME), 'wb') as stream:
        for name, value in named:
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            array = np.ascontiguousarray(data, dtype=FLOAT_DTYPE)
            stream.write(array.tobytes())
            lines.append('%s %s %d' % (name, _format_shape(array.shape), offset))
            offset += array.nbytes
    with open(os.path.join(directory, MANIFEST_NAME), 'w') as f:
        f.write('\n'.join(lines) + '\n')


def load_parameters(directory):
    """Read a parameter stream written by save_parameters(), returning an ordered
    mapping of name to array"""
    with open(os.path.join(directory, STREAM_NAME), 'rb') as stream:
        raw = stream.read()
    values = OrderedDict()
    with open(os.path.join(directory, MANIFEST_NAME)) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            name, shape, offset = line.split()
            shape = _parse_shape(shape)
            count = int(np.prod(shape)) if shape else 1
            offset = int(offset)
            if offset + 8 * count > len(raw):
                raise ValueError('parameter %s runs past the end of %s' % (name, STREAM_NAME))
            array = np.frombuffer(raw, dtype=FLOAT_DTYPE, count=count, offset=offset)
            values[name] = array.astype(np.float64).reshape(shape)
    return values
