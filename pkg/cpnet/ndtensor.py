"""Dense float64 tensors with tape-based reverse-mode differentiation.

A Tensor wraps a numpy array. Operations performed while a Tape is active on the
current thread, and that involve at least one tensor being tracked by that tape, are
appended to the tape together with a closure computing the vector-Jacobian product.
Tracking starts at tensors created with requires_grad=True (trainable parameters) and
spreads to every result computed from them.

    with Tape() as tape:
        loss = mean_all(square(matmul(x, w) - y))
    backward(tape, loss, [w])
    adam_step(state, [w])

There is deliberately no general broadcasting: two operands of an elementwise op either
have equal shapes or one of them is a scalar. Where layers need something that would
otherwise broadcast (adding a bias to every row, scaling every row by its own factor)
there is an explicit op for it.
"""

import threading
import logging

import numpy as np

from cpnet.utils import ShapeError, NonFiniteError

logger = logging.getLogger(__name__)

DTYPE = np.float64
LAYER_NORM_EPS = 1e-5
ACTIVATIONS = ('relu', 'swish', 'identity')

_local = threading.local()


def active_tape():
    """The tape recording on this thread, or None"""
    return getattr(_local, 'tape', None)


class Tensor(object):
    """A float64 array that may take part in a recorded computation.

    `data` is always a float64 numpy array owned by the tensor. `grad` is populated by
    backward() for tensors with requires_grad=True. `node_id` is assigned when the
    tensor first appears on a tape, and identifies it within that tape."""

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.node_id = None
        self._tape = None

    @classmethod
    def _wrap(cls, array):
        # Internal constructor for op outputs: the array is freshly computed, so there
        # is no need to copy it.
        tensor = cls.__new__(cls)
        tensor.data = np.asarray(array, dtype=DTYPE)
        tensor.requires_grad = False
        tensor.grad = None
        tensor.name = None
        tensor.node_id = None
        tensor._tape = None
        return tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        name = '' if self.name is None else ' %r' % self.name
        return '<Tensor%s shape=%s requires_grad=%s>' % (name, self.shape, self.requires_grad)

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', other, self)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __rsub__(self, other):
        return elementwise('sub', other, self)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', other, self)

    def __truediv__(self, other):
        return elementwise('div', self, other)

    def __rtruediv__(self, other):
        return elementwise('div', other, self)

    def __neg__(self):
        return elementwise('mul', self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class TapeEntry(object):
    __slots__ = ('op', 'inputs', 'output', 'input_ids', 'output_id', 'backward')

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.input_ids = tuple(t.node_id for t in inputs)
        self.output_id = output.node_id
        self.backward = backward


class Tape(object):
    """Ordered record of differentiable operations. Entries are appended as operations
    execute, so the list is already in topological order and backward() only needs to
    walk it in reverse.

    Use as a context manager to make the tape active on the current thread. Tapes nest:
    leaving the inner block re-activates the outer tape."""

    def __init__(self):
        self.entries = []
        self.leaves = []
        self._next_id = 0
        self._previous = None

    def __enter__(self):
        self._previous = active_tape()
        _local.tape = self
        return self

    def __exit__(self, *args):
        _local.tape = self._previous
        self._previous = None

    def __len__(self):
        return len(self.entries)

    def _new_id(self):
        node_id = self._next_id
        self._next_id += 1
        return node_id

    def tracks(self, tensor):
        return tensor._tape is self

    def _register_leaf(self, tensor):
        tensor._tape = self
        tensor.node_id = self._new_id()
        self.leaves.append(tensor)

    def _record(self, op, inputs, output, backward_fn):
        for tensor in inputs:
            if tensor.requires_grad and tensor._tape is not self:
                self._register_leaf(tensor)
        output._tape = self
        output.node_id = self._new_id()
        self.entries.append(TapeEntry(op, inputs, output, backward_fn))

    def backward(self, loss, params=None):
        """Propagate d(loss)/d(node) from the loss back to every tracked leaf. Each
        leaf with requires_grad gets its `.grad` set. Tensors in `params` that did not
        take part in the computation get a zero gradient. Returns the list of gradients
        of `params` if given."""
        if loss.size != 1:
            raise ShapeError('loss must be a scalar, got shape %s' % (loss.shape,))
        if loss._tape is not self:
            raise ValueError('loss was not recorded on this tape')
        grads = {loss.node_id: np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            g = grads.pop(entry.output_id, None)
            if g is None:
                continue
            input_grads = entry.backward(g)
            for tensor, input_grad in zip(entry.inputs, input_grads):
                if input_grad is None or tensor._tape is not self:
                    continue
                if tensor.node_id in grads:
                    grads[tensor.node_id] = grads[tensor.node_id] + input_grad
                else:
                    grads[tensor.node_id] = input_grad
        for leaf in self.leaves:
            if leaf.requires_grad:
                leaf.grad = grads.get(leaf.node_id, np.zeros_like(leaf.data))
        if params is None:
            return None
        result = []
        for param in params:
            if param._tape is not self:
                param.grad = np.zeros_like(param.data)
            result.append(param.grad)
        return result


def backward(tape, loss, params=None):
    return tape.backward(loss, params)


def _make(op, data, inputs, backward_fn):
    out = Tensor._wrap(data)
    tape = active_tape()
    if tape is not None:
        for tensor in inputs:
            if tensor.requires_grad or tensor._tape is tape:
                tape._record(op, inputs, out, backward_fn)
                break
    return out


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def elementwise(kind, a, b):
    """add, sub, mul or div of two equally shaped tensors, or a tensor and a scalar
    (a python number or a shape () tensor)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        msg = 'elementwise %s: shapes %s and %s differ' % (kind, a.shape, b.shape)
        raise ShapeError(msg)
    x, y = a.data, b.data
    if kind == 'add':
        data = x + y

        def backward_fn(g):
            return _reduce_to(g, x.shape), _reduce_to(g, y.shape)

    elif kind == 'sub':
        data = x - y

        def backward_fn(g):
            return _reduce_to(g, x.shape), _reduce_to(-g, y.shape)

    elif kind == 'mul':
        data = x * y

        def backward_fn(g):
            return _reduce_to(g * y, x.shape), _reduce_to(g * x, y.shape)

    elif kind == 'div':
        data = x / y

        def backward_fn(g):
            return _reduce_to(g / y, x.shape), _reduce_to(-g * x / (y * y), y.shape)

    else:
        raise ValueError('unknown elementwise op %r' % kind)
    return _make(kind, data, (a, b), backward_fn)


def add(a, b):
    return elementwise('add', a, b)


def sub(a, b):
    return elementwise('sub', a, b)


def mul(a, b):
    return elementwise('mul', a, b)


def div(a, b):
    return elementwise('div', a, b)


def square(x):
    x = as_tensor(x)
    xd = x.data
    return _make('square', xd * xd, (x,), lambda g: (2.0 * xd * g,))


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _make('sum', np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x):
    x = as_tensor(x)
    shape = x.shape
    n = max(x.size, 1)
    return _make(
        'mean', np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),)
    )


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError('matmul: cannot multiply %s by %s' % (a.shape, b.shape))
    x, y = a.data, b.data
    return _make('matmul', x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def bmatvec(m, v):
    """Batched matrix-vector product: (n, a, b) matrices times (n, b) vectors"""
    m = as_tensor(m)
    v = as_tensor(v)
    if m.ndim != 3 or v.ndim != 2 or m.shape[0] != v.shape[0] or m.shape[2] != v.shape[1]:
        raise ShapeError('bmatvec: cannot apply %s matrices to %s' % (m.shape, v.shape))
    md, vd = m.data, v.data
    data = np.einsum('nab,nb->na', md, vd)

    def backward_fn(g):
        return g[:, :, None] * vd[:, None, :], np.einsum('nab,na->nb', md, g)

    return _make('bmatvec', data, (m, v), backward_fn)


def reshape(x, shape):
    x = as_tensor(x)
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError('cannot reshape %s to %s' % (original, shape)) from None
    return _make('reshape', data, (x,), lambda g: (g.reshape(original),))


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError('transpose expects a matrix, got shape %s' % (x.shape,))
    return _make('transpose', x.data.T.copy(), (x,), lambda g: (g.T,))


def swap_axes01(x):
    """Exchange the first two axes, e.g. an (nx, ny, c) field to (ny, nx, c)"""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError('swap_axes01 needs at least two axes, got %s' % (x.shape,))
    data = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    return _make('swap_axes01', data, (x,), lambda g: (np.swapaxes(g, 0, 1),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError('concat: %s' % e) from None
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, boundaries, axis=axis))

    return _make('concat', data, tuple(tensors), backward_fn)


def getitem(x, index):
    """Indexing with numpy semantics: slices, integers, or integer arrays (gather).
    Repeated indices accumulate their gradients."""
    x = as_tensor(x)
    shape = x.shape
    data = np.array(x.data[index])

    def backward_fn(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make('getitem', data, (x,), backward_fn)


def scatter_add_rows(x, index, n_rows):
    """Sum the rows of x into n_rows output rows: out[index[k]] += x[k]. Rows of the
    output that no index refers to are zero. Accumulation follows the order of index,
    so results are deterministic."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != x.shape[:1]:
        raise ShapeError('scatter_add_rows: %d indices for %d rows' % (len(index), x.shape[0]))
    if len(index) and (index.min() < 0 or index.max() >= n_rows):
        raise IndexError('scatter_add_rows: row index out of range for %d rows' % n_rows)
    data = np.zeros((n_rows,) + x.shape[1:])
    np.add.at(data, index, x.data)
    return _make('scatter_add_rows', data, (x,), lambda g: (g[index],))


def add_rowwise(x, v):
    """x of shape (..., d) plus the vector v of shape (d,) added to every row"""
    x = as_tensor(x)
    v = as_tensor(v)
    if v.ndim != 1 or x.ndim < 1 or x.shape[-1] != v.shape[0]:
        raise ShapeError('add_rowwise: cannot add %s to rows of %s' % (v.shape, x.shape))
    d = v.shape[0]

    def backward_fn(g):
        return g, g.reshape(-1, d).sum(axis=0)

    return _make('add_rowwise', x.data + v.data, (x, v), backward_fn)


def scale_rows(x, s):
    """x of shape lead + (d,) with each length-d row multiplied by the matching entry of
    s, which has shape lead"""
    x = as_tensor(x)
    s = as_tensor(s)
    if x.shape[:-1] != s.shape:
        raise ShapeError('scale_rows: factors %s do not match rows of %s' % (s.shape, x.shape))
    xd, sd = x.data, s.data

    def backward_fn(g):
        return g * sd[..., None], (g * xd).sum(axis=-1)

    return _make('scale_rows', xd * sd[..., None], (x, s), backward_fn)


def activation(kind, x):
    x = as_tensor(x)
    if kind == 'identity':
        return x
    xd = x.data
    if kind == 'relu':
        mask = (xd > 0).astype(DTYPE)
        return _make('relu', xd * mask, (x,), lambda g: (g * mask,))
    if kind == 'swish':
        # tanh form of the logistic function, which cannot overflow:
        s = 0.5 * (1.0 + np.tanh(0.5 * xd))
        return _make('swish', xd * s, (x,), lambda g: (g * (s + xd * s * (1.0 - s)),))
    raise ValueError('unknown activation %r, expected one of %s' % (kind, ACTIVATIONS))


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalise over the last axis to zero mean and unit variance, then apply the
    per-feature gain and bias"""
    x = as_tensor(x)
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        msg = 'layer_norm: gain %s and bias %s must have shape (%d,)'
        raise ShapeError(msg % (gain.shape, bias.shape, d))
    xd = x.data
    centred = xd - xd.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std
    gd = gain.data

    def backward_fn(g):
        dnormed = g * gd
        dx = inv_std * (
            dnormed
            - dnormed.mean(axis=-1, keepdims=True)
            - normed * (dnormed * normed).mean(axis=-1, keepdims=True)
        )
        return dx, (g * normed).reshape(-1, d).sum(axis=0), g.reshape(-1, d).sum(axis=0)

    return _make('layer_norm', normed * gd + bias.data, (x, gain, bias), backward_fn)


def _check_odd(name, extents):
    for extent in extents:
        if extent % 2 == 0:
            raise ShapeError('%s: kernel extents must be odd, got %s' % (name, tuple(extents)))


def conv1d_periodic(u, kernel):
    """out[i, o] = sum over d, c of kernel[d, c, o] * u[(i + d - r) mod n, c], with
    r = (k - 1) / 2. This is a cross-correlation, as in most learning libraries."""
    u = as_tensor(u)
    kernel = as_tensor(kernel)
    if u.ndim != 2 or kernel.ndim != 3 or kernel.shape[1] != u.shape[1]:
        raise ShapeError('conv1d_periodic: kernel %s does not fit field %s' % (kernel.shape, u.shape))
    k = kernel.shape[0]
    _check_odd('conv1d_periodic', (k,))
    r = k // 2
    ud, kd = u.data, kernel.data
    shifted = [np.roll(ud, r - d, axis=0) for d in range(k)]
    data = np.zeros((ud.shape[0], kd.shape[2]))
    for d in range(k):
        data += shifted[d] @ kd[d]

    def backward_fn(g):
        dkernel = np.stack([s.T @ g for s in shifted])
        du = np.zeros_like(ud)
        for d in range(k):
            du += np.roll(g @ kd[d].T, d - r, axis=0)
        return du, dkernel

    return _make('conv1d_periodic', data, (u, kernel), backward_fn)


def conv2d_periodic(u, kernel):
    """2D analogue of conv1d_periodic. u is (nx, ny, c_in), kernel is
    (kx, ky, c_in, c_out); the first kernel axis runs along the first field axis."""
    u = as_tensor(u)
    kernel = as_tensor(kernel)
    if u.ndim != 3 or kernel.ndim != 4 or kernel.shape[2] != u.shape[2]:
        raise ShapeError('conv2d_periodic: kernel %s does not fit field %s' % (kernel.shape, u.shape))
    kx, ky = kernel.shape[:2]
    _check_odd('conv2d_periodic', (kx, ky))
    rx, ry = kx // 2, ky // 2
    ud, kd = u.data, kernel.data
    offsets = [(dx, dy) for dx in range(kx) for dy in range(ky)]
    shifted = [np.roll(ud, (rx - dx, ry - dy), axis=(0, 1)) for dx, dy in offsets]
    data = np.zeros(ud.shape[:2] + (kd.shape[3],))
    for (dx, dy), s in zip(offsets, shifted):
        data += s @ kd[dx, dy]

    def backward_fn(g):
        dkernel = np.zeros_like(kd)
        du = np.zeros_like(ud)
        for (dx, dy), s in zip(offsets, shifted):
            dkernel[dx, dy] = np.tensordot(s, g, axes=([0, 1], [0, 1]))
            du += np.roll(g @ kd[dx, dy].T, (dx - rx, dy - ry), axis=(0, 1))
        return du, dkernel

    return _make('conv2d_periodic', data, (u, kernel), backward_fn)


def depthwise_conv2d_periodic(u, kernel):
    """Periodic 2D convolution applying a separate (kx, ky) stencil to each channel.
    u is (nx, ny, c), kernel is (kx, ky, c); channels are not mixed."""
    u = as_tensor(u)
    kernel = as_tensor(kernel)
    if u.ndim != 3 or kernel.ndim != 3 or kernel.shape[2] != u.shape[2]:
        msg = 'depthwise_conv2d_periodic: kernel %s does not fit field %s'
        raise ShapeError(msg % (kernel.shape, u.shape))
    kx, ky = kernel.shape[:2]
    _check_odd('depthwise_conv2d_periodic', (kx, ky))
    rx, ry = kx // 2, ky // 2
    ud, kd = u.data, kernel.data
    offsets = [(dx, dy) for dx in range(kx) for dy in range(ky)]
    shifted = [np.roll(ud, (rx - dx, ry - dy), axis=(0, 1)) for dx, dy in offsets]
    data = np.zeros_like(ud)
    for (dx, dy), s in zip(offsets, shifted):
        data += s * kd[dx, dy]

    def backward_fn(g):
        dkernel = np.zeros_like(kd)
        du = np.zeros_like(ud)
        for (dx, dy), s in zip(offsets, shifted):
            dkernel[dx, dy] = (s * g).sum(axis=(0, 1))
            du += np.roll(g * kd[dx, dy], (dx - rx, dy - ry), axis=(0, 1))
        return du, dkernel

    return _make('depthwise_conv2d_periodic', data, (u, kernel), backward_fn)


class ConstantRate(object):
    def __init__(self, lr):
        self.lr = lr

    def __call__(self, epoch):
        return self.lr


class ExponentialDecay(object):
    """Learning rate decaying geometrically, once per epoch, from lr_initial at the
    first epoch to exactly lr_final at the last"""

    def __init__(self, lr_initial, lr_final, epochs):
        if lr_initial <= 0 or lr_final <= 0:
            raise ValueError('learning rates must be positive')
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.epochs = epochs

    def __call__(self, epoch):
        if self.epochs <= 1:
            return self.lr_initial
        fraction = epoch / (self.epochs - 1)
        return self.lr_initial * (self.lr_final / self.lr_initial) ** fraction


class AdamState(object):
    """Moment buffers and step counter for Adam. Buffers are matched to parameters by
    position, so the same parameter list must be passed to every adam_step()."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0


def adam_step(state, params=None, grads=None, lr=None):
    """One bias-corrected Adam update, applied to the parameter arrays in place"""
    if params is None:
        params = state.params
    if grads is None:
        grads = [p.grad for p in params]
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError(
            'adam_step: %d parameters, %d gradients, %d moment buffers'
            % (len(params), len(grads), len(state.m))
        )
    for param, grad, m in zip(params, grads, state.m):
        if grad is None or grad.shape != param.shape or m.shape != param.shape:
            shape = None if grad is None else grad.shape
            raise ShapeError('adam_step: gradient %s for parameter %s' % (shape, param.shape))
    if lr is None:
        lr = state.lr
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (param, grad) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1 - b1) * grad
        state.v[i] = b2 * state.v[i] + (1 - b2) * grad * grad
        m_hat = state.m[i] / (1 - b1 ** t)
        v_hat = state.v[i] / (1 - b2 ** t)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def minimize(params, samples, loss_fn, epochs, schedule, state=None, rng=None, name=''):
    """Train params with Adam at batch size 1. samples is a sequence, or a callable
    taking the epoch number and returning one (for data regenerated every epoch).
    loss_fn(sample) must return a scalar Tensor. Visits every sample exactly once per
    epoch, in order unless rng is given, in which case the order is shuffled. Returns
    the list of per-epoch mean losses."""
    params = list(params)
    if state is None:
        state = AdamState(params)
    curve = []
    for epoch in range(epochs):
        epoch_samples = samples(epoch) if callable(samples) else samples
        order = range(len(epoch_samples))
        if rng is not None:
            order = rng.permutation(len(epoch_samples))
        lr = schedule(epoch)
        total = 0.0
        for step, index in enumerate(order):
            with Tape() as tape:
                loss = loss_fn(epoch_samples[index])
            value = loss.item()
            if not np.isfinite(value):
                msg = '%snon-finite loss at epoch %d, step %d' % (
                    name + ': ' if name else '',
                    epoch,
                    step,
                )
                raise NonFiniteError(msg)
            tape.backward(loss, params)
            adam_step(state, params, lr=lr)
            total += value
        curve.append(total / max(len(epoch_samples), 1))
        logger.debug('%s epoch %d: loss %.6e, lr %.3e', name, epoch, curve[-1], lr)
    return curve


def numerical_gradient(f, tensor, step=1e-6):
    """Central finite-difference gradient of the scalar function f() with respect to
    the entries of tensor, which f must read through tensor.data"""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = float(f())
        flat[i] = original - step
        lower = float(f())
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2 * step)
    return grad
