"""Closure networks for the coarse 1D Burgers equation, and the small networks that
fit explicit discretisations exactly.

Closure networks take the filtered field u on the coarse grid and return the closure
term C at every grid point. The CNN pair works on q = [u u_x, nu u_xx]: a pointwise
dense layer (a self-conditioned CP-Dense layer in the CP variant) followed by a
periodic 1D convolution. The DDP pair works on the local stencil of u: eight dense
layers applied at every point, the first one conditioned on the local q in the CP
variant. Inputs and outputs are scaled by their largest magnitude over the training
data; the scales are stored with the weights as non-trainable tensors.

The exact-fit networks reproduce one explicit time step:

    DiffusionConvNet    du = (w C) conv u, ideal w = [1, -2, 1]
    BurgersCpCnn        du = sum of four CP-Conv branches conditioned on the FTCS
                        coefficients p1..p4
    AdvDiffNet          a dense layer turning the sign-split velocity into the
                        weights of an upwind kernel, plus a diffusion kernel

Every exact-fit network is linear in some of its weights (all of them, or all but
the dense layer), so after Adam those weights can be polished by linear least
squares; see least_squares_polish().
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from cpnet.ndtensor import (
    Tensor,
    activation,
    matmul,
    mean_all,
    minimize,
    mul,
    reshape,
    square,
    sub,
    ConstantRate,
    ExponentialDecay,
    AdamState,
)
from cpnet.cp_layers import (
    ParameterSet,
    ConvParams,
    CpConvBranch,
    CpConvParams,
    CpDenseParams,
    DenseParams,
    conv_forward,
    cp_conv_forward,
    cp_dense_forward,
    dense_forward,
)
from cpnet.pde_lab import (
    Trajectory,
    GridSpec,
    closure_inputs,
    burgers2d_coefficients,
    CLOSURE_LENGTH,
)
from cpnet.utils import ConfigError, ShapeError

logger = logging.getLogger(__name__)

CLOSURE_KINDS = ('cnn', 'cp-cnn', 'ddp', 'cp-ddp')
DEFAULT_WIDTHS = {'cnn': 20, 'cp-cnn': 20, 'ddp': 40, 'cp-ddp': 40}

# Learnt advection-diffusion weights as published, W2 given as one row per unit of
# the dense layer with taps (u[i-1], u[i], u[i+1]):
PUBLISHED_ADVDIFF_WEIGHTS = OrderedDict(
    [
        ('W1', np.array([[0.33237486, 0.0], [0.0, -0.5253752]])),
        (
            'W2',
            np.array(
                [
                    [3.00869074, -3.00892553, -8.69012577e-5],
                    [2.38949641e-5, -1.90361486, 1.90334544],
                ]
            ),
        ),
        ('W3', np.array([0.99999235, -1.99994342, 1.00001345])),
    ]
)

# Upwind kernels an exact fit must produce for a > 0 and a < 0, and the diffusion
# kernel, all with taps (u[i-1], u[i], u[i+1]):
IDEAL_UPWIND_KERNELS = (np.array([1.0, -1.0, 0.0]), np.array([0.0, -1.0, 1.0]))
IDEAL_SECOND_DIFFERENCE = np.array([1.0, -2.0, 1.0])
IDEAL_CENTRAL_DIFFERENCE = np.array([-1.0, 0.0, 1.0])

# A Burgers rollout with values above this has grown without bound:
BURGERS_DIVERGENCE_BOUND = 10.0


@dataclass
class ClosureNetConfig:
    kind: str = 'cp-cnn'
    width: int = 0
    kernel: int = 5
    depth: int = 8
    stencil_radius: int = 3
    nu: float = 0.01

    def __post_init__(self):
        if self.kind not in CLOSURE_KINDS:
            raise ConfigError('unknown closure model %r, expected one of %s' % (self.kind, CLOSURE_KINDS))
        if not self.width:
            self.width = DEFAULT_WIDTHS[self.kind]
        if self.kernel % 2 == 0:
            raise ConfigError('closure convolution width must be odd, got %d' % self.kernel)
        if self.depth < 2:
            raise ConfigError('closure MLP needs at least 2 layers')


def _scale(values, axis=None):
    scale = np.max(np.abs(values), axis=axis)
    return np.where(scale > 0, scale, 1.0)


class ClosureNet(ParameterSet):
    kind = None

    def __init__(self, config):
        super(ClosureNet, self).__init__()
        self.config = config
        self.q_scale = self._tensor('q_scale', np.ones(2), trainable=False)
        self.u_scale = self._tensor('u_scale', np.ones(1), trainable=False)
        self.c_scale = self._tensor('c_scale', np.ones(1), trainable=False)

    def set_normalization(self, datasets):
        """Scale inputs and outputs by their largest magnitude over the training
        frames of datasets"""
        q = np.concatenate([closure_inputs(d.u_bar, d.nu, d.dx).reshape(-1, 2) for d in datasets])
        self.q_scale.data[...] = _scale(q, axis=0)
        self.u_scale.data[...] = _scale(np.concatenate([d.u_bar.reshape(-1) for d in datasets]))
        self.c_scale.data[...] = _scale(np.concatenate([d.target.reshape(-1) for d in datasets]))

    def normalized_inputs(self, u_bar):
        u_bar = np.asarray(u_bar, dtype=np.float64).reshape(-1)
        dx = CLOSURE_LENGTH / len(u_bar)
        return closure_inputs(u_bar, self.config.nu, dx) / self.q_scale.data

    def stencil(self, u_bar):
        """Rows of the local stencil u[i-r..i+r] / u_scale, periodic"""
        u_bar = np.asarray(u_bar, dtype=np.float64).reshape(-1) / self.u_scale.data[0]
        r = self.config.stencil_radius
        return np.stack([np.roll(u_bar, -d) for d in range(-r, r + 1)], axis=1)

    def forward_normalized(self, u_bar):
        raise NotImplementedError

    def forward(self, u_bar):
        return self.forward_normalized(u_bar).data * self.c_scale.data[0]

    def closure(self, u_bar, step=None):
        """Callable form for pde_lab.solve_closed_burgers1d()"""
        return self.forward(u_bar)


class CnnClosure(ClosureNet):
    kind = 'cnn'

    def __init__(self, config, rng=None):
        super(CnnClosure, self).__init__(config)
        self.first = self._child('first', DenseParams(2, config.width, 'relu', rng))
        self.conv = self._child('conv', ConvParams((config.kernel, config.width, 1), True, 'identity', rng))

    def hidden(self, q_hat):
        return dense_forward(q_hat, self.first)

    def forward_normalized(self, u_bar):
        q_hat = Tensor(self.normalized_inputs(u_bar))
        out = conv_forward(self.hidden(q_hat), self.conv)
        return reshape(out, (out.shape[0],))


class CpCnnClosure(CnnClosure):
    """The CNN with its dense layer replaced by a CP-Dense layer conditioned on its own
    input q"""

    kind = 'cp-cnn'

    def __init__(self, config, rng=None):
        ClosureNet.__init__(self, config)
        self.first = self._child('first', CpDenseParams(2, config.width, 2, 'identity', 'relu', rng))
        self.conv = self._child('conv', ConvParams((config.kernel, config.width, 1), True, 'identity', rng))

    def hidden(self, q_hat):
        return cp_dense_forward(q_hat, q_hat, self.first)


class DdpClosure(ClosureNet):
    kind = 'ddp'

    def __init__(self, config, rng=None):
        super(DdpClosure, self).__init__(config)
        n_in = 2 * config.stencil_radius + 1
        self.first = self._child('layer0', self._first_layer(n_in, config, rng))
        self.layers = []
        for i in range(1, config.depth):
            last = i == config.depth - 1
            n_out = 1 if last else config.width
            layer = DenseParams(config.width, n_out, 'identity' if last else 'swish', rng)
            self.layers.append(self._child('layer%d' % i, layer))

    def _first_layer(self, n_in, config, rng):
        return DenseParams(n_in, config.width, 'swish', rng)

    @property
    def n_layers(self):
        return 1 + len(self.layers)

    def first_forward(self, u_bar):
        return dense_forward(Tensor(self.stencil(u_bar)), self.first)

    def forward_normalized(self, u_bar):
        h = self.first_forward(u_bar)
        for layer in self.layers:
            h = dense_forward(h, layer)
        return reshape(h, (h.shape[0],))


class CpDdpClosure(DdpClosure):
    kind = 'cp-ddp'

    def _first_layer(self, n_in, config, rng):
        return CpDenseParams(n_in, config.width, 2, 'identity', 'swish', rng)

    def first_forward(self, u_bar):
        stencil = Tensor(self.stencil(u_bar))
        return cp_dense_forward(stencil, Tensor(self.normalized_inputs(u_bar)), self.first)


CLOSURE_NETS = {
    'cnn': CnnClosure,
    'cp-cnn': CpCnnClosure,
    'ddp': DdpClosure,
    'cp-ddp': CpDdpClosure,
}


def build_closure_net(config, rng=None):
    return CLOSURE_NETS[config.kind](config, rng)


def fit_closure(model, datasets, epochs=300, lr=0.001, frames=27, rng=None):
    """Adam at batch size 1 over the first `frames` frames of each dataset, on the MSE
    between normalised predicted and true closure terms. Sets the model's
    normalisation from the same frames first. Returns the loss curve."""
    training = [d.sliced(frames) for d in datasets]
    model.set_normalization(training)
    c_scale = model.c_scale.data[0]
    samples = [(u, c / c_scale) for d in training for u, c in zip(d.u_bar, d.target)]

    def loss(sample):
        return mean_all(square(sub(model.forward_normalized(sample[0]), Tensor(sample[1]))))

    params = model.parameters()
    curve = minimize(params, samples, loss, epochs, ConstantRate(lr), AdamState(params), rng, model.kind)
    logger.info('fitted %s closure: %d samples, final loss %.6e', model.kind, len(samples), curve[-1])
    return curve


def offline_errors(model, dataset):
    """Mean and max absolute error of single-step closure predictions on the true
    filtered frames"""
    errors = np.abs(np.stack([model.forward(u) for u in dataset.u_bar]) - dataset.target)
    return float(np.mean(errors)), float(np.max(errors))


def least_squares_polish(tensors, predict, samples):
    """Set `tensors` to the least-squares solution of predict(sample) = target over
    all samples, for a predict() that is affine in those tensors. samples are
    (inputs, target) pairs. Returns the residual RMS."""
    originals = [t.data.copy() for t in tensors]
    sizes = [t.size for t in tensors]

    def assign(theta):
        start = 0
        for tensor, size in zip(tensors, sizes):
            tensor.data[...] = theta[start : start + size].reshape(tensor.shape)
            start += size

    def evaluate():
        return np.concatenate([np.asarray(predict(s[0]), dtype=np.float64).reshape(-1) for s in samples])

    n = sum(sizes)
    try:
        assign(np.zeros(n))
        offset = evaluate()
        columns = []
        for k in range(n):
            theta = np.zeros(n)
            theta[k] = 1.0
            assign(theta)
            columns.append(evaluate() - offset)
    except Exception:
        for tensor, original in zip(tensors, originals):
            tensor.data[...] = original
        raise
    targets = np.concatenate([np.asarray(s[1], dtype=np.float64).reshape(-1) for s in samples])
    theta, _, _, _ = np.linalg.lstsq(np.stack(columns, axis=1), targets - offset, rcond=None)
    assign(theta)
    residual = evaluate() - targets
    return float(np.sqrt(np.mean(residual ** 2)))


class FitResult(object):
    """A trained exact-fit network with its loss curve, the weights Adam reached, and
    the residual of the least-squares polish if one was run"""

    def __init__(self, model, curve, adam_values, polish_residual=None):
        self.model = model
        self.curve = curve
        self.adam_values = adam_values
        self.polish_residual = polish_residual

    @property
    def polished(self):
        return self.polish_residual is not None


def _fit(model, samples, predict, epochs, schedule, rng, polish, polish_tensors, name):
    def loss(sample):
        return mean_all(square(sub(predict(sample[0]), Tensor(sample[1]))))

    params = model.parameters()
    curve = minimize(params, samples, loss, epochs, schedule, AdamState(params), rng, name)
    adam_values = model.values()
    residual = None
    if polish:
        residual = least_squares_polish(polish_tensors, lambda x: predict(x).data, samples)
        logger.info('%s: least-squares polish residual %.3e', name, residual)
    return FitResult(model, curve, adam_values, residual)


def _rollout(step, u0, steps, grid, channels, params, bound=None):
    u = np.array(u0, dtype=np.float64)
    frames = np.full((steps + 1,) + u.shape, np.nan)
    frames[0] = u
    diverged_at = None
    for k in range(steps):
        with np.errstate(over='ignore', invalid='ignore'):
            u = u + step(u)
            bad = not np.all(np.isfinite(u)) or (bound is not None and np.max(np.abs(u)) > bound)
        if bad:
            diverged_at = k + 1
            logger.warning('network rollout diverged at step %d', diverged_at)
            break
        frames[k + 1] = u
    if frames.ndim == len(grid.shape) + 1:
        frames = frames[..., None]
    return Trajectory(frames, grid, channels, params, diverged_at=diverged_at)


class DiffusionConvNet(ParameterSet):
    """One FTCS diffusion step on a 1D array of nodes including the two Dirichlet end
    nodes. The CP version computes du = C (w conv u); the plain version du = w conv u,
    which cannot follow a change of C. Increments at the end nodes are masked to zero."""

    def __init__(self, cp=True, rng=None):
        super(DiffusionConvNet, self).__init__()
        self.cp = cp
        kernel = np.zeros((3, 1, 1)) if rng is None else rng.uniform(-1.0, 1.0, size=(3, 1, 1))
        if cp:
            self.layer = self._child('layer', CpConvParams([CpConvBranch(kernel, 0, 'none')]))
            self.kernel = self.layer.branches[0].kernel
        else:
            self.layer = self._child('layer', ConvParams((3, 1, 1)))
            self.layer.kernel.data[...] = kernel
            self.kernel = self.layer.kernel

    @classmethod
    def ideal(cls):
        net = cls(cp=True)
        net.kernel.data[:, 0, 0] = IDEAL_SECOND_DIFFERENCE
        return net

    def increment(self, u, C):
        u = Tensor(np.asarray(u, dtype=np.float64).reshape(-1, 1))
        if self.cp:
            du = cp_conv_forward(u, [C], self.layer)
        else:
            du = conv_forward(u, self.layer)
        mask = np.ones(u.shape)
        mask[0] = mask[-1] = 0.0
        return reshape(mul(du, Tensor(mask)), (u.shape[0],))

    def rollout(self, u0, C, steps, dx=None, dt=None):
        u0 = np.asarray(u0, dtype=np.float64)
        grid = GridSpec((len(u0),), (dx or 1.0,), dt or 1.0, 'dirichlet', (u0[0], u0[-1]))
        return _rollout(lambda u: self.increment(u, C).data, u0, steps, grid, ('u',), {'C': C})


def fit_diffusion_cpconv(trajectory, steps=50, epochs=300, lr=0.01, lr_final=None, rng=None, polish=True, cp=True, init_rng=None):
    """Fit the diffusion network on the first `steps` one-step pairs of an FTCS run"""
    C = trajectory.params['C']
    u = trajectory.field(0)
    samples = [(u[k], u[k + 1] - u[k]) for k in range(min(steps, len(u) - 1))]
    model = DiffusionConvNet(cp=cp, rng=init_rng)
    schedule = ConstantRate(lr) if lr_final is None else ExponentialDecay(lr, lr_final, epochs)
    name = 'cp-conv' if cp else 'conv'
    return _fit(
        model,
        samples,
        lambda x: model.increment(x, C),
        epochs,
        schedule,
        rng,
        polish,
        [model.kernel],
        name,
    )


class BurgersCpCnn(ParameterSet):
    """du = (w1 p1) conv u + (w2 p2) conv u + (w3 p3) conv u + (w4 p4) conv u for the
    two-component field u. w1 and w3 are 3 x 1 stencils along x, w2 and w4 are 1 x 3
    stencils along y, one per component: 24 values in all."""

    def __init__(self, rng=None):
        super(BurgersCpCnn, self).__init__()
        branches = []
        for i, shape in enumerate([(3, 1, 2), (1, 3, 2), (3, 1, 2), (1, 3, 2)]):
            kernel = np.zeros(shape) if rng is None else rng.uniform(-1.0, 1.0, size=shape)
            branches.append(CpConvBranch(kernel, i, 'none'))
        self.layer = self._child('layer', CpConvParams(branches))

    @property
    def kernels(self):
        return [b.kernel for b in self.layer.branches]

    @classmethod
    def ideal(cls):
        net = cls()
        w1, w2, w3, w4 = net.kernels
        for c in range(2):
            w1.data[:, 0, c] = IDEAL_CENTRAL_DIFFERENCE
            w2.data[0, :, c] = IDEAL_CENTRAL_DIFFERENCE
            w3.data[:, 0, c] = IDEAL_SECOND_DIFFERENCE
            w4.data[0, :, c] = IDEAL_SECOND_DIFFERENCE
        return net

    def increment(self, field, nu, dx, dy, dt):
        field = np.asarray(field, dtype=np.float64)
        p1, p2, p3, p4 = burgers2d_coefficients(field, nu, dx, dy, dt)
        return cp_conv_forward(Tensor(field), [Tensor(p1), Tensor(p2), p3, p4], self.layer)


class BurgersCnn(ParameterSet):
    """Plain 3 x 3 convolution from two channels to two: 36 values"""

    def __init__(self, rng=None):
        super(BurgersCnn, self).__init__()
        self.layer = self._child('layer', ConvParams((3, 3, 2, 2), rng=rng))

    def increment(self, field, nu, dx, dy, dt):
        return conv_forward(Tensor(np.asarray(field, dtype=np.float64)), self.layer)


def burgers_rollout(model, ic, nu, dx, dy, dt, steps, bound=BURGERS_DIVERGENCE_BOUND):
    """Roll a Burgers network forward; exceeding `bound` in magnitude or leaving the
    finite numbers counts as divergence"""
    ic = np.asarray(ic, dtype=np.float64)
    grid = GridSpec(ic.shape[:2], (dx, dy), dt, 'periodic')

    def step(u):
        return model.increment(u, nu, dx, dy, dt).data

    return _rollout(step, ic, steps, grid, ('u', 'v'), {'nu': nu}, bound)


def fit_burgers(model, pairs, epochs=2000, lr=0.01, lr_final=None, rng=None, polish=True):
    """pairs are (field, increment, (nu, dx, dy, dt)) one-step training pairs"""
    samples = [((field, case), du) for field, du, case in pairs]

    def predict(x):
        field, (nu, dx, dy, dt) = x
        return model.increment(field, nu, dx, dy, dt)

    schedule = ConstantRate(lr) if lr_final is None else ExponentialDecay(lr, lr_final, epochs)
    name = 'cp-cnn' if isinstance(model, BurgersCpCnn) else 'cnn'
    return _fit(model, samples, predict, epochs, schedule, rng, polish, model.parameters(), name)


def fit_burgers_cpcnn(pairs, epochs=2000, lr=0.01, lr_final=None, rng=None, polish=True, init_rng=None):
    return fit_burgers(BurgersCpCnn(init_rng), pairs, epochs, lr, lr_final, rng, polish)


class AdvDiffNet(ParameterSet):
    """One upwind advection-diffusion step from a dense layer and two CP-Conv layers.

    For each axis the velocity component a enters as the sign-split pair
    s = [a + |a|, a - |a|], and h = relu(W1 s). The advection kernel along that axis
    is (dt/dx) sum_m h_m W2[..., m]; the diffusion kernel is W3, scaled by
    nu dt/dx^2. Branches along y act on the transposed field. With
    W1 = diag(c1/2, -c2/2), W2 taps [1/c1, -1/c1, 0] and [0, -1/c2, 1/c2] and
    W3 = [1, -2, 1] this is the first-order upwind scheme for any c1, c2 > 0."""

    def __init__(self, rng=None):
        super(AdvDiffNet, self).__init__()
        if rng is None:
            w1 = np.zeros((2, 2))
            w2 = np.zeros((3, 1, 1, 2))
            w3 = np.zeros((3, 1, 1, 1))
        else:
            # Column 0 sees a + |a| >= 0 and column 1 sees a - |a| <= 0, so these signs
            # keep both units active whatever the velocity.
            w1 = rng.uniform(0.25, 0.75, size=(2, 2)) * np.array([1.0, -1.0])
            w2 = rng.uniform(-1.0, 1.0, size=(3, 1, 1, 2))
            w3 = rng.uniform(-1.0, 1.0, size=(3, 1, 1, 1))
        self.W1 = self._tensor('W1', w1)
        self.W2 = self._tensor('W2', w2)
        self.W3 = self._tensor('W3', w3)

    @classmethod
    def ideal(cls, c1=1.0, c2=1.0):
        net = cls()
        net.W1.data[...] = np.diag([0.5 * c1, -0.5 * c2])
        net.W2.data[:, 0, 0, 0] = IDEAL_UPWIND_KERNELS[0] / c1
        net.W2.data[:, 0, 0, 1] = IDEAL_UPWIND_KERNELS[1] / c2
        net.W3.data[:, 0, 0, 0] = IDEAL_SECOND_DIFFERENCE
        return net

    def advection_kernel(self, velocity):
        s = Tensor(np.array([[velocity + abs(velocity)], [velocity - abs(velocity)]]))
        h = activation('relu', matmul(self.W1, s))
        kernel = matmul(reshape(self.W2, (3, 2)), h)
        return reshape(kernel, (3, 1, 1, 1))

    def increment(self, u, a, nu, dx, dy, dt):
        u = np.asarray(u, dtype=np.float64)
        field = Tensor(u[..., None] if u.ndim == 2 else u)
        branches = [
            CpConvBranch(self.advection_kernel(a[0]), 0, 'none'),
            CpConvBranch(self.advection_kernel(a[1]), 1, 'y'),
            CpConvBranch(self.W3, 2, 'none'),
            CpConvBranch(self.W3, 3, 'y'),
        ]
        conditions = [dt / dx, dt / dy, nu * dt / dx ** 2, nu * dt / dy ** 2]
        du = cp_conv_forward(field, conditions, CpConvParams(branches))
        return reshape(du, field.shape[:2])

    def effective_kernels(self):
        """The advection kernels produced for a = +1 and a = -1, and the diffusion
        kernel. These do not depend on the scale family of the weights."""
        positive = self.advection_kernel(1.0).data.reshape(3)
        negative = self.advection_kernel(-1.0).data.reshape(3)
        return positive, negative, self.W3.data.reshape(3).copy()


def advdiff_rollout(model, u0, a, nu, dx, dy, dt, steps):
    u0 = np.asarray(u0, dtype=np.float64)
    grid = GridSpec(u0.shape, (dx, dy), dt, 'periodic')

    def step(u):
        return model.increment(u, a, nu, dx, dy, dt).data

    return _rollout(step, u0, steps, grid, ('u',), {'a': list(a), 'nu': nu})


class AdvDiffCnn(ParameterSet):
    """Plain 3 x 3 convolution baseline for the advection-diffusion step"""

    def __init__(self, rng=None):
        super(AdvDiffCnn, self).__init__()
        self.layer = self._child('layer', ConvParams((3, 3, 1, 1), rng=rng))

    def increment(self, u, a, nu, dx, dy, dt):
        u = np.asarray(u, dtype=np.float64)
        du = conv_forward(Tensor(u[..., None]), self.layer)
        return reshape(du, u.shape)


def fit_advdiff(model, snapshots, epochs=10000, lr=0.1, lr_final=0.0003, rng=None, polish=True):
    """snapshots are (u, du, (a, nu, dx, dy, dt)) one-step pairs. The polish solves for
    the kernel weights with the dense layer held at its trained value."""
    samples = [((u, case), du) for u, du, case in snapshots]

    def predict(x):
        u, (a, nu, dx, dy, dt) = x
        return model.increment(u, a, nu, dx, dy, dt)

    if isinstance(model, AdvDiffNet):
        linear, name = [model.W2, model.W3], 'cp-net'
    else:
        linear, name = model.parameters(), 'cnn'
    schedule = ExponentialDecay(lr, lr_final, epochs) if lr_final else ConstantRate(lr)
    return _fit(model, samples, predict, epochs, schedule, rng, polish, linear, name)


def fit_advdiff_cpnet(snapshots, epochs=10000, lr=0.1, lr_final=0.0003, rng=None, polish=True, init_rng=None):
    return fit_advdiff(AdvDiffNet(init_rng), snapshots, epochs, lr, lr_final, rng, polish)


def matches_to_decimals(values, ideal, decimals=4):
    """True when every value lies within one unit of the last decimal place of its
    ideal, so -1.99994342 agrees with -2 to 4 decimals"""
    values = np.asarray(values, dtype=np.float64)
    ideal = np.asarray(ideal, dtype=np.float64)
    if values.shape != ideal.shape:
        raise ShapeError('cannot compare %s with %s' % (values.shape, ideal.shape))
    return bool(np.all(np.abs(values - ideal) < 10.0 ** (-decimals)))
