"""Reference PDE solvers and dataset generators.

Every solver here returns a Trajectory: an array of frames shaped
(n_frames, *grid_shape, n_channels) together with the grid description and the
parameters that produced it. Frame 0 is always the initial condition.

Explicit schemes refuse parameter combinations outside their stability limits with
UnstableParameters, unless allow_unstable=True is passed. Rollouts that blow up are a
measured outcome rather than an error: the step at which values first became
non-finite (or exceeded a bound) is stored in Trajectory.diverged_at.
"""

import os
import ast
import logging

import numpy as np

from cpnet.utils import (
    ShapeError,
    UnstableParameters,
    NonFiniteError,
    write_float64,
    read_float64,
)

logger = logging.getLogger(__name__)

BOUNDARY_KINDS = ('periodic', 'dirichlet', 'mixed')

# Diffusion demonstration: unit domain, u(0) = 0, u(L) = 1, zero interior start.
DIFFUSION_NU = 1.0
DIFFUSION_DT = 5e-5
DIFFUSION_STEPS = 2000
DIFFUSION_DX_TRAIN = 0.01
DIFFUSION_DX_TEST = 0.02

# Advection-diffusion cases as (dx, dy, (a_x, a_y), nu), all on 51 x 51 grids:
ADVDIFF_TRAIN_CASES = (
    (0.03, 0.02, (1.0, -0.8), 0.035),
    (0.02, 0.02, (1.2, 1.2), 0.035),
    (0.02, 0.024, (-1.0, 1.0), 0.04),
)
ADVDIFF_TEST_CASE = (0.02, 0.016, (-1.5, 1.5), 0.02)
ADVDIFF_GRID = (51, 51)

# 2D Burgers cases as (nu, dx, dy):
BURGERS2D_TRAIN_CASES = (
    (0.01, 0.02, 0.02),
    (0.012, 0.03, 0.02),
    (0.012, 0.02, 0.03),
)
BURGERS2D_TEST_CASE = (0.015, 0.016, 0.016)

# 1D Burgers closure study:
CLOSURE_NU = 0.01
CLOSURE_LENGTH = 2 * np.pi
CLOSURE_N_HIGH = 2048
CLOSURE_N_LOW = 32
CLOSURE_DT = 0.0075
CLOSURE_FRAMES = 267
CLOSURE_SUBSTEPS = 16
# Fewest RK4 steps per output interval that keep the fine run stable
CLOSURE_MIN_SUBSTEPS = 8
IC_ENERGY_LAWS = ('as-printed', 'min-variant')


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class GridSpec(object):
    """Uniform 1D or 2D grid. boundary is 'periodic', 'dirichlet' (with
    boundary_values giving the fixed end values) or 'mixed'."""

    def __init__(self, shape, spacing, dt, boundary='periodic', boundary_values=None):
        self.shape = tuple(int(n) for n in shape)
        self.spacing = tuple(float(h) for h in spacing)
        self.dt = float(dt)
        self.boundary = boundary
        self.boundary_values = None if boundary_values is None else tuple(float(v) for v in boundary_values)
        if len(self.shape) not in (1, 2) or len(self.spacing) != len(self.shape):
            raise ShapeError('grid must be 1D or 2D with one spacing per axis')
        if min(self.shape) < 3:
            raise ShapeError('grid extents must be at least 3, got %s' % (self.shape,))
        if min(self.spacing) <= 0 or self.dt <= 0:
            raise ValueError('grid spacings and time step must be positive')
        if boundary not in BOUNDARY_KINDS:
            raise ValueError('unknown boundary kind %r' % boundary)

    @property
    def dims(self):
        return len(self.shape)

    def __eq__(self, other):
        return isinstance(other, GridSpec) and self.describe() == other.describe()

    def describe(self):
        return {
            'grid.shape': list(self.shape),
            'grid.spacing': list(self.spacing),
            'grid.dt': self.dt,
            'grid.boundary': self.boundary,
            'grid.boundary_values': (
                None if self.boundary_values is None else list(self.boundary_values)
            ),
        }


class Trajectory(object):
    """Time-ordered field snapshots sharing one grid (or one FV mesh when grid is
    None). frames has shape (n_frames, *spatial_shape, n_channels)."""

    MANIFEST = 'manifest.txt'

    def __init__(self, frames, grid=None, channels=('u',), params=None, seed=None, diverged_at=None):
        frames = np.asarray(frames, dtype=np.float64)
        channels = tuple(channels)
        if frames.ndim < 2 or frames.shape[0] < 1:
            raise ShapeError('a trajectory needs at least one frame')
        if frames.shape[-1] != len(channels):
            msg = 'frames have %d channels but %d channel names were given'
            raise ShapeError(msg % (frames.shape[-1], len(channels)))
        if grid is not None and frames.shape[1:-1] != grid.shape:
            raise ShapeError('frames %s do not match grid %s' % (frames.shape, grid.shape))
        self.frames = frames
        self.grid = grid
        self.channels = channels
        self.params = dict(params or {})
        self.seed = seed
        self.diverged_at = diverged_at

    def __len__(self):
        return self.frames.shape[0]

    @property
    def final(self):
        return self.frames[-1]

    def field(self, channel=0):
        """All frames of one channel, without the channel axis"""
        if isinstance(channel, str):
            channel = self.channels.index(channel)
        return self.frames[..., channel]

    def slice(self, start, stop=None):
        return Trajectory(
            self.frames[start:stop], self.grid, self.channels, self.params, self.seed
        )

    def save(self, directory):
        """Write a text manifest plus one little-endian float64 binary per frame"""
        os.makedirs(directory, exist_ok=True)
        lines = ['# cpnet trajectory']
        lines.append('frames = %d' % len(self))
        lines.append('shape = %r' % list(self.frames.shape[1:]))
        lines.append('channels = %s' % ','.join(self.channels))
        lines.append('seed = %r' % self.seed)
        lines.append('diverged_at = %r' % self.diverged_at)
        if self.grid is not None:
            for key, value in self.grid.describe().items():
                lines.append('%s = %r' % (key, value))
        for key in sorted(self.params):
            lines.append('param.%s = %r' % (key, _plain(self.params[key])))
        with open(os.path.join(directory, self.MANIFEST), 'w') as f:
            f.write('\n'.join(lines) + '\n')
        for k, frame in enumerate(self.frames):
            write_float64(os.path.join(directory, 'frame_%05d.bin' % k), frame)

    @classmethod
    def load(cls, directory):
        entries = {}
        with open(os.path.join(directory, cls.MANIFEST)) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith('#'):
                    continue
                key, _, value = line.partition(' = ')
                entries[key] = value
        n_frames = int(entries['frames'])
        shape = tuple(ast.literal_eval(entries['shape']))
        frames = np.empty((n_frames,) + shape)
        for k in range(n_frames):
            frames[k] = read_float64(os.path.join(directory, 'frame_%05d.bin' % k), shape)
        grid = None
        if 'grid.shape' in entries:
            values = ast.literal_eval(entries['grid.boundary_values'])
            grid = GridSpec(
                ast.literal_eval(entries['grid.shape']),
                ast.literal_eval(entries['grid.spacing']),
                float(entries['grid.dt']),
                ast.literal_eval(entries['grid.boundary']),
                values,
            )
        params = {}
        for key, value in entries.items():
            if key.startswith('param.'):
                params[key[len('param.'):]] = ast.literal_eval(value)
        return cls(
            frames,
            grid,
            entries['channels'].split(','),
            params,
            ast.literal_eval(entries['seed']),
            ast.literal_eval(entries['diverged_at']),
        )

    def to_csv(self, path):
        """One row per (frame, grid point) with the point's indices and every channel.
        Meant for small cases, to be inspected with external tools."""
        spatial = self.frames.shape[1:-1]
        index_names = ['i', 'j', 'k'][: len(spatial)]
        header = ['frame'] + index_names + list(self.channels)
        with open(path, 'w') as f:
            f.write(','.join(header) + '\n')
            for k, frame in enumerate(self.frames):
                for index in np.ndindex(*spatial):
                    values = ['%r' % float(v) for v in frame[index]]
                    f.write(','.join([str(k)] + [str(i) for i in index] + values) + '\n')


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def _first_bad_step(field, bound=None):
    if not np.all(np.isfinite(field)):
        return True
    return bound is not None and np.max(np.abs(field)) > bound


def diffusion1d_increment(u, C):
    """FTCS increment C (u[i-1] - 2 u[i] + u[i+1]) at interior nodes, zero at the two
    Dirichlet end nodes"""
    du = np.zeros_like(u)
    du[1:-1] = C * (u[:-2] - 2 * u[1:-1] + u[2:])
    return du


def solve_diffusion1d(
    nu, dt, dx, steps, u0=None, u_left=0.0, u_right=1.0, length=1.0, allow_unstable=False
):
    C = nu * dt / dx ** 2
    if C > 0.5 + 1e-12 and not allow_unstable:
        raise UnstableParameters('diffusion number %.6g exceeds 0.5' % C)
    n = int(round(length / dx)) + 1
    if u0 is None:
        u = np.zeros(n)
    else:
        u = np.array(u0, dtype=np.float64).reshape(-1)
        if len(u) != n:
            raise ShapeError('initial condition has %d nodes, grid has %d' % (len(u), n))
    u[0] = u_left
    u[-1] = u_right
    frames = np.empty((steps + 1, n, 1))
    frames[0, :, 0] = u
    for k in range(steps):
        u = u + diffusion1d_increment(u, C)
        frames[k + 1, :, 0] = u
    grid = GridSpec((n,), (dx,), dt, 'dirichlet', (u_left, u_right))
    params = {'nu': nu, 'C': C, 'length': length}
    return Trajectory(frames, grid, ('u',), params)


def advdiff2d_increment(u, a, nu, dx, dy, dt):
    """First-order upwind advection with sign-split coefficients plus centred
    diffusion, on a periodic grid whose first axis is x"""
    ax, ay = a
    u_xm = np.roll(u, 1, axis=0)
    u_xp = np.roll(u, -1, axis=0)
    u_ym = np.roll(u, 1, axis=1)
    u_yp = np.roll(u, -1, axis=1)
    advection = (
        (ax + abs(ax)) / (2 * dx) * (u - u_xm)
        + (ax - abs(ax)) / (2 * dx) * (u_xp - u)
        + (ay + abs(ay)) / (2 * dy) * (u - u_ym)
        + (ay - abs(ay)) / (2 * dy) * (u_yp - u)
    )
    diffusion = (u_xm - 2 * u + u_xp) / dx ** 2 + (u_ym - 2 * u + u_yp) / dy ** 2
    return -dt * advection + nu * dt * diffusion


def advdiff2d_stability(a, nu, dx, dy, dt):
    return dt * (abs(a[0]) / dx + abs(a[1]) / dy) + 2 * nu * dt * (1 / dx ** 2 + 1 / dy ** 2)


def solve_advdiff2d(a, nu, dx, dy, dt, steps, u0, allow_unstable=False):
    number = advdiff2d_stability(a, nu, dx, dy, dt)
    if number > 1 + 1e-12 and not allow_unstable:
        raise UnstableParameters('upwind stability number %.6g exceeds 1' % number)
    u = np.array(u0, dtype=np.float64)
    if u.ndim == 3:
        u = u[..., 0]
    frames = np.empty((steps + 1,) + u.shape + (1,))
    frames[0, ..., 0] = u
    for k in range(steps):
        u = u + advdiff2d_increment(u, a, nu, dx, dy, dt)
        frames[k + 1, ..., 0] = u
    grid = GridSpec(u.shape, (dx, dy), dt, 'periodic')
    params = {'a': list(a), 'nu': nu}
    return Trajectory(frames, grid, ('u',), params)


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def rect_frame_ic(nx, ny, thickness=3, extent=(0.25, 0.75), offset=(0, 0)):
    """Indicator of a square frame: 1 on a band `thickness` cells wide whose outer edge
    is the box extent x extent (as fractions of the domain), 0 elsewhere. Lower and
    upper edges are rounded symmetrically, so a symmetric extent gives a frame with
    the symmetries of the grid. offset rolls the result periodically."""
    if nx < 9 or ny < 9:
        raise ShapeError('frame initial condition needs at least a 9 x 9 grid')
    field = np.zeros((nx, ny))
    box = []
    for n in (nx, ny):
        lo = _round_half_up(extent[0] * (n - 1))
        hi = (n - 1) - _round_half_up((1 - extent[1]) * (n - 1))
        if hi - lo + 1 <= 2 * thickness:
            raise ShapeError('frame of thickness %d does not fit a %d-point axis' % (thickness, n))
        box.append((lo, hi))
    (xlo, xhi), (ylo, yhi) = box
    field[xlo : xhi + 1, ylo : yhi + 1] = 1.0
    field[xlo + thickness : xhi + 1 - thickness, ylo + thickness : yhi + 1 - thickness] = 0.0
    return np.roll(field, tuple(offset), axis=(0, 1))


def burgers2d_coefficients(field, nu, dx, dy, dt):
    """The four coefficients of the FTCS update written as
    du = p1 (u[i+1] - u[i-1]) + p2 (u[j+1] - u[j-1])
       + p3 (u[i-1] - 2u + u[i+1]) + p4 (u[j-1] - 2u + u[j+1]).
    p1 and p2 are fields, p3 and p4 are scalars."""
    p1 = -dt / (2 * dx) * field[..., 0]
    p2 = -dt / (2 * dy) * field[..., 1]
    p3 = nu * dt / dx ** 2
    p4 = nu * dt / dy ** 2
    return p1, p2, p3, p4


def burgers2d_increment(field, nu, dx, dy, dt):
    p1, p2, p3, p4 = burgers2d_coefficients(field, nu, dx, dy, dt)
    d_x = np.roll(field, -1, axis=0) - np.roll(field, 1, axis=0)
    d_y = np.roll(field, -1, axis=1) - np.roll(field, 1, axis=1)
    d_xx = np.roll(field, 1, axis=0) - 2 * field + np.roll(field, -1, axis=0)
    d_yy = np.roll(field, 1, axis=1) - 2 * field + np.roll(field, -1, axis=1)
    return p1[..., None] * d_x + p2[..., None] * d_y + p3 * d_xx + p4 * d_yy


def solve_burgers2d(nu, dx, dy, dt, steps, ic, allow_unstable=False):
    field = np.array(ic, dtype=np.float64)
    if field.ndim != 3 or field.shape[-1] != 2:
        raise ShapeError('Burgers initial condition must be (nx, ny, 2), got %s' % (field.shape,))
    diffusion_number = nu * dt * (1 / dx ** 2 + 1 / dy ** 2)
    courant = dt * (np.max(np.abs(field[..., 0])) / dx + np.max(np.abs(field[..., 1])) / dy)
    if (diffusion_number > 0.5 or courant > 1) and not allow_unstable:
        msg = 'unstable Burgers parameters: diffusion number %.4g, Courant number %.4g'
        raise UnstableParameters(msg % (diffusion_number, courant))
    frames = np.empty((steps + 1,) + field.shape)
    frames[0] = field
    for k in range(steps):
        field = field + burgers2d_increment(field, nu, dx, dy, dt)
        if not np.all(np.isfinite(field)):
            raise NonFiniteError('Burgers solution became non-finite at step %d' % (k + 1))
        frames[k + 1] = field
    grid = GridSpec(field.shape[:2], (dx, dy), dt, 'periodic')
    return Trajectory(frames, grid, ('u', 'v'), {'nu': nu})


def burgers2d_g(x, y, a, b):
    """Periodic generating function sum over i, j in [-L, L] of
    a_ij sin(2 pi (i x + j y)) + b_ij cos(2 pi (i x + j y)), one value per velocity
    component. a and b have shape (2L+1, 2L+1, 2); x and y broadcast together."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    L = (a.shape[0] - 1) // 2
    waves = np.arange(-L, L + 1)
    phase = 2 * np.pi * (
        waves[:, None] * x[..., None, None] + waves[None, :] * y[..., None, None]
    )
    return np.einsum('...ij,ijc->...c', np.sin(phase), a) + np.einsum(
        '...ij,ijc->...c', np.cos(phase), b
    )


def sample_burgers2d_ic(seed, nx, ny, dx, dy, L=4):
    """u = 2 g / max|g| + c with random Gaussian coefficients and c ~ U(-1, 1), per
    velocity component, sampled on the points (i dx, j dy)"""
    rng = _rng(seed)
    a = rng.standard_normal((2 * L + 1, 2 * L + 1, 2))
    b = rng.standard_normal((2 * L + 1, 2 * L + 1, 2))
    c = rng.uniform(-1.0, 1.0, size=2)
    x = np.arange(nx)[:, None] * dx
    y = np.arange(ny)[None, :] * dy
    g = burgers2d_g(x, y, a, b)
    return 2 * g / np.max(np.abs(g), axis=(0, 1)) + c


def ic_energy(k, law='as-printed'):
    k = np.asarray(k, dtype=np.float64)
    if law == 'as-printed':
        return np.maximum(k, 5.0) ** (-5.0 / 3.0)
    if law == 'min-variant':
        return np.minimum(k, 5.0) ** (-5.0 / 3.0)
    raise ValueError('unknown IC energy law %r, expected one of %s' % (law, IC_ENERGY_LAWS))


def sample_burgers1d_ic(seed, n=CLOSURE_N_HIGH, energy_law='as-printed', n_modes=8, length=CLOSURE_LENGTH):
    """Sum over k = 1..n_modes of sqrt(2 E(k)) sin(k x + beta_k), beta_k ~ U(-pi, pi)"""
    rng = _rng(seed)
    beta = rng.uniform(-np.pi, np.pi, size=n_modes)
    x = np.arange(n) * (length / n)
    k = np.arange(1, n_modes + 1)
    amplitudes = np.sqrt(2 * ic_energy(k, energy_law))
    wavenumbers = k * (2 * np.pi / length)
    return np.sum(amplitudes[:, None] * np.sin(wavenumbers[:, None] * x[None, :] + beta[:, None]), axis=0)


def solve_burgers1d_spectral(
    ic,
    nu=CLOSURE_NU,
    n_frames=CLOSURE_FRAMES,
    out_dt=CLOSURE_DT,
    substeps=CLOSURE_SUBSTEPS,
    length=CLOSURE_LENGTH,
):
    """Fourier-Galerkin solution of u_t + u u_x = nu u_xx on a periodic domain, RK4 in
    time with `substeps` steps per output interval and the quadratic term dealiased by
    the 2/3 rule. Returns n_frames frames spaced out_dt apart, the first being ic."""
    if substeps < CLOSURE_MIN_SUBSTEPS:
        msg = 'need at least %d RK4 steps per output interval, got %d'
        raise ValueError(msg % (CLOSURE_MIN_SUBSTEPS, substeps))
    u = np.array(ic, dtype=np.float64)
    n = len(u)
    k = 2 * np.pi / length * np.fft.rfftfreq(n, d=1.0 / n)
    keep = np.abs(np.fft.rfftfreq(n, d=1.0 / n)) < n / 3.0
    dt = out_dt / substeps

    def rhs(u_hat):
        physical = np.fft.irfft(u_hat, n)
        quadratic = np.fft.rfft(physical * physical) * keep
        return -0.5j * k * quadratic - nu * k ** 2 * u_hat

    u_hat = np.fft.rfft(u)
    frames = np.empty((n_frames, n, 1))
    frames[0, :, 0] = u
    for frame in range(1, n_frames):
        for _ in range(substeps):
            k1 = rhs(u_hat)
            k2 = rhs(u_hat + 0.5 * dt * k1)
            k3 = rhs(u_hat + 0.5 * dt * k2)
            k4 = rhs(u_hat + dt * k3)
            u_hat = u_hat + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u_hat)):
            msg = 'spectral Burgers coefficients became non-finite at frame %d' % frame
            raise NonFiniteError(msg)
        frames[frame, :, 0] = np.fft.irfft(u_hat, n)
    grid = GridSpec((n,), (length / n,), out_dt, 'periodic')
    return Trajectory(frames, grid, ('u',), {'nu': nu, 'substeps': substeps})


def box_filter(u_high, n_low):
    """Average the last axis down to n_low points, each the mean of a block of
    n_high / n_low consecutive fine points. n_low must divide the fine count."""
    u_high = np.asarray(u_high, dtype=np.float64)
    n_high = u_high.shape[-1]
    if n_low < 1 or n_high % n_low:
        raise ShapeError('cannot box-filter %d points onto %d' % (n_high, n_low))
    return u_high.reshape(u_high.shape[:-1] + (n_low, n_high // n_low)).mean(axis=-1)


def periodic_derivatives(u, dx):
    """Centred first and second differences along the last axis"""
    forward = np.roll(u, -1, axis=-1)
    backward = np.roll(u, 1, axis=-1)
    return (forward - backward) / (2 * dx), (backward - 2 * u + forward) / dx ** 2


def closure_inputs(u, nu, dx):
    """The two-channel closure input [u u_x, nu u_xx], shaped (..., n, 2)"""
    u_x, u_xx = periodic_derivatives(u, dx)
    return np.stack([u * u_x, nu * u_xx], axis=-1)


def closure_truth(u_bar, nu, dt=None, dx=None):
    """The closure term that makes u_t + u u_x - nu u_xx + C = 0 hold exactly on the
    filtered frames: C* = -(u_t + u u_x - nu u_xx), with u_t the forward difference
    to the next frame (backward difference on the last frame). u_bar is a Trajectory or
    an array of frames shaped (n_frames, n)."""
    if isinstance(u_bar, Trajectory):
        dt = u_bar.grid.dt if dt is None else dt
        dx = u_bar.grid.spacing[0] if dx is None else dx
        u_bar = u_bar.field(0)
    u = np.asarray(u_bar, dtype=np.float64)
    if u.shape[0] < 2:
        raise ShapeError('closure truth needs at least two frames')
    u_t = np.empty_like(u)
    u_t[:-1] = (u[1:] - u[:-1]) / dt
    u_t[-1] = (u[-1] - u[-2]) / dt
    u_x, u_xx = periodic_derivatives(u, dx)
    return -(u_t + u * u_x - nu * u_xx)


def coarse_burgers_rhs(u, nu, dx):
    u_x, u_xx = periodic_derivatives(u, dx)
    return -u * u_x + nu * u_xx


def solve_closed_burgers1d(u0, nu, dt, steps, closure_model, dx=None, length=CLOSURE_LENGTH, divergence_bound=1e3):
    """Forward Euler on u_t = -u u_x + nu u_xx - C(u), with C = closure_model(u, step)
    evaluated on the online solution. Integration stops when the solution stops being
    finite or exceeds divergence_bound in magnitude; later frames are NaN and the step
    is recorded in diverged_at."""
    u = np.array(u0, dtype=np.float64).reshape(-1)
    n = len(u)
    if dx is None:
        dx = length / n
    frames = np.full((steps + 1, n, 1), np.nan)
    frames[0, :, 0] = u
    diverged_at = None
    for k in range(steps):
        closure = np.asarray(closure_model(u, k), dtype=np.float64).reshape(-1)
        with np.errstate(over='ignore', invalid='ignore'):
            u = u + dt * (coarse_burgers_rhs(u, nu, dx) - closure)
        if _first_bad_step(u, divergence_bound):
            diverged_at = k + 1
            logger.info('closed Burgers rollout diverged at step %d', diverged_at)
            break
        frames[k + 1, :, 0] = u
    grid = GridSpec((n,), (dx,), dt, 'periodic')
    return Trajectory(frames, grid, ('u',), {'nu': nu}, diverged_at=diverged_at)


class ClosureDataset(object):
    """Filtered low-resolution trajectory with its closure targets"""

    def __init__(self, u_bar, target, nu, n_high, seed=None):
        if u_bar.shape != target.shape:
            raise ShapeError('closure targets %s do not match frames %s' % (target.shape, u_bar.shape))
        self.u_bar = u_bar
        self.target = target
        self.nu = nu
        self.n_high = n_high
        self.seed = seed

    @property
    def n_low(self):
        return self.u_bar.shape[1]

    @property
    def dx(self):
        return CLOSURE_LENGTH / self.n_low

    def sliced(self, frames):
        """The first `frames` frames"""
        return ClosureDataset(self.u_bar[:frames], self.target[:frames], self.nu, self.n_high, self.seed)


def make_closure_dataset(ic, n_low=CLOSURE_N_LOW, nu=CLOSURE_NU, dt=CLOSURE_DT, n_frames=CLOSURE_FRAMES, substeps=CLOSURE_SUBSTEPS, high=None, seed=None):
    """High-resolution spectral run, box filter of every frame, closure targets.
    Pass a precomputed high-resolution Trajectory as `high` to filter it onto several
    coarse grids without re-solving."""
    if high is None:
        high = solve_burgers1d_spectral(ic, nu, n_frames, dt, substeps)
    u_bar = box_filter(high.field(0), n_low)
    target = closure_truth(u_bar, nu, dt, CLOSURE_LENGTH / n_low)
    return ClosureDataset(u_bar, target, nu, high.frames.shape[1], seed)


class BoundarySpec(object):
    """Behaviour of each boundary type for the finite-volume solver. kinds maps a type
    name to 'dirichlet', 'outflow' or 'insulated'. values maps dirichlet types to a
    constant or to a callable value(t, face_centers) returning one value per face."""

    KINDS = ('dirichlet', 'outflow', 'insulated')

    def __init__(self, kinds, values=None):
        for name, kind in kinds.items():
            if kind not in self.KINDS:
                raise ValueError('boundary type %s has unknown kind %r' % (name, kind))
        self.kinds = dict(kinds)
        self.values = dict(values or {})
        for name, kind in self.kinds.items():
            if kind == 'dirichlet' and name not in self.values:
                raise ValueError('dirichlet boundary %s needs a value' % name)

    def value(self, boundary_type, t, face_centers):
        value = self.values[boundary_type]
        if callable(value):
            return np.asarray(value(t, face_centers), dtype=np.float64)
        return np.full(len(face_centers), float(value))


class _FvOperator(object):
    """Geometry of an FvMesh arranged for vectorised flux evaluation"""

    def __init__(self, mesh, a, nu, bc):
        a = np.asarray(a, dtype=np.float64)
        interior = mesh.interior_faces()
        self.owner = mesh.face_cells[interior, 0]
        self.neighbour = mesh.face_cells[interior, 1]
        offset = mesh.centers[self.neighbour] + mesh.face_shifts[interior] - mesh.centers[self.owner]
        self.distance = np.linalg.norm(offset, axis=1)
        self.normal_velocity = offset @ a / self.distance
        self.area = mesh.face_areas[interior]
        self.volumes = mesh.volumes
        self.nu = nu
        self.bc = bc
        self.boundary = []
        for boundary_type, faces in mesh.boundary_faces().items():
            if boundary_type not in bc.kinds:
                raise ValueError('no boundary condition for boundary type %s' % boundary_type)
            cells = mesh.face_cells[faces, 0]
            outward = mesh.face_centers[faces] - mesh.centers[cells]
            distance = np.linalg.norm(outward, axis=1)
            self.boundary.append(
                (
                    boundary_type,
                    bc.kinds[boundary_type],
                    cells,
                    mesh.face_centers[faces],
                    mesh.face_areas[faces],
                    distance,
                    outward @ a / distance,
                )
            )

    def stability_number(self, dt):
        rate = np.zeros_like(self.volumes)
        face_rate = self.area * (np.abs(self.normal_velocity) + self.nu / self.distance)
        np.add.at(rate, self.owner, face_rate)
        np.add.at(rate, self.neighbour, face_rate)
        for _, kind, cells, _, area, distance, un in self.boundary:
            if kind == 'dirichlet':
                np.add.at(rate, cells, area * (np.abs(un) + self.nu / distance))
            elif kind == 'outflow':
                np.add.at(rate, cells, area * np.abs(un))
        return float(np.max(dt * rate / self.volumes))

    def increment(self, q, t, dt):
        un = self.normal_velocity
        upwind = np.where(un >= 0, q[self.owner], q[self.neighbour])
        flux = self.area * (un * upwind - self.nu * (q[self.neighbour] - q[self.owner]) / self.distance)
        net = np.zeros_like(q)
        np.add.at(net, self.owner, flux)
        np.add.at(net, self.neighbour, -flux)
        for boundary_type, kind, cells, centers, area, distance, un_b in self.boundary:
            if kind == 'insulated':
                continue
            q_i = q[cells]
            if kind == 'outflow':
                flux_b = area * un_b * q_i
            else:
                q_b = self.bc.value(boundary_type, t, centers)
                upwind_b = np.where(un_b >= 0, q_i, q_b)
                flux_b = area * (un_b * upwind_b - self.nu * (q_b - q_i) / distance)
            np.add.at(net, cells, flux_b)
        return -dt * net / self.volumes


def solve_fv_advdiff_unstructured(mesh, a, nu, dt, steps, bc, ic, allow_unstable=False):
    """Cell-centred finite-volume advection-diffusion: upwind advective face flux,
    two-point diffusive flux, explicit Euler. Boundary faces follow bc: 'dirichlet'
    faces impose a face value, 'outflow' faces carry the cell value out (zero
    gradient), 'insulated' faces carry no flux."""
    operator = _FvOperator(mesh, a, nu, bc)
    number = operator.stability_number(dt)
    if number > 1 + 1e-12 and not allow_unstable:
        raise UnstableParameters('finite-volume stability number %.6g exceeds 1' % number)
    q = np.array(ic, dtype=np.float64).reshape(-1)
    if len(q) != mesh.n_cells:
        raise ShapeError('initial condition has %d values for %d cells' % (len(q), mesh.n_cells))
    frames = np.empty((steps + 1, mesh.n_cells, 1))
    frames[0, :, 0] = q
    for k in range(steps):
        q = q + operator.increment(q, k * dt, dt)
        frames[k + 1, :, 0] = q
    params = {'a': np.asarray(a, dtype=float).tolist(), 'nu': nu, 'dt': dt}
    return Trajectory(frames, None, ('c',), params)
