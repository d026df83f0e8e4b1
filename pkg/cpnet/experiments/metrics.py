"""Error metrics and spectra. A rollout that diverged has no finite error: metrics
of such rollouts are UNBOUNDED, written to CSV as 'Inf.'."""

import numpy as np

from cpnet.pde_lab import Trajectory
from cpnet.utils import ShapeError

MAE_MODES = ('avg-steps', 'final-step')


class UNBOUNDED(object):
    """Sentinel for the metric of a rollout whose values left the finite numbers or
    exceeded the divergence bound"""
    pass


def is_unbounded(value):
    return value is UNBOUNDED


def format_metric(value):
    """CSV text of a metric value: repr of the float, 'Inf.' when unbounded"""
    if value is UNBOUNDED:
        return 'Inf.'
    if isinstance(value, (bool, np.bool_)):
        return '1' if value else '0'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def parse_metric(text):
    if text == 'Inf.':
        return UNBOUNDED
    return float(text)


def _frames(value):
    if isinstance(value, Trajectory):
        return value.frames, value.diverged_at
    return np.asarray(value, dtype=np.float64), None


def _pair(prediction, truth):
    pred, diverged_at = _frames(prediction)
    true, _ = _frames(truth)
    if pred.shape != true.shape:
        raise ShapeError('prediction %s and truth %s differ in shape' % (pred.shape, true.shape))
    unbounded = diverged_at is not None or not np.all(np.isfinite(pred))
    return pred, true, unbounded


def metric_mae(prediction, truth, mode='avg-steps'):
    """Mean absolute error. 'avg-steps' averages over every frame and point,
    'final-step' over the points of the last frame only."""
    if mode not in MAE_MODES:
        raise ValueError('unknown MAE mode %r, expected one of %s' % (mode, MAE_MODES))
    pred, true, unbounded = _pair(prediction, truth)
    if unbounded:
        return UNBOUNDED
    if mode == 'final-step':
        pred, true = pred[-1], true[-1]
    return float(np.mean(np.abs(pred - true)))


def metric_rmse_normalized(prediction, truth):
    """RMSE after standardising both fields with the per-channel mean and population
    standard deviation of the truth, taken over all frames and points, averaged over
    channels. The last axis is the channel axis."""
    pred, true, unbounded = _pair(prediction, truth)
    axes = tuple(range(true.ndim - 1))
    mean = true.mean(axis=axes)
    std = true.std(axis=axes)
    if np.any(std == 0):
        raise ValueError('cannot normalise by a channel with zero variance')
    if unbounded:
        return UNBOUNDED
    difference = (pred - mean) / std - (true - mean) / std
    return float(np.mean(np.sqrt(np.mean(difference ** 2, axis=axes))))


def masked_mae(prediction, truth, nodes):
    """MAE over every frame restricted to the given nodes (axis 1)"""
    pred, true, unbounded = _pair(prediction, truth)
    if unbounded:
        return UNBOUNDED
    nodes = np.asarray(nodes, dtype=np.intp)
    if len(nodes) == 0:
        raise ValueError('no nodes to measure')
    return float(np.mean(np.abs(pred[:, nodes] - true[:, nodes])))


def energy_spectrum_1d(u, length=2 * np.pi, x=None):
    """Energy spectrum of a periodic field on a uniform grid.

    Returns the wavenumbers k_m = 2 pi m / length for m = 0..n/2 and the spectral
    density e(k_m) with sum(e) * dk equal to mean(u ** 2). This is the transform of
    the field's periodic autocorrelation, folded onto non-negative k. If the sample
    positions x are given they must be uniformly spaced."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise ShapeError('spectrum needs a 1D field, got shape %s' % (u.shape,))
    n = len(u)
    if x is not None:
        spacing = np.diff(np.asarray(x, dtype=np.float64))
        if len(spacing) != n - 1 or not np.allclose(spacing, spacing[0]):
            raise ValueError('energy spectrum needs uniformly spaced samples')
        length = spacing[0] * n
    coefficients = np.fft.rfft(u) / n
    energy = np.abs(coefficients) ** 2
    # rfft drops the negative wavenumbers; fold their energy onto the positive ones
    energy[1:] *= 2
    if n % 2 == 0:
        energy[-1] /= 2
    dk = 2 * np.pi / length
    k = dk * np.arange(len(energy))
    return k, energy / dk


def seed_majority(wins, n):
    """True when a comparison holds on a strict majority of n seeds"""
    return wins * 2 > n


def metric_max_abs(prediction, truth):
    """Largest absolute pointwise error over every frame"""
    pred, true, unbounded = _pair(prediction, truth)
    if unbounded:
        return UNBOUNDED
    return float(np.max(np.abs(pred - true)))
