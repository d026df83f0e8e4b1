"""Static figures for --plots. Only image files are produced."""

import os
import logging

import numpy as np
import matplotlib as mpl

mpl.use('agg')
import matplotlib.pyplot as plt

logger = logging.getLogger(__name__)


def _save(fig, path):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug('wrote %s', path)
    return path


def plot_field(path, field, title=''):
    """Heatmap of a 2D field, or of the first channel of a (nx, ny, c) field"""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3:
        field = field[..., 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    image = ax.imshow(field.T, origin='lower', cmap='viridis')
    fig.colorbar(image, ax=ax)
    ax.set_title(title)
    return _save(fig, path)


def plot_fields(path, fields, title=''):
    """Side-by-side heatmaps sharing one colour scale, fields a dict of name to 2D
    array"""
    arrays = [np.asarray(f, dtype=np.float64) for f in fields.values()]
    arrays = [a[..., 0] if a.ndim == 3 else a for a in arrays]
    values = np.concatenate([a[np.isfinite(a)] for a in arrays])
    if not values.size:
        values = np.zeros(1)
    fig, axes = plt.subplots(1, len(arrays), figsize=(4 * len(arrays), 3.6), squeeze=False)
    for ax, name, array in zip(axes[0], fields, arrays):
        image = ax.imshow(array.T, origin='lower', cmap='viridis', vmin=values.min(), vmax=values.max())
        ax.set_title(name)
    fig.colorbar(image, ax=list(axes[0]))
    fig.suptitle(title)
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_profiles(path, x, profiles, title='', xlabel='x', ylabel='u'):
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, values in profiles.items():
        ax.plot(x, values, label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, ls='--')
    ax.legend()
    return _save(fig, path)


def plot_spectra(path, spectra, title=''):
    """Log-log energy spectra, spectra a dict of name to (k, e). The k = 0 bin is
    left out."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (k, e) in spectra.items():
        ax.loglog(k[1:], e[1:], label=name)
    ax.set_xlabel('k')
    ax.set_ylabel('e(k)')
    ax.set_title(title)
    ax.grid(True, which='both', ls='--')
    ax.legend()
    return _save(fig, path)


def plot_losses(path, report, title=''):
    curves = {}
    for variant, seed, epoch, loss in report.losses:
        curves.setdefault('%s s%s' % (variant, seed), []).append(loss)
    if not curves:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve in curves.items():
        ax.semilogy(np.arange(len(curve)), curve, label=name)
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    ax.set_title(title or report.experiment_id)
    ax.grid(True, which='both', ls='--')
    ax.legend(fontsize='small')
    return _save(fig, path)
