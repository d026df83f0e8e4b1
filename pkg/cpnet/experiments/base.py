import os
import logging

import numpy as np

from cpnet.cp_layers import save_parameters
from cpnet.experiments.metrics import UNBOUNDED
from cpnet.utils import SeedStreams

logger = logging.getLogger(__name__)

STAGES = ('gen-data', 'train', 'rollout', 'eval')

CURVE_FILE = 'loss.txt'
FIT_FILE = 'fit.txt'


class Experiment(object):
    """One reproducible experiment. Work is split into cells, one per (variant,
    replicate), and stages, each of which persists its output under `out` so the
    stages can run in separate invocations:

        gen-data    generate(replicate)                 out/data/s<r>/
        train       train_cell(variant, replicate)      out/cells/<variant>-s<r>/
        rollout     rollout_cell(variant, replicate)    out/cells/<variant>-s<r>/rollout/
        eval        evaluate_cell(variant, replicate)   rows of (metric, value)

    Every cell draws its randomness from the run's SeedStreams, keyed by the
    replicate, so all variants of one replicate see the same data. Cells of one
    stage do not depend on each other and may run concurrently."""

    id = None
    description = ''

    def __init__(self, config, out=None):
        self.config = config
        self.out = out or config.output
        self.streams = SeedStreams(config.seed)

    @property
    def variants(self):
        return self.config.variants

    @property
    def replicates(self):
        return self.config.replicates

    def cells(self):
        return [(variant, r) for r in self.replicates for variant in self.variants]

    @staticmethod
    def cell_name(variant, replicate):
        return '%s-s%d' % (variant, replicate)

    def cell_dir(self, variant, replicate, *parts):
        return os.path.join(self.out, 'cells', self.cell_name(variant, replicate), *parts)

    def data_dir(self, replicate, *parts):
        return os.path.join(self.out, 'data', 's%d' % replicate, *parts)

    def rng(self, purpose, replicate):
        return self.streams.generator(purpose, replicate)

    def run_stage(self, stage, variant, replicate):
        """Entry point for the cell pool"""
        if stage == 'gen-data':
            return self.generate(replicate)
        if stage == 'train':
            curve = self.train_cell(variant, replicate)
            save_curve(self.cell_dir(variant, replicate), curve)
            return len(curve)
        if stage == 'rollout':
            return self.rollout_cell(variant, replicate)
        if stage == 'eval':
            return self.evaluate_cell(variant, replicate)
        raise ValueError('unknown stage %r' % stage)

    def generate(self, replicate):
        raise NotImplementedError

    def train_cell(self, variant, replicate):
        """Train and checkpoint one cell, returning its loss curve"""
        raise NotImplementedError

    def rollout_cell(self, variant, replicate):
        raise NotImplementedError

    def evaluate_cell(self, variant, replicate):
        """Metric rows (name, value) of one trained and rolled-out cell"""
        raise NotImplementedError

    def evaluate_references(self, replicate):
        """Rows (variant, name, value) for reference solutions that need no training"""
        return []

    def summarize(self, report):
        """Rows (name, value) that compare variants across all seeds"""
        return []

    def plot(self, report, directory):
        pass

    def wins(self, report, metric, better, worse, other_metric=None):
        """Number of replicates in which variant `better` has a strictly smaller
        `metric` than variant `worse`. Unbounded values lose to any number."""
        count = 0
        for r in self.replicates:
            try:
                a = report.metric(better, r, metric)
                b = report.metric(worse, r, other_metric or metric)
            except KeyError:
                continue
            if _ordered(a) < _ordered(b):
                count += 1
        return count


def _ordered(value):
    return np.inf if value is UNBOUNDED else value


def divergence_rows(trajectory, prefix=''):
    rows = [(prefix + 'diverged', int(trajectory.diverged_at is not None))]
    if trajectory.diverged_at is not None:
        rows.append((prefix + 'diverged_at', int(trajectory.diverged_at)))
    return rows


def save_curve(directory, curve):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CURVE_FILE), 'w') as f:
        for loss in curve:
            f.write('%r\n' % float(loss))


def load_curve(directory):
    path = os.path.join(directory, CURVE_FILE)
    if not os.path.exists(path):
        return []
    with open(path) as f:
        return [float(line) for line in f if line.strip()]


def save_fit(directory, fit):
    """Checkpoint an exact-fit result: the final weights, the weights Adam reached
    before any polish, and the polish residual"""
    save_parameters(directory, fit.model)
    save_parameters(os.path.join(directory, 'adam'), fit.adam_values.items())
    with open(os.path.join(directory, FIT_FILE), 'w') as f:
        f.write('polish_residual = %r\n' % fit.polish_residual)


def load_polish_residual(directory):
    with open(os.path.join(directory, FIT_FILE)) as f:
        text = f.read().partition(' = ')[2].strip()
    return None if text == 'None' else float(text)
