import os
import csv
import logging
from collections import OrderedDict

from cpnet.experiments.metrics import UNBOUNDED, format_metric, parse_metric

logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
LOSS_FILE = 'loss.csv'
MANIFEST_FILE = 'manifest.txt'
CONFIG_FILE = 'config.ini'

METRICS_HEADER = ('experiment', 'variant', 'seed', 'metric', 'value')
LOSS_HEADER = ('variant', 'seed', 'epoch', 'loss')

# Seed label of rows that summarise all seeds of a run:
ALL_SEEDS = 'all'


class Report(object):
    """Results of one experiment run: metric rows, loss curves, divergences, stage
    failures and timings, with the effective configuration that produced them.

    Rows are kept in the order they were added. run_experiment() adds them in cell
    order, so two runs of the same configuration write identical CSV files."""

    def __init__(self, experiment_id, config_echo='', seed=0):
        self.experiment_id = experiment_id
        self.config_echo = config_echo
        self.seed = seed
        self.rows = []
        self.losses = []
        self.failures = []
        self.timings = OrderedDict()
        self.streams = []

    @property
    def ok(self):
        return not self.failures

    def add(self, variant, seed, metric, value):
        self.rows.append((variant, seed, metric, value))

    def add_curve(self, variant, seed, curve):
        for epoch, loss in enumerate(curve):
            self.losses.append((variant, seed, epoch, loss))

    def add_failure(self, failure):
        logger.error('%s', failure)
        self.failures.append(failure)

    def metric(self, variant, seed, metric):
        for row in self.rows:
            if row[:3] == (variant, seed, metric):
                return row[3]
        raise KeyError('no metric %s for %s seed %s' % (metric, variant, seed))

    def has(self, variant, seed, metric):
        try:
            self.metric(variant, seed, metric)
        except KeyError:
            return False
        return True

    def metric_names(self, variant=None):
        names = []
        for row in self.rows:
            if (variant is None or row[0] == variant) and row[2] not in names:
                names.append(row[2])
        return names

    def divergences(self):
        """(variant, seed, metric, step) for every rollout that diverged"""
        found = []
        for variant, seed, metric, value in self.rows:
            if metric.endswith('diverged_at') and value is not UNBOUNDED and value >= 0:
                found.append((variant, seed, metric, value))
        return found

    def write(self, directory):
        os.makedirs(directory, exist_ok=True)
        self.write_metrics(os.path.join(directory, METRICS_FILE))
        self.write_losses(os.path.join(directory, LOSS_FILE))
        self.write_manifest(os.path.join(directory, MANIFEST_FILE))

    def write_metrics(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(METRICS_HEADER)
            for variant, seed, metric, value in self.rows:
                writer.writerow((self.experiment_id, variant, seed, metric, format_metric(value)))

    def write_losses(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(LOSS_HEADER)
            for variant, seed, epoch, loss in self.losses:
                writer.writerow((variant, seed, epoch, repr(float(loss))))

    def write_manifest(self, path):
        lines = ['# cpnet run manifest']
        lines.append('experiment = %s' % self.experiment_id)
        lines.append('seed = %d' % self.seed)
        lines.append('')
        lines.append('[seed streams]')
        lines.extend(self.streams or ['none'])
        lines.append('')
        lines.append('[divergence]')
        divergences = self.divergences()
        if not divergences:
            lines.append('none')
        for variant, seed, metric, step in divergences:
            lines.append('%s seed %s: %s = %d' % (variant, seed, metric, step))
        lines.append('')
        lines.append('[failures]')
        if not self.failures:
            lines.append('none')
        for failure in self.failures:
            lines.append('%s %s: %s' % (failure.stage, failure.cell, failure.message))
        lines.append('')
        lines.append('[wall clock]')
        for stage, seconds in self.timings.items():
            lines.append('%s = %.3f s' % (stage, seconds))
        lines.append('')
        lines.append('[config]')
        lines.append(self.config_echo.rstrip('\n'))
        with open(path, 'w') as f:
            f.write('\n'.join(lines) + '\n')

    @classmethod
    def read_metrics(cls, path):
        """Rows of a metrics.csv as (experiment, variant, seed, metric, value), with
        values parsed back to floats or UNBOUNDED"""
        rows = []
        with open(path, newline='') as f:
            reader = csv.reader(f)
            header = next(reader)
            if tuple(header) != METRICS_HEADER:
                raise ValueError('%s is not a metrics file' % path)
            for experiment, variant, seed, metric, value in reader:
                rows.append((experiment, variant, seed, metric, parse_metric(value)))
        return rows
