import os
import logging
from time import monotonic

from cpnet.experiments.base import STAGES, load_curve
from cpnet.experiments.cases import EXPERIMENTS
from cpnet.experiments.pool import CellPool
from cpnet.experiments.report import Report, ALL_SEEDS, CONFIG_FILE, MANIFEST_FILE
from cpnet.experiments import plots
from cpnet.utils import ConfigError, StageFailure, _format_exc

logger = logging.getLogger(__name__)


def make_experiment(config, out=None):
    try:
        cls = EXPERIMENTS[config.experiment_id]
    except KeyError:
        raise ConfigError('unknown experiment id %r' % config.experiment_id) from None
    return cls(config, out)


def _run_cells(experiment, stage, cells, threads, report, skip):
    """Run one stage over cells (variant, replicate), recording failures in the
    report. Cells in `skip` failed an earlier stage and are not attempted. Returns
    the successful results by cell, and adds newly failed cells to skip."""
    todo = [cell for cell in cells if cell not in skip and (None, cell[1]) not in skip]
    pool = CellPool(experiment.run_stage, threads, name=stage)
    results = pool.map([(stage,) + cell for cell in todo])
    succeeded = {}
    for cell, result in zip(todo, results):
        variant, replicate = cell
        name = 's%d' % replicate if variant is None else experiment.cell_name(variant, replicate)
        if result.ok:
            succeeded[cell] = result.value
        else:
            report.add_failure(StageFailure(stage, name, result.value))
            skip.add(cell)
    return succeeded


def _evaluate(experiment, report, threads, skip):
    results = _run_cells(experiment, 'eval', experiment.cells(), threads, report, skip)
    for variant, replicate in experiment.cells():
        if (variant, replicate) not in results:
            continue
        for metric, value in results[(variant, replicate)]:
            report.add(variant, replicate, metric, value)
        report.add_curve(variant, replicate, load_curve(experiment.cell_dir(variant, replicate)))
    for replicate in experiment.replicates:
        if (None, replicate) in skip:
            continue
        try:
            rows = experiment.evaluate_references(replicate)
        except Exception:
            report.add_failure(StageFailure('eval', 'references-s%d' % replicate, _format_exc()))
            continue
        for variant, metric, value in rows:
            report.add(variant, replicate, metric, value)
    for metric, value in experiment.summarize(report):
        report.add('summary', ALL_SEEDS, metric, value)


def run_experiment(config, stages=STAGES, threads=1, plot=False, out=None):
    """Run the given stages of an experiment, in order, writing everything under the
    output directory. Cells that fail are recorded in the report and skipped by later
    stages; the other cells carry on. Returns the Report, which is also written out
    when the eval stage runs."""
    experiment = make_experiment(config, out)
    out = experiment.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, CONFIG_FILE), 'w') as f:
        f.write(config.echo())
    report = Report(config.experiment_id, config.echo(), config.seed)
    logger.info(
        'running %s: stages %s, variants %s, %d seed(s), output %s',
        config.experiment_id,
        ','.join(stages),
        ','.join(experiment.variants),
        len(experiment.replicates),
        out,
    )
    skip = set()
    for stage in STAGES:
        if stage not in stages:
            continue
        start = monotonic()
        if stage == 'gen-data':
            _run_cells(experiment, stage, [(None, r) for r in experiment.replicates], threads, report, skip)
        elif stage == 'eval':
            _evaluate(experiment, report, threads, skip)
        else:
            _run_cells(experiment, stage, experiment.cells(), threads, report, skip)
        report.timings[stage] = monotonic() - start
        logger.info('%s: stage %s took %.1f s', config.experiment_id, stage, report.timings[stage])
    report.streams = experiment.streams.describe()
    if 'eval' in stages:
        report.write(out)
        if plot:
            directory = os.path.join(out, 'plots')
            try:
                plots.plot_losses(os.path.join(directory, 'loss.png'), report)
                experiment.plot(report, directory)
            except Exception:
                report.add_failure(StageFailure('plots', config.experiment_id, _format_exc()))
                report.write_manifest(os.path.join(out, MANIFEST_FILE))
    else:
        report.write_manifest(os.path.join(out, MANIFEST_FILE))
    return report
