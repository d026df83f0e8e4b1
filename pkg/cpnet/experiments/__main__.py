import sys
import os
import argparse

from cpnet.experiments.base import STAGES
from cpnet.experiments.cases import EXPERIMENTS
from cpnet.experiments.config import ExperimentConfig, EXPERIMENT_IDS
from cpnet.experiments.runner import run_experiment
from cpnet.utils import ConfigError, setup_logging

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


# Every stage persists its results under the output directory, so a run can be done in
# one go:
#
#     cpnet reproduce closure --out runs/closure
#
# or stage by stage, in this order, each invocation picking up where the last left off:
#
#     cpnet gen-data closure --out runs/closure
#     cpnet train closure --out runs/closure --threads 4
#     cpnet rollout closure --out runs/closure
#     cpnet eval closure --out runs/closure --plots
#
# The experiment id may be left out if the --config file names one in its
# [experiment] section. The effective configuration is written to
# <out>/config.ini; passing that file back with --config repeats the run.


def _add_common(parser):
    parser.add_argument('--config', type=str, default=None, help='INI file of settings')
    parser.add_argument('--seed', type=int, default=None, help='Root seed; overrides the config file')
    parser.add_argument('--out', type=str, default=None, help='Output directory; overrides the config file')
    parser.add_argument(
        '--threads',
        type=int,
        default=1,
        help='Number of cells to run concurrently. Default: 1, which runs cells in order',
    )
    parser.add_argument('--plots', action='store_true', help='Write static figures to <out>/plots')


def make_parser():
    parser = argparse.ArgumentParser(prog='cpnet', description='CP network experiments.')
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True
    for stage in STAGES:
        sub = subparsers.add_parser(stage, help='Run only the %s stage' % stage)
        sub.add_argument('experiment', nargs='?', choices=EXPERIMENT_IDS, default=None)
        _add_common(sub)
    sub = subparsers.add_parser('reproduce', help='Run every stage of one experiment')
    sub.add_argument('experiment', choices=EXPERIMENT_IDS)
    _add_common(sub)
    subparsers.add_parser('list', help='List the experiments and the variants they train')
    return parser


def list_experiments(out=sys.stdout):
    for experiment_id, cls in EXPERIMENTS.items():
        variants = ExperimentConfig.defaults(experiment_id).variants
        out.write('%-12s %s\n' % (experiment_id, cls.description))
        out.write('%-12s variants: %s\n' % ('', ', '.join(variants)))


def load_config(args):
    if args.config is not None:
        config = ExperimentConfig.from_file(args.config, args.experiment)
    elif args.experiment is not None:
        config = ExperimentConfig.defaults(args.experiment)
    else:
        raise ConfigError('name an experiment id or pass --config')
    if args.threads < 1:
        raise ConfigError('--threads must be at least 1')
    return config.override(seed=args.seed, output=args.out)


def main(argv=None):
    args = make_parser().parse_args(argv)
    if args.command == 'list':
        list_experiments()
        return EXIT_OK
    try:
        config = load_config(args)
        config.validate()
    except ConfigError as e:
        sys.stderr.write('cpnet: config error: %s\n' % e)
        return EXIT_CONFIG_ERROR
    logger = setup_logging('cpnet', directory=os.path.join(config.output, 'logs'))
    stages = STAGES if args.command == 'reproduce' else (args.command,)
    try:
        report = run_experiment(config, stages, threads=args.threads, plot=args.plots)
    except ConfigError as e:
        logger.error('config error: %s', e)
        sys.stderr.write('cpnet: config error: %s\n' % e)
        return EXIT_CONFIG_ERROR
    if not report.ok:
        for failure in report.failures:
            sys.stderr.write('cpnet: %s\n' % failure)
        return EXIT_STAGE_FAILURE
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
