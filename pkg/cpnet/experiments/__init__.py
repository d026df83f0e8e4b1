"""Reproducible experiments: data generation, training, rollout and evaluation of
the CP networks against their baselines, driven by INI configs and the cpnet
command line tool."""

from cpnet.experiments.config import ExperimentConfig, SCHEMAS, EXPERIMENT_IDS
from cpnet.experiments.metrics import (
    UNBOUNDED,
    metric_mae,
    metric_rmse_normalized,
    metric_max_abs,
    masked_mae,
    energy_spectrum_1d,
)
from cpnet.experiments.report import Report
from cpnet.experiments.base import Experiment, STAGES
from cpnet.experiments.cases import EXPERIMENTS
from cpnet.experiments.runner import run_experiment, make_experiment
