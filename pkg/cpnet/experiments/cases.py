"""The five reproducible experiments. Each class documents what it generates, trains
and measures; the INI schema for each lives in cpnet.experiments.config."""

import os
import logging
from collections import OrderedDict

import numpy as np

from cpnet.cp_layers import load_parameters, save_parameters
from cpnet.pde_lab import (
    Trajectory,
    GridSpec,
    ClosureDataset,
    BoundarySpec,
    ADVDIFF_TRAIN_CASES,
    ADVDIFF_TEST_CASE,
    BURGERS2D_TRAIN_CASES,
    BURGERS2D_TEST_CASE,
    CLOSURE_LENGTH,
    solve_diffusion1d,
    rect_frame_ic,
    solve_advdiff2d,
    sample_burgers2d_ic,
    solve_burgers2d,
    sample_burgers1d_ic,
    solve_burgers1d_spectral,
    make_closure_dataset,
    solve_closed_burgers1d,
    solve_fv_advdiff_unstructured,
)
from cpnet.fv_graph import (
    FvMesh,
    ScalingSpec,
    channel_mesh,
    build_graph,
    near_wall_nodes,
)
from cpnet.cp_gnet import (
    CpGnetConfig,
    baseline_config,
    build_model,
    load_model,
    model_graph,
    rollout,
    save_model,
    train,
)
from cpnet.closure_models import (
    PUBLISHED_ADVDIFF_WEIGHTS,
    IDEAL_UPWIND_KERNELS,
    IDEAL_SECOND_DIFFERENCE,
    AdvDiffCnn,
    AdvDiffNet,
    BurgersCnn,
    BurgersCpCnn,
    ClosureNetConfig,
    DiffusionConvNet,
    advdiff_rollout,
    build_closure_net,
    burgers_rollout,
    fit_advdiff,
    fit_burgers,
    fit_closure,
    fit_diffusion_cpconv,
    matches_to_decimals,
    offline_errors,
)
from cpnet.experiments.base import (
    Experiment,
    divergence_rows,
    load_polish_residual,
    save_curve,
    save_fit,
)
from cpnet.experiments.metrics import (
    UNBOUNDED,
    energy_spectrum_1d,
    masked_mae,
    metric_mae,
    metric_max_abs,
    metric_rmse_normalized,
)
from cpnet.experiments import plots
from cpnet.utils import ConfigError

logger = logging.getLogger(__name__)

# Metric prefix for scores of least-squares polished weights
POLISHED_PREFIX = 'polished_'


def _error_rows(prediction, truth, prefix=''):
    rows = [
        (prefix + 'l1', metric_mae(prediction, truth, 'avg-steps')),
        (prefix + 'l1_final', metric_mae(prediction, truth, 'final-step')),
        (prefix + 'max_abs_error', metric_max_abs(prediction, truth)),
    ]
    return rows + divergence_rows(prediction, prefix)


def _vector_rows(name, values):
    values = np.asarray(values, dtype=np.float64)
    return [
        ('%s_%s' % (name, '_'.join(str(i) for i in index)), float(values[index]))
        for index in np.ndindex(*values.shape)
    ]


class _ExactFitExperiment(Experiment):
    """Shared handling of the exact-fit experiments, whose checkpoints hold both the
    weights Adam reached and, with [train] polish on, the least-squares polished
    weights. The unprefixed metrics always score the Adam weights; polished weights
    are scored under the polished_ prefix."""

    def build(self, variant, rng=None):
        raise NotImplementedError

    def load(self, variant, replicate, adam=False):
        model = self.build(variant)
        parts = ('adam',) if adam else ()
        model.assign(load_parameters(self.cell_dir(variant, replicate, *parts)))
        return model

    def polished(self, variant, replicate):
        return load_polish_residual(self.cell_dir(variant, replicate)) is not None

    def weight_sets(self, variant, replicate):
        """(metric prefix, model) for the Adam weights and, if a polish ran, the
        polished weights"""
        sets = [('', self.load(variant, replicate, adam=True))]
        if self.polished(variant, replicate):
            sets.append((POLISHED_PREFIX, self.load(variant, replicate)))
        return sets


class Diffusion1d(_ExactFitExperiment):
    """1D FTCS diffusion between Dirichlet ends. Both variants learn one step at
    C = 0.5 from the first training steps, then roll out 2000 steps at C = 0.5 and on
    the coarser grid at C = 0.125, where only the CP-Conv can follow the change of C."""

    id = 'diffusion1d'
    description = 'CP-Conv vs plain conv on 1D diffusion, rollout at an unseen diffusion number'
    CASES = (('train', 'dx_train'), ('test', 'dx_test'))

    def build(self, variant, rng=None):
        return DiffusionConvNet(cp=variant == 'cp-conv', rng=rng)

    def generate(self, replicate):
        pde = self.config['pde']
        for name, key in self.CASES:
            truth = solve_diffusion1d(
                pde['nu'],
                pde['dt'],
                pde[key],
                pde['steps'],
                u_left=pde['u_left'],
                u_right=pde['u_right'],
                length=pde['length'],
            )
            truth.save(self.data_dir(replicate, name))
            logger.info('diffusion %s case: C = %.6g, %d nodes', name, truth.params['C'], truth.frames.shape[1])

    def train_cell(self, variant, replicate):
        train = Trajectory.load(self.data_dir(replicate, 'train'))
        settings = self.config['train']
        fit = fit_diffusion_cpconv(
            train,
            settings['train_steps'],
            settings['epochs'],
            settings['lr'],
            settings['lr_final'],
            rng=self.rng('shuffle', replicate),
            polish=settings['polish'],
            cp=variant == 'cp-conv',
            init_rng=self.rng('init', replicate),
        )
        save_fit(self.cell_dir(variant, replicate), fit)
        return fit.curve

    def rollout_cell(self, variant, replicate):
        for prefix, model in self.weight_sets(variant, replicate):
            for name, _ in self.CASES:
                truth = Trajectory.load(self.data_dir(replicate, name))
                prediction = model.rollout(
                    truth.frames[0, :, 0],
                    truth.params['C'],
                    len(truth) - 1,
                    truth.grid.spacing[0],
                    truth.grid.dt,
                )
                prediction.save(self.cell_dir(variant, replicate, 'rollout', prefix + name))

    def evaluate_cell(self, variant, replicate):
        rows = []
        for prefix, model in self.weight_sets(variant, replicate):
            for name, _ in self.CASES:
                truth = Trajectory.load(self.data_dir(replicate, name))
                prediction = Trajectory.load(self.cell_dir(variant, replicate, 'rollout', prefix + name))
                rows += _error_rows(prediction, truth, '%s%s_' % (prefix, name))
            rows += _vector_rows(prefix + 'kernel', model.kernel.data.reshape(3))
        residual = load_polish_residual(self.cell_dir(variant, replicate))
        if residual is not None:
            rows.append(('polish_residual', residual))
        rows.append(('n_parameters', self.build(variant).n_parameters()))
        return rows

    def evaluate_references(self, replicate):
        rows = []
        for name, _ in self.CASES:
            truth = Trajectory.load(self.data_dir(replicate, name))
            rows.append(('ftcs', 'C_%s' % name, truth.params['C']))
        return rows

    def summarize(self, report):
        if not {'cp-conv', 'conv'} <= set(self.variants):
            return []
        return [
            ('cp_conv_beats_conv_test_seeds', self.wins(report, 'test_max_abs_error', 'cp-conv', 'conv')),
            ('seeds', len(self.replicates)),
        ]

    def plot(self, report, directory):
        replicate = self.replicates[0]
        for name, _ in self.CASES:
            truth = Trajectory.load(self.data_dir(replicate, name))
            x = np.arange(truth.frames.shape[1]) * truth.grid.spacing[0]
            profiles = OrderedDict([('FTCS', truth.final[:, 0])])
            for variant in self.variants:
                path = self.cell_dir(variant, replicate, 'rollout', name)
                if os.path.isdir(path):
                    profiles[variant] = Trajectory.load(path).final[:, 0]
            plots.plot_profiles(os.path.join(directory, 'final-%s.png' % name), x, profiles, 'C = %g' % truth.params['C'])


class AdvDiff2d(_ExactFitExperiment):
    """2D upwind advection-diffusion on periodic 51 x 51 grids. The CP network turns
    the velocity into upwind kernels through a dense layer; the baseline is a plain
    3 x 3 convolution. Training uses two steps of each of three cases from a square
    frame; the test is a 200-step rollout at a velocity outside the training set."""

    id = 'advdiff2d'
    description = 'CP network vs 3x3 CNN for upwind advection-diffusion, learnt weights vs published'

    def build(self, variant, rng=None):
        return AdvDiffNet(rng) if variant == 'cp-net' else AdvDiffCnn(rng)

    def case(self, case):
        """(a, nu, dx, dy, dt) of a (dx, dy, a, nu) case constant"""
        dx, dy, a, nu = case
        return tuple(a), nu, dx, dy, self.config['pde']['dt']

    def initial_condition(self):
        pde = self.config['pde']
        return rect_frame_ic(pde['nx'], pde['ny'], pde['frame_thickness'], tuple(pde['frame_extent']))

    def generate(self, replicate):
        pde = self.config['pde']
        runs = [('train%d' % i, case, pde['train_steps']) for i, case in enumerate(ADVDIFF_TRAIN_CASES)]
        runs.append(('test', ADVDIFF_TEST_CASE, pde['test_steps']))
        for name, case, steps in runs:
            a, nu, dx, dy, dt = self.case(case)
            truth = solve_advdiff2d(a, nu, dx, dy, dt, steps, self.initial_condition())
            truth.save(self.data_dir(replicate, name))

    def snapshots(self, replicate):
        snapshots = []
        for i, case in enumerate(ADVDIFF_TRAIN_CASES):
            u = Trajectory.load(self.data_dir(replicate, 'train%d' % i)).field(0)
            for k in range(len(u) - 1):
                snapshots.append((u[k], u[k + 1] - u[k], self.case(case)))
        return snapshots

    def train_cell(self, variant, replicate):
        settings = self.config['train']
        fit = fit_advdiff(
            self.build(variant, self.rng('init', replicate)),
            self.snapshots(replicate),
            settings['epochs'],
            settings['lr'],
            settings['lr_final'],
            self.rng('shuffle', replicate),
            settings['polish'],
        )
        save_fit(self.cell_dir(variant, replicate), fit)
        return fit.curve

    def rollout_cell(self, variant, replicate):
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        a, nu, dx, dy, dt = self.case(ADVDIFF_TEST_CASE)
        for prefix, model in self.weight_sets(variant, replicate):
            prediction = advdiff_rollout(model, truth.frames[0, ..., 0], a, nu, dx, dy, dt, len(truth) - 1)
            prediction.save(self.cell_dir(variant, replicate, 'rollout', prefix + 'test'))

    @staticmethod
    def weight_rows(W1, W2, W3, prefix=''):
        """W2 given as (unit, tap)"""
        rows = _vector_rows(prefix + 'W1', W1)
        rows += _vector_rows(prefix + 'W2', W2)
        rows += _vector_rows(prefix + 'W3', W3)
        rows.append((prefix + 'W3_matches_ideal', matches_to_decimals(W3, IDEAL_SECOND_DIFFERENCE, 4)))
        return rows

    def evaluate_cell(self, variant, replicate):
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        rows = []
        for prefix, model in self.weight_sets(variant, replicate):
            prediction = Trajectory.load(self.cell_dir(variant, replicate, 'rollout', prefix + 'test'))
            rows += _error_rows(prediction, truth, prefix)
            if isinstance(model, AdvDiffNet):
                W2 = model.W2.data.reshape(3, 2).T
                rows += self.weight_rows(model.W1.data, W2, model.W3.data.reshape(3), prefix)
                positive, negative, _ = model.effective_kernels()
                rows += _vector_rows(prefix + 'kernel_positive', positive)
                rows += _vector_rows(prefix + 'kernel_negative', negative)
                upwind = matches_to_decimals(positive, IDEAL_UPWIND_KERNELS[0]) and matches_to_decimals(
                    negative, IDEAL_UPWIND_KERNELS[1]
                )
                rows.append((prefix + 'upwind_matches_ideal', upwind))
        residual = load_polish_residual(self.cell_dir(variant, replicate))
        if residual is not None:
            rows.append(('polish_residual', residual))
        rows.append(('n_parameters', self.build(variant).n_parameters()))
        return rows

    def evaluate_references(self, replicate):
        published = PUBLISHED_ADVDIFF_WEIGHTS
        rows = self.weight_rows(published['W1'], published['W2'], published['W3'])
        return [('published', name, value) for name, value in rows]

    def summarize(self, report):
        if 'cp-net' not in self.variants:
            return []
        below = 0
        for r in self.replicates:
            if report.has('cp-net', r, 'l1'):
                l1 = report.metric('cp-net', r, 'l1')
                below += int(l1 is not UNBOUNDED and l1 < 1e-4)
        return [('cp_net_l1_below_1e-4_seeds', below), ('seeds', len(self.replicates))]

    def plot(self, report, directory):
        replicate = self.replicates[0]
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        fields = OrderedDict([('upwind', truth.final)])
        for variant in self.variants:
            path = self.cell_dir(variant, replicate, 'rollout', 'test')
            if os.path.isdir(path):
                fields[variant] = Trajectory.load(path).final
        plots.plot_fields(os.path.join(directory, 'final-test.png'), fields, 'step %d' % (len(truth) - 1))


class Burgers2d(_ExactFitExperiment):
    """2D viscous Burgers, FTCS. Each variant learns one step from three single-step
    pairs at different (nu, dx, dy) and rolls out 100 steps at unseen parameters. The
    CP-CNN conditions its four kernels on the FTCS coefficients; the 3 x 3 CNN sees
    the field only."""

    id = 'burgers2d'
    description = 'CP-CNN (24 weights) vs 3x3 CNN (36 weights) on 2D viscous Burgers'

    def build(self, variant, rng=None):
        return BurgersCpCnn(rng) if variant == 'cp-cnn' else BurgersCnn(rng)

    def case(self, case):
        nu, dx, dy = case
        return nu, dx, dy, self.config['pde']['dt']

    @staticmethod
    def grid_shape(dx, dy):
        return int(round(1.0 / dx)), int(round(1.0 / dy))

    def generate(self, replicate):
        pde = self.config['pde']
        rng = self.rng('ic', replicate)
        runs = [('train%d' % i, case, 1) for i, case in enumerate(BURGERS2D_TRAIN_CASES)]
        runs.append(('test', BURGERS2D_TEST_CASE, pde['test_steps']))
        for name, case, steps in runs:
            nu, dx, dy, dt = self.case(case)
            nx, ny = self.grid_shape(dx, dy)
            # Sampled on the unit period so the field is periodic on the grid
            ic = sample_burgers2d_ic(rng, nx, ny, 1.0 / nx, 1.0 / ny, L=pde['ic_modes'])
            solve_burgers2d(nu, dx, dy, dt, steps, ic).save(self.data_dir(replicate, name))

    def pairs(self, replicate):
        pairs = []
        for i, case in enumerate(BURGERS2D_TRAIN_CASES):
            frames = Trajectory.load(self.data_dir(replicate, 'train%d' % i)).frames
            pairs.append((frames[0], frames[1] - frames[0], self.case(case)))
        return pairs

    def train_cell(self, variant, replicate):
        settings = self.config['train']
        fit = fit_burgers(
            self.build(variant, self.rng('init', replicate)),
            self.pairs(replicate),
            settings['epochs'],
            settings['lr'],
            settings['lr_final'],
            self.rng('shuffle', replicate),
            settings['polish'],
        )
        save_fit(self.cell_dir(variant, replicate), fit)
        return fit.curve

    def rollout_cell(self, variant, replicate):
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        nu, dx, dy, dt = self.case(BURGERS2D_TEST_CASE)
        bound = self.config['pde']['divergence_bound']
        for prefix, model in self.weight_sets(variant, replicate):
            prediction = burgers_rollout(model, truth.frames[0], nu, dx, dy, dt, len(truth) - 1, bound)
            prediction.save(self.cell_dir(variant, replicate, 'rollout', prefix + 'test'))

    def evaluate_cell(self, variant, replicate):
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        rows = []
        ideal = BurgersCpCnn.ideal()
        for prefix, model in self.weight_sets(variant, replicate):
            prediction = Trajectory.load(self.cell_dir(variant, replicate, 'rollout', prefix + 'test'))
            rows += _error_rows(prediction, truth, prefix)
            if isinstance(model, BurgersCpCnn):
                match = all(
                    matches_to_decimals(k.data, i.data) for k, i in zip(model.kernels, ideal.kernels)
                )
                rows.append((prefix + 'kernels_match_ideal', match))
        residual = load_polish_residual(self.cell_dir(variant, replicate))
        if residual is not None:
            rows.append(('polish_residual', residual))
        rows.append(('n_parameters', self.build(variant).n_parameters()))
        return rows

    def summarize(self, report):
        rows = []
        if 'cp-cnn' in self.variants:
            below = 0
            for r in self.replicates:
                if report.has('cp-cnn', r, 'l1'):
                    l1 = report.metric('cp-cnn', r, 'l1')
                    below += int(l1 is not UNBOUNDED and l1 < 1e-4)
            rows.append(('cp_cnn_l1_below_1e-4_seeds', below))
        if 'cnn' in self.variants:
            diverged = sum(
                int(report.has('cnn', r, 'diverged') and report.metric('cnn', r, 'diverged') == 1)
                for r in self.replicates
            )
            rows.append(('cnn_diverged_seeds', diverged))
        rows.append(('seeds', len(self.replicates)))
        return rows

    def plot(self, report, directory):
        replicate = self.replicates[0]
        truth = Trajectory.load(self.data_dir(replicate, 'test'))
        fields = OrderedDict([('FTCS', truth.final)])
        for variant in self.variants:
            path = self.cell_dir(variant, replicate, 'rollout', 'test')
            if os.path.isdir(path):
                prediction = Trajectory.load(path)
                last = len(prediction) - 1 if prediction.diverged_at is None else prediction.diverged_at - 1
                fields['%s (step %d)' % (variant, last)] = prediction.frames[last]
        plots.plot_fields(os.path.join(directory, 'final-u.png'), fields, 'u component')


def save_closure_dataset(dataset, dt, directory):
    frames = np.stack([dataset.u_bar, dataset.target], axis=-1)
    grid = GridSpec((dataset.n_low,), (dataset.dx,), dt, 'periodic')
    params = {'nu': dataset.nu, 'n_high': dataset.n_high}
    Trajectory(frames, grid, ('u_bar', 'closure'), params, dataset.seed).save(directory)


def load_closure_dataset(directory):
    stored = Trajectory.load(directory)
    return ClosureDataset(
        stored.field('u_bar'),
        stored.field('closure'),
        stored.params['nu'],
        stored.params['n_high'],
        stored.seed,
    )


class Closure(Experiment):
    """Closure models for coarse 1D Burgers. Per replicate one random initial
    condition is used for training and another is held out; both are solved at high
    resolution by the spectral method and box-filtered onto the coarse grid. Each
    closure network learns from the first frames of the training run and is then
    used online in the coarse solver for the whole run. The coarse solver without a
    closure, and with the exact closure term, are the references."""

    id = 'closure'
    description = 'CNN, CP-CNN, DDP and CP-DDP closures for coarse 1D Burgers'
    SETS = ('train', 'test')
    SWEEP_VARIANTS = ('cnn', 'cp-cnn')

    @property
    def n_low(self):
        return self.config['pde']['n_low']

    def meshes(self, variant=None):
        meshes = [self.n_low]
        if variant is None or variant in self.SWEEP_VARIANTS:
            meshes += [n for n in self.config['pde']['n_low_sweep'] if n != self.n_low]
        return meshes

    def suffix(self, n_low):
        return '' if n_low == self.n_low else '_n%d' % n_low

    def dataset_dir(self, replicate, name, n_low):
        return self.data_dir(replicate, '%s-n%d' % (name, n_low))

    def net_config(self, variant):
        model = self.config['model']
        width = model['cnn_width'] if variant in ('cnn', 'cp-cnn') else model['ddp_width']
        return ClosureNetConfig(
            kind=variant,
            width=width,
            kernel=model['kernel'],
            depth=model['depth'],
            stencil_radius=model['stencil_radius'],
            nu=self.config['pde']['nu'],
        )

    def generate(self, replicate):
        pde = self.config['pde']
        rng = self.rng('ic', replicate)
        for name in self.SETS:
            ic = sample_burgers1d_ic(rng, pde['n_high'], pde['ic_energy_law'], pde['ic_modes'])
            high = solve_burgers1d_spectral(ic, pde['nu'], pde['frames'], pde['dt'], pde['substeps'])
            for n_low in self.meshes():
                dataset = make_closure_dataset(
                    None, n_low, pde['nu'], pde['dt'], pde['frames'], pde['substeps'], high=high, seed=replicate
                )
                save_closure_dataset(dataset, pde['dt'], self.dataset_dir(replicate, name, n_low))
            logger.info('closure %s run for replicate %d: %d frames', name, replicate, pde['frames'])

    def load_net(self, variant, replicate, n_low):
        model = build_closure_net(self.net_config(variant))
        model.assign(load_parameters(self.cell_dir(variant, replicate, 'n%d' % n_low)))
        return model

    def train_cell(self, variant, replicate):
        settings = self.config['train']
        main_curve = []
        for n_low in self.meshes(variant):
            train = load_closure_dataset(self.dataset_dir(replicate, 'train', n_low))
            model = build_closure_net(self.net_config(variant), self.rng('init', replicate))
            curve = fit_closure(
                model,
                [train],
                settings['epochs'],
                settings['lr'],
                settings['train_frames'],
                rng=self.rng('shuffle', replicate),
            )
            directory = self.cell_dir(variant, replicate, 'n%d' % n_low)
            save_parameters(directory, model)
            if n_low == self.n_low:
                main_curve = curve
            else:
                save_curve(directory, curve)
        return main_curve

    def online(self, dataset, closure):
        pde = self.config['pde']
        return solve_closed_burgers1d(
            dataset.u_bar[0],
            pde['nu'],
            pde['dt'],
            len(dataset.u_bar) - 1,
            closure,
            divergence_bound=pde['divergence_bound'],
        )

    def rollout_cell(self, variant, replicate):
        for n_low in self.meshes(variant):
            model = self.load_net(variant, replicate, n_low)
            for name in self.SETS:
                dataset = load_closure_dataset(self.dataset_dir(replicate, name, n_low))
                prediction = self.online(dataset, model.closure)
                prediction.save(self.cell_dir(variant, replicate, 'rollout', '%s-n%d' % (name, n_low)))

    @staticmethod
    def online_rows(prediction, dataset, label):
        truth = dataset.u_bar[..., None]
        rows = [
            ('mae_avg_' + label, metric_mae(prediction, truth, 'avg-steps')),
            ('mae_final_' + label, metric_mae(prediction, truth, 'final-step')),
        ]
        return rows + divergence_rows(prediction, label + '_')

    def evaluate_cell(self, variant, replicate):
        rows = []
        for n_low in self.meshes(variant):
            model = self.load_net(variant, replicate, n_low)
            for name in self.SETS:
                label = name + self.suffix(n_low)
                dataset = load_closure_dataset(self.dataset_dir(replicate, name, n_low))
                prediction = Trajectory.load(self.cell_dir(variant, replicate, 'rollout', '%s-n%d' % (name, n_low)))
                rows += self.online_rows(prediction, dataset, label)
                mean, largest = offline_errors(model, dataset)
                rows.append(('offline_mae_' + label, mean))
                rows.append(('offline_max_' + label, largest))
        rows.append(('n_parameters', build_closure_net(self.net_config(variant)).n_parameters()))
        return rows

    def evaluate_references(self, replicate):
        rows = []
        for n_low in self.meshes():
            for name in self.SETS:
                label = name + self.suffix(n_low)
                dataset = load_closure_dataset(self.dataset_dir(replicate, name, n_low))
                bare = self.online(dataset, lambda u, step: np.zeros_like(u))
                rows += [('none', metric, value) for metric, value in self.online_rows(bare, dataset, label)]
                exact = self.online(dataset, lambda u, step: dataset.target[step])
                rows += [('exact', metric, value) for metric, value in self.online_rows(exact, dataset, label)]
                rows.append(('exact', 'replay_max_abs_' + label, metric_max_abs(exact, dataset.u_bar[..., None])))
        return rows

    def summarize(self, report):
        rows = []
        variants = set(self.variants)
        if {'cnn', 'cp-cnn'} <= variants:
            for n_low in self.meshes('cnn'):
                suffix = self.suffix(n_low)
                both = 0
                for name in self.SETS:
                    metric = 'mae_avg_%s%s' % (name, suffix)
                    rows.append(('cp_cnn_beats_cnn_%s%s_seeds' % (name, suffix), self.wins(report, metric, 'cp-cnn', 'cnn')))
                for r in self.replicates:
                    won = [
                        self._beats(report, r, 'mae_avg_%s%s' % (name, suffix), 'cp-cnn', 'cnn')
                        for name in self.SETS
                    ]
                    both += int(all(won))
                rows.append(('cp_cnn_beats_cnn_both%s_seeds' % suffix, both))
        if {'ddp', 'cp-ddp'} <= variants:
            count = 0
            for r in self.replicates:
                try:
                    ddp = report.metric('ddp', r, 'train_diverged')
                    cp_ddp = report.metric('cp-ddp', r, 'train_diverged')
                except KeyError:
                    continue
                count += int(ddp == 1 and cp_ddp == 0)
            rows.append(('ddp_diverged_cp_ddp_finite_seeds', count))
        unstable = sum(
            int(report.has('none', r, 'train_diverged') and report.metric('none', r, 'train_diverged') == 1)
            for r in self.replicates
        )
        rows.append(('no_closure_diverged_seeds', unstable))
        rows.append(('seeds', len(self.replicates)))
        return rows

    def _beats(self, report, replicate, metric, better, worse):
        try:
            a = report.metric(better, replicate, metric)
            b = report.metric(worse, replicate, metric)
        except KeyError:
            return False
        a = np.inf if a is UNBOUNDED else a
        b = np.inf if b is UNBOUNDED else b
        return a < b

    def plot(self, report, directory):
        replicate = self.replicates[0]
        for name in self.SETS:
            dataset = load_closure_dataset(self.dataset_dir(replicate, name, self.n_low))
            spectra = OrderedDict([('filtered truth', energy_spectrum_1d(dataset.u_bar[-1], CLOSURE_LENGTH))])
            profiles = OrderedDict([('filtered truth', dataset.u_bar[-1])])
            for variant in self.variants:
                path = self.cell_dir(variant, replicate, 'rollout', '%s-n%d' % (name, self.n_low))
                if not os.path.isdir(path):
                    continue
                prediction = Trajectory.load(path)
                if prediction.diverged_at is None:
                    spectra[variant] = energy_spectrum_1d(prediction.final[:, 0], CLOSURE_LENGTH)
                    profiles[variant] = prediction.final[:, 0]
            plots.plot_spectra(os.path.join(directory, 'spectra-%s.png' % name), spectra, '%s IC, final step' % name)
            x = np.arange(dataset.n_low) * dataset.dx
            plots.plot_profiles(os.path.join(directory, 'final-%s.png' % name), x, profiles, '%s IC, final step' % name)


class FvGnet(Experiment):
    """Advection-diffusion of a scalar through a channel of jittered rectangular
    cells, solved by the finite-volume scheme: a pulsing inlet on the left, an outflow
    on the right, an insulated bottom wall and a heated top wall. The inlet and
    outlet cells are known-value nodes; the two walls get ghost edges. Models learn
    from the first steps and roll out the rest of the run from the true state."""

    id = 'fv-gnet'
    description = 'CP-GNet vs parameter-matched GNet, and CP-GNet without ghost edges, on a channel flow'
    NOGHOST = 'cp-gnet-noghost'

    def generate(self, replicate):
        pde = self.config['pde']
        settings = self.config['mesh']
        if pde['train_steps'] + pde['rollout_steps'] > pde['steps']:
            raise ConfigError('train_steps + rollout_steps exceeds the %d generated steps' % pde['steps'])
        mesh = channel_mesh(
            settings['nx'],
            settings['ny'],
            settings['length'],
            settings['height'],
            settings['jitter'],
            self.rng('mesh', replicate),
        )
        mesh.save(self.data_dir(replicate, 'mesh'))
        rng = self.rng('ic', replicate)
        phase = rng.uniform(-np.pi, np.pi)
        center = np.array(
            [
                rng.uniform(0.15, 0.85) * settings['length'],
                rng.uniform(0.2, 0.8) * settings['height'],
            ]
        )
        distance2 = np.sum((mesh.centers - center) ** 2, axis=1)
        ic = pde['blob_amplitude'] * np.exp(-distance2 / (2 * pde['blob_width'] ** 2))

        def inlet(t, face_centers):
            value = pde['inlet_mean'] + pde['inlet_amplitude'] * np.sin(2 * np.pi * t / pde['inlet_period'] + phase)
            return np.full(len(face_centers), value)

        bc = BoundarySpec(
            {'inlet': 'dirichlet', 'outlet': 'outflow', 'wall': 'insulated', 'heated': 'dirichlet'},
            {'inlet': inlet, 'heated': pde['heated_value']},
        )
        truth = solve_fv_advdiff_unstructured(mesh, pde['velocity'], pde['nu'], pde['dt'], pde['steps'], bc, ic)
        truth.params['inlet_phase'] = float(phase)
        truth.params['blob_center'] = center.tolist()
        truth.save(self.data_dir(replicate, 'truth'))

    def graph(self, model_config, replicate):
        mesh = FvMesh.load(self.data_dir(replicate, 'mesh'))
        return model_graph(model_config, mesh, self.config['mesh']['known_types'])

    def model_config(self, variant):
        model = self.config['model']
        settings = self.config['mesh']
        config = CpGnetConfig(
            n_channels=1,
            width=model['width'],
            edge_width=model['edge_width'],
            condition_width=model['condition_width'],
            blocks=model['blocks'],
            mp_layers=model['mp_layers'],
            dense_layers=model['dense_layers'],
            boundary_types=() if variant == self.NOGHOST else tuple(settings['ghost_types']),
            mp_weight_activation=model['mp_weight_activation'],
            mp_message_activation=model['mp_message_activation'],
            noise_std=model['noise_std'],
            ghost_unit_norm=settings['ghost_unit_norm'],
            ghost_flux_weight=settings['ghost_flux_weight'],
            channels=('c',),
        )
        if variant == 'gnet':
            config = baseline_config(config)
        return config

    def scaling(self):
        return ScalingSpec({'c': 1.0}, self.config['model']['increment_scale'])

    def train_cell(self, variant, replicate):
        settings = self.config['train']
        truth = Trajectory.load(self.data_dir(replicate, 'truth'))
        kind = 'gnet' if variant == 'gnet' else 'cp-gnet'
        model = build_model(kind, self.model_config(variant), self.rng('init', replicate))
        curve = train(
            model,
            self.graph(model.config, replicate),
            truth,
            self.scaling(),
            settings['epochs'],
            settings['lr'],
            rng=self.rng('noise', replicate),
            steps=self.config['pde']['train_steps'],
            name=variant,
        )
        save_model(self.cell_dir(variant, replicate), model)
        return curve

    def rollout_truth(self, replicate):
        pde = self.config['pde']
        truth = Trajectory.load(self.data_dir(replicate, 'truth'))
        start = pde['train_steps']
        return truth.frames[start : start + pde['rollout_steps'] + 1]

    def rollout_cell(self, variant, replicate):
        schedule = self.rollout_truth(replicate)
        model = load_model(self.cell_dir(variant, replicate))
        prediction = rollout(
            model, self.graph(model.config, replicate), schedule[0], len(schedule) - 1, self.scaling(), schedule
        )
        prediction.save(self.cell_dir(variant, replicate, 'rollout', 'test'))

    def evaluate_cell(self, variant, replicate):
        truth = self.rollout_truth(replicate)
        prediction = Trajectory.load(self.cell_dir(variant, replicate, 'rollout', 'test'))
        mesh_graph = build_graph(FvMesh.load(self.data_dir(replicate, 'mesh')))
        near_wall = near_wall_nodes(mesh_graph, self.config['mesh']['ghost_types'])
        model = load_model(self.cell_dir(variant, replicate))
        rows = [
            ('rmse_normalized', metric_rmse_normalized(prediction, truth)),
            ('mae', metric_mae(prediction, truth, 'avg-steps')),
            ('near_wall_mae', masked_mae(prediction, truth, near_wall)),
        ]
        rows += divergence_rows(prediction)
        rows.append(('width', model.config.width))
        rows.append(('n_parameters', model.n_parameters()))
        return rows

    def summarize(self, report):
        rows = []
        if {'cp-gnet', 'gnet'} <= set(self.variants):
            rows.append(('cp_gnet_beats_gnet_seeds', self.wins(report, 'rmse_normalized', 'cp-gnet', 'gnet')))
        if {'cp-gnet', self.NOGHOST} <= set(self.variants):
            wins = self.wins(report, 'near_wall_mae', 'cp-gnet', self.NOGHOST)
            rows.append(('ghost_edges_reduce_near_wall_mae_seeds', wins))
        rows.append(('seeds', len(self.replicates)))
        return rows

    def plot(self, report, directory):
        replicate = self.replicates[0]
        settings = self.config['mesh']
        truth = self.rollout_truth(replicate)
        shape = (settings['nx'], settings['ny'])
        fields = OrderedDict([('finite volume', truth[-1].reshape(shape))])
        for variant in self.variants:
            path = self.cell_dir(variant, replicate, 'rollout', 'test')
            if os.path.isdir(path):
                fields[variant] = Trajectory.load(path).final.reshape(shape)
        plots.plot_fields(os.path.join(directory, 'final-c.png'), fields, 'final rollout step')


EXPERIMENTS = OrderedDict(
    (cls.id, cls) for cls in (Diffusion1d, AdvDiff2d, Burgers2d, Closure, FvGnet)
)
