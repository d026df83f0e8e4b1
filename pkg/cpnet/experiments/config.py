"""INI configuration for the experiment runner.

Each experiment id has a schema: an ordered mapping of section to ordered mapping of
key to default value. A config file may set any key of the schema and nothing else;
the type of each value is taken from its default. Lists are written comma-separated.
The effective configuration, with every default filled in, can be written back out
with ExperimentConfig.echo(), and the result parses to the same configuration.
"""

import configparser
from collections import OrderedDict

from cpnet.pde_lab import CLOSURE_MIN_SUBSTEPS
from cpnet.utils import ConfigError

EXPERIMENT_IDS = ('diffusion1d', 'advdiff2d', 'burgers2d', 'closure', 'fv-gnet')


def _schema(*sections):
    return OrderedDict((name, OrderedDict(keys)) for name, keys in sections)


def _experiment(seeds, variants):
    return (
        'experiment',
        [('seed', 0), ('seeds', seeds), ('output', ''), ('variants', list(variants))],
    )


SCHEMAS = OrderedDict(
    [
        (
            'diffusion1d',
            _schema(
                _experiment(1, ['cp-conv', 'conv']),
                (
                    'pde',
                    [
                        ('nu', 1.0),
                        ('dt', 5e-5),
                        ('steps', 2000),
                        ('dx_train', 0.01),
                        ('dx_test', 0.02),
                        ('u_left', 0.0),
                        ('u_right', 1.0),
                        ('length', 1.0),
                    ],
                ),
                (
                    'train',
                    [
                        ('epochs', 300),
                        ('lr', 0.01),
                        ('lr_final', 0.0001),
                        ('train_steps', 50),
                        ('polish', False),
                    ],
                ),
            ),
        ),
        (
            'advdiff2d',
            _schema(
                _experiment(1, ['cp-net', 'cnn']),
                (
                    'pde',
                    [
                        ('nx', 51),
                        ('ny', 51),
                        ('dt', 0.002),
                        ('train_steps', 2),
                        ('test_steps', 200),
                        ('frame_thickness', 3),
                        ('frame_extent', [0.25, 0.75]),
                    ],
                ),
                (
                    'train',
                    [('epochs', 10000), ('lr', 0.1), ('lr_final', 0.0003), ('polish', False)],
                ),
            ),
        ),
        (
            'burgers2d',
            _schema(
                _experiment(1, ['cp-cnn', 'cnn']),
                (
                    'pde',
                    [
                        ('dt', 0.001),
                        ('test_steps', 100),
                        ('ic_modes', 4),
                        ('divergence_bound', 10.0),
                    ],
                ),
                (
                    'train',
                    [('epochs', 2000), ('lr', 0.01), ('lr_final', 0.0001), ('polish', False)],
                ),
            ),
        ),
        (
            'closure',
            _schema(
                _experiment(3, ['cnn', 'cp-cnn', 'ddp', 'cp-ddp']),
                (
                    'pde',
                    [
                        ('nu', 0.01),
                        ('n_high', 2048),
                        ('n_low', 32),
                        ('dt', 0.0075),
                        ('frames', 267),
                        ('substeps', 16),
                        ('ic_modes', 8),
                        ('ic_energy_law', 'as-printed'),
                        ('n_low_sweep', []),
                        ('divergence_bound', 1000.0),
                    ],
                ),
                (
                    'model',
                    [
                        ('cnn_width', 20),
                        ('ddp_width', 40),
                        ('kernel', 5),
                        ('depth', 8),
                        ('stencil_radius', 3),
                    ],
                ),
                ('train', [('epochs', 300), ('lr', 0.001), ('train_frames', 27)]),
            ),
        ),
        (
            'fv-gnet',
            _schema(
                _experiment(3, ['cp-gnet', 'gnet', 'cp-gnet-noghost']),
                (
                    'pde',
                    [
                        ('velocity', [1.0, 0.0]),
                        ('nu', 0.02),
                        ('dt', 0.015),
                        ('steps', 180),
                        ('train_steps', 130),
                        ('rollout_steps', 50),
                        ('inlet_mean', 0.5),
                        ('inlet_amplitude', 0.4),
                        ('inlet_period', 0.6),
                        ('heated_value', 1.0),
                        ('blob_amplitude', 0.5),
                        ('blob_width', 0.15),
                    ],
                ),
                (
                    'mesh',
                    [
                        ('nx', 24),
                        ('ny', 12),
                        ('length', 2.0),
                        ('height', 1.0),
                        ('jitter', 0.1),
                        ('ghost_types', ['wall', 'heated']),
                        ('known_types', ['inlet', 'outlet']),
                        ('ghost_unit_norm', True),
                        ('ghost_flux_weight', True),
                    ],
                ),
                (
                    'model',
                    [
                        ('width', 16),
                        ('edge_width', 4),
                        ('condition_width', 8),
                        ('blocks', 2),
                        ('mp_layers', 1),
                        ('dense_layers', 1),
                        ('mp_weight_activation', 'relu'),
                        ('mp_message_activation', 'relu'),
                        ('increment_scale', 0.05),
                        ('noise_std', 0.0013),
                    ],
                ),
                ('train', [('epochs', 30), ('lr', 0.002)]),
            ),
        ),
    ]
)


def _parse_scalar(text, default):
    text = text.strip()
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in ('true', 'yes', 'on', '1'):
            return True
        if lowered in ('false', 'no', 'off', '0'):
            return False
        raise ValueError('not a boolean: %r' % text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _parse_list_item(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_value(text, default):
    """Convert the INI text of a value to the type of its default"""
    if isinstance(default, list):
        items = [item.strip() for item in text.split(',') if item.strip()]
        if default:
            return [_parse_scalar(item, default[0]) for item in items]
        return [_parse_list_item(item) for item in items]
    return _parse_scalar(text, default)


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ExperimentConfig(object):
    """The effective configuration of one experiment. Values are read as
    config['section']['key'] or config.get('section', 'key')."""

    def __init__(self, experiment_id, sections=None):
        if experiment_id not in SCHEMAS:
            msg = 'unknown experiment id %r, expected one of %s'
            raise ConfigError(msg % (experiment_id, ', '.join(EXPERIMENT_IDS)))
        self.experiment_id = experiment_id
        self.schema = SCHEMAS[experiment_id]
        self.sections = OrderedDict(
            (name, OrderedDict((k, _copy(v)) for k, v in keys.items()))
            for name, keys in self.schema.items()
        )
        for section, values in (sections or {}).items():
            for key, value in values.items():
                self.set(section, key, value)

    @classmethod
    def defaults(cls, experiment_id):
        return cls(experiment_id)

    @classmethod
    def from_string(cls, text, experiment_id=None, source='<string>'):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError('cannot parse %s: %s' % (source, e))
        declared = None
        if parser.has_option('experiment', 'id'):
            declared = parser.get('experiment', 'id').strip()
        if experiment_id is None:
            experiment_id = declared
        elif declared is not None and declared != experiment_id:
            msg = '%s is a config for %r, not %r'
            raise ConfigError(msg % (source, declared, experiment_id))
        if experiment_id is None:
            raise ConfigError('%s does not name an experiment; set id in [experiment]' % source)
        config = cls(experiment_id)
        for section in parser.sections():
            if section not in config.schema:
                raise ConfigError('%s: unknown section [%s]' % (source, section))
            for key, text in parser.items(section):
                if section == 'experiment' and key == 'id':
                    continue
                if key not in config.schema[section]:
                    raise ConfigError('%s: unknown key %r in [%s]' % (source, key, section))
                try:
                    value = parse_value(text, config.schema[section][key])
                except ValueError as e:
                    raise ConfigError('%s: bad value for %s.%s: %s' % (source, section, key, e))
                config.sections[section][key] = value
        config.validate()
        return config

    @classmethod
    def from_file(cls, path, experiment_id=None):
        try:
            with open(path) as f:
                text = f.read()
        except (IOError, OSError) as e:
            raise ConfigError('cannot read config %s: %s' % (path, e))
        return cls.from_string(text, experiment_id, source=path)

    def set(self, section, key, value):
        if section not in self.schema or key not in self.schema[section]:
            raise ConfigError('unknown config key %s.%s for %s' % (section, key, self.experiment_id))
        self.sections[section][key] = value

    def get(self, section, key):
        return self.sections[section][key]

    def __getitem__(self, section):
        return self.sections[section]

    def override(self, seed=None, output=None):
        """Apply command-line overrides, which take precedence over the file"""
        if seed is not None:
            self.set('experiment', 'seed', int(seed))
        if output is not None:
            self.set('experiment', 'output', output)
        return self

    def validate(self):
        experiment = self.sections['experiment']
        if experiment['seeds'] < 1:
            raise ConfigError('seeds must be at least 1')
        allowed = self.schema['experiment']['variants']
        unknown = [v for v in experiment['variants'] if v not in allowed]
        if unknown or not experiment['variants']:
            msg = 'variants for %s must be a non-empty subset of %s, got %s'
            raise ConfigError(msg % (self.experiment_id, allowed, experiment['variants']))
        train = self.sections.get('train', {})
        if train.get('epochs', 1) < 0:
            raise ConfigError('epochs must not be negative')
        pde = self.sections.get('pde', {})
        if 'n_high' in pde:
            for n_low in [pde['n_low']] + list(pde['n_low_sweep']):
                if n_low < 1 or pde['n_high'] % n_low:
                    msg = 'coarse grid of %d points does not divide the %d-point fine grid'
                    raise ConfigError(msg % (n_low, pde['n_high']))
        if pde.get('substeps', CLOSURE_MIN_SUBSTEPS) < CLOSURE_MIN_SUBSTEPS:
            raise ConfigError('substeps must be at least %d' % CLOSURE_MIN_SUBSTEPS)

    @property
    def seed(self):
        return self.sections['experiment']['seed']

    @property
    def replicates(self):
        return list(range(self.sections['experiment']['seeds']))

    @property
    def variants(self):
        return list(self.sections['experiment']['variants'])

    @property
    def output(self):
        return self.sections['experiment']['output'] or ('runs/%s' % self.experiment_id)

    def echo(self):
        """INI text of the effective configuration"""
        lines = ['[experiment]', 'id = %s' % self.experiment_id]
        for i, (section, values) in enumerate(self.sections.items()):
            if i:
                lines.append('')
                lines.append('[%s]' % section)
            for key, value in values.items():
                lines.append('%s = %s' % (key, format_value(value)))
        return '\n'.join(lines) + '\n'


def _copy(value):
    return list(value) if isinstance(value, list) else value
