# Copyright 2024 The dlorasim Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License"). You
# may not use this file except in compliance with the License. A copy of
# the License is located at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# or in the "license" file accompanying this file. This file is
# distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF
# ANY KIND, either express or implied. See the License for the specific
# language governing permissions and limitations under the License.
import copy
import math
from collections import OrderedDict

from dlorasim import configloader
from dlorasim.data import PARTITION_MODES
from dlorasim.exceptions import InvalidConfigError
from dlorasim.gap import BoundParams
from dlorasim.model import ModelSpec
from dlorasim.scenario import (
    FADING_OFF, FADING_RAYLEIGH, RadioConfig, SpawnPolicy)
from dlorasim.scheduler import SCHEDULERS, ObjectiveParams
from dlorasim.trainer import TrainConfig
from dlorasim.utils import dbm_to_watts


_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')
_NONE = ('', 'none')
# Keys a config file may carry for the session rather than the run.
SESSION_ONLY_OPTIONS = ('data_path', 'log_level')


def _to_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError('expected true or false, got %r' % value)


def _to_int(value):
    if isinstance(value, bool):
        raise ValueError('expected an integer, got %r' % value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError('expected an integer, got %r' % value)
        return int(value)
    text = str(value).strip()
    try:
        return int(text)
    except ValueError:
        number = float(text)
        if not number.is_integer():
            raise ValueError('expected an integer, got %r' % value)
        return int(number)


def _optional(converter):
    def convert(value):
        if value is None or str(value).strip().lower() in _NONE:
            return None
        return converter(value)
    return convert


def _to_str(value):
    return str(value).strip()


class ExperimentConfig(object):
    """Every knob of a simulation run.

    Options are keyword arguments named after ``OPTION_DEFAULTS``.  Values
    may be given as strings (as read from a config file) and are
    converted.  ``preset`` names an entry of ``presets.yaml`` whose
    values sit between the defaults and the explicit options.

    :type scheduler: str
    :param scheduler: ``arbvs``, ``brute_force``, ``random`` (uses
        ``fraction`` and ``fixed_rank``), ``fedavg_random`` (uses
        ``fraction``) or ``fedavg_all``.

    :type model: str
    :param model: Name of a ``models.yaml`` preset.  When unset the
        model is ``feature_dim -> hidden_dim -> n_classes``.

    :type payload_scale: int
    :param payload_scale: Multiplies the parameter counts used for delays
        and uplink bits, emulating a larger model on the wire.

    :type gap_bound: float
    :param gap_bound: ``M``, the assumed bound on gradient singular
        values.

    :type round_deadline_s: float
    :param round_deadline_s: Per-round cutoff set by the base station.
        Vehicles must train and upload before it as well as before they
        leave the cell.  Unset means only the sojourn time binds.
    """
    OPTION_DEFAULTS = OrderedDict([
        ('preset', None),
        # scenario
        ('population', 20),
        ('coverage_radius', 500.0),
        ('speed_min', 12.0),
        ('speed_max', 22.0),
        ('cpu_min', 1.9e9),
        ('cpu_max', 3e9),
        ('cycles_min', 0.8e7),
        ('cycles_max', 1.2e7),
        ('gamma_min', 1.3),
        ('gamma_max', 1.5),
        ('tx_power_dbm', 28.0),
        # radio
        ('total_bandwidth', 1e7),
        ('noise_dbm_hz', -174.0),
        ('pathloss_a', 128.1),
        ('pathloss_b', 37.6),
        ('pathloss_log_base', 10),
        ('bit_width', 32),
        ('fading', FADING_OFF),
        ('round_deadline_s', None),
        # training
        ('eta', 0.01),
        ('epochs', 4),
        ('batch_size', 32),
        ('rounds', 60),
        # data and model
        ('samples_per_icv', 300),
        ('train_pool_factor', 2),
        ('test_samples', 2000),
        ('n_classes', 10),
        ('feature_dim', 32),
        ('hidden_dim', 64),
        ('class_separation', 0.4),
        ('model', None),
        ('data_mode', 'iid'),
        ('class_budget', 3),
        # scheduling
        ('scheduler', 'arbvs'),
        ('fraction', 0.2),
        ('fixed_rank', 4),
        ('rank_cap', 32),
        ('bisection_eps', 1e-6),
        # bounds
        ('beta', 1.0),
        ('sigma2', 1.0),
        ('gap_bound', 0.1),
        ('loss_init', None),
        ('loss_star', None),
        # seeds
        ('scenario_seed', 0),
        ('data_seed', 1),
        ('train_seed', 2),
        # run
        ('workers', 1),
        ('output_dir', 'dlorasim-out'),
        ('payload_scale', 1),
        ('idle_interval_s', 1.0),
        ('gap_diagnostics', False),
    ])

    CONVERTERS = {
        'preset': _optional(_to_str),
        'population': _to_int,
        'pathloss_log_base': _to_int,
        'bit_width': _to_int,
        'fading': _to_str,
        'round_deadline_s': _optional(float),
        'epochs': _to_int,
        'batch_size': _to_int,
        'rounds': _to_int,
        'samples_per_icv': _to_int,
        'train_pool_factor': _to_int,
        'test_samples': _to_int,
        'n_classes': _to_int,
        'feature_dim': _to_int,
        'hidden_dim': _to_int,
        'model': _optional(_to_str),
        'data_mode': _to_str,
        'class_budget': _to_int,
        'scheduler': _to_str,
        'fixed_rank': _to_int,
        'rank_cap': _to_int,
        'loss_init': _optional(float),
        'loss_star': _optional(float),
        'scenario_seed': _to_int,
        'data_seed': _to_int,
        'train_seed': _to_int,
        'workers': _to_int,
        'output_dir': _to_str,
        'payload_scale': _to_int,
        'gap_diagnostics': _to_bool,
    }

    SEED_OPTIONS = ('scenario_seed', 'data_seed', 'train_seed')

    def __init__(self, loader=None, **kwargs):
        self._loader = loader
        self._user_provided_options = self._convert_options(kwargs)
        config_vars = copy.copy(self.OPTION_DEFAULTS)
        preset = self._user_provided_options.get('preset')
        if preset is not None:
            config_vars.update(self._load_preset(preset, loader))
        config_vars.update(self._user_provided_options)
        for key, value in config_vars.items():
            setattr(self, key, value)
        self._validate()

    @classmethod
    def from_file(cls, path, profile=None, loader=None, **overrides):
        """Load a flat config file; ``overrides`` win over the file."""
        values = configloader.scoped_values(
            configloader.load_config(path), profile)
        for key in SESSION_ONLY_OPTIONS:
            values.pop(key, None)
        values.update(overrides)
        return cls(loader=loader, **values)

    def _convert_options(self, options):
        converted = {}
        for key, value in options.items():
            if key not in self.OPTION_DEFAULTS:
                raise InvalidConfigError(
                    option=key, error_msg='unknown option, must be one of: '
                    '%s' % ', '.join(self.OPTION_DEFAULTS))
            converted[key] = self._convert(key, value)
        return converted

    def _convert(self, key, value):
        converter = self.CONVERTERS.get(key, float)
        try:
            return converter(value)
        except (TypeError, ValueError) as e:
            raise InvalidConfigError(option=key, error_msg=str(e))

    def _load_preset(self, name, loader):
        loader = self._get_loader(loader)
        values = dict(loader.load_preset('presets', name))
        values.pop('description', None)
        values.pop('preset', None)
        return self._convert_options(values)

    def _get_loader(self, loader=None):
        if loader is None:
            loader = self._loader
        if loader is None:
            from dlorasim.loaders import Loader
            loader = self._loader = Loader()
        return loader

    def _require(self, condition, option, error_msg):
        if not condition:
            raise InvalidConfigError(option=option, error_msg=error_msg)

    def _validate(self):
        for name in ('coverage_radius', 'total_bandwidth', 'eta', 'beta',
                     'sigma2', 'gap_bound', 'speed_min', 'cpu_min',
                     'cycles_min', 'gamma_min'):
            value = getattr(self, name)
            self._require(math.isfinite(value) and value > 0, name,
                          'must be positive, got %r' % value)
        for name in ('population', 'epochs', 'batch_size',
                     'samples_per_icv', 'train_pool_factor', 'test_samples',
                     'n_classes', 'feature_dim', 'hidden_dim', 'bit_width',
                     'fixed_rank', 'rank_cap', 'workers', 'payload_scale',
                     'class_budget'):
            value = getattr(self, name)
            self._require(value >= 1, name, 'must be >= 1, got %r' % value)
        for low, high in (('speed_min', 'speed_max'),
                          ('cpu_min', 'cpu_max'),
                          ('cycles_min', 'cycles_max'),
                          ('gamma_min', 'gamma_max')):
            self._require(getattr(self, low) <= getattr(self, high), high,
                          'must be >= %s' % low)
        self._require(self.rounds >= 0, 'rounds', 'must be >= 0')
        self._require(self.idle_interval_s > 0, 'idle_interval_s',
                      'must be positive')
        self._require(self.round_deadline_s is None or
                      self.round_deadline_s > 0, 'round_deadline_s',
                      'must be positive when set')
        self._require(self.class_separation >= 0, 'class_separation',
                      'must be >= 0')
        self._require(0 < self.fraction <= 1, 'fraction',
                      'must be in (0, 1], got %r' % self.fraction)
        self._require(0 < self.bisection_eps <= 1e-2, 'bisection_eps',
                      'must be in (0, 0.01]')
        self._require(self.fading in (FADING_OFF, FADING_RAYLEIGH), 'fading',
                      "must be '%s' or '%s'" % (FADING_OFF, FADING_RAYLEIGH))
        self._require(self.pathloss_log_base in (10, 2), 'pathloss_log_base',
                      'must be 10 or 2')
        self._require(self.scheduler in SCHEDULERS, 'scheduler',
                      'must be one of %s' % ', '.join(SCHEDULERS))
        self._require(self.data_mode in PARTITION_MODES, 'data_mode',
                      'must be one of %s' % ', '.join(PARTITION_MODES))
        self._require(self.class_budget <= self.n_classes, 'class_budget',
                      'cannot exceed n_classes=%s' % self.n_classes)

    @property
    def user_provided_options(self):
        return dict(self._user_provided_options)

    def to_dict(self):
        return OrderedDict((key, getattr(self, key))
                           for key in self.OPTION_DEFAULTS)

    def merge(self, other_config):
        """Merge the options another config was given explicitly.

        :type other_config: ExperimentConfig
        :returns: A new config; ``other_config`` wins on conflicts.
        """
        config_options = copy.copy(self._user_provided_options)
        config_options.update(other_config._user_provided_options)
        return ExperimentConfig(loader=self._loader, **config_options)

    def with_options(self, **options):
        config_options = copy.copy(self._user_provided_options)
        config_options.update(options)
        return ExperimentConfig(loader=self._loader, **config_options)

    def with_seed(self, seed):
        """Set every seed to ``seed``."""
        return self.with_options(**dict((name, seed)
                                        for name in self.SEED_OPTIONS))

    def to_ini(self):
        """Serialise every resolved option, one ``key = value`` per line.

        Floats are written with ``repr`` so that ``from_file`` reproduces
        the config exactly.  The preset has already been applied, so it is
        written commented out.
        """
        lines = ['# dlorasim experiment config']
        for key, value in self.to_dict().items():
            if key == 'preset':
                lines.append('# preset = %s' % _format_value(value))
                continue
            lines.append('%s = %s' % (key, _format_value(value)))
        return '\n'.join(lines) + '\n'

    def __eq__(self, other):
        return (isinstance(other, ExperimentConfig) and
                self._comparable() == other._comparable())

    def __ne__(self, other):
        return not self == other

    def _comparable(self):
        values = self.to_dict()
        values.pop('preset')
        return values

    def __repr__(self):
        return '%s(%s)' % (self.__class__.__name__, ', '.join(
            '%s=%r' % item for item in self._user_provided_options.items()))

    # Objects the simulator is assembled from.

    def model_spec(self, loader=None):
        loader = self._get_loader(loader)
        if self.model is None:
            return ModelSpec([(self.hidden_dim, self.feature_dim),
                              (self.n_classes, self.hidden_dim)])
        spec = ModelSpec.from_preset(self.model, loader)
        self._require(spec.input_dim == self.feature_dim, 'model',
                      'preset %s expects %s features, feature_dim is %s' %
                      (self.model, spec.input_dim, self.feature_dim))
        self._require(spec.output_dim == self.n_classes, 'model',
                      'preset %s has %s outputs, n_classes is %s' %
                      (self.model, spec.output_dim, self.n_classes))
        return spec

    def radio_config(self):
        return RadioConfig(
            total_bandwidth=self.total_bandwidth,
            noise_psd=dbm_to_watts(self.noise_dbm_hz),
            pathloss_a=self.pathloss_a, pathloss_b=self.pathloss_b,
            coverage_radius=self.coverage_radius, bit_width=self.bit_width,
            fading=self.fading, fading_seed=self.scenario_seed,
            pathloss_log_base=self.pathloss_log_base,
            round_deadline=self.round_deadline_s)

    def spawn_policy(self):
        return SpawnPolicy(
            target=self.population, coverage_radius=self.coverage_radius,
            speed_range=(self.speed_min, self.speed_max),
            cpu_range=(self.cpu_min, self.cpu_max),
            cycles_range=(self.cycles_min, self.cycles_max),
            gamma_range=(self.gamma_min, self.gamma_max),
            tx_power=dbm_to_watts(self.tx_power_dbm),
            dataset_size=self.samples_per_icv)

    def train_config(self):
        return TrainConfig(eta=self.eta, epochs=self.epochs,
                           batch_size=self.batch_size, rounds=self.rounds,
                           seed=self.train_seed)

    def objective_params(self, spec):
        return ObjectiveParams.for_spec(spec, eta=self.eta, beta=self.beta,
                                        sigma2=self.sigma2, M=self.gap_bound)

    def bound_params(self, spec, loss_init=None, loss_star=None):
        """Bound constants; explicit options win over the estimates."""
        if self.loss_init is not None:
            loss_init = self.loss_init
        if self.loss_star is not None:
            loss_star = self.loss_star
        return BoundParams.for_spec(
            spec, eta=self.eta, beta=self.beta, sigma2=self.sigma2,
            M=self.gap_bound, loss_init=loss_init or 0.0,
            loss_star=loss_star or 0.0, T=max(self.rounds, 1))


def _format_value(value):
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)
