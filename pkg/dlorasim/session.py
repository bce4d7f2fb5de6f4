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
"""
The simulation session.

A :class:`Session` owns everything a run is wired from that is not part
of the experiment itself: the event emitter and its handlers, the preset
loader, where log records go and which config file and profile the
experiment options are read from.
"""
import logging
import os

from dlorasim import configloader
from dlorasim import handlers
from dlorasim.config import SESSION_ONLY_OPTIONS, ExperimentConfig
from dlorasim.hooks import HierarchicalEmitter, first_non_none_response
from dlorasim.loaders import create_loader


#: Lookup sources for session variables, highest precedence first.
LOOKUP_ORDER = ('instance', 'env', 'config')


class Session(object):
    """
    Entry point for running simulations.

    :ivar profile: Name of the config file profile in use, or None.
    """

    #: ``logical name -> (config key, env var, default, converter)``.
    #: ``profile`` and ``config_file`` have no config key since they pick
    #: the file section in the first place.
    SESSION_VARIABLES = {
        'profile': (None, 'DLORASIM_PROFILE', None, None),
        'config_file': (None, 'DLORASIM_CONFIG_FILE', None, None),
        'data_path': ('data_path', 'DLORASIM_DATA_PATH', None, None),
        'workers': ('workers', 'DLORASIM_WORKERS', 1, int),
        'log_level': ('log_level', 'DLORASIM_LOG_LEVEL', None, None),
    }

    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    def __init__(self, session_vars=None, event_hooks=None,
                 include_builtin_handlers=True, profile=None):
        """
        :type session_vars: dict
        :param session_vars: Entries added to or replacing
            ``SESSION_VARIABLES`` for this session.

        :type event_hooks: HierarchicalEmitter
        :param event_hooks: Emitter to register handlers on.  A fresh one
            is made when omitted.

        :type include_builtin_handlers: bool
        :param include_builtin_handlers: Whether the schedule validator
            and round logger of ``handlers.BUILTIN_HANDLERS`` are attached.

        :type profile: str
        :param profile: Config file profile, taking precedence over
            ``DLORASIM_PROFILE``.
        """
        self.session_var_map = dict(self.SESSION_VARIABLES)
        self.session_var_map.update(session_vars or {})
        self._events = event_hooks if event_hooks is not None \
            else HierarchicalEmitter()
        if include_builtin_handlers:
            self._attach_builtin_handlers()
        self._overrides = {}
        if profile is not None:
            self._overrides['profile'] = profile
        self._config = None
        self._components = ComponentLocator()
        self._components.register_component('event_emitter', self._events)
        self._components.lazy_register_component(
            'data_loader',
            lambda: create_loader(self.get_config_variable('data_path')))

    def _attach_builtin_handlers(self):
        registrars = {
            None: self._events.register,
            handlers.REGISTER_FIRST: self._events.register_first,
            handlers.REGISTER_LAST: self._events.register_last,
        }
        for entry in handlers.BUILTIN_HANDLERS:
            event_name, handler = entry[:2]
            placement = entry[2] if len(entry) > 2 else None
            registrars[placement](event_name, handler)

    @property
    def profile(self):
        return self.get_config_variable('profile')

    def get_config_variable(self, logical_name, methods=LOOKUP_ORDER):
        """Look up a session variable.

        The first of ``methods`` that has a value for it wins; the
        default from ``SESSION_VARIABLES`` is used when none does.
        Values from the environment and the config file go through the
        variable's converter.

        :returns: The value, or None for names this session does not know.
        """
        if logical_name not in self.session_var_map:
            return None
        config_key, env_var, default, converter = \
            self.session_var_map[logical_name]
        if 'instance' in methods and logical_name in self._overrides:
            return self._overrides[logical_name]
        value = None
        if 'env' in methods and env_var is not None:
            value = os.environ.get(env_var)
        if value is None and 'config' in methods and config_key is not None:
            value = self.get_scoped_config().get(config_key)
        if value is None:
            value = default
        if value is not None and converter is not None:
            value = converter(value)
        return value

    def set_config_variable(self, logical_name, value):
        """Pin a session variable for the lifetime of this session."""
        self._overrides[logical_name] = value
        if logical_name in ('config_file', 'profile'):
            # The parsed file and its scope depend on both.
            self._config = None

    @property
    def full_config(self):
        """Every section of the config file, parsed on first use."""
        if self._config is None:
            path = self.get_config_variable('config_file')
            self._config = ({'profiles': {}} if path is None
                            else configloader.load_config(path))
        return self._config

    def get_scoped_config(self):
        """Options of the active profile layered over ``[default]``.

        :raises: ProfileNotFound
        """
        return configloader.scoped_values(self.full_config, self.profile)

    def get_experiment_config(self, **overrides):
        """The ``ExperimentConfig`` described by the config file.

        Keys that only steer the session, such as ``data_path`` and
        ``log_level``, are dropped.  ``overrides`` replace file values.
        """
        options = dict(
            (key, value) for key, value in self.get_scoped_config().items()
            if key not in SESSION_ONLY_OPTIONS)
        options.update(overrides)
        return ExperimentConfig(loader=self.get_component('data_loader'),
                                **options)

    def resolve_workers(self, experiment_config):
        """How many worker threads a run of ``experiment_config`` may use.

        An explicit session value or ``DLORASIM_WORKERS`` beats the
        experiment's own ``workers`` option.
        """
        explicit = self.get_config_variable('workers',
                                            methods=('instance', 'env'))
        env_var = self.session_var_map['workers'][1]
        if 'workers' in self._overrides or (
                env_var is not None and env_var in os.environ):
            return int(explicit)
        return experiment_config.workers

    def set_debug_logger(self, logger_name='dlorasim'):
        self.set_stream_logger(logger_name, logging.DEBUG)

    def set_stream_logger(self, logger_name, log_level, stream=None,
                          format_string=None):
        """Send records of ``logger_name`` at ``log_level`` and above to
        ``stream`` (stderr by default)."""
        self._attach_log_handler(logging.StreamHandler(stream), logger_name,
                                 log_level, format_string)

    def set_file_logger(self, log_level, path, logger_name='dlorasim'):
        """Append records of ``logger_name`` at ``log_level`` and above to
        the file at ``path``."""
        self._attach_log_handler(logging.FileHandler(path), logger_name,
                                 log_level)

    def _attach_log_handler(self, handler, logger_name, log_level,
                            format_string=None):
        handler.setLevel(log_level)
        handler.setFormatter(
            logging.Formatter(format_string or self.LOG_FORMAT))
        log = logging.getLogger(logger_name)
        # Filtering happens per handler.
        log.setLevel(logging.DEBUG)
        log.addHandler(handler)

    def register(self, event_name, handler, unique_id=None):
        """Attach ``handler`` to ``event_name`` and every event below it.

        :param handler: Callable taking ``**kwargs``.  Anything else is
            rejected with ``ValueError``.
        """
        self._events.register(event_name, handler, unique_id)

    def emit(self, event_name, **kwargs):
        return self._events.emit(event_name, **kwargs)

    def emit_first_non_none_response(self, event_name, **kwargs):
        return first_non_none_response(
            self._events.emit(event_name, **kwargs))

    def get_component(self, name):
        return self._components.get_component(name)

    def register_component(self, name, component):
        self._components.register_component(name, component)


class ComponentLocator(object):
    """Named session parts, some built only when first asked for."""

    def __init__(self):
        self._built = {}
        self._factories = {}

    def get_component(self, name):
        factory = self._factories.pop(name, None)
        if factory is not None:
            self._built[name] = factory()
        if name not in self._built:
            raise ValueError("Unknown component: %s" % name)
        return self._built[name]

    def register_component(self, name, component):
        self._factories.pop(name, None)
        self._built[name] = component

    def lazy_register_component(self, name, no_arg_factory):
        self._built.pop(name, None)
        self._factories[name] = no_arg_factory
