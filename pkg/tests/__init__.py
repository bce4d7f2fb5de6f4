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

import os
import shutil
import tempfile
import contextlib
import unittest

import mock

import dlorasim.loaders
import dlorasim.session
from dlorasim.model import ModelSpec
from dlorasim.scenario import Vehicle


_LOADER = dlorasim.loaders.Loader()

#: The default toy model: 32 features, 64 hidden units, 10 classes.
TOY_SPEC = ModelSpec([(64, 32), (10, 64)])


def skip_unless_slow_tests(cls_or_func):
    """Long reproductions and timing checks run only when asked for."""
    if os.environ.get('DLORASIM_SLOW_TESTS') != '1':
        return unittest.skip(
            'set DLORASIM_SLOW_TESTS=1 to run slow tests')(cls_or_func)
    return cls_or_func


def create_session(**kwargs):
    # The shared _LOADER is reused across tests and no config file is
    # read unless a test sets one.
    kwargs.setdefault('include_builtin_handlers', True)
    session = dlorasim.session.Session(**kwargs)
    session.register_component('data_loader', _LOADER)
    session.set_config_variable('config_file', None)
    return session


def make_vehicle(vehicle_id=0, x=0.0, y=0.0, heading=(1.0, 0.0),
                 speed=15.0, cpu_freq=2.5e9, cycles_per_sample=1e7,
                 gamma=1.4, tx_power=0.631, dataset_size=300):
    return Vehicle(id=vehicle_id, x=x, y=y, heading_x=heading[0],
                   heading_y=heading[1], speed=speed, cpu_freq=cpu_freq,
                   cycles_per_sample=cycles_per_sample, gamma=gamma,
                   tx_power=tx_power, dataset_size=dataset_size)


@contextlib.contextmanager
def temporary_directory():
    directory = tempfile.mkdtemp()
    try:
        yield directory
    finally:
        shutil.rmtree(directory)


@contextlib.contextmanager
def temporary_file(mode, contents=None):
    """A named file that can be reopened while the context is active."""
    with temporary_directory() as directory:
        full_filename = os.path.join(directory, 'tmpfile')
        with open(full_filename, 'w') as f:
            if contents:
                f.write(contents)
        with open(full_filename, mode) as f:
            yield f


class BaseEnvVar(unittest.TestCase):
    def setUp(self):
        # Patches out os.environ and exposes the fake environment as
        # self.environ; restored in tearDown().
        self.environ = {}
        self.environ_patch = mock.patch('os.environ', self.environ)
        self.environ_patch.start()

    def tearDown(self):
        self.environ_patch.stop()


class BaseSessionTest(BaseEnvVar):
    """A real session isolated from the environment and config files."""

    def setUp(self, **environ):
        super(BaseSessionTest, self).setUp()
        self.environ.update(environ)
        self.session = create_session()
