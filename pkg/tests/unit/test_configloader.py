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

from tests import unittest, temporary_directory

from dlorasim.configloader import (
    build_profile_map, load_config, raw_config_parse, scoped_values)
from dlorasim.exceptions import (
    ConfigNotFound, ConfigParseError, ProfileNotFound)


def write_config(directory, text):
    path = os.path.join(directory, 'run.cfg')
    with open(path, 'w') as f:
        f.write(text)
    return path


class TestConfigLoader(unittest.TestCase):
    def test_flat_file_is_default_profile(self):
        with temporary_directory() as directory:
            path = write_config(directory,
                                '# desk run\nrounds = 3\n'
                                'scheduler = random  # sampled\n')
            config = load_config(path)
        self.assertEqual(config['profiles']['default'],
                         {'rounds': '3', 'scheduler': 'random'})

    def test_profiles_layer_over_default(self):
        with temporary_directory() as directory:
            path = write_config(directory,
                                '[default]\nrounds = 60\neta = 0.01\n\n'
                                '[profile quick]\nrounds = 3\n')
            config = load_config(path)
        self.assertEqual(scoped_values(config, 'quick'),
                         {'rounds': '3', 'eta': '0.01'})
        self.assertEqual(scoped_values(config), {'rounds': '60',
                                                 'eta': '0.01'})

    def test_missing_profile(self):
        with self.assertRaises(ProfileNotFound):
            scoped_values({'profiles': {}}, 'nope')

    def test_default_profile_may_be_absent(self):
        self.assertEqual(scoped_values({'profiles': {}}, 'default'), {})

    def test_missing_file(self):
        with self.assertRaises(ConfigNotFound):
            raw_config_parse('/nonexistent/run.cfg')

    def test_unparsable_file(self):
        with temporary_directory() as directory:
            path = write_config(directory, '[default]\nrounds\n')
            with self.assertRaises(ConfigParseError):
                raw_config_parse(path)

    def test_build_profile_map_keeps_other_sections(self):
        parsed = {'default': {'a': '1'}, 'profile x': {'a': '2'},
                  'profile "bad': {}, 'notes': {'b': '3'}}
        built = build_profile_map(parsed)
        self.assertEqual(built['profiles'], {'default': {'a': '1'},
                                             'x': {'a': '2'}})
        self.assertEqual(built['notes'], {'b': '3'})
        self.assertNotIn('profiles', parsed)
