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
"""Preset files bundled with dlorasim.

Two YAML documents ship in ``dlorasim/data``:

``models.yaml``
    Layer layouts by name, for ``ModelSpec.from_preset``.
``presets.yaml``
    Named groups of ``ExperimentConfig`` options, applied under any
    explicitly given option.

A :class:`Loader` looks for ``<name>.yaml`` in each directory of its
search path in turn and returns the first one it finds.  The search path
is whatever ``DLORASIM_DATA_PATH`` lists (``os.pathsep`` separated),
followed by ``~/.dlorasim/data`` and the bundled directory, so a file of
the same name placed earlier shadows the bundled one.
"""
import logging
import os

import yaml

from dlorasim import DLORASIM_ROOT
from dlorasim.exceptions import DataNotFoundError, UnknownPresetError
from dlorasim.utils import instance_cache


logger = logging.getLogger(__name__)

EXTENSION = '.yaml'


class YAMLFileLoader(object):
    """Parse ``<path>.yaml`` if it is there."""

    def load_file(self, file_path):
        """:return: The parsed document, or None when the file is absent."""
        try:
            with open(file_path + EXTENSION, encoding='utf-8') as f:
                return yaml.safe_load(f)
        except FileNotFoundError:
            return None


def create_loader(search_path_string=None):
    """Build a :class:`Loader` from a ``DLORASIM_DATA_PATH`` style value.

    :type search_path_string: str
    :param search_path_string: Directories joined by ``os.pathsep``.
        ``~`` and environment variables are expanded.
    """
    if search_path_string is None:
        return Loader()
    extra = [os.path.expanduser(os.path.expandvars(entry))
             for entry in search_path_string.split(os.pathsep)]
    return Loader(extra_search_paths=extra)


class Loader(object):
    BUILTIN_DATA_PATH = os.path.join(DLORASIM_ROOT, 'data')
    USER_DATA_PATH = os.path.join(os.path.expanduser('~'), '.dlorasim',
                                  'data')

    def __init__(self, extra_search_paths=None, file_loader=None,
                 include_default_search_paths=True):
        self._instance_cache = {}
        self.file_loader = file_loader or YAMLFileLoader()
        self.search_paths = list(extra_search_paths or ())
        if include_default_search_paths:
            self.search_paths += [self.USER_DATA_PATH, self.BUILTIN_DATA_PATH]

    @instance_cache
    def load_data(self, name):
        """Load the first ``<name>.yaml`` on the search path.

        :raises: DataNotFoundError
        """
        for directory in filter(os.path.isdir, self.search_paths):
            candidate = os.path.join(directory, name)
            found = self.file_loader.load_file(candidate)
            if found is not None:
                logger.debug("Loaded %s from %s", name, candidate)
                return found
        raise DataNotFoundError(data_path=name)

    def load_preset(self, kind, name):
        """One entry of the ``kind`` preset file (``models`` or
        ``presets``).

        :raises: UnknownPresetError
        """
        presets = self.load_data(kind)
        try:
            return presets[name]
        except KeyError:
            raise UnknownPresetError(
                kind=kind, name=name,
                known_names=', '.join(sorted(presets)))
