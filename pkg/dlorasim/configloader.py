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
"""Reading experiment config files.

A config file is flat ``key = value`` text with ``#`` comments::

    # desk run, 60 rounds
    rounds = 60
    scheduler = arbvs

Lines before the first section header belong to an implicit
``[default]`` section.  Named profiles live in ``[profile NAME]``
sections and are layered over ``[default]``::

    [default]
    rounds = 60

    [profile quick]
    rounds = 3
"""
import configparser
import copy
import os
import shlex

from dlorasim.exceptions import (
    ConfigNotFound, ConfigParseError, ProfileNotFound)


DEFAULT_PROFILE = 'default'


def load_config(config_filename):
    """Parse a config file into ``{'profiles': {...}, <other sections>}``.

    :raises: ConfigNotFound, ConfigParseError
    """
    return build_profile_map(raw_config_parse(config_filename))


def _read_text(path):
    with open(path, 'r') as f:
        text = f.read()
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith(('#', ';')):
            continue
        if not stripped.startswith('['):
            text = '[%s]\n%s' % (DEFAULT_PROFILE, text)
        break
    return text


def raw_config_parse(config_filename):
    """Returns the parsed config contents, one top level key per section.

    :raises: ConfigNotFound, ConfigParseError
    """
    path = os.path.expanduser(os.path.expandvars(config_filename))
    if not os.path.isfile(path):
        raise ConfigNotFound(path=path)
    cp = configparser.RawConfigParser(inline_comment_prefixes=('#',))
    try:
        cp.read_string(_read_text(path), source=path)
    except configparser.Error:
        raise ConfigParseError(path=path)
    config = {}
    for section in cp.sections():
        config[section] = dict(
            (option, cp.get(section, option).strip())
            for option in cp.options(section))
    return config


def build_profile_map(parsed_config):
    """Move ``[default]`` and ``[profile X]`` sections under ``profiles``.

    Does not mutate ``parsed_config``.
    """
    parsed_config = copy.deepcopy(parsed_config)
    profiles = {}
    final_config = {}
    for key, values in parsed_config.items():
        if key.startswith('profile'):
            try:
                parts = shlex.split(key)
            except ValueError:
                continue
            if len(parts) == 2:
                profiles[parts[1]] = values
        elif key == DEFAULT_PROFILE:
            profiles[key] = values
        else:
            final_config[key] = values
    final_config['profiles'] = profiles
    return final_config


def scoped_values(config, profile=None):
    """Option values for ``profile`` layered over ``[default]``.

    :raises: ProfileNotFound if a named profile is missing.
    """
    profiles = config['profiles']
    values = dict(profiles.get(DEFAULT_PROFILE, {}))
    if profile is not None and profile != DEFAULT_PROFILE:
        if profile not in profiles:
            raise ProfileNotFound(profile=profile)
        values.update(profiles[profile])
    return values
