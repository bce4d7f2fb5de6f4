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
import functools
import logging

import numpy as np


logger = logging.getLogger(__name__)


class CachedProperty(object):
    """A read only property that caches the initially computed value.

    This descriptor will only call the provided ``fget`` function once.
    Subsequent access to this property will return the cached value.

    """

    def __init__(self, fget):
        self._fget = fget

    def __get__(self, obj, cls):
        if obj is None:
            return self
        else:
            computed_value = self._fget(obj)
            obj.__dict__[self._fget.__name__] = computed_value
            return computed_value


def instance_cache(func):
    """Method decorator for caching method calls to a single instance.

    **This is not a general purpose caching decorator.**

    In order to use this, you *must* provide an ``_instance_cache``
    attribute on the instance.  Arguments must be hashable.

    """
    func_name = func.__name__

    @functools.wraps(func)
    def _cache_guard(self, *args, **kwargs):
        cache_key = (func_name, args)
        if kwargs:
            kwarg_items = tuple(sorted(kwargs.items()))
            cache_key = (func_name, args, kwarg_items)
        result = self._instance_cache.get(cache_key)
        if result is not None:
            return result
        result = func(self, *args, **kwargs)
        self._instance_cache[cache_key] = result
        return result

    return _cache_guard


def derive_seed(*keys):
    """Derive an independent integer seed from a tuple of integer keys.

    Used for per-(round, vehicle) streams so that results never depend
    on the order or the thread in which clients are processed::

        derive_seed(train_seed, round_index, vehicle_id)

    """
    sequence = np.random.SeedSequence([int(k) for k in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def frozen(array):
    """Return a read-only float64 copy of ``array``."""
    result = np.array(array, dtype=np.float64, copy=True)
    result.setflags(write=False)
    return result


def parse_vehicle_id(value):
    """Vehicle ids are integers when they look like integers."""
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        return value


def stable_id_key(vehicle_id):
    """Map a vehicle id to a non-negative integer usable as a seed key.

    Integer ids map to themselves; other ids are folded from their
    characters so the key does not depend on ``PYTHONHASHSEED``.
    """
    if isinstance(vehicle_id, (int, np.integer)) and vehicle_id >= 0:
        return int(vehicle_id)
    key = 0
    for char in str(vehicle_id):
        key = (key * 131 + ord(char)) % (2 ** 63)
    return key


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def id_order_key(vehicle_id):
    """Sort key for vehicle ids: integers numerically, then the rest as
    text."""
    if isinstance(vehicle_id, (int, np.integer)):
        return (0, int(vehicle_id), '')
    return (1, 0, str(vehicle_id))
