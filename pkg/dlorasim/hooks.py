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
"""Dotted-name events emitted by the round loop.

Events the simulator emits:

    * ``before-schedule.<scheduler>``: ``round_index``, ``vehicles``.  A
      handler may return a ``ScheduleDecision`` to replace scheduling.
    * ``after-schedule.<scheduler>``: ``round_index``, ``decision``,
      ``vehicles``, ``payload``, ``radio``, ``epochs``.
    * ``after-aggregate``: ``round_index``, ``global_model``.
    * ``round-complete``: ``metrics``.

A handler registered for ``after-schedule`` receives every
``after-schedule.<scheduler>`` event; more specific handlers run first.
"""
import inspect
import logging
from collections import namedtuple


logger = logging.getLogger(__name__)

_FIRST = 0
_MIDDLE = 1
_LAST = 2


class _HandlerList(namedtuple('_HandlerList', ['first', 'middle', 'last'])):
    __slots__ = ()

    def ordered(self):
        return self.first + self.middle + self.last


def first_non_none_response(responses, default=None):
    """Find the first non-None response in ``(handler, response)`` pairs.

    :type responses: list of tuples
    :param responses: The return value of ``HierarchicalEmitter.emit``.

    :param default: Returned if no handler responded.
    """
    for _, response in responses:
        if response is not None:
            return response
    return default


class HierarchicalEmitter(object):
    """Event emitter with dotted-prefix matching.

    Emitting ``after-schedule.arbvs`` calls the handlers of
    ``after-schedule.arbvs`` and then those of ``after-schedule``.
    Within one name, handlers registered with ``register_first`` run
    before ``register`` which run before ``register_last``.
    """

    def __init__(self):
        self._handlers = {}
        self._unique_ids = {}
        self._lookup_cache = {}

    def register(self, event_name, handler, unique_id=None):
        self._register(event_name, handler, unique_id, _MIDDLE)

    def register_first(self, event_name, handler, unique_id=None):
        self._register(event_name, handler, unique_id, _FIRST)

    def register_last(self, event_name, handler, unique_id=None):
        self._register(event_name, handler, unique_id, _LAST)

    def emit(self, event_name, **kwargs):
        """Call every handler of ``event_name`` and its prefixes.

        :rtype: list
        :return: List of ``(handler, response)`` tuples.
        """
        handlers = self._lookup_cache.get(event_name)
        if handlers is None:
            handlers = self._collect(event_name)
            self._lookup_cache[event_name] = handlers
        if not handlers:
            return []
        kwargs['event_name'] = event_name
        responses = []
        for handler in handlers:
            logger.debug('Event %s: calling handler %s', event_name, handler)
            responses.append((handler, handler(**kwargs)))
        return responses

    def _collect(self, event_name):
        parts = event_name.split('.')
        collected = []
        for end in range(len(parts), 0, -1):
            handlers = self._handlers.get('.'.join(parts[:end]))
            if handlers is not None:
                collected.extend(handlers.ordered())
        return collected

    def _register(self, event_name, handler, unique_id, section):
        if not callable(handler):
            raise ValueError("Event handler %s must be callable." % handler)
        if not _accepts_kwargs(handler):
            raise ValueError("Event handler %s must accept keyword "
                             "arguments (**kwargs)" % handler)
        if unique_id is not None:
            if unique_id in self._unique_ids:
                return
            self._unique_ids[unique_id] = handler
        handlers = self._handlers.setdefault(event_name,
                                             _HandlerList([], [], []))
        handlers[section].append(handler)
        self._lookup_cache = {}


def _accepts_kwargs(func):
    try:
        signature = inspect.signature(func)
    except (TypeError, ValueError):
        return True
    return any(p.kind == inspect.Parameter.VAR_KEYWORD
               for p in signature.parameters.values())
