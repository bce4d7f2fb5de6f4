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
"""Builtin event handlers registered by every session.

Handlers are plain functions taking keyword arguments.  The module level
``BUILTIN_HANDLERS`` lists ``(event_name, handler[, register_type])``
entries; ``Session`` registers them on creation.
"""
import logging

from dlorasim.validate import validate_schedule


logger = logging.getLogger(__name__)

REGISTER_FIRST = object()
REGISTER_LAST = object()


def check_schedule_constraints(decision, vehicles, payload, radio, epochs,
                               round_index, **kwargs):
    """Reject any decision that breaks the scheduling constraints."""
    validate_schedule(decision, vehicles, payload, radio, epochs=epochs,
                      round_index=round_index)


def log_round(metrics, **kwargs):
    flags = ';'.join(metrics.flags)
    logger.info("Round %s: rank=%s selected=%s acc=%.4f loss=%.4f%s",
                metrics.t, metrics.r, metrics.s_size, metrics.test_acc,
                metrics.test_loss, ' [%s]' % flags if flags else '')


BUILTIN_HANDLERS = [
    ('after-schedule', check_schedule_constraints, REGISTER_FIRST),
    ('round-complete', log_round),
]
