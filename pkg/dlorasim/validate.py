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
"""Schedule decision validation.

This module checks a ``ScheduleDecision`` against the constraints of the
scheduling problem without trusting anything the scheduler recorded:
rates, delays and deadlines are recomputed from the vehicles.

Constraints
-----------

* C1: selected vehicles are distinct and were actually offered.
* C2: every selected vehicle holds a bandwidth allocation.
* C3: allocations sum to at most the cell budget.
* C4: every allocation lies in ``[0, B]``.
* C5: training plus upload of every selected vehicle fits inside its
  deadline, the sooner of its sojourn time and the round deadline, at
  the allocated bandwidth.

Decisions marked ``constrained=False`` only get C1.
"""
import logging

from dlorasim.exceptions import ScheduleValidationError
from dlorasim.scenario import (
    channel_gain, deadline, local_train_delay, upload_delay, uplink_rate)


logger = logging.getLogger(__name__)

RELATIVE_TOLERANCE = 1e-9


def validate_schedule(decision, vehicles, model, radio, epochs=4,
                      round_index=0):
    """Validate a decision, raising if any constraint is violated.

    :type decision: dlorasim.scheduler.ScheduleDecision
    :param vehicles: The vehicles that were offered to the scheduler.
    :param model: Parameter accounting used for delays and bits.

    :raise: ScheduleValidationError

    """
    validator = ScheduleValidator(model, radio, epochs=epochs,
                                  round_index=round_index)
    report = validator.validate(decision, vehicles)
    if report.has_errors():
        raise ScheduleValidationError(report=report.generate_report())


class ValidationErrors(object):
    def __init__(self):
        self._errors = []

    def has_errors(self):
        if self._errors:
            return True
        return False

    @property
    def errors(self):
        return list(self._errors)

    def generate_report(self):
        error_messages = []
        for error in self._errors:
            error_messages.append(self._format_error(error))
        return '\n'.join(error_messages)

    def _format_error(self, error):
        constraint, vehicle_id, additional = error
        if constraint == 'C1':
            return 'C1 vehicle %s: %s' % (vehicle_id, additional['reason'])
        elif constraint == 'C2':
            return 'C2 vehicle %s: selected without a bandwidth allocation' % (
                vehicle_id,)
        elif constraint == 'C3':
            return ('C3: allocations sum to %r Hz, budget is %r Hz' % (
                additional['total'], additional['budget']))
        elif constraint == 'C4':
            return ('C4 vehicle %s: allocation %r Hz outside [0, %r]' % (
                vehicle_id, additional['bandwidth'], additional['budget']))
        elif constraint == 'C5':
            return ('C5 vehicle %s: t_l + t_u = %r s exceeds deadline %r s' % (
                vehicle_id, additional['delay'], additional['deadline']))
        return '%s vehicle %s: %s' % (constraint, vehicle_id, additional)

    def report(self, constraint, vehicle_id, **kwargs):
        self._errors.append((constraint, vehicle_id, kwargs))


class ScheduleValidator(object):
    """Recomputes the physics of a decision and reports violations."""

    def __init__(self, model, radio, epochs=4, round_index=0):
        self._model = model
        self._radio = radio
        self._epochs = epochs
        self._round_index = round_index

    def validate(self, decision, vehicles):
        """Validate ``decision``.

        :return: A ``ValidationErrors`` report; never raises for a
            violation.
        """
        errors = ValidationErrors()
        offered = dict((v.id, v) for v in vehicles)
        self._check_selection(decision, offered, errors)
        if decision.constrained:
            self._check_budget(decision, errors)
            for vehicle_id in decision.selected:
                if vehicle_id in offered and vehicle_id in decision.bandwidth:
                    self._check_deadline(decision, offered[vehicle_id],
                                         errors)
        if errors.has_errors():
            logger.debug("Decision from %s failed validation: %s",
                         decision.scheduler, errors.errors)
        return errors

    def _check_selection(self, decision, offered, errors):
        seen = set()
        for vehicle_id in decision.selected:
            if vehicle_id in seen:
                errors.report('C1', vehicle_id, reason='selected twice')
            seen.add(vehicle_id)
            if vehicle_id not in offered:
                errors.report('C1', vehicle_id, reason='was not offered')
            if decision.constrained and vehicle_id not in decision.bandwidth:
                errors.report('C2', vehicle_id)

    def _check_budget(self, decision, errors):
        budget = self._radio.total_bandwidth
        slack = budget * RELATIVE_TOLERANCE
        total = 0.0
        for vehicle_id, bandwidth in decision.bandwidth.items():
            if bandwidth is None or bandwidth < 0 or bandwidth > budget:
                errors.report('C4', vehicle_id, bandwidth=bandwidth,
                              budget=budget)
                continue
            total += bandwidth
        if total > budget + slack:
            errors.report('C3', None, total=total, budget=budget)

    def _check_deadline(self, decision, vehicle, errors):
        bandwidth = decision.bandwidth[vehicle.id]
        if bandwidth is None:
            return
        gain = channel_gain(vehicle, self._radio, self._round_index)
        rate = uplink_rate(vehicle, bandwidth, self._radio, gain=gain)
        delay = (local_train_delay(vehicle, decision.rank, self._model,
                                   self._epochs) +
                 upload_delay(decision.rank, self._model, rate, self._radio))
        limit = deadline(vehicle, self._radio)
        if delay > limit * (1 + RELATIVE_TOLERANCE):
            errors.report('C5', vehicle.id, delay=delay, deadline=limit)
