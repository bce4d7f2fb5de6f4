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
from tests import unittest, make_vehicle, TOY_SPEC

from dlorasim.exceptions import ScheduleValidationError
from dlorasim.scenario import RadioConfig
from dlorasim.scheduler import (
    ScheduleDecision, fedavg_all_schedule, min_bandwidth)
from dlorasim.validate import ScheduleValidator, validate_schedule


PAYLOAD = TOY_SPEC.payload(1000)
RADIO = RadioConfig(total_bandwidth=1e6)


def decision(selected, bandwidth, rank=2, constrained=True):
    return ScheduleDecision(rank=rank, selected=tuple(selected),
                            bandwidth=bandwidth, objective=1.0,
                            per_vehicle={}, scheduler='test', dropped=(),
                            flags=(), constrained=constrained)


class TestScheduleValidator(unittest.TestCase):
    def setUp(self):
        self.vehicles = [make_vehicle(vehicle_id=i, x=50.0 * i, speed=0.0)
                         for i in range(3)]
        self.validator = ScheduleValidator(PAYLOAD, RADIO)

    def constraints(self, candidate, vehicles=None):
        report = self.validator.validate(candidate, vehicles or self.vehicles)
        return [error[0] for error in report.errors]

    def test_valid_decision(self):
        candidate = decision([0, 1], {0: 4e5, 1: 4e5})
        self.assertEqual(self.constraints(candidate), [])
        validate_schedule(candidate, self.vehicles, PAYLOAD, RADIO)

    def test_duplicate_selection(self):
        candidate = decision([0, 0], {0: 1e5})
        self.assertEqual(self.constraints(candidate), ['C1'])

    def test_unknown_vehicle(self):
        candidate = decision([7], {7: 1e5})
        self.assertEqual(self.constraints(candidate), ['C1'])

    def test_missing_allocation(self):
        candidate = decision([0, 1], {0: 1e5})
        self.assertEqual(self.constraints(candidate), ['C2'])

    def test_over_budget(self):
        candidate = decision([0, 1, 2], {0: 4e5, 1: 4e5, 2: 4e5})
        self.assertEqual(self.constraints(candidate), ['C3'])

    def test_allocation_out_of_range(self):
        self.assertIn('C4', self.constraints(decision([0], {0: -1.0})))
        self.assertIn('C4', self.constraints(decision([0], {0: 2e6})))

    def test_deadline(self):
        leaving = make_vehicle(vehicle_id=9, x=499.0, heading=(1.0, 0.0),
                               speed=20.0)
        candidate = decision([9], {9: 5e5})
        self.assertEqual(self.constraints(candidate, [leaving]), ['C5'])

    def test_exact_b_min_passes(self):
        vehicle = make_vehicle(vehicle_id=0, x=300.0, heading=(1.0, 0.0))
        req = min_bandwidth(vehicle, 2, PAYLOAD, RADIO)
        self.assertTrue(req.feasible)
        candidate = decision([0], {0: req.b_min})
        self.assertEqual(self.constraints(candidate, [vehicle]), [])

    def test_unconstrained_only_checks_selection(self):
        candidate = fedavg_all_schedule(self.vehicles)
        self.assertEqual(self.constraints(candidate), [])
        bogus = decision([0, 0], {}, rank=None, constrained=False)
        self.assertEqual(self.constraints(bogus), ['C1'])

    def test_report_names_every_violation(self):
        candidate = decision([0, 5], {0: 2e6})
        with self.assertRaises(ScheduleValidationError) as caught:
            validate_schedule(candidate, self.vehicles, PAYLOAD, RADIO)
        message = str(caught.exception)
        self.assertIn('C1 vehicle 5', message)
        self.assertIn('C4 vehicle 0', message)

    def test_round_deadline(self):
        vehicle = make_vehicle(vehicle_id=0, x=300.0, heading=(1.0, 0.0))
        req = min_bandwidth(vehicle, 2, PAYLOAD, RADIO)
        candidate = decision([0], {0: req.b_min})
        validator = ScheduleValidator(
            PAYLOAD, RadioConfig(total_bandwidth=1e6,
                                 round_deadline=0.5 * req.t_st))
        report = validator.validate(candidate, [vehicle])
        self.assertEqual([error[0] for error in report.errors], ['C5'])
        self.assertIn('exceeds deadline', report.generate_report())
