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
import itertools
import math
import time

from tests import unittest, make_vehicle, skip_unless_slow_tests, TOY_SPEC

import numpy as np

from dlorasim.exceptions import InvalidParameterError, TooManyVehiclesError
from dlorasim.lora import rank_upper_bound
from dlorasim.scenario import RadioConfig, channel_gain, uplink_rate
from dlorasim.scheduler import (
    ARBVS, BRUTE_FORCE, EMPTY_FLAG, FEDAVG_ALL, FEDAVG_RANDOM,
    MIN_BANDWIDTH_HZ, ObjectiveParams, arbvs_schedule, brute_force_schedule,
    fedavg_all_schedule, greedy_select, min_bandwidth, objective_value,
    random_schedule, required_rate)
from dlorasim.validate import validate_schedule


#: The toy model with its uplink footprint scaled up so deadlines bind.
PAYLOAD = TOY_SPEC.payload(1000)
PARAMS = ObjectiveParams.for_spec(TOY_SPEC, eta=0.01, beta=1.0, sigma2=1.0,
                                  M=0.1)


def random_vehicles(rng, count, first_id=0):
    vehicles = []
    for vehicle_id in range(first_id, first_id + count):
        radius = 500.0 * math.sqrt(rng.uniform())
        angle, heading = rng.uniform(0, 2 * math.pi, size=2)
        vehicles.append(make_vehicle(
            vehicle_id=vehicle_id, x=radius * math.cos(angle),
            y=radius * math.sin(angle),
            heading=(math.cos(heading), math.sin(heading)),
            speed=rng.uniform(12, 22), cpu_freq=rng.uniform(1.9e9, 3e9),
            cycles_per_sample=rng.uniform(0.8e7, 1.2e7),
            gamma=rng.uniform(1.3, 1.5)))
    return vehicles


class TestGreedySelect(unittest.TestCase):
    def test_prefix_within_budget(self):
        b_mins = {'a': 3e6, 'b': 4e6, 'c': 5e6, 'd': 6e6}
        self.assertEqual(greedy_select(b_mins, 1e7), (['a', 'b'], 7e6))

    def test_infeasible_dropped_and_ties_by_id(self):
        b_mins = {3: 1.0, 1: 1.0, 2: None, 0: 5.0}
        self.assertEqual(greedy_select(b_mins, 2.0), ([1, 3], 2.0))

    def test_budget_must_be_positive(self):
        with self.assertRaises(InvalidParameterError):
            greedy_select({}, 0)

    def test_matches_max_cardinality_subset(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 13))
            b_mins = dict((i, float(rng.uniform(0.5, 4.0))) for i in range(n))
            budget = float(rng.uniform(1.0, 10.0))
            best = 0
            for size in range(n, 0, -1):
                if any(sum(b_mins[i] for i in combo) <= budget
                       for combo in itertools.combinations(range(n), size)):
                    best = size
                    break
            selected, _ = greedy_select(b_mins, budget)
            self.assertEqual(len(selected), best)


class TestMinBandwidth(unittest.TestCase):
    def setUp(self):
        self.radio = RadioConfig()

    def test_infeasible_when_training_overruns(self):
        vehicle = make_vehicle(x=499.0, heading=(1.0, 0.0), speed=20.0)
        req = min_bandwidth(vehicle, 1, PAYLOAD, self.radio)
        self.assertFalse(req.feasible)
        self.assertIsNone(req.b_min)

    def test_stationary_vehicle_needs_almost_nothing(self):
        vehicle = make_vehicle(x=100.0, speed=0.0)
        rate, _, t_st = required_rate(vehicle, 4, PAYLOAD, self.radio, 4)
        self.assertEqual(rate, 0.0)
        self.assertEqual(t_st, float('inf'))
        req = min_bandwidth(vehicle, 4, PAYLOAD, self.radio)
        self.assertEqual(req.b_min, MIN_BANDWIDTH_HZ)

    def test_eps_range(self):
        for eps in (0.0, 0.1):
            with self.assertRaises(InvalidParameterError):
                min_bandwidth(make_vehicle(), 1, PAYLOAD, self.radio,
                              eps=eps)

    def test_bisection_contract(self):
        rng = np.random.default_rng(1)
        eps = 1e-6
        checked = 0
        for vehicle in random_vehicles(rng, 500):
            target, _, _ = required_rate(vehicle, 2, PAYLOAD, self.radio, 4)
            req = min_bandwidth(vehicle, 2, PAYLOAD, self.radio, eps=eps)
            if not req.feasible or req.b_min == MIN_BANDWIDTH_HZ:
                continue
            checked += 1
            gain = channel_gain(vehicle, self.radio)
            at_b_min = uplink_rate(vehicle, req.b_min, self.radio, gain)
            self.assertGreaterEqual(at_b_min, target)
            self.assertLessEqual(at_b_min, target * (1 + 10 * eps))
            self.assertLess(uplink_rate(vehicle, 0.999 * req.b_min,
                                        self.radio, gain), target)
            self.assertLess(uplink_rate(vehicle, req.b_min * (1 - 10 * eps),
                                        self.radio, gain), target)
        self.assertGreater(checked, 100)

    def test_monotone_in_rank(self):
        rng = np.random.default_rng(2)
        for vehicle in random_vehicles(rng, 50):
            previous = 0.0
            for rank in range(1, 9):
                req = min_bandwidth(vehicle, rank, PAYLOAD, self.radio)
                if not req.feasible:
                    previous = float('inf')
                    continue
                self.assertGreaterEqual(req.b_min, previous)
                previous = req.b_min


class TestObjective(unittest.TestCase):
    def test_value(self):
        self.assertAlmostEqual(objective_value(PARAMS, 4, 2),
                               0.01 / 4 + 0.01 * (42 - 4), places=12)

    def test_empty_set(self):
        self.assertEqual(objective_value(PARAMS, 0, 1), float('inf'))

    def test_params_validated(self):
        with self.assertRaises(InvalidParameterError):
            ObjectiveParams(eta=0.01, beta=1, sigma2=1, M=0, K=42, L=2)


class TestArbvsSchedule(unittest.TestCase):
    def setUp(self):
        self.radio = RadioConfig(total_bandwidth=5e5)

    def test_single_generous_vehicle_gets_max_rank(self):
        vehicle = make_vehicle(x=50.0, speed=0.0)
        decision = arbvs_schedule([vehicle], TOY_SPEC, RadioConfig(), PARAMS,
                                  32, payload=PAYLOAD)
        self.assertEqual(decision.rank, rank_upper_bound(TOY_SPEC, 32))
        self.assertEqual(decision.selected, (0,))
        self.assertEqual(decision.scheduler, ARBVS)

    def test_no_feasible_vehicle(self):
        vehicle = make_vehicle(x=600.0)
        decision = arbvs_schedule([vehicle], TOY_SPEC, self.radio, PARAMS, 8,
                                  payload=PAYLOAD)
        self.assertTrue(decision.is_empty)
        self.assertEqual(decision.objective, float('inf'))
        self.assertIn(EMPTY_FLAG, decision.flags)

    def test_round_deadline_limits_rank(self):
        vehicle = make_vehicle(x=50.0, speed=0.0)
        radio = RadioConfig(round_deadline=1.0)
        decision = arbvs_schedule([vehicle], TOY_SPEC, radio, PARAMS, 32,
                                  payload=PAYLOAD)
        # Training alone takes 0.425 s per rank.
        self.assertEqual(decision.rank, 2)
        req = decision.per_vehicle[0]
        self.assertEqual(req.t_st, 1.0)
        self.assertLessEqual(req.t_l + req.t_u, 1.0)
        validate_schedule(decision, [vehicle], PAYLOAD, radio)
        self.assertIn(0, decision.per_vehicle)
        self.assertIsNone(decision.to_dict()['objective'])

    def test_no_vehicles(self):
        decision = arbvs_schedule([], TOY_SPEC, self.radio, PARAMS, 8)
        self.assertTrue(decision.is_empty)

    def test_allocates_exactly_b_min(self):
        vehicles = random_vehicles(np.random.default_rng(3), 8)
        decision = arbvs_schedule(vehicles, TOY_SPEC, self.radio, PARAMS, 8,
                                  payload=PAYLOAD)
        for vehicle_id in decision.selected:
            self.assertEqual(decision.bandwidth[vehicle_id],
                             decision.per_vehicle[vehicle_id].b_min)
        self.assertLessEqual(decision.total_bandwidth, 5e5)

    def test_deterministic(self):
        vehicles = random_vehicles(np.random.default_rng(4), 10)
        first = arbvs_schedule(vehicles, TOY_SPEC, self.radio, PARAMS, 8,
                               payload=PAYLOAD)
        second = arbvs_schedule(list(reversed(vehicles)), TOY_SPEC,
                                self.radio, PARAMS, 8, payload=PAYLOAD)
        self.assertEqual(first.rank, second.rank)
        self.assertEqual(sorted(first.selected), sorted(second.selected))

    def test_matches_brute_force_and_validates(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            count = int(rng.integers(1, 11))
            rank_cap = int(rng.integers(1, 9))
            radio = RadioConfig(
                total_bandwidth=float(rng.uniform(2e5, 2e6)))
            vehicles = random_vehicles(rng, count)
            ours = arbvs_schedule(vehicles, TOY_SPEC, radio, PARAMS,
                                  rank_cap, payload=PAYLOAD)
            oracle = brute_force_schedule(vehicles, TOY_SPEC, radio, PARAMS,
                                          rank_cap, payload=PAYLOAD)
            self.assertEqual(ours.objective, oracle.objective)
            self.assertEqual(len(ours.selected), len(oracle.selected))
            self.assertEqual(ours.rank, oracle.rank)
            validate_schedule(ours, vehicles, PAYLOAD, radio)
            validate_schedule(oracle, vehicles, PAYLOAD, radio)


class TestBruteForceSchedule(unittest.TestCase):
    def test_guard(self):
        vehicles = random_vehicles(np.random.default_rng(6), 17)
        with self.assertRaises(TooManyVehiclesError):
            brute_force_schedule(vehicles, TOY_SPEC, RadioConfig(), PARAMS, 4)

    def test_empty(self):
        decision = brute_force_schedule([], TOY_SPEC, RadioConfig(), PARAMS,
                                        4)
        self.assertTrue(decision.is_empty)
        self.assertEqual(decision.scheduler, BRUTE_FORCE)

    def test_single_vehicle_matches_arbvs(self):
        vehicle = make_vehicle(x=120.0, heading=(0.0, 1.0))
        ours = arbvs_schedule([vehicle], TOY_SPEC, RadioConfig(), PARAMS, 8,
                              payload=PAYLOAD)
        oracle = brute_force_schedule([vehicle], TOY_SPEC, RadioConfig(),
                                      PARAMS, 8, payload=PAYLOAD)
        self.assertEqual((ours.rank, ours.selected, ours.objective),
                         (oracle.rank, oracle.selected, oracle.objective))


class TestRandomSchedule(unittest.TestCase):
    def test_equal_split(self):
        vehicles = [make_vehicle(vehicle_id=i, x=10.0 * i, speed=0.0)
                    for i in range(4)]
        decision = random_schedule(vehicles, 1.0, RadioConfig(8e6), seed=0)
        self.assertEqual(sorted(decision.selected), [0, 1, 2, 3])
        for bandwidth in decision.bandwidth.values():
            self.assertEqual(bandwidth, 2e6)

    def test_sample_size_rounds_up(self):
        vehicles = random_vehicles(np.random.default_rng(7), 20)
        decision = random_schedule(vehicles, 0.2, RadioConfig(), seed=1)
        self.assertEqual(len(decision.bandwidth), 4)
        decision = random_schedule(vehicles[:7], 0.2, RadioConfig(), seed=1)
        self.assertEqual(len(decision.bandwidth), 2)

    def test_seeded(self):
        vehicles = random_vehicles(np.random.default_rng(8), 20)
        first = random_schedule(vehicles, 0.4, RadioConfig(), seed=3)
        second = random_schedule(vehicles, 0.4, RadioConfig(), seed=3)
        self.assertEqual(first.selected, second.selected)

    def test_stragglers_dropped_but_keep_bandwidth(self):
        leaving = make_vehicle(vehicle_id=0, x=499.9, heading=(1.0, 0.0),
                               speed=20.0)
        staying = make_vehicle(vehicle_id=1, x=10.0, speed=0.0)
        decision = random_schedule([leaving, staying], 1.0, RadioConfig(),
                                   seed=0, rank=2, model=PAYLOAD,
                                   params=PARAMS)
        self.assertEqual(decision.selected, (1,))
        self.assertEqual(decision.dropped, (0,))
        self.assertIn(0, decision.bandwidth)
        self.assertIn('stragglers=1', decision.flags)
        self.assertEqual(decision.objective, objective_value(PARAMS, 1, 2))
        validate_schedule(decision, [leaving, staying], PAYLOAD,
                          RadioConfig())

    def test_full_rank_variant(self):
        vehicles = [make_vehicle(vehicle_id=i, speed=0.0) for i in range(3)]
        decision = random_schedule(vehicles, 1.0, RadioConfig(), seed=0,
                                   model=PAYLOAD, scheduler=FEDAVG_RANDOM)
        self.assertIsNone(decision.rank)
        self.assertIsNone(decision.objective)
        self.assertEqual(decision.scheduler, FEDAVG_RANDOM)

    def test_fraction_range(self):
        with self.assertRaises(InvalidParameterError):
            random_schedule([make_vehicle()], 0.0, RadioConfig(), seed=0)

    def test_no_vehicles(self):
        self.assertTrue(random_schedule([], 0.5, RadioConfig(), 0).is_empty)


class TestFedAvgAll(unittest.TestCase):
    def test_everyone_unconstrained(self):
        vehicles = [make_vehicle(vehicle_id=i, x=499.0) for i in (2, 0, 1)]
        decision = fedavg_all_schedule(vehicles)
        self.assertEqual(decision.selected, (0, 1, 2))
        self.assertIsNone(decision.rank)
        self.assertFalse(decision.constrained)
        self.assertEqual(decision.scheduler, FEDAVG_ALL)
        self.assertEqual(decision.total_bandwidth, 0)

    def test_empty(self):
        self.assertIn(EMPTY_FLAG, fedavg_all_schedule([]).flags)


@skip_unless_slow_tests
class TestArbvsScaling(unittest.TestCase):
    def _median_time(self, vehicles, radio):
        samples = []
        for _ in range(3):
            start = time.perf_counter()
            arbvs_schedule(vehicles, TOY_SPEC, radio, PARAMS, 8,
                           payload=PAYLOAD)
            samples.append(time.perf_counter() - start)
        return sorted(samples)[1]

    def test_grows_about_linearly(self):
        rng = np.random.default_rng(9)
        radio = RadioConfig(total_bandwidth=1e9)
        small = self._median_time(random_vehicles(rng, 200), radio)
        large = self._median_time(random_vehicles(rng, 400), radio)
        self.assertLessEqual(large, 2.5 * small)
