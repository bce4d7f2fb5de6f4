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
"""Joint rank, bandwidth and vehicle selection.

For a rank ``r`` every vehicle has a deadline, its sojourn time or the
round deadline if that comes first, which must cover local training
plus the upload.  Training time fixes the upload rate it needs and
bisection finds the smallest bandwidth giving that rate.  Taking
vehicles in ascending order of that bandwidth until the cell budget is
spent selects as many vehicles as possible.  Doing this for every rank
and keeping the best objective gives the schedule.

Random and full-rank baselines share the ``ScheduleDecision`` type so
the harness and the validator treat every scheduler alike.
"""
import itertools
import logging
import math
from collections import namedtuple

import numpy as np

from dlorasim.exceptions import InvalidParameterError, TooManyVehiclesError
from dlorasim.lora import rank_upper_bound
from dlorasim.model import payload_bits
from dlorasim.scenario import (
    INFINITE, channel_gain, deadline, local_train_delay, upload_delay,
    uplink_rate)
from dlorasim.utils import id_order_key


logger = logging.getLogger(__name__)

ARBVS = 'arbvs'
BRUTE_FORCE = 'brute_force'
RANDOM = 'random'
FEDAVG_RANDOM = 'fedavg_random'
FEDAVG_ALL = 'fedavg_all'
SCHEDULERS = (ARBVS, BRUTE_FORCE, RANDOM, FEDAVG_RANDOM, FEDAVG_ALL)

MIN_BANDWIDTH_HZ = 1.0
DEFAULT_EPS = 1e-6
MAX_EPS = 1e-2
BRUTE_FORCE_LIMIT = 16

EMPTY_FLAG = 'empty-round'


#: What one vehicle needs at one rank.  ``b_min`` is None when the
#: vehicle cannot make its deadline with the whole budget; random
#: schedulers record the equal share they handed out instead.  ``t_u`` is
#: the upload time at that bandwidth and ``t_st`` the deadline.
VehicleRequirement = namedtuple(
    'VehicleRequirement', ['b_min', 't_l', 't_u', 't_st', 'feasible'])


class ObjectiveParams(namedtuple('ObjectiveParams',
                                 ['eta', 'beta', 'sigma2', 'M', 'K', 'L',
                                  'constant_term'])):
    """Weights of the scheduling objective.

    ``constant_term`` is carried for reporting only; it is the same for
    every candidate and never enters a comparison.
    """
    __slots__ = ()

    def __new__(cls, eta, beta, sigma2, M, K, L, constant_term=0.0):
        for name, value in (('eta', eta), ('beta', beta),
                            ('sigma2', sigma2), ('M', M), ('K', K),
                            ('L', L)):
            if not value > 0:
                raise InvalidParameterError(name=name, value=value,
                                            reason='must be positive')
        return super(ObjectiveParams, cls).__new__(
            cls, float(eta), float(beta), float(sigma2), float(M), int(K),
            int(L), float(constant_term))

    @classmethod
    def for_spec(cls, spec, eta=0.01, beta=1.0, sigma2=1.0, M=0.1):
        return cls(eta, beta, sigma2, M, spec.n_singular_values,
                   spec.n_layers)


class ScheduleDecision(namedtuple('ScheduleDecision',
                                  ['rank', 'selected', 'bandwidth',
                                   'objective', 'per_vehicle', 'scheduler',
                                   'dropped', 'flags', 'constrained'])):
    """One round's scheduling outcome.

    :ivar rank: Shared LoRA rank; ``None`` for a full-rank upload and
        ``0`` for an empty decision.
    :ivar selected: Tuple of vehicle ids that train and upload.
    :ivar bandwidth: Dict of vehicle id to allocated Hz.  Dropped
        stragglers keep their allocation, since it was spent.
    :ivar objective: Objective of the decision, ``inf`` when empty and
        ``None`` for schedulers that do not evaluate one.
    :ivar per_vehicle: Dict of vehicle id to ``VehicleRequirement``.
    :ivar dropped: Vehicles that were given bandwidth but miss their
        deadline.
    :ivar constrained: False when the scheduler ignores radio and
        deadlines entirely.
    """
    __slots__ = ()

    @property
    def total_bandwidth(self):
        return sum(self.bandwidth[i] for i in sorted_ids(self.bandwidth))

    @property
    def is_empty(self):
        return not self.selected

    def to_dict(self):
        """JSON-ready form.  Non-finite numbers become ``None``."""
        return {
            'scheduler': self.scheduler,
            'rank': self.rank,
            'selected': list(self.selected),
            'bandwidth': dict((str(i), self.bandwidth[i])
                              for i in sorted_ids(self.bandwidth)),
            'objective': _finite_or_none(self.objective),
            'per_vehicle': dict(
                (str(i), _requirement_dict(self.per_vehicle[i]))
                for i in sorted_ids(self.per_vehicle)),
            'dropped': list(self.dropped),
            'flags': list(self.flags),
            'constrained': self.constrained,
        }


def sorted_ids(mapping):
    return sorted(mapping, key=id_order_key)


def _finite_or_none(value):
    if value is None or not math.isfinite(value):
        return None
    return value


def _requirement_dict(req):
    return {'b_min': req.b_min, 't_l': req.t_l,
            't_u': _finite_or_none(req.t_u), 't_st': _finite_or_none(req.t_st),
            'feasible': req.feasible}


def empty_decision(scheduler, per_vehicle=None, flags=(EMPTY_FLAG,)):
    return ScheduleDecision(rank=0, selected=(), bandwidth={},
                            objective=INFINITE, per_vehicle=per_vehicle or {},
                            scheduler=scheduler, dropped=(),
                            flags=tuple(flags), constrained=True)


def _check_eps(eps):
    if not 0 < eps <= MAX_EPS:
        raise InvalidParameterError(name='eps', value=eps,
                                    reason='must be in (0, %s]' % MAX_EPS)


def required_rate(vehicle, rank, model, radio, epochs):
    """Upload rate needed to finish before the vehicle's deadline.

    :return: ``(rate, t_l, t_st)``; ``rate`` is None when training alone
        overruns the deadline.
    """
    t_l = local_train_delay(vehicle, rank, model, epochs)
    t_st = deadline(vehicle, radio)
    if t_st == INFINITE:
        return 0.0, t_l, t_st
    slack = t_st - t_l
    if slack <= 0:
        return None, t_l, t_st
    return payload_bits(model, rank, radio.bit_width) / slack, t_l, t_st


def min_bandwidth(vehicle, rank, model, radio, eps=DEFAULT_EPS, epochs=4,
                  gain=None):
    """Smallest bandwidth that lets ``vehicle`` meet its deadline.

    Bisection over ``[1 Hz, B]`` on the monotone Shannon rate, stopped
    when the bracket is within relative ``eps``.  The upper end of the
    bracket is returned, so the rate there always meets the target.

    :rtype: VehicleRequirement
    """
    _check_eps(eps)
    if gain is None:
        gain = channel_gain(vehicle, radio)
    target, t_l, t_st = required_rate(vehicle, rank, model, radio, epochs)
    budget = radio.total_bandwidth
    if target is None:
        return VehicleRequirement(None, t_l, INFINITE, t_st, False)

    def rate(b):
        return uplink_rate(vehicle, b, radio, gain=gain)

    if rate(budget) < target:
        return VehicleRequirement(None, t_l, INFINITE, t_st, False)
    lo = min(MIN_BANDWIDTH_HZ, budget)
    if rate(lo) >= target:
        hi = lo
    else:
        hi = budget
        while hi - lo > eps * hi:
            mid = 0.5 * (lo + hi)
            if rate(mid) >= target:
                hi = mid
            else:
                lo = mid
    t_u = upload_delay(rank, model, rate(hi), radio)
    return VehicleRequirement(hi, t_l, t_u, t_st, True)


def greedy_select(b_mins, budget):
    """Admit vehicles by ascending bandwidth need until the budget is hit.

    :param b_mins: Dict of vehicle id to Hz, ``None`` for infeasible.
    :return: ``(selected ids, total bandwidth)``.
    """
    if not budget > 0:
        raise InvalidParameterError(name='budget', value=budget,
                                    reason='must be positive')
    feasible = [(b, id_order_key(i), i) for i, b in b_mins.items()
                if b is not None]
    feasible.sort()
    selected = []
    total = 0.0
    for b, _, vehicle_id in feasible:
        if total + b > budget:
            break
        selected.append(vehicle_id)
        total += b
    return selected, total


def objective_value(params, s_size, rank):
    """``eta beta sigma2 / s + M^2 (K - L r)``; ``inf`` for ``s = 0``."""
    if s_size < 0:
        raise InvalidParameterError(name='s_size', value=s_size,
                                    reason='must be >= 0')
    if s_size == 0:
        return INFINITE
    p = params
    return (p.eta * p.beta * p.sigma2 / s_size +
            p.M ** 2 * (p.K - p.L * rank))


def _candidate_key(objective, selected, rank, total):
    # Lower objective, then more vehicles, higher rank, less bandwidth.
    return (objective, -len(selected), -rank, total)


def _gains(vehicles, radio, round_index):
    return dict((v.id, channel_gain(v, radio, round_index))
                for v in vehicles)


def _requirements(vehicles, rank, model, radio, eps, epochs, gains):
    return dict((v.id, min_bandwidth(v, rank, model, radio, eps=eps,
                                     epochs=epochs, gain=gains[v.id]))
                for v in vehicles)


def _decision(scheduler, rank, selected, requirements, objective):
    return ScheduleDecision(
        rank=rank, selected=tuple(selected),
        bandwidth=dict((i, requirements[i].b_min) for i in selected),
        objective=objective, per_vehicle=requirements, scheduler=scheduler,
        dropped=(), flags=(), constrained=True)


def arbvs_schedule(vehicles, model, radio, params, rank_cap, eps=DEFAULT_EPS,
                   epochs=4, round_index=0, payload=None):
    """Pick the rank and vehicle set with the lowest objective.

    Each selected vehicle is allocated exactly its ``b_min``.

    :param model: ``ModelSpec`` bounding the rank.
    :param payload: Parameter accounting for delays and bits, such as
        ``model.payload(scale)``.  Defaults to ``model``.
    :rtype: ScheduleDecision
    """
    vehicles = list(vehicles)
    if not vehicles:
        logger.warning("No vehicles offered to the scheduler")
        return empty_decision(ARBVS)
    max_rank = rank_upper_bound(model, rank_cap)
    gains = _gains(vehicles, radio, round_index)
    if payload is None:
        payload = model
    best = None
    first_requirements = None
    for rank in range(1, max_rank + 1):
        requirements = _requirements(vehicles, rank, payload, radio, eps,
                                     epochs, gains)
        if first_requirements is None:
            first_requirements = requirements
        b_mins = dict((i, r.b_min) for i, r in requirements.items())
        selected, total = greedy_select(b_mins, radio.total_bandwidth)
        logger.debug("Rank %s: %s of %s vehicles fit, %.1f Hz", rank,
                     len(selected), len(vehicles), total)
        if not selected:
            # b_min only grows with rank, so no higher rank can do better.
            break
        key = _candidate_key(objective_value(params, len(selected), rank),
                             selected, rank, total)
        if best is None or key < best[0]:
            best = (key, rank, selected, requirements)
    if best is None:
        logger.warning("No vehicle can meet its deadline at any rank")
        return empty_decision(ARBVS, per_vehicle=first_requirements)
    key, rank, selected, requirements = best
    return _decision(ARBVS, rank, selected, requirements, key[0])


def _min_sum_subset(b_mins, budget):
    """Largest subset within budget, least total among equals."""
    ids = [i for i in sorted_ids(b_mins) if b_mins[i] is not None]
    for size in range(len(ids), 0, -1):
        best = None
        for combo in itertools.combinations(ids, size):
            total = sum(b_mins[i] for i in combo)
            if total <= budget and (best is None or total < best[1]):
                best = (combo, total)
        if best is not None:
            return list(best[0]), best[1]
    return [], 0.0


def brute_force_schedule(vehicles, model, radio, params, rank_cap,
                         eps=DEFAULT_EPS, epochs=4, round_index=0,
                         payload=None):
    """Exhaustive search over every rank and vehicle subset.

    Exponential in the number of vehicles; used to check
    ``arbvs_schedule``.

    :raises: TooManyVehiclesError above ``BRUTE_FORCE_LIMIT`` vehicles.
    """
    vehicles = list(vehicles)
    if len(vehicles) > BRUTE_FORCE_LIMIT:
        raise TooManyVehiclesError(limit=BRUTE_FORCE_LIMIT,
                                   count=len(vehicles))
    if not vehicles:
        return empty_decision(BRUTE_FORCE)
    max_rank = rank_upper_bound(model, rank_cap)
    gains = _gains(vehicles, radio, round_index)
    if payload is None:
        payload = model
    best = None
    for rank in range(1, max_rank + 1):
        requirements = _requirements(vehicles, rank, payload, radio, eps,
                                     epochs, gains)
        b_mins = dict((i, r.b_min) for i, r in requirements.items())
        selected, total = _min_sum_subset(b_mins, radio.total_bandwidth)
        if not selected:
            continue
        key = _candidate_key(objective_value(params, len(selected), rank),
                             selected, rank, total)
        if best is None or key < best[0]:
            best = (key, rank, selected, requirements)
    if best is None:
        return empty_decision(BRUTE_FORCE)
    key, rank, selected, requirements = best
    return _decision(BRUTE_FORCE, rank, selected, requirements, key[0])


def random_schedule(vehicles, fraction, radio, seed, rank=None, model=None,
                    params=None, epochs=4, round_index=0,
                    scheduler=RANDOM):
    """Sample ``ceil(fraction * n)`` vehicles and split ``B`` evenly.

    Vehicles that miss their deadline at their share are dropped: they
    keep their bandwidth but their upload does not count.

    :param rank: Fixed LoRA rank, or ``None`` for full-rank uploads.
    :param model: Needed for deadline checks; without it every sampled
        vehicle is kept.
    :param params: ``ObjectiveParams``; the objective is reported only
        for LoRA ranks.
    """
    if not 0 < fraction <= 1:
        raise InvalidParameterError(name='fraction', value=fraction,
                                    reason='must be in (0, 1]')
    vehicles = sorted(vehicles, key=lambda v: id_order_key(v.id))
    if not vehicles:
        return empty_decision(scheduler)
    n_pick = min(len(vehicles),
                 max(1, int(math.ceil(fraction * len(vehicles) - 1e-9))))
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(vehicles), size=n_pick, replace=False))
    share = radio.total_bandwidth / n_pick
    kept = []
    dropped = []
    per_vehicle = {}
    bandwidth = {}
    for index in picked:
        vehicle = vehicles[index]
        bandwidth[vehicle.id] = share
        if model is None:
            kept.append(vehicle.id)
            continue
        gain = channel_gain(vehicle, radio, round_index)
        t_l = local_train_delay(vehicle, rank, model, epochs)
        t_u = upload_delay(rank, model,
                           uplink_rate(vehicle, share, radio, gain=gain),
                           radio)
        t_st = deadline(vehicle, radio)
        feasible = t_l + t_u <= t_st
        per_vehicle[vehicle.id] = VehicleRequirement(share, t_l, t_u, t_st,
                                                     feasible)
        if feasible:
            kept.append(vehicle.id)
        else:
            dropped.append(vehicle.id)
    flags = []
    if dropped:
        logger.warning("Dropping %s straggler(s) that miss their deadline: "
                       "%s", len(dropped), dropped)
        flags.append('stragglers=%s' % len(dropped))
    if not kept:
        flags.insert(0, EMPTY_FLAG)
    objective = None
    if params is not None and rank is not None:
        objective = objective_value(params, len(kept), rank)
    return ScheduleDecision(
        rank=rank, selected=tuple(kept), bandwidth=bandwidth,
        objective=objective, per_vehicle=per_vehicle, scheduler=scheduler,
        dropped=tuple(dropped), flags=tuple(flags), constrained=True)


def fedavg_all_schedule(vehicles):
    """Every in-coverage vehicle uploads at full rank; no radio limits."""
    selected = tuple(sorted((v.id for v in vehicles), key=id_order_key))
    flags = () if selected else (EMPTY_FLAG,)
    return ScheduleDecision(rank=None, selected=selected, bandwidth={},
                            objective=None, per_vehicle={},
                            scheduler=FEDAVG_ALL, dropped=(), flags=flags,
                            constrained=False)
