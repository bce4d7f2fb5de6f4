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
"""Vehicles inside one base station's coverage disk.

Positions are metres relative to the base station at the origin.
Vehicles travel in straight lines with a fixed heading and speed; once
outside the disk they are gone for good.  New vehicles enter at the
boundary so that the population stays at its target.

The radio side is one FDMA cell: each selected vehicle gets a private
bandwidth slice and its Shannon rate over a log-distance path loss.
"""
import csv
import logging
import math
from collections import namedtuple

import numpy as np

from dlorasim.exceptions import InvalidParameterError, SnapshotError
from dlorasim.model import payload_bits
from dlorasim.utils import (
    dbm_to_watts, derive_seed, parse_vehicle_id, stable_id_key)


logger = logging.getLogger(__name__)

INFINITE = float('inf')
MIN_DISTANCE_M = 1.0
# Spawned vehicles sit just inside the boundary.
SPAWN_RADIUS_FRACTION = 1.0 - 1e-9
SPAWN_MAX_DEVIATION = math.pi / 3

SNAPSHOT_COLUMNS = ('id', 'x', 'y', 'heading_x', 'heading_y', 'v', 'f',
                    'w_bar', 'gamma', 'P', 'D')

FADING_OFF = 'off'
FADING_RAYLEIGH = 'rayleigh'


class Vehicle(namedtuple('Vehicle',
                         ['id', 'x', 'y', 'heading_x', 'heading_y', 'speed',
                          'cpu_freq', 'cycles_per_sample', 'gamma',
                          'tx_power', 'dataset_size'])):
    """One connected vehicle.

    Units: metres, unit heading vector, m/s, Hz, cycles per sample,
    dimensionless, watts, samples.
    """
    __slots__ = ()

    @property
    def position(self):
        return np.array([self.x, self.y])

    @property
    def heading(self):
        return np.array([self.heading_x, self.heading_y])

    @property
    def distance(self):
        return math.hypot(self.x, self.y)


class RadioConfig(namedtuple('RadioConfig',
                             ['total_bandwidth', 'noise_psd', 'pathloss_a',
                              'pathloss_b', 'coverage_radius', 'bit_width',
                              'fading', 'fading_seed',
                              'pathloss_log_base', 'round_deadline'])):
    """Cell-wide radio parameters.

    ``noise_psd`` is in W/Hz (``10 ** -20.4`` is -174 dBm/Hz).  Path loss
    in dB is ``pathloss_a + pathloss_b * log(distance_km)`` in base
    ``pathloss_log_base``.  ``round_deadline`` is the base station's
    per-round cutoff in seconds; a vehicle must finish before both it and
    its own exit from the cell.
    """
    __slots__ = ()

    def __new__(cls, total_bandwidth=1e7, noise_psd=10 ** -20.4,
                pathloss_a=128.1, pathloss_b=37.6, coverage_radius=500.0,
                bit_width=32, fading=FADING_OFF, fading_seed=0,
                pathloss_log_base=10, round_deadline=INFINITE):
        for name, value in (('total_bandwidth', total_bandwidth),
                            ('noise_psd', noise_psd),
                            ('coverage_radius', coverage_radius),
                            ('bit_width', bit_width)):
            if not value > 0:
                raise InvalidParameterError(name=name, value=value,
                                            reason='must be positive')
        if fading not in (FADING_OFF, FADING_RAYLEIGH):
            raise InvalidParameterError(
                name='fading', value=fading,
                reason="expected '%s' or '%s'" % (FADING_OFF,
                                                  FADING_RAYLEIGH))
        if pathloss_log_base not in (10, 2):
            raise InvalidParameterError(name='pathloss_log_base',
                                        value=pathloss_log_base,
                                        reason='expected 10 or 2')
        if round_deadline is None:
            round_deadline = INFINITE
        if not round_deadline > 0:
            raise InvalidParameterError(name='round_deadline',
                                        value=round_deadline,
                                        reason='must be positive')
        return super(RadioConfig, cls).__new__(
            cls, float(total_bandwidth), float(noise_psd), float(pathloss_a),
            float(pathloss_b), float(coverage_radius), int(bit_width),
            fading, int(fading_seed), int(pathloss_log_base),
            float(round_deadline))


#: Sampling ranges for vehicles entering the cell.  Every ``*_range``
#: is a ``(low, high)`` pair sampled uniformly.
SpawnPolicy = namedtuple(
    'SpawnPolicy',
    ['target', 'coverage_radius', 'speed_range', 'cpu_range',
     'cycles_range', 'gamma_range', 'tx_power', 'dataset_size'])


def default_spawn_policy(target=20, coverage_radius=500.0, dataset_size=300):
    return SpawnPolicy(target=target, coverage_radius=coverage_radius,
                       speed_range=(12.0, 22.0), cpu_range=(1.9e9, 3e9),
                       cycles_range=(0.8e7, 1.2e7), gamma_range=(1.3, 1.5),
                       tx_power=dbm_to_watts(28.0),
                       dataset_size=dataset_size)


#: The cell at one instant.  ``next_id`` is the id the next spawned
#: vehicle will get; ``clock`` is simulated seconds since the start.
Scenario = namedtuple('Scenario', ['vehicles', 'next_id', 'clock'])


def sojourn_time(vehicle, radio):
    """Seconds until ``vehicle`` leaves the coverage disk.

    The exit point is the positive root of the ray-circle intersection.
    A stationary vehicle never leaves (``inf``); one already outside has
    no time left (``0``).
    """
    if vehicle.speed <= 0:
        return INFINITE
    R = radio.coverage_radius
    px, py = vehicle.x, vehicle.y
    norm = math.hypot(vehicle.heading_x, vehicle.heading_y)
    ux, uy = vehicle.heading_x / norm, vehicle.heading_y / norm
    p_sq = px * px + py * py
    if p_sq > R * R:
        return 0.0
    p_dot_u = px * ux + py * uy
    disc = max(p_dot_u * p_dot_u - p_sq + R * R, 0.0)
    length = max(-p_dot_u + math.sqrt(disc), 0.0)
    return length / vehicle.speed


def deadline(vehicle, radio):
    """Seconds ``vehicle`` has to train and upload this round."""
    return min(sojourn_time(vehicle, radio), radio.round_deadline)


def path_loss_db(distance_m, radio):
    distance_km = max(distance_m, MIN_DISTANCE_M) / 1000.0
    return (radio.pathloss_a + radio.pathloss_b *
            math.log(distance_km, radio.pathloss_log_base))


def channel_gain(vehicle, radio, round_index=0):
    """Linear power gain ``10 ** (-PL_dB / 10)``.

    Distances below one metre are clamped to one metre.  With Rayleigh
    fading the gain is multiplied by a unit-mean exponential draw seeded
    by ``(fading_seed, vehicle id, round_index)``, so it is constant
    within a round.
    """
    gain = 10.0 ** (-path_loss_db(vehicle.distance, radio) / 10.0)
    if radio.fading == FADING_RAYLEIGH:
        rng = np.random.default_rng(derive_seed(
            radio.fading_seed, stable_id_key(vehicle.id), round_index))
        gain *= rng.exponential(1.0)
    return gain


def uplink_rate(vehicle, bandwidth, radio, gain=None):
    """Shannon rate ``b log2(1 + P h / (b N0))`` in bit/s.

    :param gain: Precomputed ``channel_gain``.  Computed when omitted.
    """
    if bandwidth <= 0:
        return 0.0
    if gain is None:
        gain = channel_gain(vehicle, radio)
    snr = vehicle.tx_power * gain / (bandwidth * radio.noise_psd)
    return bandwidth * math.log2(1.0 + snr)


def rate_limit(vehicle, radio, gain=None):
    """Rate approached as bandwidth grows without bound."""
    if gain is None:
        gain = channel_gain(vehicle, radio)
    return vehicle.tx_power * gain / (radio.noise_psd * math.log(2.0))


def local_train_delay(vehicle, rank, model, epochs):
    """Seconds of local computation for one round.

    Training cost scales with the fraction ``r n_lora / N`` of the model
    that is trainable; ``rank=None`` trains the whole model.
    """
    work = (vehicle.gamma * epochs * vehicle.dataset_size *
            vehicle.cycles_per_sample / vehicle.cpu_freq)
    if rank is None:
        return work
    return work * rank * model.n_lora_per_rank / model.n_params


def upload_delay(rank, model, rate, radio):
    """Seconds to upload the round's payload at ``rate`` bit/s.

    A non-positive rate can never finish and yields ``inf``.
    """
    if rate <= 0:
        return INFINITE
    return payload_bits(model, rank, radio.bit_width) / rate


def _sample_attributes(rng, policy):
    return dict(
        speed=rng.uniform(*policy.speed_range),
        cpu_freq=rng.uniform(*policy.cpu_range),
        cycles_per_sample=rng.uniform(*policy.cycles_range),
        gamma=rng.uniform(*policy.gamma_range),
        tx_power=policy.tx_power,
        dataset_size=policy.dataset_size)


def _spawn_at_boundary(vehicle_id, rng, policy):
    theta = rng.uniform(0.0, 2 * math.pi)
    deviation = rng.uniform(-SPAWN_MAX_DEVIATION, SPAWN_MAX_DEVIATION)
    radius = policy.coverage_radius * SPAWN_RADIUS_FRACTION
    inward = theta + math.pi + deviation
    return Vehicle(id=vehicle_id,
                   x=radius * math.cos(theta), y=radius * math.sin(theta),
                   heading_x=math.cos(inward), heading_y=math.sin(inward),
                   **_sample_attributes(rng, policy))


def populate(policy, seed):
    """Initial scenario: ``policy.target`` vehicles uniform over the disk."""
    rng = np.random.default_rng(seed)
    vehicles = []
    for vehicle_id in range(policy.target):
        radius = policy.coverage_radius * math.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2 * math.pi)
        heading = rng.uniform(0.0, 2 * math.pi)
        vehicles.append(Vehicle(
            id=vehicle_id,
            x=radius * math.cos(angle), y=radius * math.sin(angle),
            heading_x=math.cos(heading), heading_y=math.sin(heading),
            **_sample_attributes(rng, policy)))
    return Scenario(vehicles=tuple(vehicles), next_id=policy.target,
                    clock=0.0)


def advance(scenario, dt, policy, seed):
    """Move every vehicle ``dt`` seconds along its heading.

    Vehicles that leave the disk are removed and new ones spawn at the
    boundary, heading inward within 60 degrees of the centre, until the
    population is back at ``policy.target``.

    :rtype: Scenario
    """
    if dt < 0:
        raise InvalidParameterError(name='dt', value=dt,
                                    reason='time cannot run backwards')
    if dt == 0:
        return scenario
    R = policy.coverage_radius
    kept = []
    for vehicle in scenario.vehicles:
        moved = vehicle._replace(
            x=vehicle.x + vehicle.heading_x * vehicle.speed * dt,
            y=vehicle.y + vehicle.heading_y * vehicle.speed * dt)
        if moved.distance <= R:
            kept.append(moved)
    departed = len(scenario.vehicles) - len(kept)
    rng = np.random.default_rng(seed)
    next_id = scenario.next_id
    while len(kept) < policy.target:
        kept.append(_spawn_at_boundary(next_id, rng, policy))
        next_id += 1
    if departed or next_id != scenario.next_id:
        logger.debug("Advanced %.3f s: %s departed, %s spawned", dt,
                     departed, next_id - scenario.next_id)
    return Scenario(vehicles=tuple(kept), next_id=next_id,
                    clock=scenario.clock + dt)


def in_coverage(vehicles, radio):
    return [v for v in vehicles if v.distance <= radio.coverage_radius]


def write_snapshot(vehicles, path):
    """Write vehicles as a flat CSV with ``SNAPSHOT_COLUMNS``."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(SNAPSHOT_COLUMNS)
        for v in vehicles:
            writer.writerow([v.id, repr(v.x), repr(v.y), repr(v.heading_x),
                             repr(v.heading_y), repr(v.speed),
                             repr(v.cpu_freq), repr(v.cycles_per_sample),
                             repr(v.gamma), repr(v.tx_power),
                             v.dataset_size])


def read_snapshot(path):
    """Read vehicles from a snapshot CSV.

    Headings are normalised to unit length.

    :raises: SnapshotError if the file is missing or malformed.
    """
    try:
        with open(path, newline='') as f:
            rows = list(csv.DictReader(f))
    except (IOError, OSError) as e:
        raise SnapshotError(path=path, error_msg=str(e))
    vehicles = []
    for line_number, row in enumerate(rows, start=2):
        missing = [c for c in SNAPSHOT_COLUMNS if row.get(c) in (None, '')]
        if missing:
            raise SnapshotError(path=path,
                                error_msg='line %s is missing %s' %
                                (line_number, ', '.join(missing)))
        try:
            hx, hy = float(row['heading_x']), float(row['heading_y'])
            norm = math.hypot(hx, hy)
            if norm == 0:
                raise ValueError('heading is the zero vector')
            vehicles.append(Vehicle(
                id=parse_vehicle_id(row['id']),
                x=float(row['x']), y=float(row['y']),
                heading_x=hx / norm, heading_y=hy / norm,
                speed=float(row['v']), cpu_freq=float(row['f']),
                cycles_per_sample=float(row['w_bar']),
                gamma=float(row['gamma']), tx_power=float(row['P']),
                dataset_size=int(float(row['D']))))
        except ValueError as e:
            raise SnapshotError(path=path, error_msg='line %s: %s' %
                                (line_number, e))
    return vehicles
