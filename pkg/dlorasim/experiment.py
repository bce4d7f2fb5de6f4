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
"""The synchronous round loop.

Each round:

1. advance the scenario by the previous round's duration,
2. schedule the vehicles currently in coverage,
3. train the selected vehicles from the current global model,
4. aggregate their uploads,
5. evaluate on the held-out set and record a ``RoundMetrics``.

A round lasts as long as its slowest selected vehicle (training plus
upload), or until the round deadline when a straggler was dropped.
Rounds with nobody selected last ``idle_interval_s``.
"""
import logging
import math
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from dlorasim.data import make_class_means, make_dataset, partition_dataset
from dlorasim.exceptions import InvalidParameterError
from dlorasim.gap import descent_bound, gap_report
from dlorasim.lora import check_rank
from dlorasim.model import payload_bits
from dlorasim.scenario import (
    advance, in_coverage, local_train_delay, populate)
from dlorasim.scheduler import (
    ARBVS, BRUTE_FORCE, EMPTY_FLAG, FEDAVG_ALL, FEDAVG_RANDOM, RANDOM,
    arbvs_schedule, brute_force_schedule, fedavg_all_schedule,
    random_schedule)
from dlorasim.trainer import (
    aggregate, client_seed, evaluate, fedavg_aggregate, fedavg_local_train,
    full_gradients, local_model_weights, local_train, new_global_model,
    pooled)
from dlorasim.utils import derive_seed, stable_id_key


logger = logging.getLogger(__name__)

#: One row of ``metrics.csv``.  ``r`` is None for full-rank rounds and 0
#: for empty ones; ``train_loss`` is None when nobody trained.
RoundMetrics = namedtuple(
    'RoundMetrics',
    ['t', 'r', 's_size', 'bw_used_hz', 'uplink_bits_round',
     'uplink_bits_cum', 'max_delay_s', 'sim_time_s', 'train_loss',
     'test_loss', 'test_acc', 'objective', 'flags', 'selected'])

#: Per-round gradient gap diagnostics.  ``empirical_gap`` is the distance
#: between the global gradient and the first participant's local-model
#: gradient; no bound is claimed for it.
GapRow = namedtuple(
    'GapRow',
    ['t', 'r', 's_size', 'loss', 'grad_norm_sq', 'total_residual',
     'total_bound', 'bound_satisfied', 'precondition_ok', 'descent_bound',
     'empirical_gap'])

SimulationResult = namedtuple(
    'SimulationResult', ['config', 'metrics', 'decisions', 'gap_rows'])

#: Time and uplink cost to a target accuracy for one scheduler.
CompareRow = namedtuple(
    'CompareRow',
    ['scheduler', 'target', 'time_to_target_s', 'bits_to_target',
     'final_acc'])


class Simulation(object):
    """Everything one run needs, built from an ``ExperimentConfig``.

    :type config: dlorasim.config.ExperimentConfig
    :type session: dlorasim.session.Session
    """

    def __init__(self, config, session=None):
        if session is None:
            from dlorasim.session import Session
            session = Session()
        self.config = config
        self.session = session
        loader = session.get_component('data_loader')
        self.spec = config.model_spec(loader)
        self.payload = self.spec.payload(config.payload_scale)
        self.radio = config.radio_config()
        self.policy = config.spawn_policy()
        self.train_config = config.train_config()
        self.objective_params = config.objective_params(self.spec)
        self.workers = session.resolve_workers(config)
        if config.scheduler == RANDOM:
            check_rank(self.spec, config.fixed_rank)
        self._build_data()
        self.global_model = new_global_model(
            self.spec, derive_seed(config.train_seed, 0))
        self.scenario = populate(self.policy,
                                 derive_seed(config.scenario_seed, 0))

    def _build_data(self):
        cfg = self.config
        means = make_class_means(cfg.n_classes, cfg.feature_dim,
                                 cfg.class_separation, cfg.data_seed)
        pool_size = cfg.population * cfg.samples_per_icv * \
            cfg.train_pool_factor
        pool = make_dataset(pool_size, means, derive_seed(cfg.data_seed, 1))
        self.test_set = make_dataset(cfg.test_samples, means,
                                     derive_seed(cfg.data_seed, 2))
        self.partitions = partition_dataset(
            pool, cfg.population, cfg.data_mode, cfg.class_budget,
            derive_seed(cfg.data_seed, 3),
            samples_per_icv=cfg.samples_per_icv)
        self._pooled_train = None

    @property
    def pooled_train(self):
        if self._pooled_train is None:
            self._pooled_train = pooled(self.partitions)
        return self._pooled_train

    def partition_for(self, vehicle_id):
        """Vehicle ``n`` trains on partition ``n mod population``."""
        return self.partitions[stable_id_key(vehicle_id) %
                               len(self.partitions)]

    def schedule(self, round_index, vehicles):
        cfg = self.config
        name = cfg.scheduler
        if name in (ARBVS, BRUTE_FORCE):
            schedule = (arbvs_schedule if name == ARBVS
                        else brute_force_schedule)
            return schedule(vehicles, self.spec, self.radio,
                            self.objective_params, cfg.rank_cap,
                            eps=cfg.bisection_eps, epochs=cfg.epochs,
                            round_index=round_index, payload=self.payload)
        if name in (RANDOM, FEDAVG_RANDOM):
            rank = cfg.fixed_rank if name == RANDOM else None
            return random_schedule(
                vehicles, cfg.fraction, self.radio,
                derive_seed(cfg.scenario_seed, round_index, 1), rank=rank,
                model=self.payload, params=self.objective_params,
                epochs=cfg.epochs, round_index=round_index, scheduler=name)
        return fedavg_all_schedule(vehicles)

    def _train_one(self, model, decision, vehicle_id):
        seed = client_seed(self.config.train_seed, model.round, vehicle_id)
        partition = self.partition_for(vehicle_id)
        if decision.rank is None:
            return fedavg_local_train(model, partition, self.train_config,
                                      seed, vehicle_id=vehicle_id)
        return local_train(model, partition, self.train_config,
                           decision.rank, seed, vehicle_id=vehicle_id)

    def train(self, model, decision):
        """Local updates of the selected vehicles, in selection order."""
        participants = list(decision.selected)
        if self.workers > 1 and len(participants) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(
                    lambda vid: self._train_one(model, decision, vid),
                    participants))
        return [self._train_one(model, decision, vid)
                for vid in participants]

    def _round_duration(self, decision, vehicles):
        if decision.is_empty:
            return 0.0
        if decision.constrained:
            duration = max(decision.per_vehicle[i].t_l +
                           decision.per_vehicle[i].t_u
                           for i in decision.selected)
            if decision.dropped and math.isfinite(self.radio.round_deadline):
                # Stragglers are only given up on at the cutoff.
                duration = max(duration, self.radio.round_deadline)
            return duration
        by_id = dict((v.id, v) for v in vehicles)
        return max(local_train_delay(by_id[i], decision.rank, self.payload,
                                     self.config.epochs)
                   for i in decision.selected)

    def _uplink_bits(self, decision):
        if decision.is_empty:
            return 0
        return len(decision.selected) * payload_bits(
            self.payload, decision.rank, self.radio.bit_width)

    def _gap_row(self, round_index, model, decision, updates):
        rank = decision.rank
        if decision.is_empty or rank is None:
            return None
        data = self.pooled_train
        gradients = full_gradients(model.layers, data)
        report = gap_report(gradients, rank, self.config.gap_bound)
        loss, _ = evaluate(model, data)
        grad_norm_sq = float(sum(np.sum(g ** 2) for g in gradients))
        params = self.config.bound_params(self.spec)
        bound = descent_bound(params, len(decision.selected), rank, loss,
                              grad_norm_sq)
        first = updates[0]
        local_grads = full_gradients(local_model_weights(model, first),
                                     self.partition_for(first.vehicle_id))
        empirical = math.sqrt(sum(float(np.sum((g - h) ** 2))
                                  for g, h in zip(gradients, local_grads)))
        return GapRow(t=round_index, r=rank, s_size=len(decision.selected),
                      loss=loss, grad_norm_sq=grad_norm_sq,
                      total_residual=report.total_residual,
                      total_bound=report.total_bound,
                      bound_satisfied=report.bound_satisfied,
                      precondition_ok=report.precondition_ok,
                      descent_bound=bound.value, empirical_gap=empirical)

    def rounds(self):
        """Run every round, yielding ``(RoundMetrics, ScheduleDecision,
        GapRow or None)``.
        """
        cfg = self.config
        session = self.session
        model = self.global_model
        scenario = self.scenario
        previous_duration = 0.0
        sim_time = 0.0
        bits_cum = 0
        for t in range(1, cfg.rounds + 1):
            scenario = advance(scenario, previous_duration, self.policy,
                               derive_seed(cfg.scenario_seed, t))
            vehicles = in_coverage(scenario.vehicles, self.radio)
            decision = session.emit_first_non_none_response(
                'before-schedule.%s' % cfg.scheduler, round_index=t,
                vehicles=vehicles)
            if decision is None:
                decision = self.schedule(t, vehicles)
            session.emit('after-schedule.%s' % cfg.scheduler, round_index=t,
                         decision=decision, vehicles=vehicles,
                         payload=self.payload, radio=self.radio,
                         epochs=cfg.epochs)
            updates = self.train(model, decision)
            gap_row = None
            if cfg.gap_diagnostics:
                gap_row = self._gap_row(t, model, decision, updates)
            if decision.rank is None:
                model = fedavg_aggregate(model, updates)
            else:
                model = aggregate(model, updates)
            session.emit('after-aggregate', round_index=t,
                         global_model=model)
            test_loss, test_acc = evaluate(model, self.test_set)
            duration = self._round_duration(decision, vehicles)
            flags = list(decision.flags)
            if decision.is_empty:
                duration = cfg.idle_interval_s
                if EMPTY_FLAG not in flags:
                    flags.insert(0, EMPTY_FLAG)
            sim_time += duration
            bits_round = self._uplink_bits(decision)
            bits_cum += bits_round
            train_loss = None
            if updates:
                train_loss = float(np.mean([u.local_loss for u in updates]))
            metrics = RoundMetrics(
                t=t, r=decision.rank, s_size=len(decision.selected),
                bw_used_hz=decision.total_bandwidth,
                uplink_bits_round=bits_round, uplink_bits_cum=bits_cum,
                max_delay_s=0.0 if decision.is_empty else duration,
                sim_time_s=sim_time, train_loss=train_loss,
                test_loss=test_loss, test_acc=test_acc,
                objective=decision.objective, flags=tuple(flags),
                selected=tuple(decision.selected))
            session.emit('round-complete', metrics=metrics)
            previous_duration = duration
            yield metrics, decision, gap_row
        self.global_model = model
        self.scenario = scenario

    def run(self):
        """Run to completion.

        :rtype: SimulationResult
        """
        metrics, decisions, gap_rows = [], [], []
        for row, decision, gap_row in self.rounds():
            metrics.append(row)
            decisions.append(decision)
            if gap_row is not None:
                gap_rows.append(gap_row)
        return SimulationResult(config=self.config, metrics=metrics,
                                decisions=decisions, gap_rows=gap_rows)


def run_experiment(config, session=None):
    """Yield the ``RoundMetrics`` of every round of ``config``."""
    for metrics, _, _ in Simulation(config, session).rounds():
        yield metrics


def time_to_accuracy(metrics, target):
    """Simulated seconds until test accuracy first reaches ``target``.

    :return: The elapsed time, or None if the target was never reached.
    """
    for row in metrics:
        if row.test_acc >= target:
            return row.sim_time_s
    return None


def bits_to_accuracy(metrics, target):
    """Cumulative uplink bits spent when accuracy first reaches ``target``."""
    for row in metrics:
        if row.test_acc >= target:
            return row.uplink_bits_cum
    return None


def estimate_loss_bounds(metrics):
    """``(loss_init, loss_star)``: first and best observed test loss."""
    metrics = list(metrics)
    if not metrics:
        return None, None
    return metrics[0].test_loss, min(row.test_loss for row in metrics)


def compare_schedulers(config, schedulers, session=None, target=None,
                       target_fraction=0.8):
    """Run ``config`` once per scheduler and measure the cost to a target.

    When ``target`` is not given it is ``target_fraction`` times the final
    accuracy of the ``fedavg_all`` oracle, which is run if not listed.

    :return: ``(rows, results)``: one ``CompareRow`` per scheduler and
        the ``SimulationResult`` of every run, keyed by scheduler.
    """
    if not schedulers:
        raise InvalidParameterError(name='schedulers', value=schedulers,
                                    reason='need at least one scheduler')
    results = {}
    names = list(schedulers)
    if target is None and FEDAVG_ALL not in names:
        names.append(FEDAVG_ALL)
    for name in names:
        logger.info("Running scheduler %s", name)
        results[name] = Simulation(config.with_options(scheduler=name),
                                   session).run()
    if target is None:
        oracle = results[FEDAVG_ALL].metrics
        final = oracle[-1].test_acc if oracle else 0.0
        target = target_fraction * final
    rows = []
    for name in schedulers:
        metrics = results[name].metrics
        rows.append(CompareRow(
            scheduler=name, target=target,
            time_to_target_s=time_to_accuracy(metrics, target),
            bits_to_target=bits_to_accuracy(metrics, target),
            final_acc=metrics[-1].test_acc if metrics else None))
    return rows, results
