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
"""Command line entry point.

::

    dlorasim simulate --config run.cfg
    dlorasim schedule --snapshot vehicles.csv --rank-cap 8
    dlorasim gap --matrix grad.csv --rank 2 --M 0.5
    dlorasim bound --config run.cfg
    dlorasim compare --config run.cfg --schedulers arbvs,random

Exit status is 0 on success, 1 for bad input and 2 when a run fails.
"""
import argparse
import csv
import json
import logging
import os
import sys

import jmespath
import numpy as np
from jmespath.exceptions import JMESPathError

from dlorasim import __version__
from dlorasim.exceptions import (
    DataNotFoundError, DLoRAError, InvalidParameterError, SimulationError,
    ValidationError)
from dlorasim.experiment import (
    Simulation, compare_schedulers, estimate_loss_bounds)
from dlorasim.gap import bound_curves, gap_report
from dlorasim.lora import rank_upper_bound
from dlorasim.output import (
    decision_to_json, emit_compare_outputs, emit_outputs, format_cell,
    read_metrics)
from dlorasim.scenario import read_snapshot
from dlorasim.scheduler import SCHEDULERS, arbvs_schedule, sorted_ids
from dlorasim.session import Session
from dlorasim.validate import validate_schedule


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

DEFAULT_BOUND_RANKS = '1,2,4,8,16,32'


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with the validation status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, '%s: error: %s\n' % (self.prog, message))


def _int_list(text):
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            'expected comma separated integers, got %r' % text)


def _name_list(text):
    names = [item.strip() for item in text.split(',') if item.strip()]
    unknown = [name for name in names if name not in SCHEDULERS]
    if unknown:
        raise argparse.ArgumentTypeError(
            'unknown scheduler(s) %s; choose from %s' %
            (', '.join(unknown), ', '.join(SCHEDULERS)))
    return names


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='experiment config file')
    common.add_argument('--profile', help='config file profile')
    common.add_argument('--seed', type=int,
                        help='override every seed in the config')
    common.add_argument('--query', help='JMESPath filter for JSON output')
    common.add_argument('--debug', action='store_true',
                        help='log everything to stderr')
    common.add_argument('--log-file', help='append INFO logs to this file')

    parser = ArgumentParser(
        prog='dlorasim',
        description='Federated LoRA fine-tuning over vehicular networks, '
                    'simulated at desk scale.')
    parser.add_argument('--version', action='version',
                        version='%(prog)s ' + __version__)
    sub = parser.add_subparsers(dest='command', parser_class=ArgumentParser)
    sub.required = True

    simulate = sub.add_parser('simulate', parents=[common],
                              help='run a full experiment')
    simulate.add_argument('--output-dir', help='where to write results')
    simulate.add_argument('--rounds', type=int)
    simulate.add_argument('--scheduler', choices=SCHEDULERS)
    simulate.add_argument('--workers', type=int)
    simulate.set_defaults(func=cmd_simulate)

    schedule = sub.add_parser('schedule', parents=[common],
                              help='schedule one scenario snapshot')
    schedule.add_argument('--snapshot', required=True)
    schedule.add_argument('--rank-cap', type=int, required=True)
    schedule.add_argument('--round', type=int, default=0,
                          help='round index used for fading draws')
    schedule.set_defaults(func=cmd_schedule)

    gap = sub.add_parser('gap', parents=[common],
                         help='truncation gap of one gradient matrix')
    gap.add_argument('--matrix', required=True,
                     help='comma separated matrix, one row per line')
    gap.add_argument('--rank', type=int, required=True)
    gap.add_argument('--M', type=float, required=True, dest='M')
    gap.set_defaults(func=cmd_gap)

    bound = sub.add_parser('bound', parents=[common],
                           help='average gradient bound over a grid')
    bound.add_argument('--ranks', type=_int_list,
                       default=_int_list(DEFAULT_BOUND_RANKS))
    bound.add_argument('--s-sizes', type=_int_list,
                       help='default: 1 to the population size')
    bound.add_argument('--metrics',
                       help='metrics.csv to estimate the loss terms from')
    bound.set_defaults(func=cmd_bound)

    compare = sub.add_parser('compare', parents=[common],
                             help='time and cost to a target per scheduler')
    compare.add_argument('--schedulers', type=_name_list,
                         default=['arbvs', 'random', 'fedavg_random'])
    compare.add_argument('--target', type=float,
                         help='default: 0.8 of the fedavg_all final accuracy')
    compare.add_argument('--output-dir')
    compare.set_defaults(func=cmd_compare)
    return parser


def _session(args):
    session = Session(profile=args.profile)
    if args.config is not None:
        session.set_config_variable('config_file', args.config)
    if args.debug:
        session.set_debug_logger()
    else:
        level = session.get_config_variable('log_level')
        if level:
            session.set_stream_logger('dlorasim', level.upper())
    if args.log_file:
        session.set_file_logger(logging.INFO, args.log_file)
    return session


def _experiment_config(session, args, **overrides):
    overrides = dict((k, v) for k, v in overrides.items() if v is not None)
    config = session.get_experiment_config(**overrides)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _print_json(document, args, stream=None):
    stream = stream or sys.stdout
    if args.query:
        try:
            document = jmespath.search(args.query, document)
        except JMESPathError as e:
            raise InvalidParameterError(name='--query', value=args.query,
                                        reason=str(e))
    stream.write(json.dumps(document, indent=2, sort_keys=True,
                            default=float))
    stream.write('\n')


def cmd_simulate(args, session):
    if args.workers is not None:
        session.set_config_variable('workers', args.workers)
    config = _experiment_config(session, args, rounds=args.rounds,
                                scheduler=args.scheduler)
    outdir = args.output_dir or config.output_dir
    result = Simulation(config, session).run()
    emit_outputs(result.metrics, result.decisions, config, outdir,
                 gap_rows=result.gap_rows)
    if result.metrics:
        last = result.metrics[-1]
        sys.stdout.write('%s rounds, final accuracy %.4f, %s uplink bits, '
                         '%.1f s simulated\n' % (
                             last.t, last.test_acc, last.uplink_bits_cum,
                             last.sim_time_s))
    return EXIT_OK


def _schedule_table(decision, stream):
    stream.write('%-8s %14s %12s %12s %12s %9s %9s\n' % (
        'id', 'b_min_hz', 't_l_s', 't_u_s', 't_st_s', 'feasible',
        'selected'))
    selected = set(decision.selected)
    for vehicle_id in sorted_ids(decision.per_vehicle):
        req = decision.per_vehicle[vehicle_id]
        stream.write('%-8s %14s %12.4g %12.4g %12.4g %9s %9s\n' % (
            vehicle_id, '-' if req.b_min is None else '%.6g' % req.b_min,
            req.t_l, req.t_u, req.t_st, req.feasible,
            vehicle_id in selected))
    stream.write('rank=%s selected=%s bandwidth=%.6g Hz objective=%s\n' % (
        decision.rank, len(decision.selected), decision.total_bandwidth,
        decision.objective))


def cmd_schedule(args, session):
    config = _experiment_config(session, args)
    vehicles = read_snapshot(args.snapshot)
    spec = config.model_spec()
    payload = spec.payload(config.payload_scale)
    radio = config.radio_config()
    decision = arbvs_schedule(
        vehicles, spec, radio, config.objective_params(spec), args.rank_cap,
        eps=config.bisection_eps, epochs=config.epochs,
        round_index=args.round, payload=payload)
    validate_schedule(decision, vehicles, payload, radio,
                      epochs=config.epochs, round_index=args.round)
    _schedule_table(decision, sys.stderr)
    _print_json(json.loads(decision_to_json(decision)), args)
    return EXIT_OK


def _load_matrix(path):
    if not os.path.isfile(path):
        raise DataNotFoundError(data_path=path)
    try:
        return np.loadtxt(path, delimiter=',', ndmin=2)
    except ValueError as e:
        raise InvalidParameterError(name='--matrix', value=path,
                                    reason=str(e))


def cmd_gap(args, session):
    matrix = _load_matrix(args.matrix)
    report = gap_report([matrix], args.rank, args.M)
    _print_json(report._asdict(), args)
    return EXIT_OK


def cmd_bound(args, session):
    config = _experiment_config(session, args)
    spec = config.model_spec()
    loss_init = loss_star = None
    if args.metrics:
        if not os.path.isfile(args.metrics):
            raise DataNotFoundError(data_path=args.metrics)
        loss_init, loss_star = estimate_loss_bounds(
            read_metrics(args.metrics))
    params = config.bound_params(spec, loss_init=loss_init,
                                 loss_star=loss_star)
    limit = rank_upper_bound(spec, config.rank_cap)
    ranks = [r for r in args.ranks if 1 <= r <= limit]
    if not ranks:
        raise InvalidParameterError(name='--ranks', value=args.ranks,
                                    reason='no rank in [1, %s]' % limit)
    s_sizes = args.s_sizes or list(range(1, config.population + 1))
    writer = csv.writer(sys.stdout, lineterminator='\n')
    writer.writerow(['s_size', 'rank', 'avg_grad_bound'])
    for s_size, rank, value in bound_curves(params, s_sizes, ranks):
        writer.writerow([s_size, rank, format_cell(value)])
    return EXIT_OK


def cmd_compare(args, session):
    config = _experiment_config(session, args)
    outdir = args.output_dir or config.output_dir
    rows, results = compare_schedulers(config, args.schedulers, session,
                                       target=args.target)
    for name, result in sorted(results.items()):
        emit_outputs(result.metrics, result.decisions,
                     config.with_options(scheduler=name),
                     os.path.join(outdir, name), gap_rows=result.gap_rows)
    emit_compare_outputs(rows, outdir)
    for row in rows:
        sys.stdout.write('%-14s target=%.4f time=%s bits=%s\n' % (
            row.scheduler, row.target,
            format_cell(row.time_to_target_s) or 'not-reached',
            format_cell(row.bits_to_target) or 'not-reached'))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    try:
        session = _session(args)
        return args.func(args, session)
    except ValidationError as e:
        logger.debug("Validation error", exc_info=True)
        sys.stderr.write('error: %s\n' % e)
        return EXIT_VALIDATION
    except SimulationError as e:
        logger.debug("Simulation error", exc_info=True)
        sys.stderr.write('error: %s\n' % e)
        return EXIT_RUNTIME
    except DLoRAError as e:
        sys.stderr.write('error: %s\n' % e)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
