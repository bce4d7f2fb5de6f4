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
"""Files written by a run.

Layout of an output directory::

    metrics.csv
    schedule.jsonl
    config.echo
    plotdata/accuracy_vs_round.csv
    plotdata/cost_vs_accuracy.csv
    plotdata/time_to_target.csv
    plotdata/gap_vs_round.csv          (gap diagnostics only)
    plotdata/time_to_target_bars.csv   (compare only)
    plotdata/cost_to_target_bars.csv   (compare only)

Floats are written with ``repr`` so that reading ``metrics.csv`` back
gives the exact values that were recorded.  Missing values are empty
cells.
"""
import contextlib
import csv
import json
import logging
import os

import numpy as np

from dlorasim.exceptions import OutputWriteError
from dlorasim.experiment import (
    GapRow, RoundMetrics, bits_to_accuracy, time_to_accuracy)
from dlorasim.utils import parse_vehicle_id


logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.csv'
SCHEDULE_FILE = 'schedule.jsonl'
CONFIG_ECHO_FILE = 'config.echo'
PLOTDATA_DIR = 'plotdata'

METRICS_COLUMNS = RoundMetrics._fields
ACCURACY_COLUMNS = ('t', 'sim_time_s', 'test_acc', 'test_loss')
COST_COLUMNS = ('uplink_bits_cum', 'test_acc', 't')
TIME_TO_TARGET_COLUMNS = ('target', 'time_to_target_s', 'bits_to_target')
BARS_TIME_COLUMNS = ('scheduler', 'target', 'time_to_target_s')
BARS_COST_COLUMNS = ('scheduler', 'target', 'bits_to_target')

#: Accuracy levels reported in ``time_to_target.csv``.
TARGET_LEVELS = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


def format_cell(value):
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _metrics_cells(row):
    cells = dict((name, format_cell(getattr(row, name)))
                 for name in METRICS_COLUMNS)
    cells['flags'] = ';'.join(row.flags)
    cells['selected'] = ' '.join(str(i) for i in row.selected)
    return cells


def _optional(converter):
    def convert(text):
        if text == '':
            return None
        return converter(text)
    return convert


_METRICS_PARSERS = {
    't': int,
    'r': _optional(int),
    's_size': int,
    'bw_used_hz': float,
    'uplink_bits_round': int,
    'uplink_bits_cum': int,
    'max_delay_s': float,
    'sim_time_s': float,
    'train_loss': _optional(float),
    'test_loss': float,
    'test_acc': float,
    'objective': _optional(float),
    'flags': lambda text: tuple(text.split(';')) if text else (),
    'selected': lambda text: tuple(parse_vehicle_id(i)
                                   for i in text.split()),
}


@contextlib.contextmanager
def _open_for_write(path):
    try:
        directory = os.path.dirname(path)
        if directory and not os.path.isdir(directory):
            os.makedirs(directory)
        with open(path, 'w', newline='') as f:
            yield f
    except (IOError, OSError) as e:
        raise OutputWriteError(path=path, error_msg=str(e))


def _write_rows(path, columns, rows):
    with _open_for_write(path) as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logger.debug("Wrote %s", path)


def write_metrics(metrics, path):
    _write_rows(path, METRICS_COLUMNS,
                (_metrics_cells(row) for row in metrics))


def read_metrics(path):
    """Parse a ``metrics.csv`` back into ``RoundMetrics``."""
    with open(path, newline='') as f:
        return [RoundMetrics(**dict(
                    (name, _METRICS_PARSERS[name](row[name]))
                    for name in METRICS_COLUMNS))
                for row in csv.DictReader(f)]


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError('%r is not JSON serializable' % (value,))


def decision_to_json(decision, **extra):
    document = decision.to_dict()
    document.update(extra)
    return json.dumps(document, sort_keys=True, default=_json_default)


def write_schedule_log(metrics, decisions, path):
    with _open_for_write(path) as f:
        for row, decision in zip(metrics, decisions):
            f.write(decision_to_json(decision, round=row.t))
            f.write('\n')


def write_config_echo(config, path):
    with _open_for_write(path) as f:
        f.write(config.to_ini())


def accuracy_rows(metrics):
    for row in metrics:
        yield dict((name, format_cell(getattr(row, name)))
                   for name in ACCURACY_COLUMNS)


def cost_rows(metrics):
    """Accuracy against cumulative uplink bits, cheapest first."""
    ordered = sorted(metrics, key=lambda row: (row.uplink_bits_cum, row.t))
    for row in ordered:
        yield dict((name, format_cell(getattr(row, name)))
                   for name in COST_COLUMNS)


def time_to_target_rows(metrics, levels=TARGET_LEVELS):
    metrics = list(metrics)
    for target in levels:
        yield {
            'target': format_cell(target),
            'time_to_target_s': format_cell(
                time_to_accuracy(metrics, target)),
            'bits_to_target': format_cell(bits_to_accuracy(metrics, target)),
        }


def write_gap_rows(gap_rows, path):
    _write_rows(path, GapRow._fields,
                (dict((name, format_cell(getattr(row, name)))
                      for name in GapRow._fields) for row in gap_rows))


def emit_outputs(metrics, decisions, config, outdir, gap_rows=None):
    """Write every per-run file under ``outdir``.

    :raises: OutputWriteError naming the file that could not be written.
    """
    metrics = list(metrics)
    plotdata = os.path.join(outdir, PLOTDATA_DIR)
    write_metrics(metrics, os.path.join(outdir, METRICS_FILE))
    write_schedule_log(metrics, decisions,
                       os.path.join(outdir, SCHEDULE_FILE))
    write_config_echo(config, os.path.join(outdir, CONFIG_ECHO_FILE))
    _write_rows(os.path.join(plotdata, 'accuracy_vs_round.csv'),
                ACCURACY_COLUMNS, accuracy_rows(metrics))
    _write_rows(os.path.join(plotdata, 'cost_vs_accuracy.csv'),
                COST_COLUMNS, cost_rows(metrics))
    _write_rows(os.path.join(plotdata, 'time_to_target.csv'),
                TIME_TO_TARGET_COLUMNS, time_to_target_rows(metrics))
    if gap_rows is not None and config.gap_diagnostics:
        write_gap_rows(gap_rows, os.path.join(plotdata, 'gap_vs_round.csv'))
    logger.info("Wrote %s rounds of output to %s", len(metrics), outdir)


def emit_compare_outputs(rows, outdir):
    """Per-scheduler bars of time and uplink cost to the target."""
    plotdata = os.path.join(outdir, PLOTDATA_DIR)
    _write_rows(os.path.join(plotdata, 'time_to_target_bars.csv'),
                BARS_TIME_COLUMNS,
                (dict((name, format_cell(getattr(row, name)))
                      for name in BARS_TIME_COLUMNS) for row in rows))
    _write_rows(os.path.join(plotdata, 'cost_to_target_bars.csv'),
                BARS_COST_COLUMNS,
                (dict((name, format_cell(getattr(row, name)))
                      for name in BARS_COST_COLUMNS) for row in rows))
