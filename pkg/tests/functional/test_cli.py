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
import csv
import io
import json
import logging
import math
import os

from tests import BaseEnvVar, temporary_directory

import mock
import numpy as np

from dlorasim import cli
from dlorasim.output import read_metrics
from dlorasim.scheduler import VehicleRequirement


SMALL_CONFIG = (
    '# a quick desk run\n'
    'population = 4\n'
    'samples_per_icv = 40\n'
    'test_samples = 200\n'
    'epochs = 1\n'
    'batch_size = 20\n'
    'rounds = 10\n'
    'payload_scale = 50\n'
    '\n'
    '[profile tiny]\n'
    'rounds = 1\n'
)

SNAPSHOT = (
    'id,x,y,heading_x,heading_y,v,f,w_bar,gamma,P,D\n'
    'a,10,0,1,0,0,2.5e9,1e7,1.4,0.631,300\n'
    'b,20,0,1,0,0,2.5e9,1e7,1.4,0.631,300\n'
    'c,30,0,1,0,0,2.5e9,1e7,1.4,0.631,300\n'
    'd,40,0,1,0,0,2.5e9,1e7,1.4,0.631,300\n'
)

B_MINS = {'a': 3e6, 'b': 4e6, 'c': 5e6, 'd': 6e6}


def fixed_b_min(vehicle, rank, model, radio, eps=None, epochs=4, gain=None):
    return VehicleRequirement(B_MINS[vehicle.id], 0.1, 0.1, math.inf, True)


class BaseCLITest(BaseEnvVar):
    def setUp(self):
        super(BaseCLITest, self).setUp()
        self.tempdir_context = temporary_directory()
        self.tempdir = self.tempdir_context.__enter__()
        self.addCleanup(self.tempdir_context.__exit__, None, None, None)
        self.config_path = self.write('run.cfg', SMALL_CONFIG)

    def write(self, name, contents):
        path = os.path.join(self.tempdir, name)
        with open(path, 'w') as f:
            f.write(contents)
        return path

    def run_cli(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with mock.patch('sys.stdout', stdout):
            with mock.patch('sys.stderr', stderr):
                code = cli.main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()


class TestSimulateCommand(BaseCLITest):
    def test_writes_one_row_per_round(self):
        outdir = os.path.join(self.tempdir, 'out')
        code, stdout, _ = self.run_cli(
            'simulate', '--config', self.config_path, '--rounds', '3',
            '--output-dir', outdir)
        self.assertEqual(code, 0)
        metrics = read_metrics(os.path.join(outdir, 'metrics.csv'))
        self.assertEqual([row.t for row in metrics], [1, 2, 3])
        self.assertIn('3 rounds', stdout)
        for name in ('schedule.jsonl', 'config.echo',
                     'plotdata/accuracy_vs_round.csv'):
            self.assertTrue(os.path.isfile(os.path.join(outdir, name)))

    def test_profile(self):
        outdir = os.path.join(self.tempdir, 'out')
        code, _, _ = self.run_cli(
            'simulate', '--config', self.config_path, '--profile', 'tiny',
            '--output-dir', outdir)
        self.assertEqual(code, 0)
        self.assertEqual(
            len(read_metrics(os.path.join(outdir, 'metrics.csv'))), 1)

    def test_seed_makes_runs_reproducible(self):
        first = os.path.join(self.tempdir, 'first')
        second = os.path.join(self.tempdir, 'second')
        for outdir in (first, second):
            self.run_cli('simulate', '--config', self.config_path,
                         '--rounds', '2', '--seed', '11',
                         '--output-dir', outdir)
        with open(os.path.join(first, 'metrics.csv')) as f:
            expected = f.read()
        with open(os.path.join(second, 'metrics.csv')) as f:
            self.assertEqual(f.read(), expected)

    def test_log_file(self):
        log_path = os.path.join(self.tempdir, 'run.log')
        self.addCleanup(self._remove_file_handlers)
        self.run_cli('simulate', '--config', self.config_path,
                     '--rounds', '1', '--log-file', log_path,
                     '--output-dir', os.path.join(self.tempdir, 'out'))
        with open(log_path) as f:
            self.assertIn('Round 1', f.read())

    def _remove_file_handlers(self):
        log = logging.getLogger('dlorasim')
        for handler in list(log.handlers):
            if isinstance(handler, logging.FileHandler):
                handler.close()
                log.removeHandler(handler)

    def test_missing_config_file(self):
        code, _, stderr = self.run_cli(
            'simulate', '--config', os.path.join(self.tempdir, 'nope.cfg'))
        self.assertEqual(code, 1)
        self.assertIn('could not be found', stderr)

    def test_invalid_config_value(self):
        path = self.write('bad.cfg', 'fraction = 2\n')
        code, _, stderr = self.run_cli('simulate', '--config', path)
        self.assertEqual(code, 1)
        self.assertIn('fraction', stderr)

    def test_unknown_profile(self):
        code, _, _ = self.run_cli('simulate', '--config', self.config_path,
                                  '--profile', 'nope')
        self.assertEqual(code, 1)

    def test_usage_errors_exit_one(self):
        self.assertEqual(self.run_cli('simulate', '--rounds', 'x')[0], 1)
        self.assertEqual(self.run_cli('fly')[0], 1)

    def test_unwritable_output_exits_two(self):
        blocker = self.write('blocker', '')
        code, _, stderr = self.run_cli(
            'simulate', '--config', self.config_path, '--rounds', '1',
            '--output-dir', os.path.join(blocker, 'out'))
        self.assertEqual(code, 2)
        self.assertIn('Unable to write', stderr)


class TestScheduleCommand(BaseCLITest):
    def setUp(self):
        super(TestScheduleCommand, self).setUp()
        self.snapshot = self.write('vehicles.csv', SNAPSHOT)

    def test_cheapest_vehicles_fill_the_budget(self):
        with mock.patch('dlorasim.scheduler.min_bandwidth', fixed_b_min):
            code, stdout, stderr = self.run_cli(
                'schedule', '--snapshot', self.snapshot, '--rank-cap', '4')
        self.assertEqual(code, 0)
        decision = json.loads(stdout)
        self.assertEqual(decision['selected'], ['a', 'b'])
        self.assertEqual(decision['rank'], 4)
        self.assertEqual(sum(decision['bandwidth'].values()), 7e6)
        self.assertIn('b_min_hz', stderr)

    def test_query(self):
        with mock.patch('dlorasim.scheduler.min_bandwidth', fixed_b_min):
            code, stdout, _ = self.run_cli(
                'schedule', '--snapshot', self.snapshot, '--rank-cap', '4',
                '--query', 'selected[0]')
        self.assertEqual(json.loads(stdout), 'a')

    def test_bad_query(self):
        code, _, _ = self.run_cli(
            'schedule', '--snapshot', self.snapshot, '--rank-cap', '2',
            '--query', 'selected[')
        self.assertEqual(code, 1)

    def test_real_physics_validates(self):
        code, stdout, _ = self.run_cli(
            'schedule', '--snapshot', self.snapshot, '--rank-cap', '8')
        self.assertEqual(code, 0)
        self.assertEqual(sorted(json.loads(stdout)['selected']),
                         ['a', 'b', 'c', 'd'])

    def test_missing_snapshot(self):
        code, _, _ = self.run_cli(
            'schedule', '--snapshot', os.path.join(self.tempdir, 'none.csv'),
            '--rank-cap', '2')
        self.assertEqual(code, 1)

    def test_rank_cap_required(self):
        self.assertEqual(
            self.run_cli('schedule', '--snapshot', self.snapshot)[0], 1)


class TestGapCommand(BaseCLITest):
    def test_diagonal_matrix(self):
        path = self.write('grad.csv', '0.5,0,0\n0,0.3,0\n0,0,0.1\n')
        code, stdout, _ = self.run_cli('gap', '--matrix', path, '--rank',
                                       '1', '--M', '0.5')
        self.assertEqual(code, 0)
        report = json.loads(stdout)
        self.assertAlmostEqual(report['total_residual'], math.sqrt(0.1),
                               places=12)
        self.assertAlmostEqual(report['total_bound'], 0.5 * math.sqrt(2),
                               places=12)
        self.assertTrue(report['bound_satisfied'])

    def test_rank_out_of_range(self):
        path = self.write('grad.csv', '1,2\n3,4\n')
        code, _, stderr = self.run_cli('gap', '--matrix', path, '--rank',
                                       '3', '--M', '1')
        self.assertEqual(code, 1)

    def test_missing_matrix(self):
        code, _, _ = self.run_cli('gap', '--matrix', '/nonexistent.csv',
                                  '--rank', '1', '--M', '1')
        self.assertEqual(code, 1)


class TestBoundCommand(BaseCLITest):
    def read_rows(self, stdout):
        return list(csv.DictReader(io.StringIO(stdout)))

    def test_grid_rank_fastest(self):
        code, stdout, _ = self.run_cli(
            'bound', '--config', self.config_path, '--ranks', '1,2,64',
            '--s-sizes', '1,3')
        self.assertEqual(code, 0)
        rows = self.read_rows(stdout)
        self.assertEqual([(r['s_size'], r['rank']) for r in rows],
                         [('1', '1'), ('1', '2'), ('3', '1'), ('3', '2')])
        values = [float(r['avg_grad_bound']) for r in rows]
        self.assertGreater(values[0], values[1])
        self.assertGreater(values[0], values[2])

    def test_default_s_sizes_follow_population(self):
        code, stdout, _ = self.run_cli('bound', '--config', self.config_path,
                                       '--ranks', '2')
        self.assertEqual([r['s_size'] for r in self.read_rows(stdout)],
                         ['1', '2', '3', '4'])

    def test_losses_from_metrics(self):
        outdir = os.path.join(self.tempdir, 'out')
        self.run_cli('simulate', '--config', self.config_path, '--rounds',
                     '2', '--output-dir', outdir)
        code, stdout, _ = self.run_cli(
            'bound', '--config', self.config_path, '--ranks', '1',
            '--s-sizes', '1', '--metrics',
            os.path.join(outdir, 'metrics.csv'))
        self.assertEqual(code, 0)
        metrics = read_metrics(os.path.join(outdir, 'metrics.csv'))
        spread = (metrics[0].test_loss -
                  min(row.test_loss for row in metrics))
        value = float(self.read_rows(stdout)[0]['avg_grad_bound'])
        expected = (2.0 / (0.01 * 10) * spread + 0.01 +
                    0.01 * (42 - 2))
        self.assertTrue(np.isclose(value, expected, rtol=1e-9))

    def test_no_admissible_rank(self):
        code, _, _ = self.run_cli('bound', '--config', self.config_path,
                                  '--ranks', '64')
        self.assertEqual(code, 1)


class TestCompareCommand(BaseCLITest):
    def test_bars_and_runs(self):
        outdir = os.path.join(self.tempdir, 'cmp')
        code, stdout, _ = self.run_cli(
            'compare', '--config', self.config_path, '--profile', 'tiny',
            '--schedulers', 'arbvs,random', '--target', '0.0',
            '--output-dir', outdir)
        self.assertEqual(code, 0)
        for name in ('arbvs/metrics.csv', 'random/metrics.csv',
                     'plotdata/time_to_target_bars.csv',
                     'plotdata/cost_to_target_bars.csv'):
            self.assertTrue(os.path.isfile(os.path.join(outdir, name)), name)
        self.assertIn('arbvs', stdout)

    def test_unknown_scheduler(self):
        code, _, _ = self.run_cli('compare', '--schedulers', 'arbvs,oracle')
        self.assertEqual(code, 1)
