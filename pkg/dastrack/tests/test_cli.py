# Library imports
import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from dastrack.core.dastrack_classifier import ClassModel
from dastrack.core.dastrack_config import RunConfig
from dastrack.core.dastrack_errors import ConfigError
from dastrack.core.dastrack_io import EventLog, StrainBatch, load_tracks, save_events, save_strain
from dastrack.core.dastrack_report import summarize_tracks
from dastrack.core.dastrack_simulator import Scenario, ScenarioObject
from dastrack.tests.test_tuner import planted_batch
from dastrack.tools import dastrack_cli as cli


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        scn = Scenario(objects=[ScenarioObject(0.0, 'lower', 10.0, 'car'),
                                ScenarioObject(25.0, 'upper', 16.0, 'train')],
                       duration=50.0, seed=7)
        self.scenario_path = self.path('scenario.json')
        scn.to_json(self.scenario_path)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def run_cli(self, *argv):
        return cli.main(['--quiet', *argv])

    def read(self, *parts):
        with open(self.path(*parts), 'rb') as fh:
            return fh.read()


class TestPipeline(CliTestCase):

    def test_simulate_track_report(self):
        self.assertEqual(self.run_cli('simulate', self.scenario_path, '--out', self.path('sim'), '--kind', 'picks'),
                         cli.EXIT_OK)
        for name in ('truth.csv', 'picks.csv', 'effective_config.json'):
            self.assertTrue(os.path.isfile(self.path('sim', name)))
        self.assertFalse(os.path.exists(self.path('sim', 'strain.dst')))

        self.assertEqual(self.run_cli('track', self.path('sim', 'picks.csv'), '--truth', self.path('sim', 'truth.csv'),
                                      '--out', self.path('track')), cli.EXIT_OK)
        with open(self.path('track', 'metrics.json')) as fh:
            metrics = json.load(fh)
        self.assertEqual(metrics['n_objects'], 2)
        self.assertGreaterEqual(metrics['n_matched'], 1)

        self.assertEqual(self.run_cli('report', self.path('track', 'tracks.jsonl'), '--out', self.path('report')),
                         cli.EXIT_OK)
        with open(self.path('report', 'counts.csv')) as fh:
            self.assertEqual(fh.readline().strip(), 'bin_start_s,car,train')
        with open(self.path('report', 'velocities.csv')) as fh:
            self.assertEqual(fh.readline().strip(), 'bin_start_s,direction,mean_speed_kmh,n_tracks')

    def test_effective_config(self):
        self.assertEqual(self.run_cli('simulate', self.scenario_path, '--out', self.path('sim'), '--kind', 'picks'),
                         cli.EXIT_OK)
        self.assertEqual(self.run_cli('track', self.path('sim', 'picks.csv'), '--N-init', '7',
                                      '--out', self.path('track')), cli.EXIT_OK)
        with open(self.path('track', 'effective_config.json')) as fh:
            effective = json.load(fh)
        self.assertEqual(effective['tracker']['N_init'], 7)
        self.assertEqual(RunConfig.from_dict(effective).tracker.N_init, 7)

    def test_rerun_is_deterministic(self):
        for name in ('a', 'b'):
            self.assertEqual(self.run_cli('simulate', self.scenario_path, '--out', self.path(name)), cli.EXIT_OK)
            self.assertEqual(self.run_cli('track', self.path(name, 'picks.csv'), '--out', self.path(name, 'track')),
                             cli.EXIT_OK)
        for parts in (('picks.csv',), ('strain.dst',), ('track', 'tracks.jsonl')):
            self.assertEqual(self.read('a', *parts), self.read('b', *parts))

    def test_seed_override(self):
        self.run_cli('simulate', self.scenario_path, '--out', self.path('a'), '--kind', 'picks')
        self.run_cli('simulate', self.scenario_path, '--out', self.path('b'), '--kind', 'picks', '--seed', '8')
        self.assertNotEqual(self.read('a', 'picks.csv'), self.read('b', 'picks.csv'))

    def test_extract_from_field(self):
        self.assertEqual(self.run_cli('simulate', self.scenario_path, '--out', self.path('sim'), '--kind', 'field'),
                         cli.EXIT_OK)
        self.assertEqual(self.run_cli('extract', self.path('sim', 'strain.dst'), '--epsilon', '0.02',
                                      '--out', self.path('extract')), cli.EXIT_OK)
        with open(self.path('extract', 'picks.csv')) as fh:
            lines = fh.read().splitlines()
        self.assertEqual(lines[0], 'time_s,position_m,log_amplitude,cluster_id')
        self.assertGreater(len(lines), 1)

    def test_field_pipeline_five_objects(self):
        """ Field, extraction and tracking of five separated objects over ten seeds. """
        objects = [ScenarioObject(5.0, 'lower', 9.5, 'car'), ScenarioObject(35.0, 'upper', 12.5, 'car'),
                   ScenarioObject(65.0, 'lower', 16.0, 'train'), ScenarioObject(95.0, 'upper', 10.5, 'car'),
                   ScenarioObject(125.0, 'lower', 13.0, 'car')]
        true_velocities = np.array([obj.velocity for obj in objects])
        exact_runs = 0
        for seed in range(10):
            run = self.path(f'seed{seed}')
            Scenario(objects=objects, duration=160.0, seed=seed).to_json(self.path(f'five{seed}.json'))
            self.assertEqual(self.run_cli('simulate', self.path(f'five{seed}.json'), '--kind', 'field',
                                          '--out', os.path.join(run, 'sim')), cli.EXIT_OK)
            self.assertEqual(self.run_cli('extract', os.path.join(run, 'sim', 'strain.dst'), '--kappa', '31',
                                          '--threshold', '-8.8', '--epsilon', '0.02',
                                          '--out', os.path.join(run, 'extract')), cli.EXIT_OK)
            self.assertEqual(self.run_cli('track', os.path.join(run, 'extract', 'picks.csv'),
                                          '--out', os.path.join(run, 'track')), cli.EXIT_OK)

            summary = summarize_tracks(load_tracks(os.path.join(run, 'track', 'tracks.jsonl')))
            confirmed = summary[summary['confirmed']].sort_values('birth_time', kind='mergesort')
            if len(confirmed) != len(objects):
                continue
            exact_runs += 1
            np.testing.assert_allclose(confirmed['mean_velocity'].to_numpy(), true_velocities, rtol=0.15)
        self.assertGreaterEqual(exact_runs, 9)

    def test_tune(self):
        save_strain(planted_batch([10.0, 25.0, 40.0], [17.0, 33.0]), self.path('field.dst'))
        save_events(EventLog([(10.0, 'car', 'north', 1), (25.0, 'train', 'south', 1), (40.0, 'car', 'north', 1)]),
                    self.path('events.csv'))
        with open(self.path('config.json'), 'w') as fh:
            json.dump({'tuner': {'kappa_grid': [1], 'A_grid': [-9.2, -8.7, -8.2], 'epsilon_grid': [0.07],
                                 'reference_channel': 10}}, fh)
        self.assertEqual(self.run_cli('tune', self.path('field.dst'), self.path('events.csv'),
                                      '--config', self.path('config.json'), '--out', self.path('tune')), cli.EXIT_OK)
        with open(self.path('tune', 'tune_result.json')) as fh:
            result = json.load(fh)
        self.assertEqual((result['best_kappa'], result['best_A'], result['best_epsilon']), (1, -8.7, 0.07))
        self.assertEqual(len(pd.read_csv(self.path('tune', 'surface.csv'))), 3)

    def test_tune_fits_class_model(self):
        batch = planted_batch([10.0, 20.0, 30.0, 40.0], [], event_level=[-8.2, -6.0, -8.4, -6.3])
        save_strain(batch, self.path('field.dst'))
        save_events(EventLog([(10.0, 'car', 'north', 1), (20.0, 'train', 'south', 1),
                              (30.0, 'car', 'north', 1), (40.0, 'train', 'north', 1)]), self.path('events.csv'))
        with open(self.path('config.json'), 'w') as fh:
            json.dump({'tuner': {'kappa_grid': [1], 'A_grid': [-9.2, -8.7], 'epsilon_grid': [0.07],
                                 'reference_channel': 10}}, fh)
        self.assertEqual(self.run_cli('tune', self.path('field.dst'), self.path('events.csv'), '--fit-class-model',
                                      '--config', self.path('config.json'), '--out', self.path('tune')), cli.EXIT_OK)
        model = ClassModel.load(self.path('tune', 'class_model.json'))
        np.testing.assert_allclose(model.prior_pi, [0.5, 0.5])
        np.testing.assert_allclose(model.alpha, [-8.3, -6.15], atol=1e-6)
        np.testing.assert_allclose(model.tau2, [0.02, 0.045], atol=1e-6)

    def test_tune_without_picks(self):
        save_strain(planted_batch([], []), self.path('flat.dst'))
        save_events(EventLog([(10.0, 'car', 'north', 1)]), self.path('events.csv'))
        with open(self.path('config.json'), 'w') as fh:
            json.dump({'tuner': {'kappa_grid': [1], 'A_grid': [-8.7], 'epsilon_grid': [0.07],
                                 'reference_channel': 10}}, fh)
        self.assertEqual(self.run_cli('tune', self.path('flat.dst'), self.path('events.csv'),
                                      '--config', self.path('config.json'), '--out', self.path('tune')),
                         cli.EXIT_INPUT)


class TestEdgeCases(CliTestCase):

    def test_extract_raw_with_short_last_batch(self):
        """ 6.1 s of raw strain in 6 s batches: the 0.1 s remainder is carried, then dropped. """
        rng = np.random.default_rng(0)
        values = 1e-5 * rng.normal(size=(6100, 31))
        values[3000:3400, 10:21] = rng.normal(size=(400, 11))
        save_strain(StrainBatch.from_array(values, sample_interval=1e-3), self.path('raw.dst'))
        self.assertEqual(self.run_cli('extract', self.path('raw.dst'), '--out', self.path('extract')), cli.EXIT_OK)
        picks = pd.read_csv(self.path('extract', 'picks.csv'))
        self.assertGreater(len(picks), 0)
        self.assertTrue(picks['time_s'].between(2.7, 3.7).all())

    def test_extract_kappa_wider_than_fiber(self):
        save_strain(planted_batch([10.0], []), self.path('narrow.dst'))
        self.assertEqual(self.run_cli('extract', self.path('narrow.dst'), '--out', self.path('extract')),
                         cli.EXIT_INPUT)

    def test_track_with_class_model(self):
        self.assertEqual(self.run_cli('simulate', self.scenario_path, '--out', self.path('sim'), '--kind', 'picks'),
                         cli.EXIT_OK)
        ClassModel(prior_pi=(0.2, 0.8)).save(self.path('model.json'))
        with open(self.path('config.json'), 'w') as fh:
            json.dump({'paths': {'class_model': self.path('model.json')}}, fh)

        runs = {'flag': ('--class-model', self.path('model.json')), 'section': ('--config', self.path('config.json'))}
        for name, option in runs.items():
            self.assertEqual(self.run_cli('track', self.path('sim', 'picks.csv'), *option, '--out', self.path(name)),
                             cli.EXIT_OK)
            records = load_tracks(self.path(name, 'tracks.jsonl'))
            first = records.sort_values('t', kind='mergesort').groupby('track_id').head(1)
            np.testing.assert_allclose(first['p_car'], 0.2)

        self.assertEqual(self.run_cli('track', self.path('sim', 'picks.csv'), '--class-model', self.path('none.json'),
                                      '--out', self.path('missing')), cli.EXIT_INPUT)

    def test_truth_object_ids(self):
        scn = Scenario.with_random_objects(n_cars=4, n_trains=1, duration=200.0, seed=1)
        scn.to_json(self.path('five.json'))
        self.assertEqual(self.run_cli('simulate', self.path('five.json'), '--out', self.path('sim'), '--kind', 'picks'),
                         cli.EXIT_OK)
        truth = pd.read_csv(self.path('sim', 'truth.csv'))
        self.assertEqual(sorted(truth['object_id'].unique()), [0, 1, 2, 3, 4])

    def test_noise_field_gives_no_picks(self):
        Scenario(duration=20.0).to_json(self.path('empty.json'))
        self.assertEqual(self.run_cli('simulate', self.path('empty.json'), '--out', self.path('sim'),
                                      '--kind', 'field'),
                         cli.EXIT_OK)
        self.assertEqual(self.run_cli('extract', self.path('sim', 'strain.dst'), '--out', self.path('extract')),
                         cli.EXIT_OK)
        self.assertTrue(pd.read_csv(self.path('extract', 'picks.csv')).empty)

    def test_empty_picks_give_no_tracks(self):
        with open(self.path('picks.csv'), 'w') as fh:
            fh.write('time_s,position_m,log_amplitude,cluster_id\n')
        self.assertEqual(self.run_cli('track', self.path('picks.csv'), '--out', self.path('track')), cli.EXIT_OK)
        with open(self.path('track', 'tracks.jsonl')) as fh:
            self.assertEqual(fh.read(), '')


class TestExitCodes(CliTestCase):

    def test_missing_input(self):
        self.assertEqual(self.run_cli('track', self.path('nothing.csv'), '--out', self.path('out')), cli.EXIT_INPUT)

    def test_malformed_strain(self):
        with open(self.path('bad.dst'), 'w') as fh:
            fh.write('not a strain file\n')
        self.assertEqual(self.run_cli('extract', self.path('bad.dst'), '--out', self.path('out')), cli.EXIT_INPUT)

    def test_bad_config(self):
        with open(self.path('config.json'), 'w') as fh:
            json.dump({'tracker': {'P_D': 1.5}}, fh)
        self.assertEqual(self.run_cli('report', self.path('x.jsonl'), '--config', self.path('config.json'),
                                      '--out', self.path('out')), cli.EXIT_INPUT)

    def test_bad_scenario(self):
        with open(self.path('scenario.json'), 'w') as fh:
            json.dump({'objects': [], 'duration': -1.0}, fh)
        self.assertEqual(self.run_cli('simulate', self.path('scenario.json'), '--out', self.path('out')),
                         cli.EXIT_INPUT)

    def test_invalid_override(self):
        self.assertEqual(self.run_cli('extract', self.path('x.dst'), '--kappa', '4', '--out', self.path('out')),
                         cli.EXIT_INPUT)


class TestRunConfig(unittest.TestCase):

    def test_defaults_shared_with_tuner(self):
        cfg = RunConfig()
        self.assertIs(cfg.tuner.picker, cfg.picker)
        self.assertIs(cfg.tuner.preprocess, cfg.preprocess)

    def test_save_load(self):
        cfg = RunConfig.from_dict({'picker': {'dbscan_epsilon': 0.03}, 'tracker': {'N_init': 3, 'fov': [0, 500]},
                                   'classifier': {'use_amplitude_in_da': True}})
        self.assertEqual(cfg.tuner.picker.dbscan_epsilon, 0.03)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'config.json')
            cfg.save(path)
            self.assertEqual(RunConfig.load(path), cfg)

    def test_unknown_entries(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'plotting': {}})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'tracker': {'gate_size': 3}})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'tuner': {'picker': {}}})


if __name__ == '__main__':
    unittest.main()
