# Library imports
import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from dastrack.core.dastrack_errors import ConfigError, FormatError
from dastrack.core import dastrack_simulator as sim
from dastrack.core.dastrack_tracker import Tracker


def perfect_records(truth, p_train=0.1):
    """ Confirmed track records that reproduce the true trajectories exactly. """
    records = []
    for row in truth.trajectories.itertuples(index=False):
        records.append({'track_id': int(row.object_id) + 100, 't': row.t, 'pos_mean': row.position,
                        'vel_mean': row.velocity, 'pos_var': 1.0, 'vel_var': 1.0,
                        'p_car': 1.0 - p_train if row.class_label == 'car' else p_train, 'status': 'confirmed'})
    return records


class TestScenario(unittest.TestCase):

    def test_object_directions(self):
        north = sim.ScenarioObject(0.0, 'lower', 10.0)
        south = sim.ScenarioObject(0.0, 'upper', 12.0, 'train')
        self.assertEqual((north.direction, north.velocity), ('north', 10.0))
        self.assertEqual((south.direction, south.velocity), ('south', -12.0))

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            sim.ScenarioObject(0.0, 'middle', 10.0)
        with self.assertRaises(ConfigError):
            sim.ScenarioObject(0.0, 'lower', 10.0, 'bus')
        with self.assertRaises(ConfigError):
            sim.Scenario(objects=[sim.ScenarioObject(700.0, 'lower', 10.0)])

    def test_json_round_trip(self):
        scn = sim.Scenario(objects=[{'birth_time': 5.0, 'entry_side': 'upper', 'speed': 11.0}], seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'scenario.json')
            scn.to_json(path)
            self.assertEqual(sim.Scenario.from_json(path), scn)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            sim.Scenario.from_dict({'duration': 10.0, 'speed_limit': 30})
        with self.assertRaises(ConfigError):
            sim.Scenario.from_dict({'objects': [{'birth_time': 0.0}]})

    def test_random_objects(self):
        scn = sim.Scenario.with_random_objects(n_cars=6, n_trains=2, duration=300.0, seed=9)
        self.assertEqual(sorted(o.class_label for o in scn.objects), ['car'] * 6 + ['train'] * 2)
        births = [o.birth_time for o in scn.objects]
        self.assertEqual(births, sorted(births))
        self.assertLessEqual(max(births), 0.8 * 300.0)
        for obj in scn.objects:
            low, high = (8.0, 14.0) if obj.class_label == 'car' else (15.0, 20.0)
            self.assertTrue(low <= obj.speed <= high)


class TestSimulatePicks(unittest.TestCase):

    def test_perfect_detection(self):
        """ P_D = 1 without clutter gives exactly one pick per in-FOV object step. """
        scn = sim.Scenario(objects=[sim.ScenarioObject(0.0, 'lower', 10.0)], duration=30.0,
                           P_D=1.0, clutter_lambda=0.0)
        truth, steps = sim.simulate_picks(scn)
        self.assertEqual(len(steps), scn.n_steps)
        counts = [len(picks) for _, picks in steps]
        self.assertEqual(sum(counts), len(truth.trajectories))
        self.assertTrue(set(counts) <= {0, 1})
        self.assertEqual({o for step in truth.origins for o in step}, {0})

        residuals = [picks[0].position - position
                     for (_, picks), position in zip(steps, truth.trajectories['position']) if picks]
        self.assertLess(abs(np.mean(residuals)), 4 * np.sqrt(15.0 / len(residuals)))
        npt.assert_allclose(np.diff(truth.trajectories['position']), 2.0)

    def test_clutter_rate(self):
        """ Mean clutter count per step is lambda * (V_b - V_a) = 1.02. """
        scn = sim.Scenario(duration=600.0, seed=1)
        truth, steps = sim.simulate_picks(scn)
        counts = np.array([len(picks) for _, picks in steps])
        self.assertAlmostEqual(counts.mean(), 1.02, delta=4 * np.sqrt(1.02 / counts.size))
        self.assertEqual(truth.n_objects, 0)
        positions = np.array([p.position for p in sim.flatten_steps(steps)])
        self.assertTrue(((positions >= 3963.0) & (positions <= 4167.0)).all())

    def test_picks_on_step_grid(self):
        scn = sim.Scenario(objects=[sim.ScenarioObject(1.0, 'upper', 12.0, 'train')], duration=20.0, seed=4)
        _, steps = sim.simulate_picks(scn)
        for t, picks in steps:
            self.assertTrue(all(p.time == t for p in picks))
            positions = [p.position for p in picks]
            self.assertEqual(positions, sorted(positions))
        ids = [p.cluster_id for p in sim.flatten_steps(steps)]
        self.assertEqual(ids, list(range(len(ids))))

    def test_deterministic(self):
        scn = sim.Scenario.with_random_objects(3, 1, duration=60.0, seed=5)
        first = sim.flatten_steps(sim.simulate_picks(scn)[1])
        second = sim.flatten_steps(sim.simulate_picks(scn)[1])
        self.assertEqual(first, second)
        other = sim.Scenario.with_random_objects(3, 1, duration=60.0, seed=6)
        self.assertNotEqual(first, sim.flatten_steps(sim.simulate_picks(other)[1]))


class TestSimulateField(unittest.TestCase):

    def test_noise_only(self):
        batch = sim.simulate_field(sim.Scenario(duration=20.0, seed=2))
        self.assertEqual(batch.values.shape, (101, 405))
        self.assertTrue(batch.meta.is_log_rms)
        self.assertAlmostEqual(batch.meta.channel0_position, 3863.0)
        self.assertAlmostEqual(batch.positions[-1], 4267.0)
        self.assertAlmostEqual(batch.values.mean(), -10.0, delta=0.01)
        self.assertAlmostEqual(batch.values.std(), 0.3, delta=0.01)

    def test_ridge_slope(self):
        """ Per-row peak channel moves at the object speed. """
        scn = sim.Scenario(objects=[sim.ScenarioObject(0.0, 'lower', 10.0)], duration=25.0, seed=3)
        batch = sim.simulate_field(scn)
        truth, _ = sim.simulate_picks(scn)
        rows = np.rint(truth.trajectories['t'].to_numpy() / scn.dt).astype(int)
        peaks = batch.positions[np.argmax(batch.values[rows], axis=1)]
        slope = np.polyfit(truth.trajectories['t'].to_numpy(), peaks, 1)[0]
        self.assertAlmostEqual(slope, 10.0, delta=1.0)
        self.assertAlmostEqual(batch.values[rows].max(axis=1).mean(), -8.0, delta=0.2)

    def test_train_amplitude(self):
        scn = sim.Scenario(objects=[sim.ScenarioObject(0.0, 'upper', 18.0, 'train')], duration=15.0)
        batch = sim.simulate_field(scn)
        self.assertAlmostEqual(batch.values.max(), -5.5, delta=0.2)

    def test_ridge_continues_past_fov(self):
        """ The ridge exists on the fiber beyond both FOV ends, before entry and after exit. """
        scn = sim.Scenario(objects=[sim.ScenarioObject(20.0, 'lower', 10.0)], duration=60.0, seed=3)
        batch = sim.simulate_field(scn)
        for t, position in ((15.0, 3913.0), (45.0, 4213.0)):
            row = int(round(t / scn.dt))
            channel = int(np.argmin(np.abs(batch.positions - position)))
            self.assertAlmostEqual(batch.values[row, channel], -8.0, delta=0.05)

    def test_ridge_symmetric_at_entry(self):
        scn = sim.Scenario(objects=[sim.ScenarioObject(10.0, 'lower', 10.0)], duration=30.0, seed=5)
        batch = sim.simulate_field(scn)
        row = batch.values[50]
        entry = int(np.argmin(np.abs(batch.positions - 3963.0)))
        self.assertAlmostEqual(row[entry - 10], row[entry + 10], places=6)

    def test_no_margin(self):
        batch = sim.simulate_field(sim.Scenario(duration=20.0, seed=2, field_margin=0.0))
        self.assertEqual(batch.values.shape, (101, 205))
        self.assertAlmostEqual(batch.meta.channel0_position, 3963.0)
        with self.assertRaises(ConfigError):
            sim.Scenario(field_margin=-1.0)


class TestScoreTracking(unittest.TestCase):

    def setUp(self):
        scn = sim.Scenario(objects=[sim.ScenarioObject(0.0, 'lower', 10.0),
                                    sim.ScenarioObject(2.0, 'upper', 16.0, 'train')], duration=30.0)
        self.truth, _ = sim.simulate_picks(scn)

    def test_perfect_tracks(self):
        metrics = sim.score_tracking(self.truth, perfect_records(self.truth))
        self.assertEqual((metrics.n_confirmed, metrics.n_objects, metrics.n_matched), (2, 2, 2))
        self.assertEqual(metrics.class_accuracy, 1.0)
        self.assertAlmostEqual(metrics.position_rmse, 0.0)
        self.assertAlmostEqual(metrics.velocity_error, 0.0)
        npt.assert_allclose(metrics.mean_speed['north'], [10.0, 10.0])
        npt.assert_allclose(metrics.mean_speed['south'], [16.0, 16.0])

    def test_wrong_classes(self):
        metrics = sim.score_tracking(self.truth, perfect_records(self.truth, p_train=0.9))
        self.assertEqual(metrics.class_accuracy, 0.0)

    def test_class_from_last_record(self):
        """ The deletion record decides the end-of-track class. """
        records = perfect_records(self.truth)
        last = max((r for r in records if r['track_id'] == 100), key=lambda r: r['t'])
        records.append(dict(last, t=last['t'] + 0.2, p_car=0.2, status='deleted'))
        metrics = sim.score_tracking(self.truth, records)
        self.assertEqual(metrics.n_matched, 2)
        self.assertEqual(metrics.class_accuracy, 0.5)

    def test_no_tracks(self):
        metrics = sim.score_tracking(self.truth, [])
        self.assertEqual((metrics.n_confirmed, metrics.n_matched), (0, 0))
        self.assertIsNone(metrics.class_accuracy)
        self.assertEqual(set(metrics.to_dict()), {'n_confirmed', 'n_objects', 'n_matched', 'class_accuracy',
                                                  'position_rmse', 'velocity_error', 'mean_speed'})

    def test_far_tracks_unmatched(self):
        records = perfect_records(self.truth)
        for record in records:
            record['pos_mean'] += 50.0
        self.assertEqual(sim.score_tracking(self.truth, records).n_matched, 0)

    def test_truth_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'truth.csv')
            self.truth.to_csv(path)
            loaded = sim.GroundTruth.from_csv(path)
            npt.assert_allclose(loaded.trajectories['position'], self.truth.trajectories['position'])
            self.assertEqual(loaded.object_classes(), {0: 'car', 1: 'train'})
            with open(path, 'w') as fh:
                fh.write('object_id,t\n0,0.0\n')
            with self.assertRaises(FormatError):
                sim.GroundTruth.from_csv(path)


class TestTrackingOnSimulatedPicks(unittest.TestCase):

    def test_separated_objects(self):
        """ Three objects crossing the FOV one at a time are each tracked and classified. """
        scn = sim.Scenario(objects=[sim.ScenarioObject(0.0, 'lower', 10.0, 'car'),
                                    sim.ScenarioObject(30.0, 'upper', 17.0, 'train'),
                                    sim.ScenarioObject(60.0, 'upper', 12.0, 'car')],
                           duration=100.0, seed=11)
        truth, steps = sim.simulate_picks(scn)
        records = Tracker().run(sim.flatten_steps(steps), t0=0.0)
        metrics = sim.score_tracking(truth, records)

        self.assertEqual(metrics.n_matched, 3)
        self.assertGreaterEqual(metrics.class_accuracy, 2 / 3)
        self.assertLess(metrics.position_rmse, 5.0)
        self.assertAlmostEqual(metrics.mean_speed['north'][0], 10.0, delta=1.5)
        self.assertAlmostEqual(metrics.mean_speed['south'][0], metrics.mean_speed['south'][1], delta=2.5)

    def test_twenty_objects_over_ten_seeds(self):
        """ 18 cars and 2 trains over 3000 steps with clutter, averaged over ten seeds. """
        n_confirmed, accuracy, rmse, speed_errors = [], [], [], []
        for seed in range(10):
            scn = sim.Scenario.with_random_objects(n_cars=18, n_trains=2, duration=600.0, seed=seed)
            self.assertGreaterEqual(scn.n_steps, 3000)
            truth, steps = sim.simulate_picks(scn)
            metrics = sim.score_tracking(truth, Tracker().run(sim.flatten_steps(steps), t0=0.0))
            n_confirmed.append(metrics.n_confirmed)
            accuracy.append(metrics.class_accuracy)
            rmse.append(metrics.position_rmse)
            speed_errors.extend(estimated - true for estimated, true in metrics.mean_speed.values())

        self.assertLessEqual(abs(np.mean(n_confirmed) - 20.0), 2.0)
        self.assertGreaterEqual(np.mean(accuracy), 0.9)
        self.assertLessEqual(np.mean(rmse), 3 * np.sqrt(15.0))
        self.assertLessEqual(np.max(np.abs(speed_errors)), 1.0)


if __name__ == '__main__':
    unittest.main()
