"""
Unit tests for the point-mass environment, the replay buffer and offline
dataset files.
"""

import json
import os
import tempfile
import unittest


def _env(**overrides):
    from choreo.config.config import EnvConfig
    from choreo.envs.point_mass import PointMassEnv
    return PointMassEnv(EnvConfig(**overrides))


class TestPointMassEnv(unittest.TestCase):

    def test_reset_observation(self):
        import numpy as np
        env = _env()
        obs = env.reset()
        self.assertTrue(np.allclose(obs, [-0.7, -0.7, 0.0, 0.0]))

    def test_damped_dynamics(self):
        import numpy as np
        env = _env(dt=0.1)
        env.reset()
        obs, _, _ = env.step([1.0, 0.0])
        self.assertTrue(np.allclose(obs, [-0.6, -0.7, 0.1, 0.0]))
        obs, _, _ = env.step([1.0, 0.0])
        # v = 0.8 * 0.1 + 0.1 = 0.18
        self.assertTrue(np.allclose(obs, [-0.42, -0.7, 0.18, 0.0]))

    def test_position_clipped_to_arena(self):
        env = _env(dt=1.0)
        env.set_state([0.95, 0.0], [0.5, 0.0])
        obs, _, _ = env.step([1.0, 0.0])
        self.assertEqual(obs[0], 1.0)

    def test_sparse_and_dense_rewards(self):
        env = _env(sparse=True)
        env.set_state([0.7, 0.7], [0.0, 0.0])
        _, reward, _ = env.step([0.0, 0.0])
        self.assertEqual(reward, 1.0)
        self.assertTrue(env.success)

        dense = _env(sparse=False, goal=[1.0, 1.0])
        dense.set_state([-1.0, -1.0], [0.0, 0.0])
        _, reward, _ = dense.step([0.0, 0.0])
        self.assertAlmostEqual(reward, 0.0)

    def test_episode_ends_at_max_steps(self):
        from choreo.errors import ContractViolation
        env = _env(max_steps=3)
        env.reset()
        dones = [env.step([0.0, 0.0])[2] for _ in range(3)]
        self.assertEqual(dones, [False, False, True])
        with self.assertRaises(ContractViolation):
            env.step([0.0, 0.0])

    def test_out_of_box_action_clipped_and_counted(self):
        import numpy as np
        env = _env(dt=0.1)
        env.reset()
        with self.assertLogs('choreo.envs.point_mass', level='WARNING'):
            obs, _, _ = env.step([5.0, -5.0])
        self.assertTrue(np.allclose(obs[2:], [0.1, -0.1]))
        self.assertEqual(env.clipped_actions, 1)

    def test_wrong_action_size_rejected(self):
        from choreo.errors import ContractViolation
        env = _env()
        env.reset()
        with self.assertRaises(ContractViolation):
            env.step([0.0, 0.0, 0.0])

    def test_two_room_wall_blocks_outside_door(self):
        env = _env(layout='two_room', dt=1.0)
        env.set_state([-0.1, 0.6], [0.0, 0.0])
        obs, _, _ = env.step([0.5, 0.0])
        self.assertLess(obs[0], 0.0)
        self.assertEqual(obs[2], 0.0)

    def test_two_room_door_lets_through(self):
        env = _env(layout='two_room', dt=1.0)
        env.set_state([-0.1, 0.0], [0.0, 0.0])
        obs, _, _ = env.step([0.5, 0.0])
        self.assertGreater(obs[0], 0.0)

    def test_discretize(self):
        env = _env()
        env.set_state([-1.0, 0.99], [0.0, 0.0])
        self.assertEqual(env.discretize(10), (0, 9))


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

def _episode(length, value=0.0, obs_dim=2, act_dim=1):
    import numpy as np
    obs = np.full((length, obs_dim), value)
    obs[:, 0] = np.arange(length) + value
    return obs, np.zeros((length, act_dim))


class TestReplayBuffer(unittest.TestCase):

    def test_not_ready_until_an_episode_is_long_enough(self):
        from choreo.envs.replay import ReplayBuffer
        from choreo.errors import NotReadyError
        from choreo.substrate.core import make_generator
        buffer = ReplayBuffer(capacity=100)
        buffer.add_episode(*_episode(3))
        with self.assertRaises(NotReadyError):
            buffer.sample_batch(2, 4, make_generator(0))
        buffer.add_episode(*_episode(4))
        batch = buffer.sample_batch(2, 4, make_generator(0))
        self.assertEqual(tuple(batch.obs.shape), (2, 4, 2))
        self.assertEqual(tuple(batch.rew.shape), (2, 4))

    def test_windows_are_contiguous_single_episode_slices(self):
        import torch
        from choreo.envs.replay import ReplayBuffer
        from choreo.substrate.core import make_generator
        buffer = ReplayBuffer(capacity=1000)
        buffer.add_episode(*_episode(10, value=0.0))
        buffer.add_episode(*_episode(10, value=100.0))
        batch = buffer.sample_batch(50, 5, make_generator(1))
        steps = batch.obs[:, 1:, 0] - batch.obs[:, :-1, 0]
        self.assertTrue(torch.all(steps == 1.0))

    def test_window_starts_uniform(self):
        import numpy as np
        from scipy import stats
        from choreo.envs.replay import ReplayBuffer
        from choreo.substrate.core import make_generator
        buffer = ReplayBuffer(capacity=1000)
        buffer.add_episode(*_episode(6, value=0.0))     # 3 windows of 4
        buffer.add_episode(*_episode(5, value=100.0))   # 2 windows of 4
        batch = buffer.sample_batch(5000, 4, make_generator(2))
        starts = batch.obs[:, 0, 0].numpy()
        values, counts = np.unique(starts, return_counts=True)
        self.assertEqual(values.tolist(), [0.0, 1.0, 2.0, 100.0, 101.0])
        chi2 = float(((counts - 1000.0) ** 2 / 1000.0).sum())
        self.assertLess(chi2, stats.chi2.ppf(0.999, df=4))

    def test_fifo_eviction_keeps_newest(self):
        from choreo.envs.replay import ReplayBuffer
        buffer = ReplayBuffer(capacity=10)
        buffer.add_episode(*_episode(6, value=0.0))
        buffer.add_episode(*_episode(6, value=1.0))
        self.assertEqual(len(buffer), 1)
        self.assertEqual(buffer.total_steps, 6)
        buffer.add_episode(*_episode(20, value=2.0))
        self.assertEqual(len(buffer), 1)
        self.assertEqual(buffer.total_steps, 20)

    def test_rewards_default_to_zero_and_sizes_checked(self):
        import numpy as np
        from choreo.envs.replay import ReplayBuffer
        from choreo.errors import ContractViolation
        buffer = ReplayBuffer(capacity=100)
        episode = buffer.add_episode(*_episode(3))
        self.assertTrue(np.array_equal(episode.rew, np.zeros(3)))
        with self.assertRaises(ContractViolation):
            buffer.add_episode(*_episode(3, obs_dim=3))
        with self.assertRaises(ContractViolation):
            buffer.add_episode(*_episode(3), rew=[1.0])


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

class TestOfflineDataset(unittest.TestCase):

    def _write(self, tmp, lines):
        path = os.path.join(tmp, 'data.jsonl')
        with open(path, 'w') as f:
            for line in lines:
                f.write((line if isinstance(line, str) else json.dumps(line)) + '\n')
        return path

    def test_save_and_load_preserve_episodes(self):
        import numpy as np
        from choreo.envs.dataset import collect_random_dataset, load_offline_dataset, save_offline_dataset
        from choreo.substrate.core import make_generator
        buffer = collect_random_dataset(_env(max_steps=20), 50, make_generator(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'data.jsonl')
            save_offline_dataset(buffer, path)
            loaded = load_offline_dataset(path)
        self.assertEqual(len(loaded), len(buffer))
        for a, b in zip(buffer, loaded):
            self.assertTrue(np.array_equal(a.obs, b.obs))
            self.assertTrue(np.array_equal(a.act, b.act))
            self.assertTrue(np.array_equal(a.rew, b.rew))

    def test_header_is_optional(self):
        from choreo.envs.dataset import load_offline_dataset
        with tempfile.TemporaryDirectory() as tmp:
            path = self._write(tmp, [{'obs': [[0, 0], [1, 1]], 'act': [[0], [1]]}])
            buffer = load_offline_dataset(path)
        self.assertEqual(buffer.total_steps, 2)
        self.assertEqual((buffer.obs_dim, buffer.act_dim), (2, 1))

    def test_errors_name_record_and_field(self):
        from choreo.envs.dataset import load_offline_dataset
        from choreo.errors import DatasetParseError
        good = {'obs': [[0, 0], [1, 1]], 'act': [[0], [1]]}
        cases = [
            ([good, {'obs': [[0, 0]], 'act': [[0], [1]]}], 1, 'act'),
            ([good, {'act': [[0]]}], 1, 'obs'),
            ([{'obs': [[0, 'x']], 'act': [[0]]}], 0, 'obs'),
            ([good, good, {'obs': [[0, 0, 0]], 'act': [[0]]}], 2, 'obs'),
            ([{'format': 'choreo-episodes', 'version': 7}], 0, 'version'),
            ([good, '{broken'], 1, 'json'),
        ]
        with tempfile.TemporaryDirectory() as tmp:
            for lines, record, field in cases:
                path = self._write(tmp, lines)
                with self.assertRaises(DatasetParseError) as ctx:
                    load_offline_dataset(path)
                self.assertEqual((ctx.exception.record, ctx.exception.field), (record, field))

    def test_random_walk_actions_start_at_zero_and_stay_in_box(self):
        import numpy as np
        from choreo.envs.dataset import collect_random_dataset
        from choreo.substrate.core import make_generator
        buffer = collect_random_dataset(_env(max_steps=15), 40, make_generator(3))
        self.assertGreaterEqual(buffer.total_steps - len(buffer), 40)
        for episode in buffer:
            self.assertTrue(np.array_equal(episode.act[0], np.zeros(2)))
            self.assertTrue(np.all(np.abs(episode.act) <= 1.0))
            self.assertEqual(len(episode), 16)


if __name__ == '__main__':
    unittest.main()
