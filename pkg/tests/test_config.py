"""
Unit tests for RunConfig loading, overrides and validation.
"""

import json
import os
import tempfile
import unittest


class TestRunConfigDefaults(unittest.TestCase):

    def test_missing_file_yields_defaults(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig.load('/nonexistent/path/run.json')
        self.assertEqual(cfg.run.seed, 0)
        self.assertEqual(cfg.codebook.num_codes, 64)
        self.assertEqual(cfg.codebook.beta, 0.25)
        self.assertEqual(cfg.model.lr, 3e-4)
        self.assertEqual(cfg.skill.actor_lr, 8e-5)
        self.assertEqual(cfg.env.start, [-0.7, -0.7])

    def test_defaults_validate(self):
        from choreo.config.config import RunConfig
        RunConfig().validate()

    def test_repository_config_matches_defaults(self):
        from choreo.config.config import RunConfig
        path = os.path.join(os.path.dirname(__file__), '..', 'config.json')
        self.assertEqual(RunConfig.load(path).to_dict(), RunConfig().to_dict())


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

class TestRunConfigFiles(unittest.TestCase):

    def test_json_merges_over_defaults(self):
        from choreo.config.config import RunConfig
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.json')
            with open(path, 'w') as f:
                json.dump({'codebook': {'num_codes': 16}, 'run': {'seed': 4}}, f)
            cfg = RunConfig.load(path)
        self.assertEqual(cfg.codebook.num_codes, 16)
        self.assertEqual(cfg.codebook.code_dim, 16)
        self.assertEqual(cfg.run.seed, 4)
        self.assertEqual(cfg.run.mode, 'online')

    def test_json_round_trip(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig()
        cfg.env.layout = 'two_room'
        cfg.bench.periods = [50, 200]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.json')
            cfg.save(path)
            self.assertEqual(RunConfig.load(path).to_dict(), cfg.to_dict())

    def test_flat_round_trip(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig()
        cfg.run.mode = 'offline'
        cfg.run.dataset_path = 'data/episodes.jsonl'
        cfg.codebook.resampling = False
        cfg.env.goal = [0.5, -0.25]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.cfg')
            cfg.save(path)
            self.assertEqual(RunConfig.load(path).to_dict(), cfg.to_dict())

    def test_flat_comments_and_blank_lines(self):
        from choreo.config.config import parse_flat
        parsed = parse_flat("# header\n\ncodebook.num_codes = 8  # small\nrun.mode=offline\n")
        self.assertEqual(parsed, {'codebook.num_codes': '8', 'run.mode': 'offline'})

    def test_invalid_json_names_the_file(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.json')
            with open(path, 'w') as f:
                f.write('{not json')
            with self.assertRaises(ConfigError) as ctx:
                RunConfig.load(path)
            self.assertEqual(ctx.exception.field, path)


# ---------------------------------------------------------------------------
# Overrides and validation
# ---------------------------------------------------------------------------

class TestOverrides(unittest.TestCase):

    def test_strings_coerced_to_field_types(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig().apply_overrides({
            'codebook.num_codes': '32',
            'codebook.beta': '0.5',
            'codebook.resampling': 'false',
            'env.goal': '[0.1, 0.2]',
            'run.mode': 'offline',
        })
        self.assertEqual(cfg.codebook.num_codes, 32)
        self.assertEqual(cfg.codebook.beta, 0.5)
        self.assertFalse(cfg.codebook.resampling)
        self.assertEqual(cfg.env.goal, [0.1, 0.2])
        self.assertEqual(cfg.run.mode, 'offline')

    def test_unknown_key_rejected(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        with self.assertRaises(ConfigError) as ctx:
            RunConfig().apply_overrides({'codebook.size': '3'})
        self.assertEqual(ctx.exception.field, 'codebook.size')

    def test_uncoercible_value_rejected(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        with self.assertRaises(ConfigError):
            RunConfig().apply_overrides({'codebook.num_codes': 'many'})

    def test_seed_env_var_overrides_config(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig().apply_overrides({'run.seed': '3'})
        cfg.apply_env({'CHOREO_SEED': '11'})
        self.assertEqual(cfg.run.seed, 11)

    def test_validation_names_field(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        cases = {
            'codebook.num_codes': '1',
            'codebook.decay': '1.0',
            'codebook.beta': '0',
            'codebook.resample_every': '0',
            'skill.gamma': '1.5',
            'skill.lam': '-0.1',
            'skill.knn_k': '0',
            'skill.horizon': '-1',
            'run.pretrain_steps': '-5',
        }
        for key, value in cases.items():
            cfg = RunConfig().apply_overrides({key: value})
            with self.assertRaises(ConfigError, msg=key) as ctx:
                cfg.validate()
            self.assertEqual(ctx.exception.field, key)

    def test_knn_k_must_fit_imagined_batch(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        cfg = RunConfig().apply_overrides({'model.batch_size': '2', 'model.seq_len': '8'})
        with self.assertRaises(ConfigError) as ctx:
            cfg.validate()
        self.assertEqual(ctx.exception.field, 'skill.knn_k')
        cfg.apply_overrides({'skill.knn_k': '15'})
        cfg.validate()
        cfg.apply_overrides({'skill.knn_k': '16'})
        with self.assertRaises(ConfigError):
            cfg.validate()

    def test_knn_k_unconstrained_without_imagination(self):
        from choreo.config.config import RunConfig
        cfg = RunConfig().apply_overrides({'model.batch_size': '1', 'model.seq_len': '2', 'skill.horizon': '0'})
        cfg.validate()

    def test_offline_mode_requires_dataset(self):
        from choreo.config.config import RunConfig
        from choreo.errors import ConfigError
        cfg = RunConfig().apply_overrides({'run.mode': 'offline'})
        with self.assertRaises(ConfigError) as ctx:
            cfg.validate()
        self.assertEqual(ctx.exception.field, 'run.dataset_path')


if __name__ == '__main__':
    unittest.main()
