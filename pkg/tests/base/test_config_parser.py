import os
import unittest
from unittest import mock

from dotenv import load_dotenv

from iris_graph import get_default_config, get_supported_alphas
from iris_graph.base import SEED_ENV_VAR, build_provenance, resolve_seed
from iris_graph.config_parser import ConfigParser
from iris_graph.exceptions import ConfigurationException

load_dotenv()


class TestConfigParser(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config_parser = ConfigParser()

    def test_defaults(self):
        config = get_default_config()
        self.assertEqual(config['DELTA'], 20)
        self.assertEqual(config['IMAGE_SIZE'], 200)
        self.assertEqual(config['TRAIN']['batch_size'], 32)
        self.assertEqual(get_supported_alphas(), ['1/10', '1/9', '1/8', '1/7', '1/6', '1/5'])

    def test_overrides_are_case_insensitive(self):
        merged = self.config_parser.merged_with({'delta': 10, 'NODE_CAP': 150})
        self.assertEqual(merged['DELTA'], 10)
        self.assertEqual(merged['NODE_CAP'], 150)

    def test_training_keys(self):
        merged = self.config_parser.merged_with({'learning_rate': 0.01, 'TRAIN': {'patience': 3}})
        self.assertEqual(merged['TRAIN']['learning_rate'], 0.01)
        self.assertEqual(merged['TRAIN']['patience'], 3)
        self.assertEqual(merged['TRAIN']['batch_size'], 32)

    def test_loaded_configuration_is_untouched(self):
        self.config_parser.merged_with({'TRAIN': {'patience': 1}, 'DELTA': 5})
        config = self.config_parser.get_config_dict()
        self.assertEqual(config['TRAIN']['patience'], 10)
        self.assertEqual(config['DELTA'], 20)

    def test_unknown_key(self):
        with self.assertRaises(ConfigurationException):
            self.config_parser.merged_with({'DELTAS': 10})


class TestSeedAndProvenance(unittest.TestCase):
    def test_explicit_seed_wins(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: '5'}):
            self.assertEqual(resolve_seed(3), 3)

    def test_environment_seed(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: '5'}):
            self.assertEqual(resolve_seed(), 5)

    def test_configured_seed(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: ''}):
            self.assertEqual(resolve_seed(config={'SEED': 8}), 8)

    def test_invalid_environment_seed(self):
        with mock.patch.dict(os.environ, {SEED_ENV_VAR: 'seven'}):
            with self.assertRaises(ConfigurationException):
                resolve_seed()

    def test_provenance_leaves_out_runtime_settings(self):
        provenance = build_provenance({'DELTA': 20, 'JOBS': 4, 'REFERENCE_TABLES': {}}, 7, command='extract')
        self.assertEqual(provenance['tool'], 'iris-graph')
        self.assertEqual(provenance['seed'], 7)
        self.assertEqual(provenance['config'], {'DELTA': 20})
        self.assertEqual(provenance['command'], 'extract')


if __name__ == '__main__':
    unittest.main()
