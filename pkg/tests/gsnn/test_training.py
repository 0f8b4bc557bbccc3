import os
import shutil
import tempfile
import unittest

import numpy as np
from dotenv import load_dotenv

from iris_graph.exceptions import (
    CheckpointFormatException,
    ConfigurationException,
    TrainingDivergedException,
)
from iris_graph.gsnn import (
    GSNNTrainer,
    TrainConfig,
    evaluate,
    history_to_frame,
    init_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train,
)

from .graphs import TINY_WIDTHS, separable_pairs, tiny_params

load_dotenv()


class TestTrainConfig(unittest.TestCase):
    def test_invalid_values(self):
        for kwargs in ({'learning_rate': 0}, {'batch_size': 0}, {'patience': -1},
                       {'adjacency_mode': 'dense'}, {'combine_mode': 'product'}):
            with self.assertRaises(ConfigurationException):
                TrainConfig(**kwargs)

    def test_trainer_reads_configuration(self):
        trainer = GSNNTrainer(seed=4, learning_rate=0.01, TRAIN={'patience': 2})
        settings = trainer.settings()
        self.assertEqual(settings['learning_rate'], 0.01)
        self.assertEqual(settings['patience'], 2)
        self.assertEqual(settings['seed'], 4)
        self.assertEqual(settings['batch_size'], 32)


class TestTraining(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.train_pairs = separable_pairs(0)
        cls.val_pairs = separable_pairs(1, graphs_per_user=3)
        cls.config = TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=5, patience=10, seed=0)

    def test_smoke(self):
        params, history = train(self.train_pairs, self.val_pairs, self.config, tiny_params())
        self.assertEqual(len(history), 5)
        self.assertEqual([h['epoch'] for h in history], [1, 2, 3, 4, 5])
        self.assertTrue(params.is_finite())

        frame = history_to_frame(history)
        self.assertEqual(frame.columns.tolist(), ['epoch', 'train_loss', 'val_accuracy', 'val_f1'])

    def test_loss_decreases_on_separable_pairs(self):
        _, history = train(self.train_pairs, self.val_pairs, self.config, tiny_params())
        losses = [h['train_loss'] for h in history[:5]]
        self.assertEqual(len(losses), 5)
        for before, after in zip(losses, losses[1:]):
            self.assertLess(after, before)

    def test_deterministic(self):
        first, history_a = train(self.train_pairs, self.val_pairs, self.config, tiny_params())
        second, history_b = train(self.train_pairs, self.val_pairs, self.config, tiny_params())
        self.assertEqual(history_a, history_b)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_initial_params_are_not_modified(self):
        params = tiny_params()
        before = params.copy()
        train(self.train_pairs, self.val_pairs, self.config, params)
        for name in params:
            np.testing.assert_array_equal(params[name], before[name])

    def test_returns_best_validation_epoch(self):
        params, history = train(self.train_pairs, self.val_pairs, self.config, tiny_params())
        best_f1 = max(h['val_f1'] for h in history)
        self.assertEqual(evaluate(params, self.val_pairs).f1, best_f1)

    def test_early_stopping(self):
        config = TrainConfig(learning_rate=1e-9, batch_size=8, max_epochs=50, patience=2, seed=0)
        _, history = train(self.train_pairs, self.val_pairs, config, tiny_params())
        self.assertLess(len(history), 50)

    def test_non_finite_parameters(self):
        params = tiny_params()
        params['W1'][0, 0] = np.nan
        with self.assertRaises(TrainingDivergedException):
            train(self.train_pairs, self.val_pairs, self.config, params)

    def test_empty_sets(self):
        with self.assertRaises(ConfigurationException):
            train([], self.val_pairs, self.config, tiny_params())
        with self.assertRaises(ConfigurationException):
            evaluate(tiny_params(), [])

    def test_trainer_fit(self):
        trainer = GSNNTrainer(
            seed=0, GCN_WIDTHS=list(TINY_WIDTHS['gcn_widths']), EMBEDDING_WIDTH=TINY_WIDTHS['embedding_width'],
            HEAD_WIDTHS=list(TINY_WIDTHS['head_widths']), TRAIN={'max_epochs': 2, 'batch_size': 8},
        )
        params, history = trainer.fit(self.train_pairs, self.val_pairs)
        self.assertEqual(len(history), 2)
        self.assertEqual(params.shapes, trainer.init_params().shapes)

        metrics = trainer.evaluate(params, self.val_pairs)
        self.assertEqual(metrics.total, len(self.val_pairs))


class TestCheckpoint(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_round_trip(self):
        params = tiny_params(7)
        path = os.path.join(self.tmp, 'model.irmp')
        save_checkpoint(params, path, {'seed': 7})

        restored, provenance = load_checkpoint(path, expected=tiny_params(0))
        self.assertEqual(provenance, {'seed': 7})
        self.assertEqual(restored.names, params.names)
        for name in params:
            np.testing.assert_array_equal(restored[name], params[name])

        pairs = separable_pairs(2, graphs_per_user=2)
        np.testing.assert_array_equal(predict_proba(restored, pairs), predict_proba(params, pairs))

    def test_shape_mismatch(self):
        path = os.path.join(self.tmp, 'other.irmp')
        save_checkpoint(tiny_params(), path)
        with self.assertRaises(CheckpointFormatException):
            load_checkpoint(path, expected=init_params(seed=0))

    def test_trailing_bytes(self):
        path = os.path.join(self.tmp, 'trailing.irmp')
        save_checkpoint(tiny_params(), path)
        with open(path, 'ab') as f:
            f.write(b'\x00')
        with self.assertRaises(CheckpointFormatException):
            load_checkpoint(path)

    def test_non_finite_values(self):
        params = tiny_params()
        params['c1'][0] = np.inf
        path = os.path.join(self.tmp, 'inf.irmp')
        save_checkpoint(params, path)
        with self.assertRaises(CheckpointFormatException):
            load_checkpoint(path)


if __name__ == '__main__':
    unittest.main()
