import unittest

import numpy as np
from dotenv import load_dotenv

from iris_graph.dataset import GraphPair
from iris_graph.gsnn import TrainConfig, _batch_gradients, backward, bce_loss, init_params, siamese_forward

from .graphs import random_padded_graph, random_pair, tiny_params

load_dotenv()

EPSILON = 1e-5


def pair_loss(pair, params, adjacency_mode='binary', combine_mode='absolute'):
    return bce_loss(siamese_forward(pair, params, adjacency_mode, combine_mode), pair.label)


def numeric_gradient(pair, params, name, index, **modes):
    tensor = params[name]
    original = tensor[index]
    tensor[index] = original + EPSILON
    plus = pair_loss(pair, params, **modes)
    tensor[index] = original - EPSILON
    minus = pair_loss(pair, params, **modes)
    tensor[index] = original
    return (plus - minus) / (2 * EPSILON)


class TestGradients(unittest.TestCase):
    def assert_close_gradients(self, numeric, analytic):
        scale = max(np.linalg.norm(numeric) + np.linalg.norm(analytic), 1e-7)
        self.assertLess(np.linalg.norm(numeric - analytic) / scale, 1e-4)

    def test_every_entry_of_a_small_model(self):
        rng = np.random.default_rng(0)
        for seed in range(20):
            params = tiny_params(seed)
            pair = random_pair(rng, seed % 2 == 0, 5)
            modes = dict(
                adjacency_mode='weighted' if seed % 3 == 0 else 'binary',
                combine_mode='signed' if seed % 4 == 0 else 'absolute',
            )
            grads = backward(pair, pair.label, params, **modes)

            for name in params.names:
                numeric = np.zeros_like(params[name])
                for index in np.ndindex(params[name].shape):
                    numeric[index] = numeric_gradient(pair, params, name, index, **modes)
                self.assert_close_gradients(numeric, grads[name])

    def test_sampled_entries_of_the_default_model(self):
        rng = np.random.default_rng(1)
        params = init_params(seed=1)
        pair = random_pair(rng, False, 8)
        grads = backward(pair, pair.label, params)

        for name in params.names:
            shape = params[name].shape
            for _ in range(5):
                index = tuple(int(rng.integers(0, size)) for size in shape)
                numeric = numeric_gradient(pair, params, name, index)
                self.assertAlmostEqual(numeric, grads[name][index], delta=1e-7 + 1e-4 * abs(numeric))

    def test_identical_graphs_leave_the_branch_untouched(self):
        rng = np.random.default_rng(2)
        graph = random_padded_graph(rng, 'u', 6)
        params = tiny_params(2)
        grads = backward(GraphPair(graph, graph), 1, params)

        gcn, embed, _, _ = params.layer_names()
        for w, b in [*gcn, embed]:
            self.assertTrue((grads[w] == 0).all())
            self.assertTrue((grads[b] == 0).all())
        self.assertTrue((grads['cout'] != 0).all())

    def test_loss_scale(self):
        rng = np.random.default_rng(3)
        params = tiny_params(3)
        pair = random_pair(rng, True, 5)
        single = backward(pair, 1, params)
        double = backward(pair, 1, params, loss_scale=2.0)
        for name in params:
            np.testing.assert_allclose(double[name], 2 * single[name])

    def test_batch_gradient_is_the_mean_of_pair_gradients(self):
        rng = np.random.default_rng(4)
        params = tiny_params(4)
        graphs = [random_padded_graph(rng, user, 4) for user in ('a', 'a', 'b', 'b')]
        batch = [GraphPair(graphs[0], graphs[1]), GraphPair(graphs[0], graphs[2]), GraphPair(graphs[1], graphs[3])]

        grads, loss = _batch_gradients(batch, params, TrainConfig())

        expected_loss = np.mean([pair_loss(pair, params) for pair in batch])
        self.assertAlmostEqual(loss, expected_loss)
        for name in params:
            expected = sum(backward(pair, pair.label, params)[name] for pair in batch) / len(batch)
            np.testing.assert_allclose(grads[name], expected, atol=1e-12)


if __name__ == '__main__':
    unittest.main()
