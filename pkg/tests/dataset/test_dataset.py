import math
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from iris_graph.dataset import (
    CorpusManifest,
    DatasetBuilder,
    GraphPair,
    PaddedGraph,
    filter_by_node_cap,
    load_dataset,
    load_manifest,
    make_pairs,
    pad_graph,
    resolve_paths,
    retention_curve,
    save_dataset,
    save_manifest,
    split_corpus,
    split_graphs,
    split_sizes,
)
from iris_graph.exceptions import (
    ConfigurationException,
    DatasetFormatException,
    InsufficientDataException,
    NodeCapExceededException,
)
from iris_graph.graph_extract import FEATURE_DIM, BBox, ComponentNode, IrisGraph, SourceId

load_dotenv()


def make_graph(user, n_nodes, index=0, edges=None):
    nodes = [
        ComponentNode(bin=1, bbox=BBox(i, i, i, i), pixel_count=1, features=tuple([(i + 1) / 100] * FEATURE_DIM))
        for i in range(n_nodes)
    ]
    return IrisGraph(nodes=nodes, edges=edges or [], image_dims=(10, 10), source_id=SourceId(user, '', index))


def make_manifest(images_per_user, seed=0):
    rows = []
    for user, count in images_per_user.items():
        for i in range(count):
            rows.append({'user_id': user, 'image_path': f'{user}/{i}.pgm', 'mask_path': '', 'distance_m': 4.0})
    return CorpusManifest(pd.DataFrame(rows), seed)


class TestManifest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_save_and_load(self):
        manifest = make_manifest({'u1': 3, 'u2': 2}, seed=9)
        path = os.path.join(self.tmp, 'manifest.csv')
        save_manifest(manifest, path)

        loaded = load_manifest(path, seed=9)
        self.assertEqual(loaded.users, ['u1', 'u2'])
        self.assertEqual(len(loaded), 5)
        self.assertEqual(loaded.entries['image_path'].tolist(), manifest.entries['image_path'].tolist())
        self.assertEqual(loaded.entries['mask_path'].tolist(), [''] * 5)

    def test_missing_column(self):
        with self.assertRaises(DatasetFormatException):
            CorpusManifest(pd.DataFrame({'user_id': ['u'], 'image_path': ['a.pgm']}))

    def test_empty_user(self):
        frame = pd.DataFrame({'user_id': [' '], 'image_path': ['a.pgm'], 'mask_path': [''], 'distance_m': [4]})
        with self.assertRaises(DatasetFormatException):
            CorpusManifest(frame)

    def test_duplicate_paths(self):
        frame = pd.DataFrame({'user_id': ['u', 'v'], 'image_path': ['a.pgm'] * 2, 'mask_path': [''] * 2, 'distance_m': [4, 4]})
        with self.assertRaises(DatasetFormatException):
            CorpusManifest(frame)

    def test_resolve_paths(self):
        frame = pd.DataFrame({
            'user_id': ['u', 'u'],
            'image_path': ['a.pgm', '/abs/b.pgm'],
            'mask_path': ['m.pgm', ''],
            'distance_m': [4, 4],
        })
        resolved = resolve_paths(CorpusManifest(frame), '/data')
        self.assertEqual(resolved.entries['image_path'].tolist(), [os.path.join('/data', 'a.pgm'), '/abs/b.pgm'])
        self.assertEqual(resolved.entries['mask_path'].tolist(), [os.path.join('/data', 'm.pgm'), ''])


class TestSplit(unittest.TestCase):
    def test_split_sizes(self):
        self.assertEqual(split_sizes(20), (12, 4, 4))
        self.assertEqual(split_sizes(23), (14, 5, 4))
        self.assertEqual(split_sizes(5), (3, 1, 1))

    def test_split_is_a_partition_per_user(self):
        manifest = make_manifest({'u1': 20, 'u2': 23, 'u3': 5})
        train, val, test = split_corpus(manifest, seed=4)

        paths = [set(part.entries['image_path']) for part in (train, val, test)]
        self.assertFalse(paths[0] & paths[1] or paths[0] & paths[2] or paths[1] & paths[2])
        self.assertEqual(set.union(*paths), set(manifest.entries['image_path']))

        for part in (train, val, test):
            self.assertEqual(part.users, ['u1', 'u2', 'u3'])

        counts = train.entries.groupby('user_id').size()
        self.assertEqual(counts.to_dict(), {'u1': 12, 'u2': 14, 'u3': 3})

    def test_split_is_deterministic(self):
        manifest = make_manifest({'u1': 10, 'u2': 10})
        first = split_corpus(manifest, seed=1)
        second = split_corpus(manifest, seed=1)
        other = split_corpus(manifest, seed=2)

        for a, b in zip(first, second):
            self.assertEqual(a.entries['image_path'].tolist(), b.entries['image_path'].tolist())
        self.assertNotEqual(
            [part.entries['image_path'].tolist() for part in first],
            [part.entries['image_path'].tolist() for part in other],
        )

    def test_nested_user_sets_split_the_same_way(self):
        manifest = make_manifest({f'u{i}': 12 for i in range(6)})
        small = split_corpus(manifest.select_users(['u0', 'u1', 'u2']), seed=3)
        large = split_corpus(manifest, seed=3)

        for small_part, large_part in zip(small, large):
            subset = large_part.entries[large_part.entries['user_id'].isin(['u0', 'u1', 'u2'])]
            self.assertEqual(small_part.entries['image_path'].tolist(), subset['image_path'].tolist())

    def test_too_few_images(self):
        with self.assertRaises(InsufficientDataException):
            split_corpus(make_manifest({'u1': 10, 'u2': 4}))

    def test_bad_ratios(self):
        with self.assertRaises(ConfigurationException):
            split_corpus(make_manifest({'u1': 10}), ratios=(0.5, 0.5, 0.5))

    def test_split_graphs(self):
        graphs = [make_graph(user, 2, i) for user in ('a', 'b') for i in range(10)]
        splits = split_graphs(graphs, seed=5)

        self.assertEqual(sorted(splits), ['test', 'train', 'val'])
        self.assertEqual([len(splits[name]) for name in ('train', 'val', 'test')], [12, 4, 4])
        self.assertEqual(sum(len(part) for part in splits.values()), len(graphs))


class TestNodeCap(unittest.TestCase):
    def test_filter(self):
        graphs = [make_graph('u', n) for n in (50, 100, 150)]
        kept, removed = filter_by_node_cap(graphs, 100)
        self.assertEqual([g.n_nodes for g in kept], [50, 100])
        self.assertEqual(removed, 1)

    def test_invalid_cap(self):
        with self.assertRaises(ConfigurationException):
            filter_by_node_cap([], 0)

    def test_retention_curve(self):
        curve = retention_curve({'none': [make_graph('u', n) for n in (50, 100, 150, 200)]}, [100, 200])
        self.assertEqual(curve['used'].tolist(), [2, 4])
        self.assertEqual(curve['removed'].tolist(), [2, 0])
        self.assertEqual(curve['retention'].tolist(), [0.5, 1.0])
        self.assertEqual(curve['filter'].tolist(), ['none', 'none'])


class TestPadding(unittest.TestCase):
    def test_pad(self):
        graph = make_graph('u', 2, edges=[(0, 1, 2 * math.sqrt(2))])
        padded = pad_graph(graph, 4)

        self.assertEqual(padded.n, 4)
        self.assertEqual(padded.real_nodes, 2)
        self.assertEqual(padded.label_user, 'u')
        self.assertAlmostEqual(padded.adjacency[0, 1], 2.828, places=3)
        self.assertAlmostEqual(padded.adjacency[1, 0], 2.828, places=3)
        self.assertTrue((padded.adjacency[2:] == 0).all() and (padded.adjacency[:, 2:] == 0).all())
        self.assertTrue((padded.features[2:] == 0).all())
        np.testing.assert_array_equal(padded.features[:2], graph.feature_matrix())

    def test_zero_weight_edge_is_kept_in_connectivity(self):
        padded = pad_graph(make_graph('u', 2, edges=[(0, 1, 0.0)]), 3)
        self.assertEqual(padded.adjacency[0, 1], 0.0)
        self.assertTrue(padded.connectivity[0, 1] and padded.connectivity[1, 0])

    def test_graph_over_cap(self):
        with self.assertRaises(NodeCapExceededException):
            pad_graph(make_graph('u', 5), 4)


class TestPairs(unittest.TestCase):
    def padded(self, users_and_counts, cap=3):
        return [pad_graph(make_graph(user, 2, i), cap) for user, count in users_and_counts for i in range(count)]

    def test_balanced_pairs(self):
        graphs = self.padded([('a', 3), ('b', 3)])
        pairs = make_pairs(graphs, seed=0)

        labels = [pair.label for pair in pairs]
        self.assertEqual(labels.count(1), 6)
        self.assertEqual(labels.count(0), 6)
        for pair in pairs:
            self.assertEqual(pair.label, int(pair.a.label_user == pair.b.label_user))

    def test_positive_pairs_are_unordered_and_unique(self):
        graphs = self.padded([('a', 4), ('b', 2), ('c', 3)])
        positives = [(id(p.a), id(p.b)) for p in make_pairs(graphs) if p.label == 1]
        self.assertEqual(len(positives), 6 + 1 + 3)
        self.assertEqual(len({frozenset(p) for p in positives}), len(positives))

    def test_negatives_without_replacement_per_graph(self):
        graphs = self.padded([('a', 3), ('b', 3)])
        pairs = make_pairs(graphs, seed=1)
        first_negatives = [id(p.b) for p in pairs if p.label == 0 and p.a is graphs[0]]
        self.assertEqual(len(first_negatives), 2)
        self.assertEqual(len(set(first_negatives)), 2)

    def test_fallback_to_replacement(self):
        graphs = self.padded([('a', 4), ('b', 1)])
        with self.assertLogs('iris_graph.dataset', level='WARNING'):
            pairs = make_pairs(graphs, seed=2)
        labels = [pair.label for pair in pairs]
        self.assertEqual(labels.count(1), labels.count(0))

    def test_deterministic(self):
        graphs = self.padded([('a', 3), ('b', 3), ('c', 3)])
        first = [(id(p.a), id(p.b), p.label) for p in make_pairs(graphs, seed=3)]
        second = [(id(p.a), id(p.b), p.label) for p in make_pairs(graphs, seed=3)]
        self.assertEqual(first, second)

    def test_single_user(self):
        with self.assertRaises(InsufficientDataException):
            make_pairs(self.padded([('a', 3)]))

    def test_contradicting_label(self):
        graphs = self.padded([('a', 1), ('b', 1)])
        with self.assertRaises(DatasetFormatException):
            GraphPair(graphs[0], graphs[1], 1)


class TestDatasetContainer(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp)

    def test_round_trip(self):
        graphs = [
            pad_graph(make_graph('a', 3, 0, edges=[(0, 1, 1.5), (1, 2, 0.0)]), 5),
            pad_graph(make_graph('a', 2, 1, edges=[(0, 1, 2.0)]), 5),
            pad_graph(make_graph('b', 1, 0), 5),
            pad_graph(make_graph('b', 4, 1), 5),
        ]
        pairs = make_pairs(graphs, seed=0)
        path = os.path.join(self.tmp, 'train.irds')
        save_dataset(pairs, path, {'seed': 0, 'config': {'NODE_CAP': 5}})

        restored, provenance = load_dataset(path)
        self.assertEqual(provenance, {'seed': 0, 'config': {'NODE_CAP': 5}})
        self.assertEqual(len(restored), len(pairs))
        for original, loaded in zip(pairs, restored):
            self.assertEqual(original.label, loaded.label)
            for a, b in ((original.a, loaded.a), (original.b, loaded.b)):
                self.assertEqual((a.n, a.real_nodes, a.label_user), (b.n, b.real_nodes, b.label_user))
                np.testing.assert_array_equal(a.adjacency, b.adjacency)
                np.testing.assert_array_equal(a.connectivity, b.connectivity)
                np.testing.assert_array_equal(a.features, b.features)

        self.assertIs(restored[0].a, restored[1].a)

    def test_empty_dataset(self):
        path = os.path.join(self.tmp, 'empty.irds')
        save_dataset([], path, {})
        self.assertEqual(load_dataset(path), ([], {}))

    def test_bad_magic(self):
        path = os.path.join(self.tmp, 'bad.irds')
        with open(path, 'wb') as f:
            f.write(b'NOPE\x01\x00')
        with self.assertRaises(DatasetFormatException):
            load_dataset(path)


class TestDatasetBuilder(unittest.TestCase):
    def test_build(self):
        graphs_by_split = {
            'train': [make_graph(u, n, i) for u in ('a', 'b') for i, n in enumerate((1, 2, 3, 9))],
            'val': [make_graph(u, 2, i) for u in ('a', 'b') for i in range(2)],
        }
        builder = DatasetBuilder(NODE_CAP=4)
        pairs_by_split, used, removed = builder.build(graphs_by_split, seed=0)

        self.assertEqual(used, 10)
        self.assertEqual(removed, 2)
        self.assertEqual(sorted(pairs_by_split), ['train', 'val'])
        for pairs in pairs_by_split.values():
            self.assertTrue(all(isinstance(pair.a, PaddedGraph) and pair.a.n == 4 for pair in pairs))

        _, used, removed = builder.build(graphs_by_split, seed=0, node_cap=10)
        self.assertEqual((used, removed), (12, 0))


if __name__ == '__main__':
    unittest.main()
