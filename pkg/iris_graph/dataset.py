import os
import math
import zlib
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Hashable, List, Optional, Sequence, Text, Tuple

import numpy as np
import pandas as pd
from pandas import DataFrame

from .base import BaseComponent
from .exceptions import (
    ConfigurationException,
    DatasetFormatException,
    InsufficientDataException,
    NodeCapExceededException,
    ShapeMismatchException,
)
from .graph_extract import FEATURE_DIM, IrisGraph
from .serialization import Reader, Writer

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ['user_id', 'image_path', 'mask_path', 'distance_m']

DATASET_MAGIC = b'IRDS'
DATASET_VERSION = 1

SPLIT_NAMES = ('train', 'val', 'test')


@dataclass
class CorpusManifest:
    """
    One row per image with the columns of MANIFEST_COLUMNS, plus the seed used for splitting.
    """
    entries: DataFrame
    seed: int = 0

    def __post_init__(self):
        missing = [column for column in MANIFEST_COLUMNS if column not in self.entries.columns]
        if missing:
            raise DatasetFormatException(f"Manifest is missing column(s): {', '.join(missing)}.")

        entries = self.entries.reset_index(drop=True).copy()
        entries['user_id'] = entries['user_id'].astype(str).str.strip()
        entries['mask_path'] = entries['mask_path'].fillna('').astype(str)

        if (entries['user_id'] == '').any() or entries['user_id'].isin(['nan', 'None']).any():
            raise DatasetFormatException("Every manifest entry needs a non-empty user_id.")
        duplicated = entries['image_path'][entries['image_path'].duplicated()].tolist()
        if duplicated:
            raise DatasetFormatException(f"Duplicate image paths in manifest: {', '.join(map(str, duplicated[:5]))}.")

        self.entries = entries

    def __len__(self):
        return len(self.entries)

    @property
    def users(self) -> List[Text]:
        return sorted(self.entries['user_id'].unique().tolist())

    def select_users(self, users: Sequence[Text]) -> 'CorpusManifest':
        return CorpusManifest(self.entries[self.entries['user_id'].isin(list(users))], self.seed)


@dataclass(eq=False)
class PaddedGraph:
    """
    Fixed-size matrices of one graph. ``connectivity`` marks real edges, since a zero-weight edge
    (coincident centres) is otherwise indistinguishable from no edge in ``adjacency``.
    """
    n: int
    adjacency: np.ndarray
    features: np.ndarray
    real_nodes: int
    label_user: Text
    connectivity: np.ndarray = None

    def __post_init__(self):
        if self.connectivity is None:
            self.connectivity = self.adjacency != 0
        if self.adjacency.shape != (self.n, self.n) or self.connectivity.shape != (self.n, self.n):
            raise ShapeMismatchException(f"Adjacency must be {self.n}x{self.n}, got {self.adjacency.shape}.")
        if self.features.shape != (self.n, FEATURE_DIM):
            raise ShapeMismatchException(f"Features must be {self.n}x{FEATURE_DIM}, got {self.features.shape}.")
        if not 0 <= self.real_nodes <= self.n:
            raise NodeCapExceededException(f"real_nodes={self.real_nodes} does not fit a cap of {self.n}.")


@dataclass(eq=False)
class GraphPair:
    a: PaddedGraph
    b: PaddedGraph
    label: int = field(default=None)

    def __post_init__(self):
        same_user = int(self.a.label_user == self.b.label_user)
        if self.label is None:
            self.label = same_user
        elif int(self.label) != same_user:
            raise DatasetFormatException(
                f"Pair label {self.label} contradicts users {self.a.label_user!r} / {self.b.label_user!r}."
            )
        self.label = int(self.label)


def load_manifest(path: Text, seed: int = 0) -> CorpusManifest:
    """
    Read a manifest CSV with header user_id,image_path,mask_path,distance_m.

    :param path: the CSV file.
    :param seed: the split seed carried by the manifest.
    :return: the CorpusManifest. Relative image and mask paths are kept as written.
    """
    frame = pd.read_csv(path, dtype={'user_id': str, 'image_path': str, 'mask_path': str}, keep_default_na=False)
    return CorpusManifest(frame, seed)


def save_manifest(manifest: CorpusManifest, path: Text) -> None:
    columns = MANIFEST_COLUMNS + [column for column in manifest.entries.columns if column not in MANIFEST_COLUMNS]
    manifest.entries[columns].to_csv(path, index=False)


def resolve_paths(manifest: CorpusManifest, base_dir: Text) -> CorpusManifest:
    """
    Make relative image and mask paths relative to ``base_dir`` (usually the manifest's own directory).
    """
    entries = manifest.entries.copy()
    for column in ('image_path', 'mask_path'):
        entries[column] = [
            path if not path or os.path.isabs(path) else os.path.join(base_dir, path)
            for path in entries[column].astype(str)
        ]
    return CorpusManifest(entries, manifest.seed)


def _user_rng(seed: int, user: Text) -> np.random.Generator:
    # keyed per user so a user splits the same way whichever other users are selected
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(user.encode('utf-8'))])


def split_sizes(n_images: int, ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> Tuple[int, int, int]:
    """
    Per-user split sizes: train takes the ceiling of its share, validation the ceiling of its share
    (capped so that test keeps at least one image), test takes the remainder.
    """
    train_ratio, val_ratio, _ = (Fraction(r).limit_denominator(1000) for r in ratios)
    train = min(math.ceil(n_images * train_ratio), n_images)
    val = max(min(math.ceil(n_images * val_ratio), n_images - train - 1), 0)
    return train, val, n_images - train - val


def split_corpus(manifest: CorpusManifest, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: Optional[int] = None, min_images: int = 5) -> Tuple[CorpusManifest, CorpusManifest, CorpusManifest]:
    """
    Split every user's images into train, validation and test, so that all users appear in all three.

    :param manifest: the corpus to split.
    :param ratios: the train, validation and test fractions; they must sum to 1.
    :param seed: the split seed. If not provided, the manifest seed is used.
    :param min_images: the minimum number of images per user.
    :return: the train, validation and test manifests.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationException(f"Split ratios must be three non-negative fractions summing to 1, got {ratios}.")

    seed = manifest.seed if seed is None else seed
    counts = manifest.entries.groupby('user_id').size()
    too_few = counts[counts < min_images]
    if not too_few.empty:
        listing = ', '.join(f"{user} ({count})" for user, count in too_few.items())
        raise InsufficientDataException(f"Users with fewer than {min_images} images: {listing}.")

    parts = ([], [], [])
    for user in manifest.users:
        rows = manifest.entries.index[manifest.entries['user_id'] == user].to_numpy()
        rows = rows[_user_rng(seed, user).permutation(rows.size)]
        train, val, _ = split_sizes(rows.size, ratios)
        parts[0].extend(rows[:train])
        parts[1].extend(rows[train:train + val])
        parts[2].extend(rows[train + val:])

    return tuple(CorpusManifest(manifest.entries.loc[sorted(part)], seed) for part in parts)


def split_graphs(graphs: Sequence[IrisGraph], ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0, min_images: int = 5) -> Dict[Text, List[IrisGraph]]:
    """
    Split already extracted graphs by user with the same rule as split_corpus.

    :param graphs: graphs carrying their source user in source_id.
    :return: the graphs of the 'train', 'val' and 'test' splits, in input order.
    """
    frame = DataFrame({
        'user_id': [graph.source_id.user for graph in graphs],
        'image_path': [str(i) for i in range(len(graphs))],
        'mask_path': '',
        'distance_m': np.nan,
    })
    parts = split_corpus(CorpusManifest(frame, seed), ratios, seed, min_images)
    return {name: [graphs[int(key)] for key in part.entries['image_path']] for name, part in zip(SPLIT_NAMES, parts)}


def filter_by_node_cap(graphs: Sequence[IrisGraph], cap: int) -> Tuple[List[IrisGraph], int]:
    """
    Keep the graphs with at most ``cap`` nodes.

    :param graphs: the graphs to filter.
    :param cap: the node cap N.
    :return: the kept graphs (in input order) and the number removed.
    """
    if cap <= 0:
        raise ConfigurationException(f"The node cap must be positive, got {cap}.")

    kept = [graph for graph in graphs if graph.n_nodes <= cap]
    removed = len(graphs) - len(kept)
    logger.info(f"Node cap {cap}: kept {len(kept)}, removed {removed} ({retention(len(kept), removed):.2%} retained).")
    return kept, removed


def retention(used: int, removed: int) -> float:
    total = used + removed
    return used / total if total else 0.0


def retention_curve(graphs_by_filter: Dict[Hashable, Sequence[IrisGraph]], node_caps: Sequence[int]) -> DataFrame:
    """
    Share of graphs surviving each node cap, per filter setting.

    :param graphs_by_filter: the extracted graphs keyed by filter label (e.g. 'none', '1/7').
    :param node_caps: the node caps to evaluate.
    :return: a DataFrame with columns filter, cap, used, removed, retention.
    """
    rows = []
    for label, graphs in graphs_by_filter.items():
        sizes = np.array([graph.n_nodes for graph in graphs], dtype=np.int64)
        for cap in node_caps:
            used = int((sizes <= cap).sum())
            rows.append({'filter': str(label), 'cap': int(cap), 'used': used,
                         'removed': int(sizes.size - used), 'retention': retention(used, int(sizes.size - used))})
    return DataFrame(rows, columns=['filter', 'cap', 'used', 'removed', 'retention'])


def pad_graph(iris_graph: IrisGraph, cap: int) -> PaddedGraph:
    """
    Pad a graph to ``cap`` nodes with zero rows and columns.

    :param iris_graph: the graph to pad; its node count must not exceed cap.
    :param cap: the node cap N.
    :return: the PaddedGraph with edge weights in the adjacency matrix.
    """
    if iris_graph.n_nodes > cap:
        raise NodeCapExceededException(
            f"Graph {iris_graph.source_id} has {iris_graph.n_nodes} nodes, more than the cap of {cap}; filter first."
        )

    adjacency = np.zeros((cap, cap), dtype=np.float64)
    connectivity = np.zeros((cap, cap), dtype=bool)
    for i, j, weight in iris_graph.edges:
        adjacency[i, j] = adjacency[j, i] = weight
        connectivity[i, j] = connectivity[j, i] = True

    features = np.zeros((cap, FEATURE_DIM), dtype=np.float64)
    features[:iris_graph.n_nodes] = iris_graph.feature_matrix()

    return PaddedGraph(
        n=cap,
        adjacency=adjacency,
        features=features,
        real_nodes=iris_graph.n_nodes,
        label_user=iris_graph.source_id.user,
        connectivity=connectivity,
    )


def make_pairs(split_graphs: Sequence[PaddedGraph], seed: int = 0) -> List[GraphPair]:
    """
    Pair every graph with all other graphs of the same user (unordered, once) and with as many randomly chosen
    graphs of other users.

    Each positive pair is credited to its earlier graph; that graph then draws the same number of negatives
    without replacement from the other users' graphs.

    :param split_graphs: the padded graphs of one split.
    :param seed: the sampling seed.
    :return: the pairs; positives and negatives come out in equal number.
    """
    users = [graph.label_user for graph in split_graphs]
    if len(set(users)) < 2:
        raise InsufficientDataException("Pair generation needs graphs of at least two users.")

    by_user: Dict[Text, List[int]] = {}
    for index, user in enumerate(users):
        by_user.setdefault(user, []).append(index)

    for user, indices in by_user.items():
        if len(indices) < 2:
            logger.warning(f"User {user} has a single graph in this split and contributes no positive pairs.")

    rng = np.random.default_rng(seed)
    user_array = np.array(users, dtype=object)
    pairs = []
    fallbacks = 0

    for anchor, user in enumerate(users):
        partners = [j for j in by_user[user] if j > anchor]
        if not partners:
            continue

        pairs.extend(GraphPair(split_graphs[anchor], split_graphs[j], 1) for j in partners)

        pool = np.flatnonzero(user_array != user)
        replace = pool.size < len(partners)
        fallbacks += int(replace)
        for j in rng.choice(pool, size=len(partners), replace=replace):
            pairs.append(GraphPair(split_graphs[anchor], split_graphs[int(j)], 0))

    if fallbacks:
        logger.warning(f"{fallbacks} graph(s) had fewer other-user graphs than needed; negatives drawn with replacement.")
    return pairs


def save_dataset(pairs: Sequence[GraphPair], path: Text, provenance: Optional[Dict] = None) -> None:
    """
    Write pairs to a versioned container. Every distinct padded graph is stored once (real rows only, edges sparse);
    pairs refer to graphs by index.

    :param pairs: the pairs to store.
    :param path: the destination file.
    :param provenance: the resolved run configuration and tool version to embed.
    """
    table: List[PaddedGraph] = []
    positions: Dict[int, int] = {}
    indices = []
    for pair in pairs:
        for graph in (pair.a, pair.b):
            if id(graph) not in positions:
                positions[id(graph)] = len(table)
                table.append(graph)
        indices.append((positions[id(pair.a)], positions[id(pair.b)], pair.label))

    writer = Writer().raw(DATASET_MAGIC).pack('H', DATASET_VERSION).json(provenance or {})
    writer.pack('I', len(table))
    for graph in table:
        rows, cols = np.nonzero(np.triu(graph.connectivity, k=1))
        writer.string(graph.label_user).pack('III', graph.n, graph.real_nodes, rows.size)
        writer.array(graph.features[:graph.real_nodes], '<f8')
        writer.array(np.column_stack((rows, cols)), '<u4')
        writer.array(graph.adjacency[rows, cols], '<f8')

    writer.pack('I', len(indices))
    writer.array(np.array(indices, dtype=np.uint32).reshape(-1, 3), '<u4')

    with open(path, 'wb') as f:
        f.write(writer.getvalue())


def load_dataset(path: Text) -> Tuple[List[GraphPair], Dict]:
    """
    Read a dataset container written by save_dataset.

    :param path: the container file.
    :return: the pairs, sharing graph objects as they were stored, and the embedded provenance dict.
    """
    with open(path, 'rb') as f:
        reader = Reader(f.read())

    reader.header(DATASET_MAGIC, DATASET_VERSION)
    provenance = reader.json()

    table = []
    for _ in range(reader.unpack('I')):
        label_user = reader.string()
        n, real_nodes, n_edges = reader.unpack('III')
        if real_nodes > n:
            raise DatasetFormatException(f"Graph of user {label_user} claims {real_nodes} real nodes in a cap of {n}.")

        features = np.zeros((n, FEATURE_DIM), dtype=np.float64)
        features[:real_nodes] = reader.array(real_nodes * FEATURE_DIM, np.dtype('<f8')).reshape(real_nodes, FEATURE_DIM)
        endpoints = reader.array(n_edges * 2, np.dtype('<u4')).reshape(n_edges, 2).astype(np.int64)
        weights = reader.array(n_edges, np.dtype('<f8'))
        if n_edges and endpoints.max() >= real_nodes:
            raise DatasetFormatException(f"Graph of user {label_user} has an edge beyond its real nodes.")

        adjacency = np.zeros((n, n), dtype=np.float64)
        connectivity = np.zeros((n, n), dtype=bool)
        adjacency[endpoints[:, 0], endpoints[:, 1]] = weights
        adjacency[endpoints[:, 1], endpoints[:, 0]] = weights
        connectivity[endpoints[:, 0], endpoints[:, 1]] = True
        connectivity[endpoints[:, 1], endpoints[:, 0]] = True

        table.append(PaddedGraph(n, adjacency, features, real_nodes, label_user, connectivity))

    n_pairs = reader.unpack('I')
    triples = reader.array(n_pairs * 3, np.dtype('<u4')).reshape(n_pairs, 3)
    if not reader.at_end():
        raise DatasetFormatException(f"Trailing bytes after the pair table in {path}.")
    if n_pairs and triples[:, :2].max() >= len(table):
        raise DatasetFormatException("A pair refers to a graph outside the graph table.")

    pairs = [GraphPair(table[a], table[b], int(label)) for a, b, label in triples]
    return pairs, provenance


class DatasetBuilder(BaseComponent):
    """
    Node-cap filtering, padding and pairing of the graphs of each split.
    """

    def __init__(self, config=None, **overrides):
        super().__init__(config, **overrides)
        self.node_cap = int(self.config['NODE_CAP'])

    def build(self, graphs_by_split: Dict[Text, Sequence[IrisGraph]], seed: int, node_cap: Optional[int] = None) -> Tuple[Dict[Text, List[GraphPair]], int, int]:
        """
        Build the pair sets of every split.

        :param graphs_by_split: the usable graphs of each split, keyed by split name.
        :param seed: the pairing seed; each split derives its own stream from it.
        :param node_cap: the node cap N. If not provided, NODE_CAP from the configuration is used.
        :return: the pairs per split, the number of graphs used and the number removed by the cap.
        """
        node_cap = self._config_value('NODE_CAP', node_cap)
        pairs_by_split = {}
        used = removed = 0

        for offset, (name, graphs) in enumerate(graphs_by_split.items()):
            kept, dropped = filter_by_node_cap(graphs, node_cap)
            used += len(kept)
            removed += dropped
            padded = [pad_graph(graph, node_cap) for graph in kept]
            pairs_by_split[name] = make_pairs(padded, seed + offset)
            self.logger.info(f"Split {name}: {len(padded)} graph(s), {len(pairs_by_split[name])} pair(s).")

        return pairs_by_split, used, removed
