import math
import logging
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Iterable, List, NamedTuple, Optional, Sequence, Text, Tuple

import numpy as np
import pandas as pd
from pandas import DataFrame
from scipy import ndimage

from .base import BaseComponent
from .exceptions import ConfigurationException
from .imaging import EIGHT_CONNECTED, Image

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    'size_ratio_image',
    'size_ratio_bbox',
    'center_x_norm',
    'center_y_norm',
    'height_norm',
    'width_norm',
    'components_in_bin_norm',
)
FEATURE_DIM = len(FEATURE_NAMES)


class SourceId(NamedTuple):
    user: Text = ''
    session: Text = ''
    index: int = 0


class BBox(NamedTuple):
    """
    Inclusive pixel rectangle.
    """
    min_row: int
    min_col: int
    max_row: int
    max_col: int

    @property
    def height(self) -> int:
        return self.max_row - self.min_row + 1

    @property
    def width(self) -> int:
        return self.max_col - self.min_col + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def center(self) -> Tuple[float, float]:
        return (self.min_row + self.max_row) / 2.0, (self.min_col + self.max_col) / 2.0

    def intersects(self, other: 'BBox') -> bool:
        return (self.min_row <= other.max_row and other.min_row <= self.max_row
                and self.min_col <= other.max_col and other.min_col <= self.max_col)


@dataclass(frozen=True)
class DiscretizedImage:
    bin_index: np.ndarray
    delta: int

    @property
    def bins(self) -> int:
        return bin_count(self.delta)

    @property
    def values(self) -> np.ndarray:
        return self.bin_index * self.delta

    @property
    def width(self) -> int:
        return self.bin_index.shape[1]

    @property
    def height(self) -> int:
        return self.bin_index.shape[0]


@dataclass(frozen=True)
class ComponentNode:
    bin: int
    bbox: BBox
    pixel_count: int
    features: Tuple[float, ...]


@dataclass
class IrisGraph:
    nodes: List[ComponentNode]
    edges: List[Tuple[int, int, float]]
    image_dims: Tuple[int, int]
    source_id: SourceId = field(default_factory=SourceId)
    delta: int = 20

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def usable(self) -> bool:
        return len(self.nodes) > 0

    def feature_matrix(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, FEATURE_DIM))
        return np.array([node.features for node in self.nodes], dtype=np.float64)


def bin_count(delta: int) -> int:
    return math.ceil(255 / delta)


def _check_delta(delta: int) -> int:
    if not isinstance(delta, (int, np.integer)) or not 1 <= delta <= 255:
        raise ConfigurationException(f"The bin width must be an integer in [1, 255], got {delta!r}.")
    return int(delta)


def discretize(image: Image, delta: int = 20) -> DiscretizedImage:
    """
    Group intensities into bins of width delta; the last bin absorbs the values up to 255.

    :param image: a preprocessed Image.
    :param delta: the bin width.
    :return: the DiscretizedImage holding one bin index per pixel.
    """
    delta = _check_delta(delta)
    bins = bin_count(delta)
    bin_index = np.minimum(image.pixels.astype(np.int64) // delta, bins - 1)
    return DiscretizedImage(bin_index=bin_index, delta=delta)


def binarize(disc: DiscretizedImage) -> List[np.ndarray]:
    """
    One binary image per bin 1..B-1; bin 0 is excluded.
    """
    return [disc.bin_index == b for b in range(1, disc.bins)]


def connected_components(binary_image: np.ndarray) -> List[Tuple[BBox, int]]:
    """
    Label the 8-connected regions of a binary image.

    :param binary_image: a 2-D boolean array.
    :return: a list of (BBox, pixel_count) ordered by (min_row, min_col, pixel_count).
    """
    labels, count = ndimage.label(binary_image, structure=EIGHT_CONNECTED)
    if count == 0:
        return []

    pixel_counts = np.bincount(labels.ravel(), minlength=count + 1)
    components = []
    for index, (rows, cols) in enumerate(ndimage.find_objects(labels), start=1):
        bbox = BBox(rows.start, cols.start, rows.stop - 1, cols.stop - 1)
        components.append((bbox, int(pixel_counts[index])))

    components.sort(key=lambda item: (item[0].min_row, item[0].min_col, item[1], item[0].max_row, item[0].max_col))
    return components


def component_features(bbox: BBox, pixel_count: int, components_in_bin: int, image_dims: Tuple[int, int], bin_cap: int = 64) -> Tuple[float, ...]:
    """
    The seven node features, in the order of FEATURE_NAMES.

    Centres use the pixel-centre convention ((min + max) / 2 + 0.5) so that they fall in (0, 1] once divided by the
    image dimension. The number of components in the bin is clamped to bin_cap and divided by it.

    :param bbox: the bounding box of the component.
    :param pixel_count: the number of pixels of the component.
    :param components_in_bin: how many components the same bin produced.
    :param image_dims: (width, height) of the image.
    :param bin_cap: the normalization cap for components_in_bin.
    :return: a tuple of seven floats.
    """
    width, height = image_dims
    center_row, center_col = bbox.center

    return (
        pixel_count / (width * height),
        pixel_count / bbox.area,
        (center_col + 0.5) / width,
        (center_row + 0.5) / height,
        bbox.height / height,
        bbox.width / width,
        min(components_in_bin, bin_cap) / bin_cap,
    )


def build_edges(nodes: Sequence[ComponentNode]) -> List[Tuple[int, int, float]]:
    """
    Connect every pair of nodes whose bounding boxes intersect (shared edges and corners count), in any bin.

    Nodes are swept in order of min_row; for each node only the nodes starting at or above its max_row are
    tested on the column axis.

    :param nodes: the nodes of one image.
    :return: edges (i, j, weight) with i < j, sorted, weight being the Euclidean distance of the bbox centres.
    """
    if len(nodes) < 2:
        return []

    boxes = np.array([node.bbox for node in nodes], dtype=np.int64)
    min_row, min_col, max_row, max_col = boxes.T
    centers = np.column_stack(((min_row + max_row) / 2.0, (min_col + max_col) / 2.0))

    order = np.argsort(min_row, kind='stable')
    sorted_min_row = min_row[order]

    pairs = []
    for position, i in enumerate(order):
        stop = np.searchsorted(sorted_min_row, max_row[i], side='right')
        candidates = order[position + 1:stop]
        if candidates.size == 0:
            continue
        hits = candidates[(min_col[candidates] <= max_col[i]) & (min_col[i] <= max_col[candidates])]
        for j in hits:
            pairs.append((min(i, j), max(i, j)))

    pairs.sort()
    edges = []
    for i, j in pairs:
        weight = float(np.hypot(*(centers[i] - centers[j])))
        edges.append((int(i), int(j), weight))
    return edges


def extract_graph(image: Image, delta: int = 20, source_id: Optional[SourceId] = None, bin_cap: int = 64) -> IrisGraph:
    """
    Convert a preprocessed image into an attributed weighted graph.

    :param image: a preprocessed Image.
    :param delta: the bin width used for discretization.
    :param source_id: the (user, session, index) the image came from.
    :param bin_cap: the normalization cap for the components-in-bin feature.
    :return: the IrisGraph. An image without any component gives an empty graph, flagged unusable.
    """
    disc = discretize(image, delta)
    dims = (image.width, image.height)

    nodes = []
    for b, binary in enumerate(binarize(disc), start=1):
        components = connected_components(binary)
        for bbox, pixel_count in components:
            features = component_features(bbox, pixel_count, len(components), dims, bin_cap)
            nodes.append(ComponentNode(bin=b, bbox=bbox, pixel_count=pixel_count, features=features))

    graph = IrisGraph(
        nodes=nodes,
        edges=build_edges(nodes),
        image_dims=dims,
        source_id=source_id or SourceId(),
        delta=disc.delta,
    )

    if not graph.usable:
        logger.debug(f"Image {graph.source_id} produced no components; graph flagged unusable.")
    return graph


def node_count_histogram(graphs: Iterable[IrisGraph], bin_width: int = 50) -> DataFrame:
    """
    Histogram of node counts with columns bin_start, bin_end and count.
    """
    counts = np.array([graph.n_nodes for graph in graphs], dtype=np.int64)
    if counts.size == 0:
        return DataFrame({'bin_start': [], 'bin_end': [], 'count': []}, dtype=np.int64)

    starts = np.arange(0, counts.max() // bin_width * bin_width + 1, bin_width)
    totals = np.bincount(counts // bin_width, minlength=starts.size)
    return DataFrame({'bin_start': starts, 'bin_end': starts + bin_width - 1, 'count': totals})


def export_debug_text(graph: IrisGraph) -> Text:
    """
    A human readable dump: a feature table followed by the edge list.
    """
    header = f"# graph {graph.source_id.user}/{graph.source_id.session}/{graph.source_id.index} " \
             f"dims={graph.image_dims[0]}x{graph.image_dims[1]} delta={graph.delta} " \
             f"nodes={graph.n_nodes} edges={len(graph.edges)}"

    table = pd.DataFrame(
        [
            {'node': i, 'bin': node.bin, 'bbox': tuple(node.bbox), 'pixels': node.pixel_count,
             **dict(zip(FEATURE_NAMES, node.features))}
            for i, node in enumerate(graph.nodes)
        ],
        columns=['node', 'bin', 'bbox', 'pixels', *FEATURE_NAMES],
    )
    edges = '\n'.join(f"{i} {j} {weight:.6f}" for i, j, weight in graph.edges)

    return f"{header}\n# nodes\n{table.to_string(index=False)}\n# edges (i j weight)\n{edges}\n"


def _extract_job(args) -> IrisGraph:
    image, delta, source_id, bin_cap = args
    return extract_graph(image, delta, source_id, bin_cap)


class GraphExtractor(BaseComponent):
    def __init__(self, config=None, **overrides):
        super().__init__(config, **overrides)

        self.delta = _check_delta(int(self.config['DELTA']))
        self.bin_cap = int(self.config['FEATURE_BIN_CAP'])
        if self.bin_cap < 1:
            raise ConfigurationException(f"FEATURE_BIN_CAP must be positive, got {self.bin_cap}.")

    def extract(self, image: Image, source_id: Optional[SourceId] = None) -> IrisGraph:
        return extract_graph(image, self.delta, source_id, self.bin_cap)

    def extract_many(self, images: Sequence[Image], source_ids: Optional[Sequence[SourceId]] = None, jobs: int = 1) -> List[IrisGraph]:
        """
        Extract graphs from many images, optionally with a pool of worker processes.

        :param images: the preprocessed Images.
        :param source_ids: one SourceId per image. If not provided, empty ids are used.
        :param jobs: the number of worker processes. The output is identical for every value.
        :return: the graphs in input order.
        """
        source_ids = source_ids if source_ids is not None else [SourceId()] * len(images)
        tasks = [(image, self.delta, source_id, self.bin_cap) for image, source_id in zip(images, source_ids)]

        if jobs <= 1 or len(tasks) < 2:
            graphs = [_extract_job(task) for task in tasks]
        else:
            with Pool(processes=jobs) as pool:
                graphs = pool.map(_extract_job, tasks)

        unusable = sum(not graph.usable for graph in graphs)
        if unusable:
            self.logger.warning(f"{unusable} of {len(graphs)} image(s) produced no components and are unusable.")
        return graphs

    def extract_in_df(self, df: DataFrame, column: Text, jobs: int = 1) -> DataFrame:
        """
        Extract graphs from a column of preprocessed Images in a DataFrame.

        :param df: a pandas DataFrame containing the preprocessed Images.
        :param column: the name of the column containing the Images.
        :param jobs: the number of worker processes.
        :return: the DataFrame with the graphs added as a new column called 'graph' and their sizes as 'n_nodes'.
        """
        source_ids = None
        if 'user_id' in df.columns:
            sessions = df['session'].astype(str).tolist() if 'session' in df.columns else [''] * len(df)
            indices = df.groupby('user_id').cumcount().tolist()
            source_ids = [SourceId(str(user), session, int(index))
                          for user, session, index in zip(df['user_id'].tolist(), sessions, indices)]

        graphs = self.extract_many(df[column].tolist(), source_ids, jobs)
        df['graph'] = graphs
        df['n_nodes'] = [graph.n_nodes for graph in graphs]
        return df
