"""
Little-endian binary records.

Graph record (magic ``IRGR``, version 1)::

    magic[4] version:u16
    user:str session:str index:u32          (str = u16 byte length + UTF-8)
    width:u32 height:u32 delta:u16
    n_nodes:u32 n_edges:u32
    n_nodes x (bin:u16 bbox:4*i32 pixel_count:u32 features:7*f64)
    n_edges x (i:u32 j:u32 weight:f64)

Graph archive (magic ``IRGA``, version 1)::

    magic[4] version:u16 provenance:json count:u32
    count x (length:u32 graph record)

``json`` is a u32 byte length followed by UTF-8 JSON.
"""
import json
import struct
from typing import Dict, List, Optional, Text, Tuple, Type

import numpy as np

from .exceptions import DatasetFormatException, IrisGraphException
from .graph_extract import FEATURE_DIM, BBox, ComponentNode, IrisGraph, SourceId

GRAPH_MAGIC = b'IRGR'
ARCHIVE_MAGIC = b'IRGA'
FORMAT_VERSION = 1

NODE_DTYPE = np.dtype([
    ('bin', '<u2'),
    ('bbox', '<i4', (4,)),
    ('pixel_count', '<u4'),
    ('features', '<f8', (FEATURE_DIM,)),
])
EDGE_DTYPE = np.dtype([
    ('i', '<u4'),
    ('j', '<u4'),
    ('weight', '<f8'),
])


class Writer:
    def __init__(self):
        self.parts = []

    def raw(self, data: bytes) -> 'Writer':
        self.parts.append(data)
        return self

    def pack(self, fmt: Text, *values) -> 'Writer':
        return self.raw(struct.pack('<' + fmt, *values))

    def string(self, value: Text) -> 'Writer':
        encoded = value.encode('utf-8')
        return self.pack('H', len(encoded)).raw(encoded)

    def json(self, value) -> 'Writer':
        encoded = json.dumps(value, sort_keys=True, default=str).encode('utf-8')
        return self.pack('I', len(encoded)).raw(encoded)

    def array(self, values: np.ndarray, dtype: np.dtype) -> 'Writer':
        return self.raw(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def getvalue(self) -> bytes:
        return b''.join(self.parts)


class Reader:
    def __init__(self, data: bytes, error: Type[IrisGraphException] = DatasetFormatException):
        self.data = data
        self.position = 0
        self.error = error

    def raw(self, size: int) -> bytes:
        if self.position + size > len(self.data):
            raise self.error(f"File is truncated: needed {size} byte(s) at offset {self.position}, {len(self.data) - self.position} left.")
        chunk = self.data[self.position:self.position + size]
        self.position += size
        return chunk

    def unpack(self, fmt: Text):
        fmt = '<' + fmt
        values = struct.unpack(fmt, self.raw(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def string(self) -> Text:
        return self.raw(self.unpack('H')).decode('utf-8')

    def json(self):
        try:
            return json.loads(self.raw(self.unpack('I')).decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise self.error(f"Unreadable provenance block: {e}")

    def array(self, count: int, dtype: np.dtype) -> np.ndarray:
        return np.frombuffer(self.raw(count * dtype.itemsize), dtype=dtype, count=count)

    def header(self, magic: bytes, version: int = FORMAT_VERSION) -> None:
        found = self.raw(len(magic))
        if found != magic:
            raise self.error(f"Bad magic bytes {found!r}, expected {magic!r}.")
        found_version = self.unpack('H')
        if found_version != version:
            raise self.error(f"Unsupported format version {found_version}, expected {version}.")

    def at_end(self) -> bool:
        return self.position == len(self.data)


def serialize_graph(graph: IrisGraph) -> bytes:
    nodes = np.zeros(graph.n_nodes, dtype=NODE_DTYPE)
    if graph.nodes:
        nodes['bin'] = [node.bin for node in graph.nodes]
        nodes['bbox'] = [tuple(node.bbox) for node in graph.nodes]
        nodes['pixel_count'] = [node.pixel_count for node in graph.nodes]
        nodes['features'] = [node.features for node in graph.nodes]

    edges = np.zeros(len(graph.edges), dtype=EDGE_DTYPE)
    if graph.edges:
        edges['i'], edges['j'], edges['weight'] = zip(*graph.edges)

    source = graph.source_id
    return (
        Writer()
        .raw(GRAPH_MAGIC).pack('H', FORMAT_VERSION)
        .string(source.user).string(source.session).pack('I', source.index)
        .pack('IIH', graph.image_dims[0], graph.image_dims[1], graph.delta)
        .pack('II', graph.n_nodes, len(graph.edges))
        .array(nodes, NODE_DTYPE)
        .array(edges, EDGE_DTYPE)
        .getvalue()
    )


def read_graph(reader: Reader) -> IrisGraph:
    reader.header(GRAPH_MAGIC)
    source_id = SourceId(reader.string(), reader.string(), reader.unpack('I'))
    width, height, delta = reader.unpack('IIH')
    n_nodes, n_edges = reader.unpack('II')

    nodes = [
        ComponentNode(
            bin=int(record['bin']),
            bbox=BBox(*(int(v) for v in record['bbox'])),
            pixel_count=int(record['pixel_count']),
            features=tuple(float(v) for v in record['features']),
        )
        for record in reader.array(n_nodes, NODE_DTYPE)
    ]
    edges = [(int(record['i']), int(record['j']), float(record['weight'])) for record in reader.array(n_edges, EDGE_DTYPE)]

    for i, j, _ in edges:
        if not (0 <= i < n_nodes and 0 <= j < n_nodes) or i == j:
            raise reader.error(f"Edge ({i}, {j}) does not join two distinct nodes of a {n_nodes}-node graph.")

    return IrisGraph(nodes=nodes, edges=edges, image_dims=(width, height), source_id=source_id, delta=delta)


def deserialize_graph(data: bytes) -> IrisGraph:
    reader = Reader(data)
    graph = read_graph(reader)
    if not reader.at_end():
        raise DatasetFormatException("Trailing bytes after the graph record.")
    return graph


def save_graph_archive(graphs: List[IrisGraph], path: Text, provenance: Optional[Dict] = None) -> None:
    """
    Write graphs to a versioned archive file.

    :param graphs: the graphs to store, in order.
    :param path: the destination file.
    :param provenance: the resolved run configuration and tool version to embed.
    """
    writer = Writer().raw(ARCHIVE_MAGIC).pack('H', FORMAT_VERSION).json(provenance or {}).pack('I', len(graphs))
    for graph in graphs:
        record = serialize_graph(graph)
        writer.pack('I', len(record)).raw(record)

    with open(path, 'wb') as f:
        f.write(writer.getvalue())


def load_graph_archive(path: Text) -> Tuple[List[IrisGraph], Dict]:
    """
    Read a graph archive.

    :param path: the archive file.
    :return: the graphs and the embedded provenance dict.
    """
    with open(path, 'rb') as f:
        reader = Reader(f.read())

    reader.header(ARCHIVE_MAGIC)
    provenance = reader.json()
    graphs = []
    for _ in range(reader.unpack('I')):
        graphs.append(deserialize_graph(reader.raw(reader.unpack('I'))))

    if not reader.at_end():
        raise DatasetFormatException(f"Trailing bytes after the last graph in {path}.")
    return graphs, provenance
