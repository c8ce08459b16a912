"""Street-network walk distances for service-area coverage"""
import io
import logging
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from services.errors import ConfigError, MalformedDocument
from services.geo import GeoPoint, LocalProjection, haversine_mi

logger = logging.getLogger(__name__)


class StreetGraph:
    """
    Undirected walking graph; points snap to their nearest node

    Network distance between two points is snap distance + shortest path +
    snap distance, all in miles.
    """

    def __init__(self, graph, points):
        self.graph = graph
        self.node_ids = sorted(points)
        self.points = [points[n] for n in self.node_ids]
        self.projection = LocalProjection(self.points[0])
        x, y = self.projection.project([p.lat for p in self.points], [p.lon for p in self.points])
        self._tree = cKDTree(np.column_stack([x, y]))

    @classmethod
    def from_csv(cls, nodes_path, edges_path):
        """nodes: node_id,lat,lon; edges: from,to[,length_mi] (missing lengths are great-circle)"""
        nodes = _read(nodes_path, ('node_id', 'lat', 'lon'))
        edges = _read(edges_path, ('from', 'to'))
        points = {}
        for row in nodes.itertuples(index=False):
            points[str(row.node_id)] = GeoPoint(float(row.lat), float(row.lon))
        if not points:
            raise ConfigError(f"{nodes_path}: street graph has no nodes")

        graph = nx.Graph()
        graph.add_nodes_from(points)
        for row in edges.to_dict('records'):
            a, b = str(row['from']), str(row['to'])
            if a not in points or b not in points:
                raise MalformedDocument(f"{edges_path}: edge {a}-{b} references an unknown node")
            length = row.get('length_mi')
            length = float(length) if length not in (None, '') and not pd.isna(length) \
                else haversine_mi(points[a], points[b])
            graph.add_edge(a, b, length=length)
        logger.info("street graph: %d nodes, %d edges", graph.number_of_nodes(), graph.number_of_edges())
        return cls(graph, points)

    def snap(self, point):
        """(node_id, distance_mi) of the nearest node"""
        x, y = self.projection.project_point(point)
        _, i = self._tree.query([x, y])
        return self.node_ids[i], haversine_mi(point, self.points[i])

    def distances_from(self, point, cutoff_mi):
        """Network distance from point to every node reachable within cutoff"""
        node, offset = self.snap(point)
        if offset > cutoff_mi:
            return {}
        lengths = nx.single_source_dijkstra_path_length(self.graph, node, cutoff=cutoff_mi - offset, weight='length')
        return {n: d + offset for n, d in lengths.items()}


def _read(path, columns):
    try:
        df = pd.read_csv(io.BytesIO(Path(path).read_bytes()), dtype={c: str for c in ('node_id', 'from', 'to')})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"cannot read street graph file {path}: {e}") from e
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise MalformedDocument(f"{path}: missing columns {missing}")
    return df
