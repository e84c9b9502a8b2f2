import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpsnet.graph import Graph, random_graph

settings.register_profile("gpsnet", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("gpsnet")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def connected_random_graph(n, p, seed, node_types=4, edge_types=3) -> Graph:
    """Random graph plus a spanning path, so every node has a neighbor."""
    r = np.random.default_rng(seed)
    g = random_graph(n, p, r, node_types, edge_types)
    extra = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    edges = np.unique(np.sort(np.concatenate([g.undirected_edges(), extra]), axis=1), axis=0)
    return Graph.from_edges(n, edges, g.node_feat, r.integers(0, edge_types, len(edges)),
                            float(r.normal()))
