"""Graph containers, JSON-lines I/O, mini-batching and small synthetic graphs.

Undirected input is always stored as a symmetric arc list in CSR order: row
``u`` of the CSR structure lists the arcs ``(u, v)``. Edge features are
aligned with arc order, so ``edge_feat[k]`` belongs to arc
``(src[k], dst[k])``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised when a graph violates a structural invariant."""


class GraphParseError(GraphError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class SchemaError(GraphError):
    """Categorical feature index outside the dataset schema."""


@dataclass(frozen=True)
class Schema:
    name: str
    num_node_types: int | None = None
    num_edge_types: int | None = None


SCHEMAS = {
    "zinc": Schema("zinc", num_node_types=28, num_edge_types=3),
    "generic": Schema("generic"),
}


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable graph topology in CSR form with raw features.

    ``node_feat`` is either an int array of shape (N,) holding category
    indices or a float array of shape (N, D). ``edge_feat`` follows the same
    convention with one row per arc, or is None.
    """

    num_nodes: int
    offsets: np.ndarray
    indices: np.ndarray
    node_feat: np.ndarray
    edge_feat: np.ndarray | None = None
    y: object = None
    allow_self_loops: bool = False

    def __post_init__(self):
        for name in ("offsets", "indices", "node_feat", "edge_feat"):
            a = getattr(self, name)
            if a is not None:
                _freeze(a)
        self.validate()

    # -- construction ---------------------------------------------------
    @classmethod
    def from_edges(cls, num_nodes, edges, node_feat=None, edge_feat=None,
                   y=None, allow_self_loops=False) -> "Graph":
        """Build from an undirected edge list, each pair given once."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if node_feat is None:
            node_feat = np.zeros(num_nodes, dtype=np.int64)
        node_feat = np.asarray(node_feat)
        if edge_feat is not None:
            edge_feat = np.asarray(edge_feat)
            if len(edge_feat) != len(edges):
                raise GraphError("edge_feat length does not match edges")
            edge_feat = np.concatenate([edge_feat, edge_feat])
        arcs = np.concatenate([edges, edges[:, ::-1]])
        src, dst, ef = symmetrize(arcs[:, 0], arcs[:, 1], edge_feat)
        return cls.from_arcs(num_nodes, src, dst, node_feat, ef, y,
                             allow_self_loops=allow_self_loops)

    @classmethod
    def from_arcs(cls, num_nodes, src, dst, node_feat, edge_feat=None, y=None,
                  allow_self_loops=False) -> "Graph":
        """Build from arcs already sorted by (src, dst)."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if len(src) and (src.min() < 0 or src.max() >= num_nodes):
            raise GraphError("arc source index out of range")
        counts = np.bincount(src, minlength=num_nodes) if len(src) else np.zeros(num_nodes, np.int64)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return cls(num_nodes, offsets, dst.copy(), np.array(node_feat),
                   None if edge_feat is None else np.array(edge_feat), y,
                   allow_self_loops)

    # -- derived views --------------------------------------------------
    @property
    def num_arcs(self) -> int:
        return int(self.offsets[-1])

    @property
    def src(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_nodes), np.diff(self.offsets))

    @property
    def dst(self) -> np.ndarray:
        return self.indices

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.offsets[u]:self.offsets[u + 1]]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        np.add.at(a, (self.src, self.dst), 1.0)
        return a

    def undirected_edges(self) -> np.ndarray:
        """Edge list with each undirected pair once (u < v), in arc order."""
        s, d = self.src, self.dst
        keep = s < d
        return np.stack([s[keep], d[keep]], axis=1)

    def permute(self, perm) -> "Graph":
        """Relabel nodes: old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        s, d = perm[self.src], perm[self.dst]
        order = np.lexsort((d, s))
        nf = self.node_feat[inv]
        ef = None if self.edge_feat is None else self.edge_feat[order]
        y = self.y
        if isinstance(y, np.ndarray) and y.shape[:1] == (self.num_nodes,):
            y = y[inv]
        return Graph.from_arcs(self.num_nodes, s[order], d[order], nf, ef, y,
                               self.allow_self_loops)

    def validate(self) -> None:
        n = self.num_nodes
        off, idx = self.offsets, self.indices
        if off.shape != (n + 1,) or off[0] != 0:
            raise GraphError("offsets must have length N+1 and start at 0")
        if np.any(np.diff(off) < 0):
            raise GraphError("offsets must be nondecreasing")
        if off[-1] != len(idx):
            raise GraphError("last offset must equal the arc count")
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise GraphError("column index out of range")
        if len(self.node_feat) != n:
            raise GraphError("node_feat must have one row per node")
        if self.edge_feat is not None and len(self.edge_feat) != len(idx):
            raise GraphError("edge_feat must have one row per arc")
        src = self.src
        if not self.allow_self_loops and np.any(src == idx):
            raise GraphError("self-loop present but not flagged")
        # rows sorted by column, no duplicate arcs
        key = src * max(n, 1) + idx
        if np.any(np.diff(key) <= 0):
            raise GraphError("arcs must be sorted by (src, dst) without duplicates")

    def is_symmetric(self) -> bool:
        n = max(self.num_nodes, 1)
        fwd = self.src * n + self.dst
        rev = self.dst * n + self.src
        pos = np.searchsorted(fwd, rev)
        if np.any(pos >= len(fwd)) or np.any(fwd[np.minimum(pos, len(fwd) - 1)] != rev):
            return False
        if self.edge_feat is not None:
            return bool(np.array_equal(self.edge_feat[pos], self.edge_feat))
        return True

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.indices, other.indices)
                and _arr_eq(self.node_feat, other.node_feat)
                and _arr_eq(self.edge_feat, other.edge_feat)
                and _arr_eq(self.y, other.y))

    __hash__ = None


def _arr_eq(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a, b = np.asarray(a), np.asarray(b)
    return a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)


def symmetrize(src, dst, edge_feat=None):
    """Return arcs closed under reversal, sorted by (src, dst), deduplicated.

    A reverse arc inherits the feature of its partner. Conflicting features
    on a pair that is present in both directions raise GraphError.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    s = np.concatenate([src, dst])
    d = np.concatenate([dst, src])
    ef = None
    if edge_feat is not None:
        edge_feat = np.asarray(edge_feat)
        ef = np.concatenate([edge_feat, edge_feat])
    order = np.lexsort((d, s))
    s, d = s[order], d[order]
    if ef is not None:
        ef = ef[order]
    if len(s):
        first = np.ones(len(s), dtype=bool)
        first[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
        if ef is not None:
            grp = np.cumsum(first) - 1
            ref = ef[first][grp]
            same = ref == ef if ef.ndim == 1 else np.all(ref == ef, axis=1)
            if not np.all(same):
                raise GraphError("reverse arcs carry different edge features")
            ef = ef[first]
        s, d = s[first], d[first]
    return s, d, ef


# -- JSON-lines I/O ----------------------------------------------------------

def _parse_record(rec: dict, lineno: int, schema: Schema) -> Graph:
    try:
        n = int(rec["num_nodes"])
        edges = rec.get("edges", [])
        nf = np.asarray(rec["node_feat"])
        ef = rec.get("edge_feat")
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphParseError(lineno, f"bad record: {exc}") from None
    if nf.dtype.kind == "f" and nf.ndim == 1:
        nf = nf.reshape(-1, 1)
    if nf.dtype.kind in "iu":
        nf = nf.astype(np.int64)
    if ef is not None:
        ef = np.asarray(ef)
        if ef.dtype.kind in "iu":
            ef = ef.astype(np.int64)
    if len(nf) != n:
        raise GraphParseError(lineno, "node_feat length differs from num_nodes")
    if schema.num_node_types is not None and nf.dtype.kind == "i":
        if len(nf) and (nf.min() < 0 or nf.max() >= schema.num_node_types):
            raise SchemaError(f"line {lineno}: node type outside [0, {schema.num_node_types})")
    if schema.num_edge_types is not None and ef is not None and ef.dtype.kind == "i":
        if len(ef) and (ef.min() < 0 or ef.max() >= schema.num_edge_types):
            raise SchemaError(f"line {lineno}: edge type outside [0, {schema.num_edge_types})")
    y = rec.get("y")
    if isinstance(y, list):
        y = np.asarray(y)
    try:
        return Graph.from_edges(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2), nf, ef, y)
    except GraphError as exc:
        raise GraphParseError(lineno, str(exc)) from None


def load_graphs(path, schema: str | Schema = "generic") -> list[Graph]:
    """Read one graph per JSON line."""
    if isinstance(schema, str):
        schema = SCHEMAS[schema]
    graphs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GraphParseError(lineno, exc.msg) from None
            if not isinstance(rec, dict):
                raise GraphParseError(lineno, "expected a JSON object")
            graphs.append(_parse_record(rec, lineno, schema))
    return graphs


def graph_to_record(g: Graph) -> dict:
    s, d = g.src, g.dst
    keep = s < d
    rec = {"num_nodes": g.num_nodes,
           "edges": np.stack([s[keep], d[keep]], axis=1).tolist(),
           "node_feat": g.node_feat.tolist()}
    if g.edge_feat is not None:
        rec["edge_feat"] = g.edge_feat[keep].tolist()
    if g.y is not None:
        rec["y"] = g.y.tolist() if isinstance(g.y, np.ndarray) else g.y
    return rec


def save_graphs(path, graphs: Iterable[Graph]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g)) + "\n")


def summarize(graphs: Sequence[Graph]) -> dict:
    n = np.array([g.num_nodes for g in graphs], dtype=float)
    e = np.array([g.num_arcs // 2 for g in graphs], dtype=float)
    return {
        "graphs": len(graphs),
        "mean_nodes": float(n.mean()) if len(n) else 0.0,
        "mean_edges": float(e.mean()) if len(e) else 0.0,
        "min_nodes": int(n.min()) if len(n) else 0,
        "max_nodes": int(n.max()) if len(n) else 0,
        "symmetric": all(g.is_symmetric() for g in graphs),
    }


# -- batching ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs with index bookkeeping."""

    num_graphs: int
    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    node_feat: np.ndarray
    edge_feat: np.ndarray | None
    segment: np.ndarray
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    ys: tuple = field(default=())
    self_loop_flags: tuple = field(default=())

    @property
    def num_arcs(self) -> int:
        return len(self.src)

    @property
    def edge_segment(self) -> np.ndarray:
        return self.segment[self.src]

    def graph_targets(self) -> np.ndarray:
        return np.asarray([float(y) if np.ndim(y) == 0 else y for y in self.ys])

    def node_targets(self) -> np.ndarray:
        return np.concatenate([np.asarray(y) for y in self.ys])


def batch_graphs(gs: Sequence["Graph | GraphBatch"]) -> GraphBatch:
    """Concatenate graphs (or earlier batches) into one disjoint union."""
    flat: list[Graph] = []
    for g in gs:
        flat.extend(unbatch(g) if isinstance(g, GraphBatch) else [g])
    if not flat:
        raise GraphError("cannot batch an empty sequence")
    ref = flat[0]
    for g in flat[1:]:
        if (g.node_feat.dtype.kind != ref.node_feat.dtype.kind
                or g.node_feat.shape[1:] != ref.node_feat.shape[1:]
                or (g.edge_feat is None) != (ref.edge_feat is None)
                or (g.edge_feat is not None and (
                    g.edge_feat.dtype.kind != ref.edge_feat.dtype.kind
                    or g.edge_feat.shape[1:] != ref.edge_feat.shape[1:]))):
            raise GraphError("graphs in a batch must share a feature schema")
    n = np.array([g.num_nodes for g in flat], dtype=np.int64)
    e = np.array([g.num_arcs for g in flat], dtype=np.int64)
    node_off = np.concatenate([[0], np.cumsum(n)])
    edge_off = np.concatenate([[0], np.cumsum(e)])
    shift = np.repeat(node_off[:-1], e)
    src = np.concatenate([g.src for g in flat]) + shift
    dst = np.concatenate([g.dst for g in flat]) + shift
    nf = np.concatenate([g.node_feat for g in flat])
    ef = None if ref.edge_feat is None else np.concatenate([g.edge_feat for g in flat])
    seg = np.repeat(np.arange(len(flat)), n)
    for a in (src, dst, nf, ef, seg, node_off, edge_off):
        if a is not None:
            _freeze(a)
    return GraphBatch(len(flat), int(node_off[-1]), src, dst, nf, ef, seg,
                      node_off, edge_off, tuple(g.y for g in flat),
                      tuple(g.allow_self_loops for g in flat))


def unbatch(b: GraphBatch) -> list[Graph]:
    out = []
    for i in range(b.num_graphs):
        n0, n1 = b.node_offsets[i], b.node_offsets[i + 1]
        e0, e1 = b.edge_offsets[i], b.edge_offsets[i + 1]
        ef = None if b.edge_feat is None else b.edge_feat[e0:e1].copy()
        flag = b.self_loop_flags[i] if b.self_loop_flags else False
        out.append(Graph.from_arcs(int(n1 - n0), b.src[e0:e1] - n0, b.dst[e0:e1] - n0,
                                   b.node_feat[n0:n1].copy(), ef, b.ys[i], flag))
    return out


# -- synthetic graphs --------------------------------------------------------

def gen_csl(n: int, s: int) -> Graph:
    """Circular skip-link graph: an n-cycle plus chords (i, i+s mod n)."""
    if n < 5:
        raise ValueError("CSL needs n >= 5")
    if not 2 <= s <= n - 2:
        raise ValueError("skip length must satisfy 2 <= s <= n-2")
    if 2 * s == n:
        raise ValueError("skip length n/2 collapses chords into diameters")
    if math.gcd(n, s) != 1:
        raise ValueError("skip length must be coprime with n")
    i = np.arange(n)
    edges = np.concatenate([np.stack([i, (i + 1) % n], 1),
                            np.stack([i, (i + s) % n], 1)])
    return Graph.from_edges(n, edges, np.zeros(n, dtype=np.int64))


# a, b: bridgeheads shared by both rings; c, d: ring-middle nodes of the
# first ring, swapped by the automorphism that exchanges a and b.
DECALIN_ANCHORS = {"a": 0, "b": 1, "c": 4, "d": 3}


def gen_decalin() -> Graph:
    """Two fused 6-rings sharing the bond a-b (nodes 0 and 1)."""
    edges = [(0, 1),
             (0, 2), (2, 3), (3, 4), (4, 5), (5, 1),
             (0, 6), (6, 7), (7, 8), (8, 9), (9, 1)]
    return Graph.from_edges(10, edges, np.zeros(10, dtype=np.int64))


def random_graph(n: int, p: float, rng: np.random.Generator, node_types: int = 4,
                 edge_types: int = 3) -> Graph:
    """Erdos-Renyi graph with random categorical node and edge features."""
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    nf = rng.integers(0, node_types, size=n)
    ef = rng.integers(0, edge_types, size=len(edges))
    return Graph.from_edges(n, edges, nf, ef)
