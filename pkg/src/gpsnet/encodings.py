"""Positional and structural encodings, and 1-WL color refinement.

Everything here is a pure function of a :class:`~gpsnet.graph.Graph`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .graph import Graph, GraphBatch

PAD_EIGVAL = 2.0


class EigenSolverError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class EncodingSet:
    """Precomputed encodings for one graph. Unrequested fields stay None."""

    lap_eigvals: np.ndarray | None = None   # (k,)
    lap_eigvecs: np.ndarray | None = None   # (N, k)
    rwse: np.ndarray | None = None          # (N, m)
    wl_colors: list | None = None           # per-iteration color arrays
    rel_dist: np.ndarray | None = None      # (E,)


@dataclass(frozen=True, eq=False)
class WlResult:
    colors: np.ndarray
    histogram: tuple
    iterations: int
    history: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.histogram)


def degrees(g: Graph) -> np.ndarray:
    return g.degrees().astype(np.float64)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """I - D^-1/2 A D^-1/2, identity rows for isolated nodes."""
    a = g.adjacency()
    d = a.sum(axis=1)
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    lap = np.eye(g.num_nodes) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


def canonicalize_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    ``argmax`` returns the first maximum, so ties go to the lowest node index.
    """
    vecs = vecs.copy()
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def lap_pe(g: Graph, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The k smallest eigenpairs of the normalized Laplacian.

    Graphs with fewer than k nodes get zero eigenvector columns and
    eigenvalue ``PAD_EIGVAL`` in the surplus slots.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = g.num_nodes
    vals = np.full(k, PAD_EIGVAL)
    vecs = np.zeros((n, k))
    if n == 0:
        return vals, vecs
    lap = normalized_laplacian(g)
    try:
        w, v = scipy.linalg.eigh(lap, driver="ev")
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(
            f"symmetric QL/QR iteration failed on a {n}x{n} Laplacian: {exc}"
        ) from exc
    r = min(k, n)
    vals[:r] = w[:r]
    vecs[:, :r] = canonicalize_signs(v[:, :r])
    return vals, vecs


def _padded_neighbors(g: Graph) -> np.ndarray:
    deg = g.degrees()
    width = int(deg.max()) if g.num_nodes and deg.max() > 0 else 1
    # pad slot points at an extra all-zero row appended to the state
    nbr = np.full((g.num_nodes, width), g.num_nodes, dtype=np.int64)
    pos = np.arange(g.num_arcs) - np.repeat(g.offsets[:-1], deg)
    nbr[g.src, pos] = g.dst
    return nbr


def rwse(g: Graph, m: int, block_budget: int = 1 << 22) -> np.ndarray:
    """Return probabilities diag(P^t), t = 1..m, for P = D^-1 A.

    Walk distributions are propagated for a block of start nodes at a time.
    Each neighbor sum is taken over sorted summands, so relabeling the
    nodes permutes the result bit-for-bit.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    n = g.num_nodes
    out = np.zeros((n, m))
    if n == 0:
        return out
    deg = degrees(g)
    inv_deg = np.zeros(n)
    inv_deg[deg > 0] = 1.0 / deg[deg > 0]
    nbr = _padded_neighbors(g)
    block = max(1, min(n, block_budget // (n * nbr.shape[1])))
    for start in range(0, n, block):
        cols = np.arange(start, min(n, start + block))
        state = np.zeros((n + 1, len(cols)))
        state[cols, np.arange(len(cols))] = 1.0
        for t in range(m):
            gathered = np.sort(state[nbr], axis=1)
            state[:n] = gathered.sum(axis=1) * inv_deg[:, None]
            out[cols, t] = state[cols, np.arange(len(cols))]
    return out


def transition_matrix(g: Graph) -> np.ndarray:
    a = g.adjacency()
    d = a.sum(axis=1, keepdims=True)
    return np.divide(a, d, out=np.zeros_like(a), where=d > 0)


def _initial_colors(g: Graph) -> np.ndarray:
    nf = g.node_feat
    if nf.ndim == 1:
        keys = [(x,) for x in nf.tolist()]
    else:
        keys = [tuple(r) for r in nf.tolist()]
    return _relabel(keys)


def _relabel(keys) -> np.ndarray:
    table: dict = {}
    return np.array([table.setdefault(k, len(table)) for k in keys], dtype=np.int64)


def wl_colors(g: Graph, max_iters: int = 50) -> WlResult:
    """1-WL refinement on (own color, sorted neighbor colors).

    Colors are relabeled by first occurrence after every round, so a round
    that does not split any class leaves the color array unchanged; that
    round is counted in ``iterations``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    colors = _initial_colors(g)
    history = [colors]
    it = 0
    for it in range(1, max_iters + 1):
        keys = [(int(colors[u]),) + tuple(sorted(colors[g.neighbors(u)].tolist()))
                for u in range(g.num_nodes)]
        new = _relabel(keys)
        history.append(new)
        if np.array_equal(new, colors):
            break
        colors = new
    counts = np.bincount(colors) if len(colors) else np.zeros(0, np.int64)
    return WlResult(colors, tuple(sorted(counts.tolist())), it, history)


def wl_same_coloring(g1: Graph, g2: Graph, max_iters: int = 50) -> bool:
    """1-WL test on a graph pair with a shared color space.

    Both graphs are refined as one disjoint union; the test says "possibly
    isomorphic" when every color class splits evenly between them.
    """
    from .graph import batch_graphs, unbatch  # local: avoid cycle at import

    union = batch_graphs([g1, g2])
    merged = Graph.from_arcs(union.num_nodes, union.src, union.dst, union.node_feat)
    res = wl_colors(merged, max_iters)
    n1 = g1.num_nodes
    c1, c2 = res.colors[:n1], res.colors[n1:]
    k = int(res.colors.max()) + 1 if len(res.colors) else 0
    return bool(np.array_equal(np.bincount(c1, minlength=k), np.bincount(c2, minlength=k)))


def rel_distances(g: Graph, node_enc: np.ndarray) -> np.ndarray:
    """Euclidean distance between the encodings of each arc's endpoints."""
    node_enc = np.asarray(node_enc, dtype=np.float64)
    if node_enc.shape[0] != g.num_nodes:
        raise ValueError("node_enc must have one row per node")
    return pair_distances(node_enc, g.src, g.dst)


def pair_distances(node_enc: np.ndarray, u, v) -> np.ndarray:
    diff = node_enc[np.asarray(u)] - node_enc[np.asarray(v)]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def compute_encodings(g: Graph, lap_k: int | None = None, rwse_m: int | None = None,
                      rel: bool = False, wl_iters: int | None = None) -> EncodingSet:
    vals = vecs = rw = wl = rd = None
    if lap_k:
        vals, vecs = lap_pe(g, lap_k)
        if rel:
            rd = rel_distances(g, vecs)
    elif rel:
        raise ValueError("relative distances need lap_k")
    if rwse_m:
        rw = rwse(g, rwse_m)
    if wl_iters:
        wl = wl_colors(g, wl_iters).history
    return EncodingSet(vals, vecs, rw, wl, rd)


@dataclass(frozen=True, eq=False)
class BatchEncodings:
    """Encodings of a GraphBatch laid out per node / per arc."""

    lap_eigvals: np.ndarray | None = None   # (N, k), each graph's spectrum repeated
    lap_eigvecs: np.ndarray | None = None   # (N, k)
    rwse: np.ndarray | None = None          # (N, m)
    rel_dist: np.ndarray | None = None      # (E,)

    def permuted_signs(self, flips: np.ndarray) -> "BatchEncodings":
        """Multiply eigenvector columns by +-1 per node row."""
        return BatchEncodings(self.lap_eigvals, self.lap_eigvecs * flips, self.rwse,
                              self.rel_dist)


def batch_encodings(encs: Sequence[EncodingSet], graphs: Sequence[Graph] | GraphBatch) -> BatchEncodings:
    if isinstance(graphs, GraphBatch):
        sizes = np.diff(graphs.node_offsets)
    else:
        sizes = np.array([g.num_nodes for g in graphs])
    first = encs[0]
    vals = vecs = rw = rd = None
    if first.lap_eigvecs is not None:
        vals = np.concatenate([np.repeat(e.lap_eigvals[None, :], n, axis=0)
                               for e, n in zip(encs, sizes)])
        vecs = np.concatenate([e.lap_eigvecs for e in encs])
    if first.rwse is not None:
        rw = np.concatenate([e.rwse for e in encs])
    if first.rel_dist is not None:
        rd = np.concatenate([e.rel_dist for e in encs])
    return BatchEncodings(vals, vecs, rw, rd)


def encoding_to_record(enc: EncodingSet) -> dict:
    rec = {}
    if enc.lap_eigvals is not None:
        rec["lap_eigvals"] = enc.lap_eigvals.tolist()
        rec["lap_eigvecs"] = enc.lap_eigvecs.tolist()
    if enc.rwse is not None:
        rec["rwse"] = enc.rwse.tolist()
    return rec


def save_encodings(path, encs: Sequence[EncodingSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in encs:
            fh.write(json.dumps(encoding_to_record(e)) + "\n")


def load_encodings(path) -> list[EncodingSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            vals = np.asarray(rec["lap_eigvals"]) if "lap_eigvals" in rec else None
            vecs = None
            if "lap_eigvecs" in rec:
                vecs = np.asarray(rec["lap_eigvecs"], dtype=np.float64).reshape(-1, len(vals))
            rw = np.asarray(rec["rwse"], dtype=np.float64) if "rwse" in rec else None
            out.append(EncodingSet(vals, vecs, rw))
    return out
