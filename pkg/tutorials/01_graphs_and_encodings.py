# Graphs, batches and positional encodings
# =========================================
#
# Every graph in gpsnet is stored as a symmetric CSR structure: for each
# undirected edge {u, v} both arcs u->v and v->u are present, sorted by
# (source, target). Node and edge features ride along as integer type ids
# (for molecules) or float rows (for anything else).

import numpy as np

from gpsnet.encodings import compute_encodings, lap_pe, rwse
from gpsnet.graph import Graph, batch_graphs, unbatch
from gpsnet.molecules import make_zinc_like

# A 5-cycle with a pendant atom. Edge features are bond types.
g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (2, 5)],
                     node_feat=[0, 0, 1, 0, 2, 0], edge_feat=[0, 0, 1, 0, 0, 2], y=0.5)
print(g.num_nodes, "nodes,", g.num_arcs, "arcs")
print("degrees", g.degrees())
print("neighbors of 2:", g.neighbors(2))

# Arrays are frozen, so a graph can be shared freely between a dataset,
# its batches and the encodings computed from it.
try:
    g.indices[0] = 4
except ValueError as err:
    print("read-only:", err)


# Batching
# --------
# A batch is one big disconnected graph plus a segment vector mapping
# nodes to their graph. No arc ever crosses two graphs.

h = make_zinc_like(2, seed=3)
b = batch_graphs([g, *h])
print("batch:", b.num_graphs, "graphs,", b.num_nodes, "nodes; offsets", b.node_offsets)
assert np.all(b.segment[b.src] == b.segment[b.dst])
assert unbatch(b)[0] == g


# Random-walk structural encodings
# --------------------------------
# RWSE entry t of node i is the probability that a t-step random walk from
# i is back at i. On the 5-cycle the first return is possible at t=2
# (there and back) and odd returns first appear at t=5 (around the ring).

r = rwse(g, 6)
print("RWSE of node 0:", np.round(r[0], 4))
print("RWSE of the pendant node 5:", np.round(r[5], 4))


# Laplacian eigenvectors
# ----------------------
# lap_pe returns the k smallest eigenpairs of the symmetric normalized
# Laplacian. Eigenvectors have an arbitrary sign; gpsnet fixes it by making
# the entry with largest magnitude positive, ties broken by the lowest row.
# Graphs with fewer than k nodes are padded with zero columns.

vals, vecs = lap_pe(g, 4)
print("smallest eigenvalues:", np.round(vals, 4))
print("first eigenvector (proportional to sqrt(degree)):", np.round(vecs[:, 0], 4))
print("squared entries over degree are constant:", np.round(vecs[:, 0] ** 2 / g.degrees(), 4))

small = Graph.from_edges(3, [(0, 1), (1, 2)])
pad_vals, pad_vecs = lap_pe(small, 5)
print("padded eigenvalues for a 3-node graph:", np.round(pad_vals, 4))
print("padded eigenvector columns are zero:", not pad_vecs[:, 3:].any())


# Everything at once
# ------------------
# compute_encodings bundles the pieces a model needs. rel=True adds the
# per-arc distance ||v_u - v_v|| between eigenvector rows, which the
# PEG-gated message passing layer reads.

enc = compute_encodings(g, lap_k=4, rwse_m=8, rel=True)
print("rwse", enc.rwse.shape, "eigvecs", enc.lap_eigvecs.shape, "rel_dist", enc.rel_dist.shape)
