import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import connected_random_graph
from gpsnet.encodings import (PAD_EIGVAL, batch_encodings, canonicalize_signs,
                              compute_encodings, lap_pe, load_encodings, normalized_laplacian,
                              rel_distances, rwse, save_encodings, transition_matrix,
                              wl_colors, wl_same_coloring)
from gpsnet.graph import DECALIN_ANCHORS, Graph, batch_graphs, gen_csl, gen_decalin


def cycle(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def naive_wl(g: Graph, rounds: int):
    """Textbook refinement with string signatures and a global sorted relabel."""
    colors = [str(int(c)) for c in g.node_feat]
    for _ in range(rounds):
        sig = [colors[u] + "|" + ",".join(sorted(colors[v] for v in g.neighbors(u)))
               for u in range(g.num_nodes)]
        table = {s: str(i) for i, s in enumerate(sorted(set(sig)))}
        colors = [table[s] for s in sig]
    return colors


def same_partition(a, b) -> bool:
    pairs = set(zip(map(str, a), map(str, b)))
    return len(pairs) == len(set(map(str, a))) == len(set(map(str, b)))


# -- RWSE ----------------------------------------------------------------------

@given(st.integers(2, 12), st.integers(0, 10_000))
def test_rwse_matches_dense_matrix_powers(n, seed):
    g = connected_random_graph(n, 0.3, seed)
    p = transition_matrix(g)
    want = np.zeros((n, 6))
    pt = np.eye(n)
    for t in range(6):
        pt = pt @ p
        want[:, t] = np.diag(pt)
    assert np.allclose(rwse(g, 6), want, atol=1e-13)


def test_rwse_cycle_closed_form():
    # return probability on C_n is (1/n) sum_j cos(2 pi j / n)^t
    n = 9
    got = rwse(cycle(n), 10)
    lam = np.cos(2 * np.pi * np.arange(n) / n)
    want = np.array([np.mean(lam ** t) for t in range(1, 11)])
    assert np.allclose(got, want[None, :], atol=1e-14)
    assert np.all(got[:, 0] == 0.0)          # no self-loops: P_ii = 0


def test_rwse_isolated_node_and_blocks():
    g = Graph.from_edges(4, [(0, 1), (1, 2)])
    r = rwse(g, 4)
    assert np.all(r[3] == 0.0)
    assert np.array_equal(rwse(g, 4, block_budget=1), r)


@given(st.integers(3, 12), st.integers(0, 10_000))
def test_rwse_permutes_bit_exactly(n, seed):
    g = connected_random_graph(n, 0.4, seed)
    perm = np.random.default_rng(seed + 1).permutation(n)
    assert np.array_equal(rwse(g.permute(perm), 8)[perm], rwse(g, 8))


def test_rwse_rejects_bad_m():
    with pytest.raises(ValueError):
        rwse(cycle(5), 0)


# -- LapPE ---------------------------------------------------------------------

def test_csl_spectrum_matches_circulant_formula():
    for s in (2, 3):
        g = gen_csl(11, s)
        j = np.arange(11)
        want = np.sort(1 - (np.cos(2 * np.pi * j / 11) + np.cos(2 * np.pi * j * s / 11)) / 2)
        vals, vecs = lap_pe(g, 11)
        assert np.allclose(vals, want, atol=1e-12)
        lap = normalized_laplacian(g)
        assert np.allclose(lap @ vecs, vecs * vals, atol=1e-12)
        assert np.allclose(vecs.T @ vecs, np.eye(11), atol=1e-12)


def test_lap_pe_pads_small_graphs():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    vals, vecs = lap_pe(g, 5)
    assert vals.shape == (5,) and vecs.shape == (3, 5)
    assert np.all(vals[3:] == PAD_EIGVAL)
    assert np.all(vecs[:, 3:] == 0.0)
    assert abs(vals[0]) < 1e-12
    with pytest.raises(ValueError):
        lap_pe(g, 0)


def test_normalized_laplacian_isolated_rows():
    g = Graph.from_edges(3, [(0, 1)])
    lap = normalized_laplacian(g)
    assert lap[2, 2] == 1.0 and np.all(lap[2, :2] == 0)


def test_sign_canonicalization():
    v = np.array([[0.1, -0.7], [-0.9, 0.7], [0.2, 0.1]])
    c = canonicalize_signs(v)
    assert c[:, 0].tolist() == [-0.1, 0.9, -0.2]
    # tie between rows 0 and 1 goes to row 0
    assert c[0, 1] == 0.7 and c[1, 1] == -0.7
    assert np.array_equal(canonicalize_signs(-v), c)


@given(st.integers(3, 10), st.integers(0, 10_000))
def test_lap_pe_eigvals_permutation_invariant(n, seed):
    g = connected_random_graph(n, 0.5, seed)
    perm = np.random.default_rng(seed).permutation(n)
    a, _ = lap_pe(g, 4)
    b, _ = lap_pe(g.permute(perm), 4)
    assert np.allclose(a, b, atol=1e-10)


# -- WL ------------------------------------------------------------------------

@given(st.integers(2, 12), st.integers(0, 10_000))
def test_wl_partition_matches_naive_refinement(n, seed):
    g = connected_random_graph(n, 0.3, seed)
    res = wl_colors(g)
    assert same_partition(res.colors, naive_wl(g, res.iterations))
    assert same_partition(res.colors, naive_wl(g, res.iterations + 3))


def test_wl_csl_pair_indistinguishable():
    r2, r3 = wl_colors(gen_csl(11, 2)), wl_colors(gen_csl(11, 3))
    assert r2.histogram == r3.histogram == (11,)
    assert r2.iterations == 1
    assert wl_same_coloring(gen_csl(11, 2), gen_csl(11, 3))


def test_wl_separates_cycle_from_two_triangles():
    two_tri = Graph.from_edges(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)])
    assert wl_colors(cycle(6)).histogram == wl_colors(two_tri).histogram
    path = Graph.from_edges(6, [(i, i + 1) for i in range(5)])
    assert not wl_same_coloring(cycle(6), path)


def test_wl_decalin_classes():
    res = wl_colors(gen_decalin())
    assert res.histogram == (2, 4, 4)
    a, b, c, d = (DECALIN_ANCHORS[k] for k in "abcd")
    assert res.colors[a] == res.colors[b]
    assert res.colors[c] == res.colors[d]


def test_wl_first_occurrence_labels():
    res = wl_colors(gen_decalin())
    seen = []
    for c in res.colors.tolist():
        if c not in seen:
            seen.append(c)
    assert seen == sorted(seen)


# -- bundles and I/O -----------------------------------------------------------

def test_rel_distances_and_batching():
    gs = [connected_random_graph(n, 0.4, n) for n in (4, 6)]
    encs = [compute_encodings(g, lap_k=3, rwse_m=5, rel=True) for g in gs]
    for g, e in zip(gs, encs):
        want = [np.linalg.norm(e.lap_eigvecs[u] - e.lap_eigvecs[v]) for u, v in zip(g.src, g.dst)]
        assert np.allclose(e.rel_dist, want)
        assert np.allclose(rel_distances(g, e.lap_eigvecs), e.rel_dist)
    b = batch_graphs(gs)
    be = batch_encodings(encs, b)
    assert be.lap_eigvals.shape == (10, 3)
    assert np.array_equal(be.lap_eigvals[5], encs[1].lap_eigvals)
    assert be.rwse.shape == (10, 5) and be.rel_dist.shape == (b.num_arcs,)
    with pytest.raises(ValueError):
        compute_encodings(gs[0], rwse_m=3, rel=True)


def test_encodings_roundtrip_exactly(tmp_path):
    encs = [compute_encodings(g, lap_k=4, rwse_m=6) for g in (gen_csl(11, 2), gen_decalin())]
    save_encodings(tmp_path / "e.jsonl", encs)
    back = load_encodings(tmp_path / "e.jsonl")
    for a, b in zip(encs, back):
        assert np.array_equal(a.lap_eigvals, b.lap_eigvals)
        assert np.array_equal(a.lap_eigvecs, b.lap_eigvecs)
        assert np.array_equal(a.rwse, b.rwse)
