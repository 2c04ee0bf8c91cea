import json

import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from aecct.codes import BUNDLED, bundled_code
from aecct.tanner import (build_graph, build_masks, distances, graph_stats, hpsa_sparsity,
                          mask_sparsity, masks_to_json, spe_all_features, spe_node_features,
                          spectral_basis, spectrum_to_csv)


def test_hamming_edge_count(hamming):
    g = build_graph(hamming)
    assert len(g.edges) == 12
    assert graph_stats(g).n_edges == 12


def test_toy_masks_by_hand(toy_code):
    # nodes: v0 v1 v2 c0 c1; path v0-c0-v1-c1-v2
    m = build_masks(build_graph(toy_code))
    first = np.zeros((5, 5), dtype=bool)
    for a, b in [(0, 3), (1, 3), (1, 4), (2, 4)]:
        first[a, b] = first[b, a] = True
    assert np.array_equal(m.first_ring, first)
    second = np.eye(5, dtype=bool)
    for a, b in [(0, 1), (1, 2), (3, 4)]:
        second[a, b] = second[b, a] = True
    assert np.array_equal(m.second_ring, second)
    assert not m.ecct[0, 2] and not m.ecct[0, 4]
    assert m.ecct.sum() == 5 + 8 + 6


def test_mask_blocks_have_expected_types(bch31):
    m = build_masks(build_graph(bch31))
    n = bch31.n
    assert not m.m_vv[n:].any() and not m.m_vv[:, n:].any()
    assert not m.m_cc[:n].any() and not m.m_cc[:, :n].any()
    assert not m.m_vc[:n].any() and not m.m_cv[n:].any()


@pytest.mark.parametrize("key", sorted(BUNDLED))
def test_rings_partition_ecct_mask(key):
    m = build_masks(build_graph(bundled_code(key)))
    assert np.array_equal(m.first_ring | m.second_ring, m.ecct)
    off = ~np.eye(m.ecct.shape[0], dtype=bool)
    assert not (m.first_ring & m.second_ring & off).any()
    assert np.array_equal(m.ecct, m.ecct.T)


def test_distances_match_bfs_oracle(hamming):
    from scipy.sparse.csgraph import shortest_path

    g = build_graph(hamming)
    full = shortest_path(g.adjacency().astype(float), unweighted=True)
    ours = distances(g, 2)
    expected = np.where(full <= 2, full, -1).astype(int)
    assert np.array_equal(ours, expected)


@pytest.mark.parametrize("key", ["hamming_7_4", "bch_31_16", "ldpc_49_24", "polar_64_48"])
def test_laplacian_spectrum(key):
    g = build_graph(bundled_code(key))
    basis = spectral_basis(g)
    lap, vals, vecs = basis.laplacian, basis.eigenvalues, basis.eigenvectors
    assert np.abs(lap @ vecs - vecs * vals).max() < 1e-6
    assert vals.min() >= 0 and vals.max() <= 2
    assert abs(vals[0]) < 1e-9
    assert np.allclose(vecs.T @ vecs, np.eye(len(vals)), atol=1e-9)
    components, _ = connected_components(g.adjacency())
    assert int((vals < 1e-9).sum()) == components


def test_zero_multiplicity_counts_components():
    # two disjoint single-parity checks give two components
    from aecct.codes import ParityCheck

    pc = ParityCheck(np.array([[1, 1, 0, 0, 0], [0, 0, 1, 1, 1]]))
    vals = spectral_basis(build_graph(pc)).eigenvalues
    assert int((vals < 1e-9).sum()) == 2


def test_eigenvector_sign_is_deterministic(hamming):
    vecs = spectral_basis(build_graph(hamming)).eigenvectors
    pivot = np.argmax(np.round(np.abs(vecs), 12), axis=0)
    assert (vecs[pivot, np.arange(vecs.shape[1])] > 0).all()
    again = spectral_basis(build_graph(hamming)).eigenvectors
    assert np.array_equal(vecs, again)


def test_spe_features_shape(hamming):
    basis = spectral_basis(build_graph(hamming))
    rows = spe_node_features(basis, 3)
    assert rows.shape == (10, 2)
    assert np.array_equal(spe_all_features(basis)[3], rows)
    with pytest.raises(IndexError):
        spe_node_features(basis, 10)


def test_hpsa_sparsity_formula(toy_code):
    m = build_masks(build_graph(toy_code))
    assert mask_sparsity(m.first_ring) == pytest.approx(1 - 8 / 25)
    assert mask_sparsity(m.second_ring) == pytest.approx(1 - 11 / 25)
    assert hpsa_sparsity(m, 1, 1) == pytest.approx(1 - 19 / 50)
    assert hpsa_sparsity(m, 3, 1) == pytest.approx((3 * 17 / 25 + 14 / 25) / 4)


def test_degree_and_beta(toy_code):
    stats = graph_stats(build_graph(toy_code))
    assert stats.degree.tolist() == [1, 2, 1, 2, 2]
    assert stats.beta.tolist() == [1, 2, 1, 1, 1]


def test_exports(toy_code):
    g = build_graph(toy_code)
    obj = json.loads(masks_to_json(build_masks(g)))
    assert set(obj) == {"ecct", "m_vc", "m_cv", "m_vv", "m_cc"}
    lines = spectrum_to_csv(spectral_basis(g)).strip().splitlines()
    assert len(lines) == 6 and lines[0].startswith("index,eigenvalue")


def test_node_count_ldpc_49_24():
    assert build_graph(bundled_code("ldpc_49_24")).n_nodes == 74


def test_zero_eigenvector_is_sqrt_degree(hamming):
    g = build_graph(hamming)
    basis = spectral_basis(g)
    phi0 = basis.eigenvectors[:, 0]
    root_deg = np.sqrt(g.adjacency().sum(axis=1))
    assert np.allclose(phi0, root_deg / np.linalg.norm(root_deg))
    rows = spe_all_features(basis)
    assert np.allclose(rows[:, 0, 1] / root_deg, rows[0, 0, 1] / root_deg[0])
    assert np.array_equal(rows[:, :, 0], np.broadcast_to(basis.eigenvalues, rows.shape[:2]))
    assert np.array_equal(rows[:, :, 1], basis.eigenvectors)


def test_beta_on_three_node_path():
    from aecct.codes import ParityCheck

    # v0 - c0 - v1
    stats = graph_stats(build_graph(ParityCheck(np.array([[1, 1]]))))
    assert stats.beta.tolist() == [1, 1, 0]


def test_beta_tracks_half_squared_degree():
    """Mean beta grows with mean degree roughly as E[d]^2 / 2 (soft trend)."""
    keys = ["bch_31_16", "bch_63_51", "ldpc_49_24", "ldpc_121_80"]
    ratios = []
    for key in keys:
        stats = graph_stats(build_graph(bundled_code(key)))
        ratios.append(stats.beta.mean() / (stats.degree.mean() ** 2 / 2))
    assert all(0.2 < r < 5 for r in ratios)
