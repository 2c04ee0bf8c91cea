"""Tanner graph, attention masks, normalized-Laplacian spectrum and degree statistics.

Node order everywhere: variables ``0..n-1`` then checks ``n..2n-k-1``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .codes import ParityCheck


@dataclass(frozen=True)
class TannerGraph:
    n_var: int
    n_chk: int
    edges: np.ndarray  # (|E|, 2) rows of (check j, variable i)

    @property
    def n_nodes(self) -> int:
        return self.n_var + self.n_chk

    def adjacency(self) -> np.ndarray:
        """Symmetric boolean adjacency over all 2n-k nodes."""
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        chk = self.edges[:, 0] + self.n_var
        var = self.edges[:, 1]
        a[chk, var] = True
        a[var, chk] = True
        return a

    def is_variable(self) -> np.ndarray:
        return np.arange(self.n_nodes) < self.n_var


@dataclass(frozen=True)
class TannerMasks:
    """True marks an allowed (query row, key column) pair."""

    ecct: np.ndarray
    m_vc: np.ndarray
    m_cv: np.ndarray
    m_vv: np.ndarray
    m_cc: np.ndarray

    @property
    def first_ring(self) -> np.ndarray:
        return self.m_vc | self.m_cv

    @property
    def second_ring(self) -> np.ndarray:
        return self.m_vv | self.m_cc


@dataclass(frozen=True)
class SpectralBasis:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # column i pairs with eigenvalues[i]
    laplacian: np.ndarray


@dataclass(frozen=True)
class GraphStats:
    degree: np.ndarray
    beta: np.ndarray
    sparsity: dict

    @property
    def n_edges(self) -> int:
        return int(self.degree.sum()) // 2


def build_graph(pc: ParityCheck) -> TannerGraph:
    chk, var = np.nonzero(pc.h)
    edges = np.stack([chk, var], axis=1)
    edges.setflags(write=False)
    return TannerGraph(n_var=pc.n, n_chk=pc.m, edges=edges)


def distances(g: TannerGraph, max_depth: int = 2) -> np.ndarray:
    """All-pairs hop distance truncated at ``max_depth`` (larger -> -1)."""
    a = g.adjacency().astype(np.int64)
    size = g.n_nodes
    dist = np.full((size, size), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    frontier = np.eye(size, dtype=bool)
    reached = frontier.copy()
    for depth in range(1, max_depth + 1):
        frontier = ((frontier.astype(np.int64) @ a) > 0) & ~reached
        dist[frontier] = depth
        reached |= frontier
    return dist


def build_masks(g: TannerGraph) -> TannerMasks:
    dist = distances(g, 2)
    is_var = g.is_variable()
    is_chk = ~is_var
    ring1 = dist == 1
    ring2 = dist == 2
    diag = np.eye(g.n_nodes, dtype=bool)
    ecct = (dist >= 0)
    m_vc = ring1 & is_chk[:, None] & is_var[None, :]
    m_cv = ring1 & is_var[:, None] & is_chk[None, :]
    m_vv = (ring2 | diag) & is_var[:, None] & is_var[None, :]
    m_cc = (ring2 | diag) & is_chk[:, None] & is_chk[None, :]
    for m in (ecct, m_vc, m_cv, m_vv, m_cc):
        m.setflags(write=False)
    return TannerMasks(ecct=ecct, m_vc=m_vc, m_cv=m_cv, m_vv=m_vv, m_cc=m_cc)


def normalized_laplacian(g: TannerGraph) -> np.ndarray:
    a = g.adjacency().astype(np.float64)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(g.n_nodes) - inv_sqrt[:, None] * a * inv_sqrt[None, :]


def spectral_basis(g: TannerGraph) -> SpectralBasis:
    """Eigensystem of L = I - D^-1/2 A D^-1/2 with a deterministic sign per eigenvector."""
    lap = normalized_laplacian(g)
    vals, vecs = np.linalg.eigh(lap)
    # largest-magnitude entry positive, ties broken by lowest index
    pivot = np.argmax(np.round(np.abs(vecs), 12), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs[None, :]
    vals = np.clip(vals, 0.0, 2.0)
    for arr in (vals, vecs, lap):
        arr.setflags(write=False)
    return SpectralBasis(eigenvalues=vals, eigenvectors=vecs, laplacian=lap)


def spe_node_features(basis: SpectralBasis, j: int) -> np.ndarray:
    """Rows (lambda_i, phi_i[j]) for every eigenpair i."""
    size = basis.eigenvalues.size
    if not 0 <= j < size:
        raise IndexError(f"node {j} out of range for {size} nodes")
    return np.stack([basis.eigenvalues, basis.eigenvectors[j, :]], axis=1)


def spe_all_features(basis: SpectralBasis) -> np.ndarray:
    """Stacked ``spe_node_features`` for every node: shape (nodes, nodes, 2)."""
    size = basis.eigenvalues.size
    lam = np.broadcast_to(basis.eigenvalues, (size, size))
    return np.stack([lam, basis.eigenvectors], axis=-1)


def mask_sparsity(mask: np.ndarray) -> float:
    return 1.0 - float(mask.sum()) / mask.size


def hpsa_sparsity(masks: TannerMasks, h_first: int = 4, h_second: int = 4) -> float:
    """Fraction of per-head query-key products avoided, averaged over the head split."""
    h = h_first + h_second
    return (h_first * mask_sparsity(masks.first_ring)
            + h_second * mask_sparsity(masks.second_ring)) / h


def graph_stats(g: TannerGraph, h_first: int = 4, h_second: int = 4) -> GraphStats:
    dist = distances(g, 2)
    degree = (dist == 1).sum(axis=1)
    beta = (dist == 2).sum(axis=1)
    masks = build_masks(g)
    sparsity = {
        "ecct": mask_sparsity(masks.ecct),
        "m_vc": mask_sparsity(masks.m_vc),
        "m_cv": mask_sparsity(masks.m_cv),
        "m_vv": mask_sparsity(masks.m_vv),
        "m_cc": mask_sparsity(masks.m_cc),
        "first_ring": mask_sparsity(masks.first_ring),
        "second_ring": mask_sparsity(masks.second_ring),
        "hpsa": hpsa_sparsity(masks, h_first, h_second),
    }
    return GraphStats(degree=degree, beta=beta, sparsity=sparsity)


def masks_to_json(masks: TannerMasks) -> str:
    out = {name: getattr(masks, name).astype(int).tolist()
           for name in ("ecct", "m_vc", "m_cv", "m_vv", "m_cc")}
    return json.dumps(out)


def spectrum_to_csv(basis: SpectralBasis) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    size = basis.eigenvalues.size
    writer.writerow(["index", "eigenvalue"] + [f"node_{j}" for j in range(size)])
    for i in range(size):
        writer.writerow([i, repr(float(basis.eigenvalues[i]))]
                        + [repr(float(v)) for v in basis.eigenvectors[:, i]])
    return buf.getvalue()
