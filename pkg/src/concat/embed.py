"""Structural node embeddings.

Cascade graphs get GraphWave-style embeddings: the empirical characteristic
function of each node's heat-wavelet coefficients. The user graph either
loads precomputed vectors or falls back to a randomized truncated
factorization of its degree-normalized adjacency.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from sklearn.utils.extmath import randomized_svd

from .data import CascadeGraph, GlobalGraph

logger = logging.getLogger(__name__)

ZERO_WEIGHT_FLOOR = 1e-6


class EmbeddingError(Exception):
    pass


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise EmbeddingError("embedding dimension must be positive")
        for key, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise EmbeddingError(f"vector for {key!r} has shape {v.shape}, expected ({self.dim},)")
            if not np.all(np.isfinite(v)):
                raise EmbeddingError(f"vector for {key!r} is not finite")

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, key):
        return key in self.vectors

    def __getitem__(self, key) -> np.ndarray:
        return self.vectors[key]

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        """Stack the vectors for ``keys``; a missing key is an error."""
        out = np.empty((len(keys), self.dim))
        for i, k in enumerate(keys):
            try:
                out[i] = self.vectors[k]
            except KeyError:
                raise EmbeddingError(f"no embedding for node {k!r}") from None
        return out

    def with_defaults(self, keys: Iterable[str]) -> "EmbeddingTable":
        """Copy of the table where absent ``keys`` map to zero vectors."""
        vectors = dict(self.vectors)
        missing = 0
        for k in keys:
            if k not in vectors:
                vectors[k] = np.zeros(self.dim)
                missing += 1
        if missing:
            logger.warning("%d nodes missing from embedding table; using zero vectors", missing)
        return EmbeddingTable(self.dim, vectors)


def write_embeddings(path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={table.dim}\n")
        for key, v in table.vectors.items():
            fh.write(key + " " + " ".join(repr(float(x)) for x in v) + "\n")


def global_embed_load(path, nodes: Iterable[str] | None = None) -> EmbeddingTable:
    """Read a ``dim=<d>`` headed embedding file.

    If ``nodes`` is given, any node absent from the file gets a zero vector
    and the number of such nodes is logged.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise EmbeddingError(f"{path}: first line must be 'dim=<d>', got {header!r}")
        dim = int(header[4:])
        vectors = {}
        for line_no, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingError(
                    f"{path}:{line_no}: expected {dim} values, got {len(parts) - 1}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    table = EmbeddingTable(dim, vectors)
    if nodes is not None:
        table = table.with_defaults(nodes)
    return table


# ---------------------------------------------------------------------------
# heat wavelets


@dataclass
class WaveletConfig:
    scales: list[float] | None = None
    sample_points: list[float] = field(default_factory=lambda: list(np.linspace(0.0, 50.0, 25)))
    chebyshev_order: int = 30
    eta: float = 0.85
    gamma: float = 0.95

    def __post_init__(self):
        if self.scales is not None and any(s <= 0 for s in self.scales):
            raise EmbeddingError("wavelet scales must be positive")
        if self.chebyshev_order < 1:
            raise EmbeddingError("chebyshev_order must be >= 1")

    @property
    def dim(self) -> int:
        n_scales = 2 if self.scales is None else len(self.scales)
        return 2 * n_scales * len(self.sample_points)


def normalized_laplacian(adjacency) -> np.ndarray:
    """Dense ``I - D^-1/2 A D^-1/2``; isolated nodes get a zero row."""
    a = adjacency.toarray() if hasattr(adjacency, "toarray") else np.asarray(adjacency, dtype=float)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = -inv_sqrt[:, None] * a * inv_sqrt[None, :]
    lap[np.diag_indices_from(lap)] += nz.astype(float)
    return lap


def heat_scales(laplacian: np.ndarray, eta: float = 0.85, gamma: float = 0.95) -> list[float]:
    """Two diffusion scales from the spectrum bounds of the Laplacian.

    Uses the smallest non-negligible eigenvalue and the largest eigenvalue,
    ``s = -log(c) / sqrt(l_min * l_max)`` for ``c`` in (gamma, eta).
    """
    eig = np.linalg.eigvalsh(laplacian)
    big = eig[eig > 1e-3]
    if big.size == 0:
        return [-np.log(gamma), -np.log(eta)]
    root = np.sqrt(big[0] * big[-1])
    return [-np.log(gamma) / root, -np.log(eta) / root]


def heat_kernel_chebyshev(laplacian: np.ndarray, scale: float, order: int = 30,
                          lmax: float = 2.0) -> np.ndarray:
    """Chebyshev approximation of ``exp(-scale * L)`` for spectrum in [0, lmax]."""
    n = laplacian.shape[0]
    coeffs = C.chebinterpolate(lambda y: np.exp(-scale * (y + 1.0) * lmax / 2.0), order)
    shifted = (2.0 / lmax) * laplacian - np.eye(n)
    t_prev, t_cur = np.eye(n), shifted
    out = coeffs[0] * t_prev
    if order >= 1:
        out = out + coeffs[1] * t_cur
    for k in range(2, order + 1):
        t_prev, t_cur = t_cur, 2.0 * shifted @ t_cur - t_prev
        out = out + coeffs[k] * t_cur
    return out


def characteristic_embedding(wavelets: np.ndarray, sample_points: Sequence[float]) -> np.ndarray:
    """Rows: nodes. Interleaved (Re, Im) of the empirical characteristic function
    of each column of ``wavelets`` at each sample point."""
    points = np.asarray(sample_points, dtype=float)
    # wavelets[b, a] is the coefficient at node b of the wavelet centred at a
    phase = points[None, None, :] * wavelets[:, :, None]
    phi = np.exp(1j * phase).mean(axis=0)  # (nodes, points)
    out = np.empty((wavelets.shape[1], 2 * len(points)))
    out[:, 0::2] = phi.real
    out[:, 1::2] = phi.imag
    return out


def graphwave_embed(graph: CascadeGraph, cfg: WaveletConfig | None = None) -> EmbeddingTable:
    cfg = cfg or WaveletConfig()
    if graph.num_nodes == 0:
        raise EmbeddingError("cannot embed an empty graph")
    lap = normalized_laplacian(graph.adjacency(min_weight=ZERO_WEIGHT_FLOOR))
    scales = cfg.scales if cfg.scales is not None else heat_scales(lap, cfg.eta, cfg.gamma)
    blocks = []
    for s in scales:
        psi = heat_kernel_chebyshev(lap, s, cfg.chebyshev_order)
        if not np.all(np.isfinite(psi)):
            raise EmbeddingError(f"non-finite heat kernel at scale {s}")
        blocks.append(characteristic_embedding(psi, cfg.sample_points))
    emb = np.concatenate(blocks, axis=1)
    return EmbeddingTable(emb.shape[1], {key: emb[i] for i, key in enumerate(graph.nodes)})


# ---------------------------------------------------------------------------
# user-graph factorization


def factorize_normalized_adjacency(graph: GlobalGraph, dim: int, rank_oversample: int = 10,
                                   seed: int = 0, n_iter: int = 7):
    """Rank-``dim`` factors ``(left, right)`` with ``left @ right.T ~ D^-1/2 A D^-1/2``.

    ``left = U sqrt(S)`` and ``right = V sqrt(S)`` from a randomized truncated SVD.
    """
    n = len(graph.nodes)
    if dim > n:
        raise EmbeddingError(f"dim={dim} exceeds the number of nodes ({n})")
    if dim < 1:
        raise EmbeddingError("dim must be positive")
    a = graph.adjacency()
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    m = a.multiply(inv_sqrt[:, None]).multiply(inv_sqrt[None, :]).tocsr()
    u, s, vt = randomized_svd(m, n_components=dim, n_oversamples=rank_oversample,
                              n_iter=n_iter, random_state=seed)
    root = np.sqrt(s)[None, :]
    left, right = u * root, vt.T * root
    left[~nz] = 0.0
    right[~nz] = 0.0
    return left, right


def global_embed_factorize(graph: GlobalGraph, dim: int = 64, rank_oversample: int = 10,
                           seed: int = 0, n_iter: int = 7) -> EmbeddingTable:
    """Left singular factors of ``D^-1/2 A D^-1/2`` scaled by sqrt singular values.

    Isolated nodes get zero vectors.
    """
    left, _ = factorize_normalized_adjacency(graph, dim, rank_oversample, seed, n_iter)
    return EmbeddingTable(dim, {node: left[i] for i, node in enumerate(graph.nodes)})
