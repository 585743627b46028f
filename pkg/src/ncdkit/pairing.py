"""Pairwise pseudo-labels for unlabelled batch items.

The primary strategy is winner-take-all hashing: each of H random
permutations of the feature vector contributes one code symbol, the argmax
position within the first k permuted entries. Two items are declared a
positive pair when their codes agree in at least mu positions. Because only
ranks matter, the labels are invariant under any strictly increasing
elementwise transform of the features.

Cosine-threshold, top-k ranking statistics, and mutual-nearest-neighbour
labelling are provided as drop-in alternatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError, NumericError
from .numerics import RngState

STRATEGY_KINDS = ("wta", "cosine", "ranking_stats", "nearest_neighbour")


@dataclass
class WtaHasher:
    """Bank of H permutations of range(d), plus window size k and threshold mu."""

    perms: np.ndarray  # [H, d] int64, each row a permutation of range(d)
    window: int
    threshold: int
    feature_dim: int

    @property
    def code_length(self) -> int:
        return self.perms.shape[0]


@dataclass
class PairStrategy:
    """Selects and parameterizes one pseudo-label strategy.

    kind 'wta' requires a prebuilt hasher; the other kinds read their single
    scalar parameter.
    """

    kind: str
    hasher: WtaHasher | None = None
    cosine_threshold: float = 0.9
    ranking_top_k: int = 5
    neighbour_count: int = 2

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown pair strategy kind: {self.kind!r}")


def build_hasher(d: int, H: int, k: int, mu: int, rng: RngState) -> WtaHasher:
    """Draw H Fisher-Yates permutations of range(d) from rng."""
    if d < 1 or H < 1:
        raise ConfigError(f"need d >= 1 and H >= 1, got d={d}, H={H}")
    if not 2 <= k <= d:
        raise ConfigError(f"window k must satisfy 2 <= k <= d, got k={k}, d={d}")
    if not 0 <= mu <= H:
        raise ConfigError(f"threshold mu must satisfy 0 <= mu <= H, got mu={mu}, H={H}")
    perms = np.stack([rng.permutation(d) for _ in range(H)])
    return WtaHasher(perms=perms, window=k, threshold=mu, feature_dim=d)


def hash_code(hasher: WtaHasher, z: np.ndarray) -> np.ndarray:
    """WTA code of one feature vector: per permutation, the argmax position
    among the first k entries of the permuted vector (gather convention:
    entry j of the permuted vector is z[perm[j]]); ties break to the
    smallest position."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != hasher.feature_dim:
        raise DimensionError(
            f"expected a vector of length {hasher.feature_dim}, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite feature vector in hash_code")
    windows = z[hasher.perms[:, :hasher.window]]  # [H, k]
    return np.argmax(windows, axis=1)


def hash_codes(hasher: WtaHasher, Z: np.ndarray) -> np.ndarray:
    """WTA codes for a feature matrix, one row of H symbols per item."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != hasher.feature_dim:
        raise DimensionError(
            f"expected [M, {hasher.feature_dim}] features, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise NumericError("non-finite feature matrix in hash_codes")
    windows = Z[:, hasher.perms[:, :hasher.window]]  # [M, H, k]
    return np.argmax(windows, axis=2)


def agreement(a: np.ndarray, b: np.ndarray) -> int:
    """Number of positions where two codes match."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"code lengths differ: {a.shape} vs {b.shape}")
    return int((a == b).sum())


def _cosine_matrix(Z: np.ndarray) -> np.ndarray:
    norms = np.sqrt((Z * Z).sum(axis=1))
    if np.any(norms < 1e-12):
        raise DegenerateInputError("zero-norm row in cosine similarity")
    Zn = Z / norms[:, None]
    return Zn @ Zn.T


def _top_indices(row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken toward smaller index."""
    order = np.argsort(-row, kind="stable")
    return order[:k]


def pairwise_labels(strategy: PairStrategy, Z: np.ndarray) -> np.ndarray:
    """M x M binary matrix s, symmetric with unit diagonal.

    wta: s_ij = 1 iff the WTA codes agree in at least mu positions.
    cosine: s_ij = 1 iff cos(z_i, z_j) >= threshold.
    ranking_stats: s_ij = 1 iff the top-k index sets coincide (as sets).
    nearest_neighbour: s_ij = 1 iff j is among i's n cosine-nearest others
    or vice versa (union symmetrization).
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise DimensionError(f"expected [M, d] features with M >= 1, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise NumericError("non-finite features in pairwise_labels")
    m = Z.shape[0]

    if strategy.kind == "wta":
        if strategy.hasher is None:
            raise ConfigError("wta strategy requires a prebuilt hasher")
        codes = hash_codes(strategy.hasher, Z)
        agree = (codes[:, None, :] == codes[None, :, :]).sum(axis=2)
        s = (agree >= strategy.hasher.threshold).astype(np.int64)
    elif strategy.kind == "cosine":
        s = (_cosine_matrix(Z) >= strategy.cosine_threshold).astype(np.int64)
    elif strategy.kind == "ranking_stats":
        k = min(strategy.ranking_top_k, Z.shape[1])
        tops = [frozenset(_top_indices(Z[i], k).tolist()) for i in range(m)]
        s = np.fromiter((int(tops[i] == tops[j]) for i in range(m) for j in range(m)),
                        dtype=np.int64, count=m * m).reshape(m, m)
    elif strategy.kind == "nearest_neighbour":
        sims = _cosine_matrix(Z)
        n = min(strategy.neighbour_count, m - 1)
        s = np.zeros((m, m), dtype=np.int64)
        for i in range(m):
            ranked = np.argsort(-sims[i], kind="stable")
            neighbours = [j for j in ranked if j != i][:n]
            s[i, neighbours] = 1
        s = ((s + s.T) > 0).astype(np.int64)
    else:  # unreachable: PairStrategy validates kind
        raise ConfigError(f"unknown pair strategy kind: {strategy.kind!r}")

    np.fill_diagonal(s, 1)
    return s
