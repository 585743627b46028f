import numpy as np
import pytest

from ncdkit.errors import ConfigError, DimensionError
from ncdkit.numerics import RngState
from ncdkit.pairing import (PairStrategy, WtaHasher, agreement, build_hasher, hash_code,
                            hash_codes, pairwise_labels)


# ---- independent oracles: plain-loop re-derivations of the definitions -------------

def oracle_code(perms, k, z):
    code = []
    for perm in perms:
        best_j = 0
        best_v = z[perm[0]]
        for j in range(1, k):
            v = z[perm[j]]
            if v > best_v:
                best_v = v
                best_j = j
        code.append(best_j)
    return code


def oracle_wta_labels(perms, k, mu, Z):
    m = len(Z)
    codes = [oracle_code(perms, k, Z[i]) for i in range(m)]
    s = np.zeros((m, m), dtype=int)
    for i in range(m):
        for j in range(m):
            agree = sum(1 for h in range(len(perms)) if codes[i][h] == codes[j][h])
            s[i, j] = 1 if agree >= mu else 0
    np.fill_diagonal(s, 1)
    return s


def oracle_cosine_labels(t, Z):
    m = len(Z)
    s = np.zeros((m, m), dtype=int)
    for i in range(m):
        for j in range(m):
            num = float(np.dot(Z[i], Z[j]))
            den = float(np.linalg.norm(Z[i]) * np.linalg.norm(Z[j]))
            s[i, j] = 1 if num / den >= t else 0
    np.fill_diagonal(s, 1)
    return s


def oracle_topk_set(z, k):
    order = sorted(range(len(z)), key=lambda i: (-z[i], i))
    return set(order[:k])


def oracle_ranking_labels(k, Z):
    m = len(Z)
    tops = [oracle_topk_set(Z[i], min(k, Z.shape[1])) for i in range(m)]
    s = np.zeros((m, m), dtype=int)
    for i in range(m):
        for j in range(m):
            s[i, j] = 1 if tops[i] == tops[j] else 0
    np.fill_diagonal(s, 1)
    return s


def oracle_nn_labels(n, Z):
    m = len(Z)
    sims = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            sims[i, j] = np.dot(Z[i], Z[j]) / (np.linalg.norm(Z[i]) * np.linalg.norm(Z[j]))
    s = np.zeros((m, m), dtype=int)
    for i in range(m):
        others = sorted((j for j in range(m) if j != i), key=lambda j: (-sims[i, j], j))
        for j in others[: min(n, m - 1)]:
            s[i, j] = 1
    s = ((s + s.T) > 0).astype(int)
    np.fill_diagonal(s, 1)
    return s


# ---- builder --------------------------------------------------------------------

def test_build_hasher_large_scale_defaults():
    hasher = build_hasher(512, 512, 4, 240, RngState(0))
    assert hasher.code_length == 512
    assert hasher.window == 4 and hasher.threshold == 240
    assert all(sorted(p.tolist()) == list(range(512)) for p in hasher.perms[:3])


def test_build_hasher_single_full_window():
    hasher = build_hasher(4, 1, 4, 1, RngState(1))
    assert hasher.perms.shape == (1, 4)


def test_build_hasher_deterministic():
    a = build_hasher(16, 8, 4, 4, RngState(7))
    b = build_hasher(16, 8, 4, 4, RngState(7))
    assert np.array_equal(a.perms, b.perms)


def test_build_hasher_rejects_bad_window_and_threshold():
    with pytest.raises(ConfigError):
        build_hasher(4, 8, 5, 4, RngState(0))   # k > d
    with pytest.raises(ConfigError):
        build_hasher(4, 8, 2, 9, RngState(0))   # mu > H
    with pytest.raises(ConfigError):
        build_hasher(4, 8, 1, 4, RngState(0))   # k < 2


# ---- hash codes ------------------------------------------------------------------

def test_hash_code_hand_example():
    # windows [0.3, 0.9] -> 1 and [0.1, 0.5] -> 1
    hasher = WtaHasher(perms=np.array([[0, 1, 2, 3], [2, 3, 1, 0]]), window=2,
                       threshold=1, feature_dim=4)
    code = hash_code(hasher, np.array([0.3, 0.9, 0.1, 0.5]))
    assert code.tolist() == [1, 1]


def test_hash_code_monotone_transform_invariance():
    rng = RngState(3)
    hasher = build_hasher(12, 6, 4, 3, rng)
    z = rng.normal(12)
    base = hash_code(hasher, z)
    assert np.array_equal(base, hash_code(hasher, np.exp(z)))
    assert np.array_equal(base, hash_code(hasher, 3.0 * z + 11.0))


def test_hash_code_constant_vector_tie_rule():
    hasher = build_hasher(4, 5, 4, 2, RngState(2))
    code = hash_code(hasher, np.array([2.5, 2.5, 2.5, 2.5]))
    assert code.tolist() == [0] * 5


def test_hash_code_dimension_mismatch():
    hasher = build_hasher(4, 2, 2, 1, RngState(0))
    with pytest.raises(DimensionError):
        hash_code(hasher, np.zeros(5))


def test_hash_code_invariants_length_and_range():
    rng = RngState(21)
    hasher = build_hasher(11, 9, 4, 5, rng)
    for _ in range(25):
        code = hash_code(hasher, rng.normal(11))
        assert code.shape == (9,)
        assert np.all((code >= 0) & (code < hasher.window))


def test_hash_codes_matrix_matches_vector_version():
    rng = RngState(9)
    hasher = build_hasher(10, 7, 3, 3, rng)
    Z = rng.normal((6, 10))
    batch = hash_codes(hasher, Z)
    for i in range(6):
        assert np.array_equal(batch[i], hash_code(hasher, Z[i]))


# ---- agreement -------------------------------------------------------------------

def test_agreement_examples():
    assert agreement(np.array([1, 1, 2]), np.array([1, 0, 2])) == 2
    a = np.array([3, 1, 4, 1, 5])
    assert agreement(a, a) == 5
    with pytest.raises(DimensionError):
        agreement(np.array([1]), np.array([1, 2]))


def test_agreement_matches_brute_force_on_random_codes():
    rng = RngState(4)
    hasher = build_hasher(512, 64, 4, 30, rng)
    za = rng.normal(512)
    zb = rng.normal(512)
    ca, cb = hash_code(hasher, za), hash_code(hasher, zb)
    manual = sum(1 for x, y in zip(ca.tolist(), cb.tolist()) if x == y)
    assert agreement(ca, cb) == manual


# ---- pairwise labels ---------------------------------------------------------------

def test_identical_rows_are_positive_under_wta():
    rng = RngState(5)
    hasher = build_hasher(8, 6, 3, 6, rng)
    row = rng.normal(8)
    s = pairwise_labels(PairStrategy("wta", hasher=hasher), np.stack([row, row]))
    assert s[0, 1] == 1 and s[1, 0] == 1


def test_orthogonal_rows_negative_under_cosine():
    Z = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = pairwise_labels(PairStrategy("cosine", cosine_threshold=0.9), Z)
    assert s[0, 1] == 0 and np.all(np.diag(s) == 1)


def test_unknown_kind_rejected():
    with pytest.raises(ConfigError):
        PairStrategy("hamming")


def test_wta_strategy_requires_hasher():
    with pytest.raises(ConfigError):
        pairwise_labels(PairStrategy("wta"), np.zeros((2, 4)))


@pytest.mark.parametrize("seed", range(10))
def test_wta_labels_match_brute_force(seed):
    rng = RngState(seed)
    m, d, h = 3 + seed, 8, 8
    hasher = build_hasher(d, h, 3, 4, rng)
    Z = rng.normal((min(m, 16), d))
    got = pairwise_labels(PairStrategy("wta", hasher=hasher), Z)
    want = oracle_wta_labels(hasher.perms, hasher.window, hasher.threshold, Z)
    assert np.array_equal(got, want)


@pytest.mark.parametrize("seed", range(6))
def test_all_strategies_match_brute_force(seed):
    rng = RngState(100 + seed)
    Z = rng.normal((10, 6))
    hasher = build_hasher(6, 8, 3, 4, rng)
    cases = [
        (PairStrategy("wta", hasher=hasher),
         oracle_wta_labels(hasher.perms, 3, 4, Z)),
        (PairStrategy("cosine", cosine_threshold=0.3), oracle_cosine_labels(0.3, Z)),
        (PairStrategy("ranking_stats", ranking_top_k=3), oracle_ranking_labels(3, Z)),
        (PairStrategy("nearest_neighbour", neighbour_count=2), oracle_nn_labels(2, Z)),
    ]
    for strategy, want in cases:
        got = pairwise_labels(strategy, Z)
        assert np.array_equal(got, want), strategy.kind


@pytest.mark.parametrize("kind,kwargs", [
    ("cosine", {"cosine_threshold": 0.2}),
    ("ranking_stats", {"ranking_top_k": 2}),
    ("nearest_neighbour", {"neighbour_count": 2}),
])
def test_symmetry_and_unit_diagonal_all_strategies(kind, kwargs):
    rng = RngState(11)
    Z = rng.normal((9, 5))
    s = pairwise_labels(PairStrategy(kind, **kwargs), Z)
    assert np.array_equal(s, s.T)
    assert np.all(np.diag(s) == 1)


def test_wta_symmetry():
    rng = RngState(12)
    hasher = build_hasher(7, 9, 3, 4, rng)
    s = pairwise_labels(PairStrategy("wta", hasher=hasher), rng.normal((8, 7)))
    assert np.array_equal(s, s.T)


def test_wta_monotone_in_threshold():
    rng = RngState(13)
    Z = rng.normal((10, 8))
    prev = None
    for mu in range(0, 9):
        hasher = build_hasher(8, 8, 3, mu, RngState(13))
        s = pairwise_labels(PairStrategy("wta", hasher=hasher), Z)
        if prev is not None:
            # raising mu never turns a 0 into a 1
            assert np.all(s <= prev)
        prev = s


def test_wta_scale_invariance_rowwise_monotone_maps():
    rng = RngState(14)
    hasher = build_hasher(9, 7, 4, 3, rng)
    Z = rng.normal((6, 9))
    base = pairwise_labels(PairStrategy("wta", hasher=hasher), Z)
    transformed = np.tanh(Z * 0.7) * 5.0 + 2.0
    assert np.array_equal(base, pairwise_labels(PairStrategy("wta", hasher=hasher), transformed))


def test_cosine_invariant_under_positive_row_scaling():
    rng = RngState(15)
    Z = rng.normal((7, 5))
    scales = np.abs(rng.normal(7)) + 0.1
    strat = PairStrategy("cosine", cosine_threshold=0.4)
    assert np.array_equal(pairwise_labels(strat, Z), pairwise_labels(strat, Z * scales[:, None]))
