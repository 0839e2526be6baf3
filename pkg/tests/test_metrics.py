import itertools
import time

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from core.errors import ConfigError, DegenerateInputError
from core.metrics import (
    MetricsReport, continuity, evaluate, k_from_percent, kruskal_stress, sr_metric,
    trustworthiness,
)


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _ranks(points, i):
    """1-based rank of every j != i by distance from i, ties by index."""
    dist = cdist(points[i:i + 1], points)[0]
    others = [j for j in range(len(points)) if j != i]
    others.sort(key=lambda j: (dist[j], j))
    return {j: r + 1 for r, j in enumerate(others)}


def naive_trustworthiness(X, X_hat, K):
    n = len(X)
    total = 0
    for i in range(n):
        truth_rank = _ranks(X, i)
        chart_rank = _ranks(X_hat, i)
        neighbors = [j for j, r in chart_rank.items() if r <= K]
        total += sum(truth_rank[j] - K for j in neighbors if truth_rank[j] > K)
    return 1.0 - total / ((2 * n - 3 * K - 1) * n * K)


def naive_continuity(X, X_hat, K):
    return naive_trustworthiness(X_hat, X, K)


# --- Kruskal stress ---

def test_stress_of_identical_and_scaled_embeddings():
    X = np.random.default_rng(0).standard_normal((30, 2))
    assert kruskal_stress(X, X) == pytest.approx(0.0, abs=1e-7)
    assert kruskal_stress(X, 3 * X) == pytest.approx(0.0, abs=1e-7)


def test_stress_matches_cosine_formula():
    rng = np.random.default_rng(1)
    X, X_hat = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    d = [np.linalg.norm(X[i] - X[j]) for i, j in itertools.combinations(range(5), 2)]
    dh = [np.linalg.norm(X_hat[i] - X_hat[j]) for i, j in itertools.combinations(range(5), 2)]
    cos = np.dot(d, dh) / (np.linalg.norm(d) * np.linalg.norm(dh))
    assert kruskal_stress(X, X_hat) == pytest.approx(np.sqrt(1 - cos ** 2), abs=1e-12)


def test_stress_invariances():
    rng = np.random.default_rng(2)
    X, X_hat = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
    base = kruskal_stress(X, X_hat)
    assert kruskal_stress(X, 2.0 * X_hat) == base
    moved = 1.7 * X_hat @ _rotation(1.1).T + np.array([5.0, -2.0])
    assert kruskal_stress(X, moved) == pytest.approx(base, abs=1e-9)


def test_stress_needs_spread():
    with pytest.raises(DegenerateInputError):
        kruskal_stress(np.ones((4, 2)), np.random.default_rng(0).standard_normal((4, 2)))


# --- SR ---

def test_sr_of_identity_is_zero():
    X = np.random.default_rng(3).standard_normal((50, 2))
    assert sr_metric(X, X) == pytest.approx(0.0, abs=1e-12)


def test_sr_ignores_rotation_shift_and_axis_scale():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((60, 2)) * np.array([3.0, 1.0])
    assert sr_metric(X, X @ _rotation(0.4).T + np.array([10.0, 3.0])) == pytest.approx(0.0, abs=1e-9)
    assert sr_metric(X, X * np.array([5.0, 0.2])) == pytest.approx(0.0, abs=1e-9)


def test_sr_reflection_matches_brute_force_optimum():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((10, 2))
    X_hat = X * np.array([-1.0, 1.0]) + 0.3 * rng.standard_normal((10, 2))

    def standardize(A):
        return (A - A.mean(axis=0)) / A.std(axis=0)

    xn, xhn = standardize(X), standardize(X_hat)
    def residual(angle, flip):
        W = _rotation(angle) @ np.diag([1.0, flip])
        return np.mean(np.sum((xn - xhn @ W) ** 2, axis=1))

    best = np.inf
    for flip in (1.0, -1.0):
        coarse = np.linspace(0, 2 * np.pi, 2001)
        center = coarse[np.argmin([residual(a, flip) for a in coarse])]
        step = coarse[1] - coarse[0]
        for angle in np.linspace(center - step, center + step, 2001):
            best = min(best, residual(angle, flip))
    assert sr_metric(X, X_hat) == pytest.approx(best, rel=1e-6, abs=1e-9)
    assert sr_metric(X, X_hat) <= best + 1e-12


def test_sr_zero_variance():
    X = np.column_stack([np.arange(5.0), np.zeros(5)])
    with pytest.raises(DegenerateInputError):
        sr_metric(X, np.random.default_rng(0).standard_normal((5, 2)))


# --- trustworthiness / continuity ---

def test_perfect_embedding_scores_one():
    X = np.random.default_rng(6).standard_normal((40, 2))
    for K in (1, 5, 19):
        assert trustworthiness(X, X, K) == 1.0
        assert continuity(X, X, K) == 1.0


def test_four_point_swap_by_hand():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [6.0, 0.0]])
    X_hat = X[[0, 2, 1, 3]]
    # chart nearest neighbours 0->2, 1->2, 2->0, 3->1 all sit at truth rank 2
    # penalty 4, normalizer (8-3-1)*4*1 = 16
    assert trustworthiness(X, X_hat, 1) == pytest.approx(1 - 4 / 16)
    assert trustworthiness(X, X_hat, 1) == naive_trustworthiness(X, X_hat, 1)
    assert continuity(X, X_hat, 1) == naive_continuity(X, X_hat, 1)


def test_continuity_is_swapped_trustworthiness():
    rng = np.random.default_rng(7)
    for _ in range(10):
        X, X_hat = rng.standard_normal((20, 2)), rng.standard_normal((20, 2))
        assert continuity(X, X_hat, 3) == trustworthiness(X_hat, X, 3)


def test_scores_match_naive_reference_exactly():
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    for _ in range(200):
        n = int(rng.integers(5, 51))
        X = rng.standard_normal((n, 2))
        X_hat = rng.standard_normal((n, 2))
        if rng.random() < 0.3:
            X_hat = rng.integers(0, 5, (n, 2)).astype(float)  # exact distance ties
        K = int(rng.integers(1, (n - 1) // 2 + 1))
        tw = trustworthiness(X, X_hat, K)
        ct = continuity(X, X_hat, K)
        assert tw == naive_trustworthiness(X, X_hat, K)
        assert ct == naive_continuity(X, X_hat, K)
        assert 0.0 <= tw <= 1.0 and 0.0 <= ct <= 1.0
    assert time.perf_counter() - start < 30.0


@pytest.mark.parametrize("K", [0, 5, 9])
def test_neighborhood_size_out_of_range(K):
    X = np.random.default_rng(9).standard_normal((10, 2))
    with pytest.raises(ConfigError):
        trustworthiness(X, X, K)


# --- evaluate ---

def test_k_rounding():
    assert k_from_percent(1, 100) == 1
    assert k_from_percent(5, 100) == 5
    assert k_from_percent(1, 30) == 1
    assert k_from_percent(2.5, 100) == 3


def test_perfect_embedding_report():
    X = np.random.default_rng(10).standard_normal((100, 2))
    report = evaluate(X, X, k_percents=(1, 5))
    assert report.ks == pytest.approx(0.0, abs=1e-7)
    assert report.sr == pytest.approx(0.0, abs=1e-12)
    assert set(report.tw) == set(report.ct) == {1, 5}
    assert all(v == 1.0 for v in report.tw.values())
    assert all(v == 1.0 for v in report.ct.values())
    assert report.n_evaluated == 100


def test_subsampled_stress_is_close_to_full():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 100, (3000, 2))
    X_hat = X @ _rotation(0.3).T + rng.normal(0, 8.0, (3000, 2))
    full = evaluate(X, X_hat, k_percents=(1,), max_n=3000)
    sub = evaluate(X, X_hat, k_percents=(1,), max_n=1000, seed=4)
    assert sub.n_evaluated == 1000 and sub.subsample_seed == 4
    assert abs(full.ks - sub.ks) < 0.02


def test_report_json_keys():
    X = np.random.default_rng(12).standard_normal((20, 2))
    data = evaluate(X, X, k_percents=(5,)).to_dict()
    assert set(data) == {"ks", "sr", "tw", "ct", "n_evaluated", "subsample_seed"}
    assert data["tw"] == {"1": 1.0}
    assert MetricsReport.from_dict(data).to_dict() == data
