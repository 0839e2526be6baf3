"""
Chart quality metrics against ground-truth positions: Kruskal stress (KS),
Procrustes-aligned scaled residual (SR), trustworthiness (TW) and
continuity (CT).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import orthogonal_procrustes
from scipy.spatial.distance import cdist, pdist

from core.errors import ConfigError, DegenerateInputError, NumericError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_K_PERCENTS = (1, 2, 3, 4, 5)
DEFAULT_MAX_N = 5000
_ROW_CHUNK = 256


@dataclass
class MetricsReport:
    ks: float
    sr: float
    tw: dict = field(default_factory=dict)   # K -> value
    ct: dict = field(default_factory=dict)
    n_evaluated: int = 0
    subsample_seed: int = 0

    def to_dict(self):
        return {
            "ks": self.ks,
            "sr": self.sr,
            "tw": {str(k): v for k, v in sorted(self.tw.items())},
            "ct": {str(k): v for k, v in sorted(self.ct.items())},
            "n_evaluated": self.n_evaluated,
            "subsample_seed": self.subsample_seed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            ks=float(data["ks"]),
            sr=float(data["sr"]),
            tw={int(k): float(v) for k, v in data["tw"].items()},
            ct={int(k): float(v) for k, v in data["ct"].items()},
            n_evaluated=int(data["n_evaluated"]),
            subsample_seed=int(data["subsample_seed"]),
        )


def _as_points(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ShapeError(f"{name} must be N x 2, got shape {X.shape}")
    return X


def _aligned(X, X_hat):
    X = _as_points(X, "ground truth")
    X_hat = _as_points(X_hat, "embedding")
    if len(X) != len(X_hat):
        raise ShapeError(f"{len(X)} ground-truth points for {len(X_hat)} chart points")
    return X, X_hat


def kruskal_stress(X, X_hat):
    """sqrt(1 - cos^2) of the angle between the pairwise-distance vectors."""
    X, X_hat = _aligned(X, X_hat)
    if len(X) < 2:
        raise DegenerateInputError("Kruskal stress needs at least two points")
    d = pdist(X)
    d_hat = pdist(X_hat)
    norm, norm_hat = np.linalg.norm(d), np.linalg.norm(d_hat)
    if norm == 0 or norm_hat == 0:
        raise DegenerateInputError("all points coincide; pairwise distances are zero")
    cos = float(np.dot(d, d_hat)) / (norm * norm_hat)
    return math.sqrt(min(max(1.0 - cos * cos, 0.0), 1.0))


def _standardize(X, name):
    sigma = X.std(axis=0)
    if np.any(sigma == 0):
        raise DegenerateInputError(f"{name} has zero variance along an axis")
    return (X - X.mean(axis=0)) / sigma


def sr_metric(X, X_hat):
    """Mean squared residual after per-axis standardization and orthogonal
    Procrustes alignment of the chart onto the ground truth (reflections allowed)."""
    X, X_hat = _aligned(X, X_hat)
    if len(X) < 3:
        raise DegenerateInputError("SR needs at least three points")
    x_n = _standardize(X, "ground truth")
    x_hat_n = _standardize(X_hat, "embedding")
    # row vectors: minimizes ||x_hat_n W - x_n||
    w, _ = orthogonal_procrustes(x_hat_n, x_n)
    residual = x_n - x_hat_n @ w
    return float(np.mean(np.sum(residual * residual, axis=1)))


def _check_k(n, k):
    if not (1 <= k and 2 * k < n):
        raise ConfigError("k_percents", f"K={k} must satisfy 1 <= K < N/2 (N={n})")


def _neighbor_penalties(source, target, ks, threads=1):
    """For each K: sum over i and the K nearest neighbours j of i in `source`
    of max(0, r(i, j) - K), with r the 1-based rank of j around i in `target`.

    Distance ties rank by ascending sample index.
    """
    n = len(source)
    k_max = max(ks)
    rows = np.arange(n)

    def run(bounds):
        start, stop = bounds
        block = rows[start:stop]
        d_src = cdist(source[block], source)
        d_tgt = cdist(target[block], target)
        d_src[np.arange(len(block)), block] = -1.0
        d_tgt[np.arange(len(block)), block] = -1.0
        neighbors = np.argsort(d_src, axis=1, kind="stable")[:, 1:k_max + 1]
        order = np.argsort(d_tgt, axis=1, kind="stable")
        ranks = np.empty_like(order)
        ranks[np.arange(len(block))[:, None], order] = np.arange(n)[None, :]
        neighbor_ranks = np.take_along_axis(ranks, neighbors, axis=1)
        return [
            int(np.sum(np.maximum(neighbor_ranks[:, :k] - k, 0))) for k in ks
        ]

    chunks = [(s, min(s + _ROW_CHUNK, n)) for s in range(0, n, _ROW_CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return {k: sum(part[idx] for part in parts) for idx, k in enumerate(ks)}


def _neighborhood_score(n, k, penalty):
    return 1.0 - penalty / ((2 * n - 3 * k - 1) * n * k)


def trustworthiness(X, X_hat, K, threads=1):
    """Penalizes chart neighbours that are far apart in ground truth."""
    X, X_hat = _aligned(X, X_hat)
    _check_k(len(X), K)
    penalty = _neighbor_penalties(X_hat, X, [K], threads)[K]
    return _neighborhood_score(len(X), K, penalty)


def continuity(X, X_hat, K, threads=1):
    """Penalizes ground-truth neighbours that the chart tears apart."""
    return trustworthiness(X_hat, X, K, threads)


def k_from_percent(percent, n):
    return max(1, int(math.floor(percent / 100.0 * n + 0.5)))


def _check_report(report):
    values = [report.ks, report.sr] + list(report.tw.values()) + list(report.ct.values())
    if not all(math.isfinite(v) for v in values):
        raise NumericError("non-finite metric value")
    bounded = [report.ks] + list(report.tw.values()) + list(report.ct.values())
    if not all(0.0 <= v <= 1.0 for v in bounded) or report.sr < 0:
        raise NumericError(f"metric out of range: {report.to_dict()}")


def evaluate(X, X_hat, k_percents=DEFAULT_K_PERCENTS, max_n=DEFAULT_MAX_N, seed=0, threads=1):
    """All four metrics; above max_n points, a seeded uniform subsample is scored."""
    X, X_hat = _aligned(X, X_hat)
    n = len(X)
    if max_n < 3:
        raise ConfigError("metrics_max_n", "must be >= 3")
    if n > max_n:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=max_n, replace=False))
        X, X_hat = X[keep], X_hat[keep]
        log.info("Evaluating on a subsample of %d of %d points (seed %d)", max_n, n, seed)
        n = max_n

    ks = sorted({k_from_percent(p, n) for p in k_percents})
    for k in ks:
        _check_k(n, k)
    tw = _neighbor_penalties(X_hat, X, ks, threads)
    ct = _neighbor_penalties(X, X_hat, ks, threads)
    report = MetricsReport(
        ks=kruskal_stress(X, X_hat),
        sr=sr_metric(X, X_hat),
        tw={k: _neighborhood_score(n, k, tw[k]) for k in ks},
        ct={k: _neighborhood_score(n, k, ct[k]) for k in ks},
        n_evaluated=n,
        subsample_seed=seed,
    )
    _check_report(report)
    log.info("KS=%.4f SR=%.4f TW(K=%d)=%.4f CT(K=%d)=%.4f",
             report.ks, report.sr, ks[-1], report.tw[ks[-1]], ks[-1], report.ct[ks[-1]])
    return report
