"""
Chart-point losses with gradients: Sammon/Siamese, triplet, split triplet and
the inertial regularizer, plus their mu-weighted combination.

Every loss takes index arrays into `points` (an N x 2 array of chart points)
and returns (value, grad) where grad has the shape of `points`. Values are
sums over terms, reduced with math.fsum. Hinge kinks and zero-length vectors
use subgradient 0.
"""

import logging
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from core.errors import ConfigError, ContractError

log = logging.getLogger(__name__)

LOSS_KINDS = ("sammon_siamese", "triplet", "split_triplet")
MIN_FEATURE_DISTANCE = 1e-12


@dataclass
class LossConfig:
    kind: str = "split_triplet"
    margin: float = 1.0   # lambda of the triplet loss
    b_pos: float = 6.0
    b_neg: float = 1.5
    mu: float = 0.0

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError("loss", f"unknown loss kind {self.kind!r}")
        if self.kind == "triplet" and not self.margin > 0:
            raise ConfigError("margin", "triplet margin must be > 0")
        if self.kind == "split_triplet":
            if not self.b_pos > 0:
                raise ConfigError("b_pos", "must be > 0")
            if not self.b_neg > 0:
                raise ConfigError("b_neg", "must be > 0")
        if self.mu < 0:
            raise ConfigError("mu", "must be >= 0")


@dataclass
class LossBatch:
    """Index sets of one optimization step, in local chart-point indices."""

    triplets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    inertial: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    pairs: np.ndarray = None
    pair_distances: np.ndarray = None


@dataclass
class LossValue:
    value: float
    main: float
    inertial: float
    grad: np.ndarray


def _pair_geometry(points, a, b):
    diff = points[a] - points[b]
    dist = np.linalg.norm(diff, axis=1)
    unit = np.zeros_like(diff)
    nonzero = dist > 0
    unit[nonzero] = diff[nonzero] / dist[nonzero, None]
    return dist, unit


def _scatter(grad, index, values):
    np.add.at(grad, index, values)


def sammon_siamese_loss(pairs, points, feature_dists):
    """sum over pairs of (d_hat - d_f)^2 / d_f; pairs with d_f < 1e-12 are dropped."""
    points = np.asarray(points, dtype=np.float64)
    grad = np.zeros_like(points)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    feature_dists = np.asarray(feature_dists, dtype=np.float64).reshape(-1)
    keep = feature_dists >= MIN_FEATURE_DISTANCE
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        log.info("Dropped %d pairs with zero feature distance", dropped)
    pairs, target = pairs[keep], feature_dists[keep]
    if len(pairs) == 0:
        return 0.0, grad

    i, j = pairs[:, 0], pairs[:, 1]
    dist, unit = _pair_geometry(points, i, j)
    residual = dist - target
    value = math.fsum(residual * residual / target)
    coeff = (2.0 * residual / target)[:, None] * unit
    _scatter(grad, i, coeff)
    _scatter(grad, j, -coeff)
    return value, grad


def triplet_loss(triplets, points, margin):
    """sum of [d_ij - d_ik + margin]^+."""
    points = np.asarray(points, dtype=np.float64)
    grad = np.zeros_like(points)
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(triplets) == 0:
        return 0.0, grad
    a, p, n = triplets.T
    d_ap, u_ap = _pair_geometry(points, a, p)
    d_an, u_an = _pair_geometry(points, a, n)
    hinge = d_ap - d_an + margin
    active = hinge > 0
    value = math.fsum(hinge[active])
    w = active[:, None].astype(np.float64)
    _scatter(grad, a, w * (u_ap - u_an))
    _scatter(grad, p, -w * u_ap)
    _scatter(grad, n, w * u_an)
    return value, grad


def split_triplet_loss(triplets, points, b_pos, b_neg):
    """sum of [d_ij - b_pos]^+ + [b_neg - d_ik]^+."""
    points = np.asarray(points, dtype=np.float64)
    grad = np.zeros_like(points)
    triplets = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if len(triplets) == 0:
        return 0.0, grad
    a, p, n = triplets.T
    d_ap, u_ap = _pair_geometry(points, a, p)
    d_an, u_an = _pair_geometry(points, a, n)
    pos_hinge = d_ap - b_pos
    neg_hinge = b_neg - d_an
    pos_active = pos_hinge > 0
    neg_active = neg_hinge > 0
    value = math.fsum(np.concatenate([pos_hinge[pos_active], neg_hinge[neg_active]]))
    wp = pos_active[:, None].astype(np.float64)
    wn = neg_active[:, None].astype(np.float64)
    _scatter(grad, a, wp * u_ap - wn * u_an)
    _scatter(grad, p, -wp * u_ap)
    _scatter(grad, n, wn * u_an)
    return value, grad


def inertial_loss(triples, points):
    """sum of ||x_j - 2 x_i + x_l|| over (i, j, l)."""
    points = np.asarray(points, dtype=np.float64)
    grad = np.zeros_like(points)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        return 0.0, grad
    i, j, ell = triples.T
    second = points[j] - 2.0 * points[i] + points[ell]
    norm = np.linalg.norm(second, axis=1)
    value = math.fsum(norm)
    unit = np.zeros_like(second)
    nonzero = norm > 0
    unit[nonzero] = second[nonzero] / norm[nonzero, None]
    _scatter(grad, j, unit)
    _scatter(grad, i, -2.0 * unit)
    _scatter(grad, ell, unit)
    return value, grad


def main_loss(cfg, batch, points):
    if cfg.kind == "sammon_siamese":
        if batch.pairs is None or batch.pair_distances is None:
            raise ContractError("sammon_siamese loss needs pairs and pair_distances")
        return sammon_siamese_loss(batch.pairs, points, batch.pair_distances), len(batch.pairs)
    if batch.triplets is None:
        raise ContractError(f"{cfg.kind} loss needs triplets")
    if cfg.kind == "triplet":
        return triplet_loss(batch.triplets, points, cfg.margin), len(batch.triplets)
    if cfg.kind == "split_triplet":
        return split_triplet_loss(batch.triplets, points, cfg.b_pos, cfg.b_neg), len(batch.triplets)
    raise ContractError(f"unknown loss kind {cfg.kind!r}")


def total_loss(cfg, batch, points, reduction="sum"):
    """main + mu * inertial.

    reduction="mean" divides the main term by its term count and the inertial
    term by the number of inertial triples, so mu does not depend on batch size.
    """
    if reduction not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {reduction!r}")
    (main_value, main_grad), n_main = main_loss(cfg, batch, points)
    if reduction == "mean" and n_main:
        main_value /= n_main
        main_grad = main_grad / n_main

    inertia = batch.inertial if batch.inertial is not None else np.zeros((0, 3), dtype=np.int64)
    inert_value, inert_grad = inertial_loss(inertia, points)
    n_inert = len(inertia)
    if reduction == "mean" and n_inert:
        inert_value /= n_inert
        inert_grad = inert_grad / n_inert

    # mu = 0 must reproduce the main loss bit for bit
    if cfg.mu == 0:
        return LossValue(main_value, main_value, inert_value, main_grad)
    value = main_value + cfg.mu * inert_value
    return LossValue(value, main_value, inert_value, main_grad + cfg.mu * inert_grad)
