"""
Temporal triplet selection with feature-distance self-intersection recovery,
and inertial-point selection for the inertial regularizer.
"""

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial.distance import pdist

from core.errors import ConfigError, SelectionError
from core.features import stack_features

log = logging.getLogger(__name__)

EXACT_QUANTILE_LIMIT = 2000
SAMPLED_PAIRS = 1_000_000
PAIR_CHUNK = 8192
NEGATIVE_RETRIES = 16


@dataclass
class SelectionConfig:
    t_c: float
    t_f: float
    v_min: float = 0.5
    v_max: float = 2.0
    intersection_quantile: float = 0.01
    triplets_per_anchor: int = 8
    reidentify: str = "positive"  # "positive" or "exclude"
    rng_seed: int = 0

    def to_dict(self):
        return asdict(self)

    @property
    def b_pos(self):
        return self.v_max * self.t_c

    @property
    def b_neg(self):
        return self.v_min * self.t_c

    def validate(self):
        if not 0 < self.t_c < self.t_f:
            raise ConfigError("t_c", f"need 0 < t_c < t_f, got t_c={self.t_c}, t_f={self.t_f}")
        if not 0 < self.v_min <= self.v_max:
            raise ConfigError("speed_range", "need 0 < v_min <= v_max")
        if not 0 < self.intersection_quantile < 1:
            raise ConfigError("intersection_quantile", "must lie in (0, 1)")
        if self.triplets_per_anchor < 1:
            raise ConfigError("triplets_per_anchor", "must be >= 1")
        if self.reidentify not in ("positive", "exclude"):
            raise ConfigError("reidentify", f"unknown mode {self.reidentify!r}")


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    reidentified: bool = False


@dataclass(frozen=True)
class InertialTriple:
    i: int
    j: int
    ell: int
    triplet_index: int = -1


def feature_distance_threshold(features, q, seed=0, force_sampling=False,
                               n_pairs=SAMPLED_PAIRS):
    """q-quantile of pairwise Euclidean feature distances.

    Exact over all pairs up to EXACT_QUANTILE_LIMIT features, otherwise
    estimated from n_pairs uniformly drawn distinct pairs.
    """
    if not 0 < q < 1:
        raise ConfigError("intersection_quantile", f"q={q} outside (0, 1)")
    matrix = stack_features(features)
    n = len(matrix)
    if n < 2:
        raise ConfigError("intersection_quantile", "need at least two features")
    if n <= EXACT_QUANTILE_LIMIT and not force_sampling:
        return float(np.quantile(pdist(matrix), q))
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, n_pairs)
    j = (i + rng.integers(1, n, n_pairs)) % n
    dists = np.empty(n_pairs)
    for start in range(0, n_pairs, PAIR_CHUNK):
        stop = min(start + PAIR_CHUNK, n_pairs)
        dists[start:stop] = np.linalg.norm(matrix[i[start:stop]] - matrix[j[start:stop]], axis=1)
    return float(np.quantile(dists, q))


def _window(times, t, lo, hi):
    """Indices k (into times) with lo < |times[k] - t| < hi."""
    left = np.arange(np.searchsorted(times, t - hi, side="right"),
                     np.searchsorted(times, t - lo, side="left"))
    right = np.arange(np.searchsorted(times, t + lo, side="right"),
                      np.searchsorted(times, t + hi, side="left"))
    return np.concatenate([left, right])


class TripletSelector:
    """Draws triplets per anchor and keeps counts of what was skipped."""

    def __init__(self, ds, features, cfg, threshold=None, threads=1):
        cfg.validate()
        self._ds = ds
        self._features = stack_features(features)
        if len(self._features) != len(ds):
            raise SelectionError(
                f"{len(self._features)} features for {len(ds)} samples"
            )
        self._cfg = cfg
        self._threads = threads
        if threshold is None:
            threshold = feature_distance_threshold(
                self._features, cfg.intersection_quantile, seed=cfg.rng_seed
            )
        self.threshold = threshold
        self.skipped_anchors = 0
        self.exhausted_anchors = 0
        self.reidentified = 0

    def _anchor_triplets(self, anchor, track, times, position):
        """Triplets for one anchor, or a skip reason string."""
        cfg = self._cfg
        rng = np.random.default_rng([cfg.rng_seed, anchor])
        t = times[position]
        pos_window = _window(times, t, 0.0, cfg.t_c)
        neg_window = _window(times, t, cfg.t_c, cfg.t_f)
        if pos_window.size == 0 or neg_window.size == 0:
            return "empty"

        f_anchor = self._features[anchor]
        out = []
        for _ in range(cfg.triplets_per_anchor):
            positive = int(track[rng.choice(pos_window)])
            reidentified = False
            negative = None
            for _ in range(NEGATIVE_RETRIES):
                candidate = int(track[rng.choice(neg_window)])
                dist = np.linalg.norm(self._features[candidate] - f_anchor)
                if dist >= self.threshold:
                    negative = candidate
                    break
                if cfg.reidentify == "positive" and not reidentified:
                    positive = candidate
                    reidentified = True
            if negative is None:
                return "exhausted"
            out.append(Triplet(anchor, positive, negative, reidentified))
        return out

    def _select_range(self, jobs):
        results = []
        for anchor, track, times, position in jobs:
            results.append(self._anchor_triplets(anchor, track, times, position))
        return results

    def select(self):
        timestamps = self._ds.timestamps
        jobs = []
        for track in self._ds.tracks().values():
            times = timestamps[track]
            for position, anchor in enumerate(track):
                jobs.append((int(anchor), track, times, position))
        jobs.sort(key=lambda job: job[0])

        if self._threads > 1 and len(jobs) > 1:
            size = -(-len(jobs) // self._threads)
            parts = [jobs[k:k + size] for k in range(0, len(jobs), size)]
            with ThreadPoolExecutor(max_workers=self._threads) as pool:
                results = [r for part in pool.map(self._select_range, parts) for r in part]
        else:
            results = self._select_range(jobs)

        triplets = []
        for result in results:
            if result == "empty":
                self.skipped_anchors += 1
            elif result == "exhausted":
                self.exhausted_anchors += 1
            else:
                triplets.extend(result)
        self.reidentified = sum(t.reidentified for t in triplets)
        log.info(
            "Selected %d triplets (%d reidentified); skipped %d anchors with empty "
            "windows, %d with exhausted negative draws",
            len(triplets), self.reidentified, self.skipped_anchors, self.exhausted_anchors,
        )
        if not triplets:
            raise SelectionError("no triplets could be selected; check t_c / t_f")
        return triplets

    def stats(self):
        return {
            "feature_threshold": self.threshold,
            "skipped_anchors": self.skipped_anchors,
            "exhausted_anchors": self.exhausted_anchors,
            "reidentified": self.reidentified,
        }


def select_triplets(ds, features, cfg, threshold=None, threads=1):
    return TripletSelector(ds, features, cfg, threshold, threads).select()


def select_inertial(ds, triplets, cfg):
    """Inertial triples (i, j, l) with t_l = t_i - (t_j - t_i), one per
    non-reidentified triplet whose mirrored time stamp exists."""
    timestamps = ds.timestamps
    ue_ids = ds.ue_ids
    tracks = ds.tracks()
    half_step = {}
    for ue, idx in tracks.items():
        steps = np.diff(timestamps[idx])
        half_step[ue] = 0.5 * float(np.median(steps)) if steps.size else 0.0

    out = []
    skipped = 0
    for k, trip in enumerate(triplets):
        if trip.reidentified:
            continue
        i, j = trip.anchor, trip.positive
        if not abs(timestamps[i] - timestamps[j]) < cfg.t_c:
            skipped += 1
            continue
        ue = int(ue_ids[i])
        track = tracks[ue]
        times = timestamps[track]
        target = 2 * timestamps[i] - timestamps[j]
        pos = int(np.searchsorted(times, target))
        best = None
        for cand in (pos - 1, pos):
            if 0 <= cand < len(times):
                if best is None or abs(times[cand] - target) < abs(times[best] - target):
                    best = cand
        if best is None or abs(times[best] - target) > half_step[ue]:
            skipped += 1
            continue
        ell = int(track[best])
        if ell in (i, j):
            skipped += 1
            continue
        out.append(InertialTriple(i, j, ell, k))
    log.info("Selected %d inertial triples (%d skipped)", len(out), skipped)
    return out


def triplets_csv(triplets):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["anchor", "positive", "negative", "reidentified"])
    for t in triplets:
        writer.writerow([t.anchor, t.positive, t.negative, int(t.reidentified)])
    return buf.getvalue()


def inertial_csv(triples):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["i", "j", "ell", "triplet_index"])
    for t in triples:
        writer.writerow([t.i, t.j, t.ell, t.triplet_index])
    return buf.getvalue()


def triplet_array(triplets):
    """K x 3 int array (anchor, positive, negative)."""
    if not triplets:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array([(t.anchor, t.positive, t.negative) for t in triplets], dtype=np.int64)


def inertial_array(triples):
    """M x 3 int array (i, j, ell)."""
    if not triples:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array([(t.i, t.j, t.ell) for t in triples], dtype=np.int64)
