"""
Mini-batch Adam training of the charting network against the configured loss,
and out-of-sample embedding of features.
"""

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from PyQt5.QtCore import QObject, pyqtSignal

from core.errors import ConfigError, ContractError, NumericError, ShapeError
from core.features import stack_features
from core.losses import LossBatch, LossConfig, total_loss
from core.selection import inertial_array, triplet_array

log = logging.getLogger(__name__)

_EMBED_CHUNK = 4096


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    resample_triplets: bool = False
    rng_seed: int = 0

    @property
    def mu(self):
        return self.loss.mu

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate", "must be >= 0")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("adam_beta1", "Adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps", "must be > 0")
        self.loss.validate()


@dataclass
class EpochStats:
    epoch: int
    mean_main_loss: float
    mean_inertial_loss: float
    mean_loss: float


class AdamOptimizer:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, learning_rate, betas=(0.9, 0.999), eps=1e-8):
        self._lr = learning_rate
        self._b1, self._b2 = betas
        self._eps = eps
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]
        self._t = 0

    def step(self, params, grads):
        self._t += 1
        c1 = 1.0 - self._b1 ** self._t
        c2 = 1.0 - self._b2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self._b1
            m += (1.0 - self._b1) * g
            v *= self._b2
            v += (1.0 - self._b2) * g * g
            p -= self._lr * (m / c1) / (np.sqrt(v / c2) + self._eps)


def draw_pairs(n, count, rng):
    """count index pairs (i, j), i != j, drawn uniformly over the whole dataset."""
    if n < 2:
        raise ContractError(f"cannot draw pairs from {n} samples")
    i = rng.integers(0, n, count)
    j = (i + rng.integers(1, n, count)) % n
    return np.column_stack([i, j]).astype(np.int64)


def pair_feature_distances(matrix, pairs):
    return np.linalg.norm(matrix[pairs[:, 0]] - matrix[pairs[:, 1]], axis=1)


def _attach_inertial(n_triplets, inertial):
    """Row of the inertial triple generated by each triplet (-1 if none),
    plus the rows not tied to any triplet."""
    owner = np.full(n_triplets, -1, dtype=np.int64)
    loose = []
    for row, t in enumerate(inertial):
        if 0 <= t.triplet_index < n_triplets and owner[t.triplet_index] < 0:
            owner[t.triplet_index] = row
        else:
            loose.append(row)
    return owner, np.array(loose, dtype=np.int64)


class Trainer(QObject):
    """Runs the optimization loop; reports progress through Qt signals."""

    epoch_finished = pyqtSignal(int, float, float)  # epoch, mean main, mean inertial
    step_failed = pyqtSignal(str)

    def __init__(self, model, features, triplets, inertial, cfg, resampler=None, parent=None):
        super().__init__(parent)
        cfg.validate()
        self._model = model
        self._features = stack_features(features)
        if self._features.shape[1:] != (model.n_features,):
            raise ContractError(
                f"feature width {self._features.shape[1:]} != model input {model.n_features}"
            )
        self._cfg = cfg
        self._resampler = resampler
        self._rng = np.random.default_rng(cfg.rng_seed)
        self._pair_rng = np.random.default_rng([cfg.rng_seed, 1])
        self._set_selection(triplets, inertial)

    def _set_selection(self, triplets, inertial):
        n = len(self._features)
        self._triplets = triplet_array(triplets)
        self._inertial = inertial_array(inertial)
        for name, arr in (("triplet", self._triplets), ("inertial", self._inertial)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ContractError(f"{name} index outside [0, {n})")
        if len(self._triplets) == 0:
            raise ContractError("training needs at least one triplet")
        self._owner, self._loose = _attach_inertial(len(self._triplets), inertial)

    @property
    def model(self):
        return self._model

    def _batches(self):
        order = self._rng.permutation(len(self._triplets))
        size = self._cfg.batch_size
        n_batches = -(-len(order) // size)
        loose_batch = (np.arange(len(self._loose)) * n_batches) // max(len(self._loose), 1)
        for b in range(n_batches):
            members = order[b * size:(b + 1) * size]
            rows = self._owner[members]
            rows = rows[rows >= 0]
            extra = self._loose[loose_batch == b]
            yield members, np.concatenate([rows, extra]).astype(np.int64)

    def _loss_batch(self, members, inertial_rows):
        """Local index sets plus the global sample indices they refer to."""
        trip = self._triplets[members]
        inert = self._inertial[inertial_rows]
        sammon = self._cfg.loss.kind == "sammon_siamese"
        if sammon:
            global_pairs = draw_pairs(len(self._features), 2 * len(trip), self._pair_rng)
        else:
            global_pairs = np.zeros((0, 2), dtype=np.int64)
        needed = np.unique(np.concatenate([trip.ravel(), inert.ravel(), global_pairs.ravel()]))
        local_trip = np.searchsorted(needed, trip)
        local_inert = np.searchsorted(needed, inert)
        batch = LossBatch(triplets=local_trip, inertial=local_inert)
        if sammon:
            batch.pairs = np.searchsorted(needed, global_pairs)
            batch.pair_distances = pair_feature_distances(self._features, global_pairs)
        return needed, batch

    def _step(self, optimizer, members, inertial_rows, where):
        needed, batch = self._loss_batch(members, inertial_rows)
        points, _, cache = self._model.forward(self._features[needed])
        loss = total_loss(self._cfg.loss, batch, points, reduction="mean")
        if not math.isfinite(loss.value) or not np.all(np.isfinite(loss.grad)):
            self._fail(f"non-finite loss at {where}")
        grads = self._model.backward(cache, loss.grad)
        if not all(np.all(np.isfinite(g)) for g in grads):
            self._fail(f"non-finite gradient at {where}")
        optimizer.step(self._model.parameters(), grads)
        self._model.bump()
        if not all(np.all(np.isfinite(p)) for p in self._model.parameters()):
            self._fail(f"non-finite parameter after {where}")
        n_main = len(batch.pairs) if batch.pairs is not None else len(batch.triplets)
        return loss.main * n_main, loss.inertial * len(batch.inertial), n_main, len(batch.inertial)

    def _fail(self, message):
        self.step_failed.emit(message)
        raise NumericError(message)

    def run(self):
        """Train for cfg.epochs; returns (model, history of EpochStats)."""
        cfg = self._cfg
        optimizer = AdamOptimizer(
            self._model.parameters(), cfg.learning_rate, cfg.adam_betas, cfg.adam_eps
        )
        history = []
        for epoch in range(cfg.epochs):
            if epoch > 0 and cfg.resample_triplets and self._resampler is not None:
                self._set_selection(*self._resampler(epoch))
            main_sums, inert_sums = [], []
            n_main = n_inert = 0
            for step, (members, rows) in enumerate(self._batches()):
                m, i, nm, ni = self._step(optimizer, members, rows, f"epoch {epoch} step {step}")
                main_sums.append(m)
                inert_sums.append(i)
                n_main += nm
                n_inert += ni
            mean_main = math.fsum(main_sums) / max(n_main, 1)
            mean_inert = math.fsum(inert_sums) / max(n_inert, 1)
            stats = EpochStats(epoch, mean_main, mean_inert, mean_main + cfg.mu * mean_inert)
            history.append(stats)
            self.epoch_finished.emit(epoch, mean_main, mean_inert)
        return self._model, history


def train(model, ds, features, triplets, inertial, cfg, resampler=None, on_epoch=None):
    """Train a copy of model; the input model is left untouched."""
    matrix = stack_features(features)
    if len(matrix) != len(ds):
        raise ContractError(f"{len(matrix)} features for {len(ds)} samples")
    trainer = Trainer(model.copy(), matrix, triplets, inertial, cfg, resampler)
    if on_epoch is not None:
        trainer.epoch_finished.connect(on_epoch)
    log.info("Training %s loss (mu=%g) on %d triplets, %d inertial triples for %d epochs",
             cfg.loss.kind, cfg.mu, len(triplets), len(inertial), cfg.epochs)
    return trainer.run()


def mean_loss(model, features, triplets, inertial, loss_cfg, seed=0):
    """Dataset-wide mean objective (main mean + mu * inertial mean) at the current theta.

    The Sammon objective is estimated on 2 * len(triplets) seeded random pairs.
    """
    matrix = stack_features(features)
    trip = triplet_array(triplets)
    inert = inertial_array(inertial)
    points = embed_dataset(model, matrix)
    batch = LossBatch(triplets=trip, inertial=inert)
    if loss_cfg.kind == "sammon_siamese":
        batch.pairs = draw_pairs(len(matrix), 2 * len(trip), np.random.default_rng(seed))
        batch.pair_distances = pair_feature_distances(matrix, batch.pairs)
    return total_loss(loss_cfg, batch, points, reduction="mean").value


def embed_dataset(model, features):
    """Chart point of every feature, order preserved."""
    matrix = stack_features(features)
    if len(matrix) == 0:
        return np.zeros((0, 2))
    if matrix.shape[1] != model.n_features:
        raise ShapeError(f"feature length {matrix.shape[1]} != model input {model.n_features}")
    blocks = []
    for start in range(0, len(matrix), _EMBED_CHUNK):
        points, _, _ = model.forward(matrix[start:start + _EMBED_CHUNK])
        blocks.append(points)
    return np.concatenate(blocks)


def history_rows(history):
    return [
        [s.epoch, repr(s.mean_main_loss), repr(s.mean_inertial_loss)] for s in history
    ]
