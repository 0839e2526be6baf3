"""
CSI -> feature pipeline: normalize, delay transform, beamspace transform,
circular autocorrelation, truncation and magnitude vectorization.

Every stage accepts a single B x W matrix or a stack (..., B, W); all DFTs are
unitary (numpy norm="ortho").
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from core.errors import ConfigError, DegenerateInputError, ShapeError
from core.storage import atomic_write

log = logging.getLogger(__name__)

_CHUNK = 512


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    source_index: int
    timestamp: float

    def __len__(self):
        return len(self.values)


def normalize(h):
    """Scale to unit Frobenius norm over the last two axes."""
    h = np.asarray(h, dtype=np.complex128)
    norm = np.sqrt(np.sum(np.abs(h) ** 2, axis=(-2, -1), keepdims=True))
    if np.any(norm == 0):
        raise DegenerateInputError("cannot normalize an all-zero CSI matrix")
    return h / norm


def delay_transform(h_norm, cyclic_prefix):
    """H F^H with the unitary W-point DFT, keeping the first C delay taps."""
    h_norm = np.asarray(h_norm)
    W = h_norm.shape[-1]
    if not 1 <= cyclic_prefix <= W:
        raise ConfigError("cyclic_prefix", f"C={cyclic_prefix} outside [1, W={W}]")
    return np.fft.ifft(h_norm, axis=-1, norm="ortho")[..., :cyclic_prefix]


def beamspace_transform(h_delay, geometry):
    """Unitary DFT across antennas: 1-D for a ULA, 2-D per column for a URA."""
    h_delay = np.asarray(h_delay)
    B = h_delay.shape[-2]
    if geometry.n_antennas != B:
        raise ConfigError(
            "array", f"geometry {geometry.rows}x{geometry.cols} does not match B={B}"
        )
    if geometry.kind == "ULA":
        return np.fft.fft(h_delay, axis=-2, norm="ortho")
    if geometry.kind != "URA":
        raise ConfigError("array", f"unknown array geometry {geometry.kind!r}")
    lead = h_delay.shape[:-2]
    C = h_delay.shape[-1]
    cube = h_delay.reshape(lead + (geometry.rows, geometry.cols, C))
    beams = np.fft.fft2(cube, axes=(-3, -2), norm="ortho")
    return beams.reshape(lead + (B, C))


def autocorrelate(h_beam):
    """2-D circular autocorrelation R[m, n] = sum H[a, b] conj(H[a+m, b+n]).

    Computed through the Wiener-Khinchin relation: the DFT of |DFT(H)|^2.
    """
    h_beam = np.asarray(h_beam, dtype=np.complex128)
    B, C = h_beam.shape[-2:]
    power = np.abs(np.fft.fft2(h_beam, axes=(-2, -1))) ** 2
    return np.fft.fft2(power, axes=(-2, -1)) / (B * C)


def feature_length(n_antennas, cyclic_prefix):
    return math.ceil(n_antennas / 2) * cyclic_prefix


def feature_matrix(csi, meta):
    """Feature rows for an (N, B, W) CSI stack."""
    csi = np.asarray(csi)
    if csi.shape[-2:] != (meta.n_antennas, meta.n_subcarriers):
        raise ShapeError(
            f"CSI shape {csi.shape[-2:]} does not match meta "
            f"({meta.n_antennas}, {meta.n_subcarriers})"
        )
    keep = math.ceil(meta.n_antennas / 2)
    h = normalize(csi)
    h = delay_transform(h, meta.cyclic_prefix)
    h = beamspace_transform(h, meta.geometry)
    r = autocorrelate(h)[..., :keep, :]
    return np.abs(r).reshape(r.shape[:-2] + (-1,))


def extract_feature(sample, meta, source_index=0):
    values = feature_matrix(sample.h, meta)
    return FeatureVector(values, source_index, float(sample.timestamp))


def extract_features(ds, threads=1):
    """Features for every sample of ds, in sample order."""
    csi = ds.csi_tensor()
    n = len(ds)
    chunks = [(start, min(start + _CHUNK, n)) for start in range(0, n, _CHUNK)]

    def run(bounds):
        start, stop = bounds
        return feature_matrix(csi[start:stop], ds.meta)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, chunks))
    else:
        blocks = [run(c) for c in chunks]

    F = feature_length(ds.meta.n_antennas, ds.meta.cyclic_prefix)
    matrix = np.concatenate(blocks) if blocks else np.zeros((0, F))
    timestamps = ds.timestamps
    log.info("Extracted %d features of length %d", n, F)
    return [FeatureVector(matrix[i], i, float(timestamps[i])) for i in range(n)]


def average_features(features, ds, group):
    """Replace each feature by the mean of its block of `group` consecutive
    same-UE samples. group <= 1 returns the input unchanged."""
    if group <= 1:
        return list(features)
    matrix = stack_features(features)
    out = matrix.copy()
    for indices in ds.tracks().values():
        for start in range(0, len(indices), group):
            block = indices[start:start + group]
            out[block] = matrix[block].mean(axis=0)
    log.info("Averaged features over blocks of %d measurements", group)
    return [FeatureVector(out[i], f.source_index, f.timestamp) for i, f in enumerate(features)]


def stack_features(features):
    """N x F matrix from a list of FeatureVector (or pass an array through)."""
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features).astype(np.float64, copy=False)
    if not features:
        return np.zeros((0, 0))
    lengths = {len(f) for f in features}
    if len(lengths) != 1:
        raise ShapeError(f"features have differing lengths {sorted(lengths)}")
    return np.stack([f.values for f in features]).astype(np.float64, copy=False)


def features_csv(features):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    width = len(features[0]) if features else 0
    writer.writerow(["index", "timestamp"] + [f"f{k}" for k in range(width)])
    for f in features:
        writer.writerow([f.source_index, repr(f.timestamp)] + [repr(float(v)) for v in f.values])
    return buf.getvalue()


def write_features_csv(features, path):
    atomic_write(path, features_csv(features).encode("utf-8"))
    log.info("Wrote %d feature rows to %s", len(features), path)
