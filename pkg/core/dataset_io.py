"""
In-memory dataset containers and the CCD1 binary dataset format.

Layout (little-endian):
    "CCD1"
    u32 N, u32 B, u32 W, u32 C,
    u8 geometry tag (0 = ULA, 1 = URA), u16 rows, u16 cols,
    f64 bandwidth, f64 carrier, u8 has_ground_truth
    N records of:
        u32 ue_id, f64 timestamp, [2 x f64 ground truth],
        B*W complex entries as interleaved f32 (real, imag), row-major
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.errors import FormatError, ValidationError
from core.storage import atomic_write

log = logging.getLogger(__name__)

MAGIC = b"CCD1"
_HEADER = struct.Struct("<4sIIIIBHHddB")

GEOMETRY_TAGS = {"ULA": 0, "URA": 1}
_TAG_TO_GEOMETRY = {v: k for k, v in GEOMETRY_TAGS.items()}


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna array layout. ULA is stored as rows = B, cols = 1."""

    kind: str = "ULA"
    rows: int = 1
    cols: int = 1

    @classmethod
    def ula(cls, n_antennas):
        return cls("ULA", n_antennas, 1)

    @classmethod
    def ura(cls, rows, cols):
        return cls("URA", rows, cols)

    @property
    def n_antennas(self):
        return self.rows * self.cols

    def to_dict(self):
        return {"kind": self.kind, "rows": self.rows, "cols": self.cols}


@dataclass(frozen=True)
class DatasetMeta:
    n_antennas: int
    n_subcarriers: int
    cyclic_prefix: int
    geometry: ArrayGeometry
    bandwidth_hz: float
    carrier_hz: float

    def to_dict(self):
        return {
            "n_antennas": self.n_antennas,
            "n_subcarriers": self.n_subcarriers,
            "cyclic_prefix": self.cyclic_prefix,
            "geometry": self.geometry.to_dict(),
            "bandwidth_hz": self.bandwidth_hz,
            "carrier_hz": self.carrier_hz,
        }


@dataclass(frozen=True, eq=False)
class CSISample:
    """One B x W CSI matrix with its UE, time stamp and optional location."""

    h: np.ndarray
    ue_id: int
    timestamp: float
    ground_truth: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, CSISample):
            return NotImplemented
        if self.ue_id != other.ue_id or self.timestamp != other.timestamp:
            return False
        if (self.ground_truth is None) != (other.ground_truth is None):
            return False
        if self.ground_truth is not None and not np.array_equal(
            self.ground_truth, other.ground_truth
        ):
            return False
        return self.h.shape == other.h.shape and np.array_equal(self.h, other.h)


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple
    meta: DatasetMeta
    _tracks: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.meta == other.meta and len(self) == len(other) and all(
            a == b for a, b in zip(self.samples, other.samples)
        )

    @property
    def has_ground_truth(self):
        return bool(self.samples) and all(
            s.ground_truth is not None for s in self.samples
        )

    @property
    def timestamps(self):
        return np.array([s.timestamp for s in self.samples], dtype=np.float64)

    @property
    def ue_ids(self):
        return np.array([s.ue_id for s in self.samples], dtype=np.int64)

    def positions(self):
        """N x 2 ground-truth matrix, or None when any sample lacks it."""
        if not self.has_ground_truth:
            return None
        return np.array([s.ground_truth for s in self.samples], dtype=np.float64)

    def csi_tensor(self):
        """N x B x W complex128 stack of all CSI matrices."""
        if not self.samples:
            return np.zeros(
                (0, self.meta.n_antennas, self.meta.n_subcarriers), dtype=np.complex128
            )
        return np.stack([np.asarray(s.h, dtype=np.complex128) for s in self.samples])

    def tracks(self):
        """ue_id -> index array in sample order (timestamps increasing)."""
        if self._tracks is None:
            ids = self.ue_ids
            tracks = {int(u): np.flatnonzero(ids == u) for u in np.unique(ids)}
            object.__setattr__(self, "_tracks", tracks)
        return self._tracks

    def sampling_interval(self):
        """Median time step over all tracks, or nan with fewer than two samples."""
        steps = [np.diff(self.timestamps[idx]) for idx in self.tracks().values()]
        steps = [s for s in steps if s.size]
        if not steps:
            return math.nan
        return float(np.median(np.concatenate(steps)))


def validate_dataset(ds):
    """Raise ValidationError when ds breaks any Dataset invariant."""
    meta = ds.meta
    B, W, C = meta.n_antennas, meta.n_subcarriers, meta.cyclic_prefix
    if B < 1 or W < 1:
        raise ValidationError(f"B and W must be >= 1, got B={B}, W={W}")
    if not 1 <= C <= W:
        raise ValidationError(f"cyclic prefix C={C} outside [1, W={W}]")
    if meta.geometry.kind not in GEOMETRY_TAGS:
        raise ValidationError(f"unknown array geometry {meta.geometry.kind!r}")
    if meta.geometry.n_antennas != B:
        raise ValidationError(
            f"geometry {meta.geometry.rows}x{meta.geometry.cols} does not match B={B}"
        )
    gt_flags = {s.ground_truth is not None for s in ds.samples}
    if len(gt_flags) > 1:
        raise ValidationError("ground truth must be present on all samples or none")

    if max(meta.geometry.rows, meta.geometry.cols) > 0xFFFF:
        raise ValidationError("array dimensions exceed the u16 header fields")

    last_time = {}
    for idx, s in enumerate(ds.samples):
        if not 0 <= s.ue_id <= 0xFFFFFFFF:
            raise ValidationError(f"sample {idx}: ue_id {s.ue_id} outside u32 range")
        h = np.asarray(s.h)
        if h.shape != (B, W):
            raise ValidationError(f"sample {idx}: CSI shape {h.shape} != ({B}, {W})")
        if not np.all(np.isfinite(h)):
            raise ValidationError(f"sample {idx}: non-finite CSI entry")
        if not (math.isfinite(s.timestamp) and s.timestamp >= 0):
            raise ValidationError(f"sample {idx}: invalid timestamp {s.timestamp}")
        if s.ground_truth is not None:
            gt = np.asarray(s.ground_truth)
            if gt.shape != (2,) or not np.all(np.isfinite(gt)):
                raise ValidationError(f"sample {idx}: ground truth must be a finite 2-vector")
        prev = last_time.get(s.ue_id)
        if prev is not None and s.timestamp <= prev:
            raise ValidationError(
                f"sample {idx}: timestamps of UE {s.ue_id} not strictly increasing"
            )
        last_time[s.ue_id] = s.timestamp


def _record_dtype(B, W, has_gt):
    fields = [("ue_id", "<u4"), ("timestamp", "<f8")]
    if has_gt:
        fields.append(("ground_truth", "<f8", (2,)))
    fields.append(("h", "<f4", (B, W, 2)))
    return np.dtype(fields)


def encode_dataset(ds):
    """Serialize a validated dataset to CCD1 bytes."""
    validate_dataset(ds)
    meta = ds.meta
    B, W = meta.n_antennas, meta.n_subcarriers
    has_gt = ds.has_ground_truth
    header = _HEADER.pack(
        MAGIC,
        len(ds),
        B,
        W,
        meta.cyclic_prefix,
        GEOMETRY_TAGS[meta.geometry.kind],
        meta.geometry.rows,
        meta.geometry.cols,
        float(meta.bandwidth_hz),
        float(meta.carrier_hz),
        int(has_gt),
    )
    records = np.zeros(len(ds), dtype=_record_dtype(B, W, has_gt))
    if len(ds):
        records["ue_id"] = [s.ue_id for s in ds.samples]
        records["timestamp"] = [s.timestamp for s in ds.samples]
        if has_gt:
            records["ground_truth"] = [s.ground_truth for s in ds.samples]
        h = ds.csi_tensor()
        records["h"][..., 0] = h.real
        records["h"][..., 1] = h.imag
    return header + records.tobytes()


def write_dataset(ds, path):
    """Validate ds and write it to path in CCD1 format."""
    payload = encode_dataset(ds)
    atomic_write(path, payload)
    log.info("Wrote %d samples to %s", len(ds), path)


def decode_dataset(data):
    """Parse CCD1 bytes into a validated Dataset."""
    if bytes(data[:4]) != MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}: not a CCD1 dataset")
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    (magic, n, B, W, C, tag, rows, cols,
     bandwidth, carrier, has_gt) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}: not a CCD1 dataset")
    if tag not in _TAG_TO_GEOMETRY:
        raise FormatError(f"unknown geometry tag {tag}")
    if has_gt not in (0, 1):
        raise FormatError(f"invalid ground-truth flag {has_gt}")

    dtype = _record_dtype(B, W, bool(has_gt))
    body = memoryview(data)[_HEADER.size:]
    expected = n * dtype.itemsize
    if len(body) < expected:
        complete = len(body) // dtype.itemsize if dtype.itemsize else 0
        raise FormatError(f"truncated payload in record {complete} of {n}")
    if len(body) > expected:
        raise FormatError(f"{len(body) - expected} trailing bytes after {n} records")

    records = np.frombuffer(body, dtype=dtype, count=n) if n else np.zeros(0, dtype=dtype)
    samples = []
    for rec in records:
        raw = rec["h"].astype(np.float64)
        h = raw[..., 0] + 1j * raw[..., 1]
        gt = np.array(rec["ground_truth"], dtype=np.float64) if has_gt else None
        samples.append(CSISample(h, int(rec["ue_id"]), float(rec["timestamp"]), gt))

    geometry = ArrayGeometry(_TAG_TO_GEOMETRY[tag], rows, cols)
    meta = DatasetMeta(B, W, C, geometry, bandwidth, carrier)
    ds = Dataset(samples, meta)
    validate_dataset(ds)
    return ds


def read_dataset(path):
    """Read a CCD1 file. Raises FormatError or ValidationError on bad input."""
    with open(path, "rb") as f:
        data = f.read()
    ds = decode_dataset(data)
    log.info("Loaded %d samples (B=%d, W=%d) from %s",
             len(ds), ds.meta.n_antennas, ds.meta.n_subcarriers, path)
    return ds
