"""
Charting network g_theta: feature vector -> 2-D chart point.

Three dense layers halve the width (F -> F/2 -> F/4 -> G); hidden layers use
ReLU, the output layer a softmax over a G-point centroid lattice, and the chart
point is the PMF-weighted centroid mean. All arithmetic is float64.
"""

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from core.errors import ContractError, FormatError, ShapeError
from core.storage import atomic_write

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CCM1"


@dataclass(frozen=True)
class CentroidGrid:
    grid_side: int = 16
    extent: float = 150.0

    def __post_init__(self):
        if self.grid_side < 2:
            raise ShapeError(f"grid_side must be >= 2, got {self.grid_side}")
        if not self.extent > 0:
            raise ShapeError(f"extent must be > 0, got {self.extent}")

    @property
    def size(self):
        return self.grid_side * self.grid_side

    @property
    def centers(self):
        """G x 2 lattice over [-E, E]^2, x varying fastest."""
        axis = np.linspace(-self.extent, self.extent, self.grid_side)
        xx, yy = np.meshgrid(axis, axis)
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class ForwardCache:
    """Activations of one forward pass, tied to a parameter version."""

    version: int
    activations: list      # inputs to each layer, activations[0] = features
    pre_activations: list  # affine outputs of each layer
    pmf: np.ndarray


def layer_dims_for(n_features, grid):
    return [n_features, n_features // 2, n_features // 4, grid.size]


class ChartModel:
    def __init__(self, layer_dims, weights, biases, grid):
        if len(weights) != len(layer_dims) - 1 or len(biases) != len(weights):
            raise ShapeError("weights/biases do not match layer_dims")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (layer_dims[k], layer_dims[k + 1]) or b.shape != (layer_dims[k + 1],):
                raise ShapeError(f"layer {k}: parameter shapes do not match layer_dims")
        if layer_dims[-1] != grid.size:
            raise ShapeError(f"output width {layer_dims[-1]} != grid size {grid.size}")
        self.layer_dims = list(layer_dims)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.grid = grid
        self._centers = grid.centers
        self.version = 0

    @property
    def n_features(self):
        return self.layer_dims[0]

    @property
    def centers(self):
        return self._centers

    def copy(self):
        clone = ChartModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.grid,
        )
        return clone

    def parameters(self):
        """Parameter arrays in checkpoint order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        offset = 0
        for p in self.parameters():
            p[...] = theta[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != theta.size:
            raise ShapeError(f"parameter vector has {theta.size} entries, model needs {offset}")
        self.bump()

    def bump(self):
        """Mark parameters as changed; older caches become stale."""
        self.version += 1

    def forward(self, features):
        """Chart points, PMFs and a cache for one feature vector or an N x F batch."""
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n_features:
            raise ShapeError(f"feature length {x.shape[1]} != model input {self.n_features}")

        activations = [x]
        pre = []
        a = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            pre.append(z)
            if k < last:
                a = np.maximum(z, 0.0)
                activations.append(a)
        logits = pre[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        pmf = e / e.sum(axis=1, keepdims=True)
        points = pmf @ self._centers

        cache = ForwardCache(self.version, activations, pre, pmf)
        if single:
            return points[0], pmf[0], cache
        return points, pmf, cache

    def backward(self, cache, grad_points):
        """d loss / d theta given d loss / d chart point, summed over the batch.

        Returns a list of gradient arrays in parameters() order.
        """
        if cache.version != self.version:
            raise ContractError(
                f"stale forward cache (version {cache.version}, model {self.version})"
            )
        g = np.atleast_2d(np.asarray(grad_points, dtype=np.float64))
        if g.shape != (cache.pmf.shape[0], 2):
            raise ShapeError(f"chart-point gradient shape {g.shape} != ({cache.pmf.shape[0]}, 2)")

        p = cache.pmf
        grad_p = g @ self._centers.T
        delta = p * (grad_p - np.sum(grad_p * p, axis=1, keepdims=True))

        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            a_in = cache.activations[k]
            grads[2 * k] = a_in.T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (cache.pre_activations[k - 1] > 0)
        return grads


def init_model(n_features, grid, seed=0):
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    if n_features < 4:
        raise ShapeError(f"need at least 4 input features, got {n_features}")
    dims = layer_dims_for(n_features, grid)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    log.debug("Initialized model with layer dims %s", dims)
    return ChartModel(dims, weights, biases, grid)


def forward(model, f):
    """Single-feature forward pass: (chart_point, pmf, cache)."""
    values = getattr(f, "values", f)
    return model.forward(np.asarray(values, dtype=np.float64))


def backward(model, cache, grad_chart_point):
    return model.backward(cache, grad_chart_point)


def encode_checkpoint(model):
    head = CHECKPOINT_MAGIC + struct.pack("<I", len(model.layer_dims))
    head += struct.pack(f"<{len(model.layer_dims)}I", *model.layer_dims)
    head += struct.pack("<Id", model.grid.grid_side, model.grid.extent)
    return head + model.get_flat().astype("<f8").tobytes()


def decode_checkpoint(data):
    if bytes(data[:4]) != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}: not a CCM1 checkpoint")
    try:
        (n_dims,) = struct.unpack_from("<I", data, 4)
        dims = list(struct.unpack_from(f"<{n_dims}I", data, 8))
        grid_side, extent = struct.unpack_from("<Id", data, 8 + 4 * n_dims)
    except struct.error as e:
        raise FormatError(f"truncated checkpoint header: {e}") from None
    offset = 8 + 4 * n_dims + 12
    n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    body = data[offset:]
    if len(body) != 8 * n_params:
        raise FormatError(f"checkpoint holds {len(body)} parameter bytes, expected {8 * n_params}")
    grid = CentroidGrid(grid_side, extent)
    weights = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    model = ChartModel(dims, weights, biases, grid)
    model.set_flat(np.frombuffer(body, dtype="<f8"))
    model.version = 0
    return model


def save_checkpoint(model, path):
    atomic_write(path, encode_checkpoint(model))
    log.info("Saved checkpoint (dims %s) to %s", model.layer_dims, path)


def load_checkpoint(path):
    with open(path, "rb") as f:
        model = decode_checkpoint(f.read())
    log.info("Loaded checkpoint (dims %s) from %s", model.layer_dims, path)
    return model
