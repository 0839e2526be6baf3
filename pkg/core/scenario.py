"""
Desk-scale synthetic scenario: a UE walking randomly along the streets of a
block grid, observed by a multi-antenna BS through a geometric multipath
SIMO-OFDM channel with thermal noise.

Randomness comes from one seed, split into independent streams for the
trajectory, the scatterer layout and the receiver noise.
"""

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from core.dataset_io import ArrayGeometry, CSISample, Dataset, DatasetMeta
from core.errors import ConfigError

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
BOLTZMANN = 1.380649e-23

# Directions along the street grid: east, north, west, south.
_DIRECTIONS = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.int64)


@dataclass
class ScenarioConfig:
    grid_blocks: tuple = (4, 4)
    block_size_m: float = 25.0
    speed_range: tuple = (0.5, 2.0)
    speed_step_std: float = 0.1
    sample_rate_hz: float = 2.0
    n_samples: int = 2000
    bs_position: tuple = (50.0, -50.0)
    bs_height_m: float = 25.0
    ue_height_m: float = 1.5
    array: str = "ULA"
    n_antennas: int = 32
    ura_rows: int = 8
    ura_cols: int = 8
    n_subcarriers: int = 64
    cyclic_prefix: int = 16
    bandwidth_hz: float = 20e6
    carrier_hz: float = 2.4e9
    n_paths: int = 20
    los: bool = False
    scatter_loss_db: float = 10.0
    shadowing_db: float = 4.0
    tx_power_dbm: float = 20.0
    noise_temperature_k: float = 300.0
    ue_id: int = 0
    rng_seed: int = 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    @property
    def dt(self):
        return 1.0 / self.sample_rate_hz

    @property
    def geometry(self):
        if self.array == "ULA":
            return ArrayGeometry.ula(self.n_antennas)
        return ArrayGeometry.ura(self.ura_rows, self.ura_cols)

    @property
    def area_size(self):
        nx, ny = self.grid_blocks
        return nx * self.block_size_m, ny * self.block_size_m

    def validate(self):
        v_min, v_max = self.speed_range
        if not 0 < v_min <= v_max:
            raise ConfigError("speed_range", f"need 0 < v_min <= v_max, got ({v_min}, {v_max})")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz", "must be > 0")
        if self.n_paths < 1:
            raise ConfigError("n_paths", "must be >= 1")
        if self.n_subcarriers < 2:
            raise ConfigError("n_subcarriers", "must be >= 2")
        if not 1 <= self.cyclic_prefix <= self.n_subcarriers:
            raise ConfigError("cyclic_prefix", "must lie in [1, n_subcarriers]")
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be >= 1")
        if min(self.grid_blocks) < 1:
            raise ConfigError("grid_blocks", "need at least one block per axis")
        if not self.block_size_m > 0:
            raise ConfigError("block_size_m", "must be > 0")
        if self.array not in ("ULA", "URA"):
            raise ConfigError("array", f"unknown array {self.array!r}")
        if self.array == "URA" and self.ura_rows * self.ura_cols != self.n_antennas:
            raise ConfigError("ura_rows", "ura_rows * ura_cols must equal n_antennas")
        if self.n_antennas < 1:
            raise ConfigError("n_antennas", "must be >= 1")
        if self.speed_step_std < 0:
            raise ConfigError("speed_step_std", "must be >= 0")
        if self.noise_temperature_k < 0:
            raise ConfigError("noise_temperature_k", "must be >= 0")
        step = v_max * self.dt
        if step < 1e-9 * self.block_size_m:
            raise ConfigError("speed_range", "v_max / sample_rate_hz below numeric resolution")
        if step >= self.block_size_m:
            raise ConfigError(
                "speed_range", "v_max / sample_rate_hz must be shorter than one block"
            )


@dataclass
class Trajectory:
    """Uniformly sampled UE track; segments[k] is the street segment id of point k."""

    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    segments: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.timestamps)

    def speeds(self):
        """Chord speed between consecutive points."""
        if len(self) < 2:
            return np.zeros(0)
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return steps / np.diff(self.timestamps)


def segment_id(node, direction, grid_blocks):
    """Stable id of the street segment leaving `node` in `direction`.

    Horizontal segments come first, numbered row by row, then vertical ones.
    """
    nx, ny = grid_blocks
    x, y = int(node[0]), int(node[1])
    dx, dy = int(direction[0]), int(direction[1])
    if dx:
        x0 = min(x, x + dx)
        return y * nx + x0
    y0 = min(y, y + dy)
    return nx * (ny + 1) + x * ny + y0


def n_segments(grid_blocks):
    nx, ny = grid_blocks
    return nx * (ny + 1) + ny * (nx + 1)


def segment_visits(traj, grid_blocks):
    """Number of samples observed on each street segment."""
    return np.bincount(traj.segments, minlength=n_segments(grid_blocks))


def _continuations(node, heading, grid_blocks):
    """Headings available at an intersection, excluding a U-turn."""
    nx, ny = grid_blocks
    options = []
    for k, d in enumerate(_DIRECTIONS):
        if heading is not None and np.array_equal(d, -_DIRECTIONS[heading]):
            continue
        nxt = node + d
        if 0 <= nxt[0] <= nx and 0 <= nxt[1] <= ny:
            options.append(k)
    return options


def generate_trajectory(cfg, rng=None):
    """Random walk along the block-grid streets.

    Each step covers a chord of exactly v_k / sample_rate_hz meters; when a
    step crosses an intersection the UE picks uniformly among non-reversing
    continuations and the landing point is placed so the chord length holds.
    """
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.rng_seed).spawn(3)[0])
    v_min, v_max = cfg.speed_range
    L = cfg.block_size_m
    dt = cfg.dt
    n = cfg.n_samples

    nx, ny = cfg.grid_blocks
    node = np.array([rng.integers(0, nx + 1), rng.integers(0, ny + 1)])
    heading = int(rng.choice(_continuations(node, None, cfg.grid_blocks)))
    offset = float(rng.uniform(0.0, L))  # distance travelled along current segment
    speed = float(rng.uniform(v_min, v_max))

    positions = np.zeros((n, 2))
    velocities = np.zeros((n, 2))
    segments = np.zeros(n, dtype=np.int64)

    for k in range(n):
        d = _DIRECTIONS[heading]
        positions[k] = (node + d * (offset / L)) * L
        velocities[k] = d * speed
        segments[k] = segment_id(node, d, cfg.grid_blocks)
        if k == n - 1:
            break

        speed = float(np.clip(speed + rng.normal(0.0, cfg.speed_step_std), v_min, v_max))
        step = speed * dt
        remaining = L - offset
        if step < remaining:
            offset += step
            continue

        # Crossing the next intersection: keep the chord length equal to step.
        node = node + d
        new_heading = int(rng.choice(_continuations(node, heading, cfg.grid_blocks)))
        cos_turn = float(np.dot(_DIRECTIONS[heading], _DIRECTIONS[new_heading]))
        r = remaining
        offset = -r * cos_turn + math.sqrt(max(r * r * cos_turn * cos_turn - r * r + step * step, 0.0))
        heading = new_heading
        if offset >= L:
            raise ConfigError("speed_range", "step overshoots a block; lower v_max")

    timestamps = np.arange(n, dtype=np.float64) * dt
    traj = Trajectory(timestamps, positions, velocities, segments)
    log.info("Generated trajectory: %d points over %.1f s", n, timestamps[-1])
    return traj


def steering_vector(direction, geometry):
    """Half-wavelength array response for a unit arrival direction (x, y, z).

    ULA elements lie along x; URA rows along x, columns along z, antenna
    index = row * cols + col.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if geometry.kind == "ULA":
        b = np.arange(geometry.n_antennas)
        return np.exp(1j * np.pi * b * direction[0])
    r = np.arange(geometry.rows)[:, None]
    c = np.arange(geometry.cols)[None, :]
    return np.exp(1j * np.pi * (r * direction[0] + c * direction[2])).reshape(-1)


def subcarrier_frequencies(n_subcarriers, bandwidth_hz):
    """Baseband subcarrier offsets f_w = (w - W/2) * bandwidth / W."""
    spacing = bandwidth_hz / n_subcarriers
    return (np.arange(n_subcarriers) - n_subcarriers // 2) * spacing


@dataclass
class Scatterers:
    positions: np.ndarray  # P x 3, meters
    gains: np.ndarray      # P complex


def place_scatterers(cfg, rng):
    """Point scatterers uniformly placed around the street area."""
    n_scatter = cfg.n_paths - 1 if cfg.los else cfg.n_paths
    width, height = cfg.area_size
    margin = cfg.block_size_m
    xy = np.column_stack([
        rng.uniform(-margin, width + margin, n_scatter),
        rng.uniform(-margin, height + margin, n_scatter),
    ])
    z = rng.uniform(0.0, cfg.bs_height_m, n_scatter)
    loss_db = cfg.scatter_loss_db + cfg.shadowing_db * rng.standard_normal(n_scatter)
    phase = rng.uniform(0.0, 2 * np.pi, n_scatter)
    gains = 10.0 ** (-loss_db / 20.0) * np.exp(1j * phase)
    return Scatterers(np.column_stack([xy, z]), gains)


def channel_at(position, cfg, scatterers):
    """Noiseless B x W CSI of a UE at a 2-D position, scaled by sqrt(tx power)."""
    geometry = cfg.geometry
    freqs = subcarrier_frequencies(cfg.n_subcarriers, cfg.bandwidth_hz)
    wavelength = SPEED_OF_LIGHT / cfg.carrier_hz
    bs = np.array([cfg.bs_position[0], cfg.bs_position[1], cfg.bs_height_m])
    ue = np.array([position[0], position[1], cfg.ue_height_m])

    h = np.zeros((geometry.n_antennas, cfg.n_subcarriers), dtype=np.complex128)
    paths = []
    if cfg.los:
        paths.append((ue, 1.0 + 0j, np.linalg.norm(ue - bs)))
    for s_pos, s_gain in zip(scatterers.positions, scatterers.gains):
        length = np.linalg.norm(ue - s_pos) + np.linalg.norm(s_pos - bs)
        paths.append((s_pos, s_gain, length))

    for source, gain, length in paths:
        arrival = source - bs
        arrival = arrival / np.linalg.norm(arrival)
        tau = length / SPEED_OF_LIGHT
        alpha = gain * wavelength / (4 * np.pi * length) * np.exp(-2j * np.pi * cfg.carrier_hz * tau)
        h += alpha * np.outer(steering_vector(arrival, geometry), np.exp(-2j * np.pi * freqs * tau))

    tx_power_w = 10.0 ** ((cfg.tx_power_dbm - 30.0) / 10.0)
    return math.sqrt(tx_power_w) * h


def noise_variance(cfg):
    """Per-entry complex noise variance k_B * T * bandwidth (watts)."""
    return BOLTZMANN * cfg.noise_temperature_k * cfg.bandwidth_hz


def synthesize_csi(traj, cfg, scatterers=None):
    """One CSISample per trajectory point, with thermal noise added."""
    cfg.validate()
    if len(traj) == 0:
        raise ConfigError("n_samples", "trajectory is empty")
    _, scatter_seed, noise_seed = np.random.SeedSequence(cfg.rng_seed).spawn(3)
    if scatterers is None:
        scatterers = place_scatterers(cfg, np.random.default_rng(scatter_seed))
    noise_rng = np.random.default_rng(noise_seed)
    sigma = math.sqrt(noise_variance(cfg) / 2.0)
    shape = (cfg.geometry.n_antennas, cfg.n_subcarriers)

    samples = []
    for t, pos in zip(traj.timestamps, traj.positions):
        h = channel_at(pos, cfg, scatterers)
        noise = noise_rng.standard_normal(shape) + 1j * noise_rng.standard_normal(shape)
        h = h + sigma * noise
        samples.append(CSISample(h, cfg.ue_id, float(t), np.array(pos, dtype=np.float64)))

    meta = DatasetMeta(
        n_antennas=cfg.geometry.n_antennas,
        n_subcarriers=cfg.n_subcarriers,
        cyclic_prefix=cfg.cyclic_prefix,
        geometry=cfg.geometry,
        bandwidth_hz=float(cfg.bandwidth_hz),
        carrier_hz=float(cfg.carrier_hz),
    )
    log.info("Synthesized %d CSI samples (B=%d, W=%d, %d paths, %s)",
             len(samples), meta.n_antennas, meta.n_subcarriers, cfg.n_paths,
             "LoS" if cfg.los else "NLoS")
    return Dataset(samples, meta)


def generate_dataset(cfg):
    """Trajectory plus CSI in one call, all from cfg.rng_seed."""
    return synthesize_csi(generate_trajectory(cfg), cfg)
