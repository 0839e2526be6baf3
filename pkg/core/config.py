"""
Flat key=value run configuration.

One table lists every key with its parser and help text; it drives config
file parsing, command-line flag generation and serialization. Keys whose
value is "auto" are derived from the data once it is known.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, asdict

from core.errors import ConfigError
from core.losses import LossConfig
from core.model import CentroidGrid
from core.scenario import ScenarioConfig
from core.selection import SelectionConfig
from core.trainer import TrainConfig

log = logging.getLogger(__name__)

AUTO = "auto"

# Sampling intervals per positive window, and negative/positive window ratio.
T_C_INTERVALS = 3
T_F_RATIO = 50


def _parse_bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_pair(text):
    parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_float_pair(text):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_float_list(text):
    values = [float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ValueError("empty list")
    return tuple(values)


def _auto(parser):
    def parse(text):
        if text.strip().lower() == AUTO:
            return None
        return parser(text)
    return parse


# (key, parser, help)
KEY_TABLE = [
    # Scenario
    ("grid_blocks", _parse_int_pair, "street blocks per axis, e.g. 4,4"),
    ("block_size_m", float, "street block edge length in meters"),
    ("v_min", float, "minimum UE speed (m/s)"),
    ("v_max", float, "maximum UE speed (m/s)"),
    ("speed_step_std", float, "per-step speed random walk std (m/s)"),
    ("sample_rate_hz", float, "CSI sampling rate"),
    ("n_samples", int, "number of CSI samples to generate"),
    ("bs_position", _parse_float_pair, "BS ground position x,y in meters"),
    ("bs_height_m", float, "BS antenna height"),
    ("ue_height_m", float, "UE antenna height"),
    ("array", str, "BS array geometry: ULA or URA"),
    ("n_antennas", int, "number of BS antennas B"),
    ("ura_rows", int, "URA rows (URA only)"),
    ("ura_cols", int, "URA columns (URA only)"),
    ("n_subcarriers", int, "number of OFDM subcarriers W"),
    ("cyclic_prefix", int, "delay taps kept C"),
    ("bandwidth_hz", float, "OFDM bandwidth"),
    ("carrier_hz", float, "carrier frequency"),
    ("n_paths", int, "propagation paths per position"),
    ("los", _parse_bool, "include the direct path"),
    ("scatter_loss_db", float, "extra loss of scattered paths"),
    ("shadowing_db", float, "log-normal shadowing std of scattered paths"),
    ("tx_power_dbm", float, "UE transmit power"),
    ("noise_temperature_k", float, "receiver noise temperature (0 = noiseless)"),
    # Features
    ("feature_average", int, "average features over this many consecutive samples"),
    # Selection
    ("t_c", _auto(float), "positive window in seconds, or auto"),
    ("t_f", _auto(float), "negative window in seconds, or auto"),
    ("intersection_quantile", float, "feature-distance quantile for self-intersection recovery"),
    ("triplets_per_anchor", int, "triplets drawn per anchor"),
    ("reidentify", str, "self-intersection handling: positive or exclude"),
    # Loss
    ("loss", str, "sammon_siamese, triplet or split_triplet"),
    ("margin", float, "triplet loss margin"),
    ("b_pos", _auto(float), "split triplet positive bound, or auto"),
    ("b_neg", _auto(float), "split triplet negative bound, or auto"),
    ("mu", float, "inertial regularizer weight"),
    # Model
    ("grid_side", int, "centroid lattice side length"),
    ("chart_extent", _auto(float), "centroid lattice half-extent, or auto"),
    # Training
    ("epochs", int, "training epochs"),
    ("batch_size", int, "triplets per optimizer step"),
    ("learning_rate", float, "Adam learning rate"),
    ("adam_beta1", float, "Adam beta1"),
    ("adam_beta2", float, "Adam beta2"),
    ("adam_eps", float, "Adam epsilon"),
    ("resample_triplets", _parse_bool, "redraw triplets every epoch"),
    # Metrics
    ("k_percents", _parse_float_list, "TW/CT neighborhood sizes in percent of N"),
    ("metrics_max_n", int, "subsample size cap for metrics"),
    # Run
    ("seed", int, "seed for every random stream of the run"),
]

_PARSERS = {key: parser for key, parser, _ in KEY_TABLE}


@dataclass
class RunConfig:
    grid_blocks: tuple = (4, 4)
    block_size_m: float = 25.0
    v_min: float = 0.5
    v_max: float = 2.0
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
    feature_average: int = 1
    t_c: float = None
    t_f: float = None
    intersection_quantile: float = 0.01
    triplets_per_anchor: int = 8
    reidentify: str = "positive"
    loss: str = "split_triplet"
    margin: float = 1.0
    b_pos: float = None
    b_neg: float = None
    mu: float = 0.0
    grid_side: int = 16
    chart_extent: float = None
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    resample_triplets: bool = False
    k_percents: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    metrics_max_n: int = 5000
    seed: int = 0

    # --- Construction ---

    @classmethod
    def from_strings(cls, values, base=None):
        """Apply key -> text overrides on top of base (or the defaults)."""
        current = asdict(base) if base is not None else asdict(cls())
        for key, text in values.items():
            if key not in _PARSERS:
                raise ConfigError(key, "unknown configuration key")
            try:
                current[key] = _PARSERS[key](text)
            except ValueError as e:
                raise ConfigError(key, f"bad value {text!r}: {e}") from None
        cfg = cls(**current)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=None):
        values = read_config_file(path)
        values.update(overrides or {})
        cfg = cls.from_strings(values)
        log.info("Loaded run config from %s", path)
        return cfg

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(key, "unknown configuration key")
        data = dict(d)
        for key in ("grid_blocks", "bs_position", "k_percents"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self):
        if not 0 < self.v_min <= self.v_max:
            raise ConfigError(
                "speed_range", f"need 0 < v_min <= v_max, got ({self.v_min}, {self.v_max})"
            )
        if self.feature_average < 1:
            raise ConfigError("feature_average", "must be >= 1")
        if self.metrics_max_n < 3:
            raise ConfigError("metrics_max_n", "must be >= 3")
        if any(not 0 < p < 50 for p in self.k_percents):
            raise ConfigError("k_percents", "percentages must lie in (0, 50)")
        for key in ("t_c", "t_f", "b_pos", "b_neg", "chart_extent"):
            value = getattr(self, key)
            if value is not None and not value > 0:
                raise ConfigError(key, "must be > 0 or auto")

    # --- Per-module configs ---

    def scenario_config(self):
        cfg = ScenarioConfig(
            grid_blocks=tuple(self.grid_blocks),
            block_size_m=self.block_size_m,
            speed_range=(self.v_min, self.v_max),
            speed_step_std=self.speed_step_std,
            sample_rate_hz=self.sample_rate_hz,
            n_samples=self.n_samples,
            bs_position=tuple(self.bs_position),
            bs_height_m=self.bs_height_m,
            ue_height_m=self.ue_height_m,
            array=self.array,
            n_antennas=self.n_antennas,
            ura_rows=self.ura_rows,
            ura_cols=self.ura_cols,
            n_subcarriers=self.n_subcarriers,
            cyclic_prefix=self.cyclic_prefix,
            bandwidth_hz=self.bandwidth_hz,
            carrier_hz=self.carrier_hz,
            n_paths=self.n_paths,
            los=self.los,
            scatter_loss_db=self.scatter_loss_db,
            shadowing_db=self.shadowing_db,
            tx_power_dbm=self.tx_power_dbm,
            noise_temperature_k=self.noise_temperature_k,
            rng_seed=self.seed,
        )
        cfg.validate()
        return cfg

    def selection_config(self, ds):
        """Selection windows; auto t_c spans T_C_INTERVALS sampling intervals of ds."""
        t_c = self.t_c
        if t_c is None:
            dt = ds.sampling_interval()
            if not dt > 0:
                raise ConfigError("t_c", "cannot derive auto t_c from a dataset without steps")
            t_c = T_C_INTERVALS * dt
        t_f = self.t_f if self.t_f is not None else T_F_RATIO * t_c
        cfg = SelectionConfig(
            t_c=t_c,
            t_f=t_f,
            v_min=self.v_min,
            v_max=self.v_max,
            intersection_quantile=self.intersection_quantile,
            triplets_per_anchor=self.triplets_per_anchor,
            reidentify=self.reidentify,
            rng_seed=self.seed,
        )
        cfg.validate()
        return cfg

    def loss_config(self, selection):
        cfg = LossConfig(
            kind=self.loss,
            margin=self.margin,
            b_pos=self.b_pos if self.b_pos is not None else selection.b_pos,
            b_neg=self.b_neg if self.b_neg is not None else selection.b_neg,
            mu=self.mu,
        )
        cfg.validate()
        return cfg

    def train_config(self, loss):
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_betas=(self.adam_beta1, self.adam_beta2),
            adam_eps=self.adam_eps,
            loss=loss,
            resample_triplets=self.resample_triplets,
            rng_seed=self.seed,
        )
        cfg.validate()
        return cfg

    def grid(self, selection):
        """Centroid lattice; auto extent is the distance covered at v_max within t_f."""
        extent = self.chart_extent
        if extent is None:
            extent = self.v_max * selection.t_f
        return CentroidGrid(self.grid_side, extent)


def read_config_file(path):
    """key = value lines; '#' starts a comment. Returns key -> raw text."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from None
    for number, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"{path}:{number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, f"unknown configuration key ({path}:{number})")
        values[key] = value
    return values


def flag_name(key):
    return "--" + key.replace("_", "-")


def config_keys():
    return [key for key, _, _ in KEY_TABLE]


def key_help(key):
    for name, _, text in KEY_TABLE:
        if name == key:
            return text
    raise ConfigError(key, "unknown configuration key")


