"""
Shared fixtures: tiny scenario configs, hand-built datasets and a
central finite-difference helper.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.dataset_io import ArrayGeometry, CSISample, Dataset, DatasetMeta  # noqa: E402
from core.scenario import ScenarioConfig, Trajectory, synthesize_csi  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long end-to-end test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def small_scenario(**overrides):
    """Noiseless low-carrier scenario small enough for unit tests."""
    values = dict(
        n_antennas=16,
        n_subcarriers=16,
        cyclic_prefix=16,
        n_paths=8,
        carrier_hz=30e6,
        bandwidth_hz=1e6,
        noise_temperature_k=0.0,
        n_samples=100,
        sample_rate_hz=1.0,
        rng_seed=3,
    )
    values.update(overrides)
    return ScenarioConfig(**values)


def dataset_along(positions, cfg, dt=1.0):
    """Dataset whose UE visits `positions` (N x 2) at uniform time steps."""
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    traj = Trajectory(
        timestamps=np.arange(n, dtype=np.float64) * dt,
        positions=positions,
        velocities=np.zeros((n, 2)),
        segments=np.zeros(n, dtype=np.int64),
    )
    return synthesize_csi(traj, cfg)


def line_positions(n, speed=1.0, dt=1.0, start=(10.0, 50.0)):
    x = start[0] + speed * dt * np.arange(n)
    return np.column_stack([x, np.full(n, start[1])])


def circle_positions(n, period, radius=10.0, center=(50.0, 50.0)):
    angle = 2 * np.pi * np.arange(n) / period
    return np.column_stack([center[0] + radius * np.cos(angle),
                            center[1] + radius * np.sin(angle)])


def random_dataset(n, B=4, W=8, C=4, seed=0, ground_truth=True):
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(n):
        h = rng.standard_normal((B, W)) + 1j * rng.standard_normal((B, W))
        gt = rng.uniform(0, 100, 2) if ground_truth else None
        samples.append(CSISample(h.astype(np.complex64).astype(np.complex128), 0, float(k), gt))
    meta = DatasetMeta(B, W, C, ArrayGeometry.ula(B), 20e6, 2.4e9)
    return Dataset(samples, meta)


def numeric_gradient(f, x, h=1e-6):
    """Central differences of scalar f at array x (same shape as x)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f(x)
        flat[k] = old - h
        down = f(x)
        flat[k] = old
        g[k] = (up - down) / (2 * h)
    return grad


def assert_gradient_close(analytic, numeric, rel=1e-4, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), floor)
    assert np.max(np.abs(analytic - numeric)) / scale < rel


@pytest.fixture
def line_dataset():
    cfg = small_scenario()
    return dataset_along(line_positions(100), cfg)


@pytest.fixture
def tiny_dataset():
    return random_dataset(6)
