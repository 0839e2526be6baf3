import glob
import math
import os

import pytest

from conftest import random_dataset
from core.config import (
    KEY_TABLE, T_C_INTERVALS, T_F_RATIO, RunConfig, config_keys, flag_name, key_help,
    read_config_file,
)
from core.errors import ConfigError


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_every_key_is_a_run_config_field():
    fields = set(RunConfig.__dataclass_fields__)
    assert set(config_keys()) == fields
    assert len(config_keys()) == len(KEY_TABLE)


def test_flag_names():
    assert flag_name("v_min") == "--v-min"
    assert flag_name("seed") == "--seed"
    assert "positive window" in key_help("t_c")


def test_parse_values():
    cfg = RunConfig.from_strings({
        "grid_blocks": "3x5",
        "bs_position": "10, -20",
        "los": "yes",
        "k_percents": "1,5",
        "t_c": "auto",
        "b_pos": "2.5",
        "epochs": "7",
    })
    assert cfg.grid_blocks == (3, 5)
    assert cfg.bs_position == (10.0, -20.0)
    assert cfg.los is True
    assert cfg.k_percents == (1.0, 5.0)
    assert cfg.t_c is None
    assert cfg.b_pos == 2.5
    assert cfg.epochs == 7


@pytest.mark.parametrize("key, text", [
    ("epochs", "many"),
    ("los", "maybe"),
    ("grid_blocks", "4"),
    ("k_percents", ""),
])
def test_bad_values_name_their_key(key, text):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_strings({key: text})
    assert err.value.key == key


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_strings({"learning_rat": "0.1"})
    assert err.value.key == "learning_rat"


def test_inverted_speed_range():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_strings({"v_min": "3", "v_max": "2"})
    assert err.value.key == "speed_range"


@pytest.mark.parametrize("key", ["t_c", "b_neg", "chart_extent"])
def test_auto_keys_must_be_positive(key):
    with pytest.raises(ConfigError):
        RunConfig.from_strings({key: "0"})


def test_config_file_with_comments(tmp_path):
    path = _write(tmp_path, "# run\nloss = triplet   # main loss\n\nmu=0.2\n")
    assert read_config_file(path) == {"loss": "triplet", "mu": "0.2"}
    cfg = RunConfig.from_file(path)
    assert cfg.loss == "triplet" and cfg.mu == 0.2


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError) as err:
        read_config_file(_write(tmp_path, "colour = red\n"))
    assert err.value.key == "colour"
    with pytest.raises(ConfigError):
        read_config_file(_write(tmp_path, "just words\n", "b.cfg"))
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")


def test_overrides_beat_file_values(tmp_path):
    path = _write(tmp_path, "v_min = 3\nv_max = 4\n")
    cfg = RunConfig.from_file(path, {"v_max": "5"})
    assert (cfg.v_min, cfg.v_max) == (3.0, 5.0)
    # an override may repair an otherwise invalid file
    path = _write(tmp_path, "v_min = 3\nv_max = 2\n", "bad.cfg")
    assert RunConfig.from_file(path, {"v_max": "3"}).v_max == 3.0


def test_shipped_configs_load():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    paths = sorted(glob.glob(os.path.join(root, "configs", "*.cfg")))
    assert len(paths) == 7
    for path in paths:
        RunConfig.from_file(path)


def test_auto_windows_follow_sampling_interval():
    ds = random_dataset(10)  # unit time steps
    cfg = RunConfig(v_min=0.5, v_max=2.0)
    selection = cfg.selection_config(ds)
    assert selection.t_c == T_C_INTERVALS * 1.0
    assert selection.t_f == T_F_RATIO * selection.t_c
    loss = cfg.loss_config(selection)
    assert loss.b_pos == pytest.approx(2.0 * selection.t_c)
    assert loss.b_neg == pytest.approx(0.5 * selection.t_c)
    assert cfg.grid(selection).extent == pytest.approx(2.0 * selection.t_f)


def test_explicit_windows_are_kept():
    cfg = RunConfig(t_c=2.0, t_f=40.0, b_pos=1.0, b_neg=3.0, chart_extent=9.0)
    selection = cfg.selection_config(random_dataset(10))
    assert (selection.t_c, selection.t_f) == (2.0, 40.0)
    loss = cfg.loss_config(selection)
    assert (loss.b_pos, loss.b_neg) == (1.0, 3.0)
    assert cfg.grid(selection).extent == 9.0


def test_auto_window_needs_time_steps():
    with pytest.raises(ConfigError) as err:
        RunConfig().selection_config(random_dataset(1))
    assert err.value.key == "t_c"


def test_hash_is_stable_and_sensitive():
    a = RunConfig.from_strings({"mu": "0.2"})
    b = RunConfig.from_dict(a.to_dict())
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 64
    assert RunConfig.from_strings({"mu": "0.3"}).config_hash() != a.config_hash()


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"colour": "red"})


def test_scenario_config_carries_seed_and_speeds():
    cfg = RunConfig.from_strings({"seed": "11", "v_min": "1", "v_max": "1.5"})
    scenario = cfg.scenario_config()
    assert scenario.rng_seed == 11
    assert scenario.speed_range == (1.0, 1.5)
    assert math.isclose(scenario.dt, 0.5)
