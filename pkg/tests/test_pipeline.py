"""
End-to-end checks of the pipeline commands and the command line, on tiny
scenarios that train for a couple of epochs.
"""

import csv
import json
import logging
import os
import xml.etree.ElementTree as ET

import pytest

import main
from conftest import random_dataset
from core import pipeline
from core.config import RunConfig
from core.dataset_io import CSISample, Dataset, read_dataset, write_dataset
from core.errors import ConfigError
from core.features import extract_features
from core.model import CentroidGrid, init_model, save_checkpoint
from core.trainer import embed_dataset

TINY = {
    "n_samples": "100",
    "n_antennas": "8",
    "n_subcarriers": "16",
    "cyclic_prefix": "8",
    "n_paths": "6",
    "grid_side": "4",
    "epochs": "2",
    "batch_size": "64",
}


def tiny_config(**extra):
    values = dict(TINY)
    values.update({k: str(v) for k, v in extra.items()})
    return RunConfig.from_strings(values)


def _flags(values):
    argv = []
    for key, value in values.items():
        argv += ["--" + key.replace("_", "-"), value]
    return argv


@pytest.fixture
def tiny_dataset_file(tmp_path):
    path = tmp_path / "dataset.ccd"
    pipeline.cmd_generate(tiny_config(), path)
    return path


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


# --- generate ---

def test_generate_prints_summary(tmp_path, capsys):
    out = tmp_path / "ds.ccd"
    assert main.run(["generate", "--out", str(out)] + _flags(TINY)) == 0
    assert "N=100" in capsys.readouterr().out
    ds = read_dataset(out)
    assert len(ds) == 100 and ds.has_ground_truth
    assert (tmp_path / "ds.ccd.provenance.json").exists()


def test_generate_is_seeded(tmp_path):
    pipeline.cmd_generate(tiny_config(), tmp_path / "a.ccd")
    pipeline.cmd_generate(tiny_config(), tmp_path / "b.ccd")
    assert (tmp_path / "a.ccd").read_bytes() == (tmp_path / "b.ccd").read_bytes()


def test_inverted_speed_range_exits_with_config_error(tmp_path, caplog):
    out = tmp_path / "ds.ccd"
    with caplog.at_level(logging.ERROR):
        code = main.run(["generate", "--out", str(out), "--v-min", "3", "--v-max", "2"])
    assert code == 1
    assert "speed_range" in caplog.text
    assert not out.exists()


def test_missing_dataset_exits_with_config_error(tmp_path):
    assert main.run(["train", str(tmp_path / "nope.ccd"), "--out-dir", str(tmp_path)]) == 1


@pytest.mark.parametrize("argv", [
    ["train"],
    ["generate", "--bogus-flag", "1"],
    ["train", "x.ccd", "--epochs"],
    ["launch"],
])
def test_malformed_command_line_exits_with_config_error(argv):
    assert main.run(argv) == 1


def test_help_exits_cleanly(capsys):
    assert main.run(["train", "--help"]) == 0
    out = " ".join(capsys.readouterr().out.split())
    assert "--t-c VALUE positive window in seconds, or auto" in out


# --- featurize ---

def test_featurize_writes_one_row_per_sample(tiny_dataset_file, tmp_path):
    out = tmp_path / "features.csv"
    assert main.run(["featurize", str(tiny_dataset_file), "--out", str(out)] + _flags(TINY)) == 0
    rows = _read_csv(out)
    assert len(rows) == 101
    assert len(rows[0]) == 2 + 4 * 8


# --- train ---

def test_train_is_reproducible(tiny_dataset_file, tmp_path):
    cfg = tiny_config()
    a = pipeline.cmd_train(cfg, tiny_dataset_file, tmp_path / "a")
    b = pipeline.cmd_train(cfg, tiny_dataset_file, tmp_path / "b")
    assert open(a.checkpoint, "rb").read() == open(b.checkpoint, "rb").read()
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()


def test_train_writes_provenance_and_loss(tiny_dataset_file, tmp_path):
    result = pipeline.cmd_train(tiny_config(), tiny_dataset_file, tmp_path)
    rows = _read_csv(tmp_path / "loss.csv")
    assert rows[0] == ["epoch", "mean_main_loss", "mean_inertial_loss"]
    assert len(rows) == 3
    provenance = json.loads((tmp_path / "model.ccm.provenance.json").read_text())
    assert provenance["seed"] == 0
    assert provenance["dataset_sha256"] == pipeline.file_sha256(tiny_dataset_file)
    assert provenance["resolved"]["t_c"] == pytest.approx(1.5)
    assert provenance["resolved"]["t_f"] == pytest.approx(75.0)
    assert result.provenance["config_hash"] == tiny_config().config_hash()


def test_export_triplets(tiny_dataset_file, tmp_path):
    args = ["train", str(tiny_dataset_file), "--out-dir", str(tmp_path), "--export-triplets"]
    assert main.run(args + _flags(TINY)) == 0
    triplets = _read_csv(tmp_path / "triplets.csv")
    inertial = _read_csv(tmp_path / "inertial.csv")
    assert triplets[0] == ["anchor", "positive", "negative", "reidentified"]
    assert len(triplets) > 1
    assert inertial[0] == ["i", "j", "ell", "triplet_index"]
    for i, _, _, index in inertial[1:]:
        assert triplets[int(index) + 1][0] == i


# --- evaluate ---

def _oracle_dataset(tmp_path, n=12):
    """Dataset whose ground truth is exactly what a fixed model charts it to."""
    ds = random_dataset(n, B=8, W=16, C=8, seed=5)
    features = extract_features(ds)
    model = init_model(len(features[0]), CentroidGrid(3, 10.0), seed=2)
    # keep every hidden unit active so the chart points spread out
    for bias in model.biases[:-1]:
        bias[:] = 1.0
    model.bump()
    chart = embed_dataset(model, features)
    samples = [CSISample(s.h, s.ue_id, s.timestamp, chart[k].copy())
               for k, s in enumerate(ds.samples)]
    ds_path = tmp_path / "oracle.ccd"
    write_dataset(Dataset(samples, ds.meta), ds_path)
    ckpt = tmp_path / "oracle.ccm"
    save_checkpoint(model, ckpt)
    return ds_path, ckpt


def test_evaluate_perfect_chart(tmp_path):
    ds_path, ckpt = _oracle_dataset(tmp_path)
    chart, report = pipeline.cmd_evaluate(RunConfig(), ckpt, ds_path, tmp_path / "eval")
    assert report.ks < 1e-6
    assert report.sr == pytest.approx(0.0, abs=1e-9)
    assert all(v == 1.0 for v in report.tw.values())
    data = json.loads((tmp_path / "eval" / "metrics.json").read_text())
    assert data["ks"] == report.ks
    rows = _read_csv(tmp_path / "eval" / "chart.csv")
    assert rows[0] == ["index", "timestamp", "chart_x", "chart_y", "truth_x", "truth_y"]
    assert float(rows[1][2]) == chart[0, 0]


def test_evaluate_without_ground_truth(tmp_path, capsys):
    ds = random_dataset(12, ground_truth=False)
    ds_path = tmp_path / "nogt.ccd"
    write_dataset(ds, ds_path)
    ckpt = tmp_path / "model.ccm"
    save_checkpoint(init_model(8, CentroidGrid(2, 5.0)), ckpt)
    out_dir = tmp_path / "eval"
    assert main.run(["evaluate", str(ckpt), str(ds_path), "--out-dir", str(out_dir)]) == 0
    assert not (out_dir / "metrics.json").exists()
    assert _read_csv(out_dir / "chart.csv")[0] == ["index", "timestamp", "chart_x", "chart_y"]
    assert "KS=" not in capsys.readouterr().out


def test_evaluate_writes_parseable_svg(tmp_path):
    ds_path, ckpt = _oracle_dataset(tmp_path)
    pipeline.cmd_evaluate(RunConfig(), ckpt, ds_path, tmp_path / "eval")
    root = ET.fromstring((tmp_path / "eval" / "chart.svg").read_bytes())
    assert root.tag.endswith("svg")


def test_evaluate_rejects_feature_width_mismatch(tmp_path):
    ds_path, _ = _oracle_dataset(tmp_path)
    ckpt = tmp_path / "wide.ccm"
    save_checkpoint(init_model(16, CentroidGrid(2, 5.0)), ckpt)
    assert main.run(["evaluate", str(ckpt), str(ds_path), "--out-dir", str(tmp_path)]) == 1


# --- compare ---

def _run_files(tmp_path):
    paths = []
    for name, loss, mu in [("sammon", "sammon_siamese", "0"),
                           ("triplet", "triplet", "0.2"),
                           ("split", "split_triplet", "0.2")]:
        path = tmp_path / f"{name}.cfg"
        lines = [f"{k} = {v}" for k, v in TINY.items()] + [f"loss = {loss}", f"mu = {mu}"]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(os.fspath(path))
    return paths


def test_compare_needs_two_configs(tmp_path):
    runs = pipeline.load_runs(_run_files(tmp_path)[:1])
    with pytest.raises(ConfigError) as err:
        pipeline.cmd_compare(runs, tmp_path / "out")
    assert err.value.key == "configs"


def test_compare_is_reproducible(tmp_path, tiny_dataset_file):
    runs = pipeline.load_runs(_run_files(tmp_path))
    first = pipeline.cmd_compare(runs, tmp_path / "one", tiny_dataset_file)
    pipeline.cmd_compare(runs, tmp_path / "two", tiny_dataset_file)
    a = (tmp_path / "one" / "compare.csv").read_bytes()
    assert a == (tmp_path / "two" / "compare.csv").read_bytes()
    rows = _read_csv(tmp_path / "one" / "compare.csv")
    assert rows[0] == pipeline.COMPARE_HEADER
    assert [r[0] for r in rows[1:]] == ["sammon_siamese", "triplet", "split_triplet"]
    assert [m for m, *_ in first] == ["sammon_siamese", "triplet", "split_triplet"]
    assert (tmp_path / "one" / "split" / "metrics.json").exists()
    assert "TW(5%)" in (tmp_path / "one" / "compare.txt").read_text()


def test_compare_writes_provenance(tmp_path, tiny_dataset_file):
    runs = pipeline.load_runs(_run_files(tmp_path))
    pipeline.cmd_compare(runs, tmp_path / "out", tiny_dataset_file)
    provenance = json.loads((tmp_path / "out" / "compare.csv.provenance.json").read_text())
    assert provenance["dataset_sha256"] == pipeline.file_sha256(tiny_dataset_file)
    assert [r["name"] for r in provenance["runs"]] == ["sammon", "triplet", "split"]
    for (_, cfg), entry in zip(runs, provenance["runs"]):
        assert entry["config_hash"] == cfg.config_hash()
        assert entry["seed"] == cfg.seed
    assert (tmp_path / "out" / "compare.txt.provenance.json").exists()


def test_compare_generates_dataset_when_none_given(tmp_path, capsys):
    paths = _run_files(tmp_path)[1:]
    out_dir = tmp_path / "out"
    assert main.run(["compare"] + paths + ["--out-dir", str(out_dir)]) == 0
    assert (out_dir / "dataset.ccd").exists()
    assert "Method" in capsys.readouterr().out


def _better(a, b):
    """Row a beats row b on KS, SR (lower) and TW(5%), CT(5%) (higher)."""
    _, _, ks_a, sr_a, tw_a, ct_a = a
    _, _, ks_b, sr_b, tw_b, ct_b = b
    return ks_a < ks_b and sr_a < sr_b and tw_a > tw_b and ct_a > ct_b


@pytest.mark.slow
def test_loss_ordering_on_desk_scenario(tmp_path):
    """Full-size scenario, five seeds: the orderings must hold on at least four."""
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    names = ["sammon_siamese_mu0", "triplet_mu0", "triplet_mu02", "split_triplet_mu02"]
    paths = [os.path.join(root, "configs", f"{name}.cfg") for name in names]
    passed = 0
    for seed in range(5):
        runs = pipeline.load_runs(paths, {"seed": str(seed)})
        sammon, triplet, triplet_mu, split_mu = pipeline.cmd_compare(runs, tmp_path / f"seed{seed}")
        split_beats_triplet = _better(split_mu, triplet)
        inertia_helps_tw = triplet_mu[4] - triplet[4] >= 0.002
        family_beats_sammon = all(_better(row, sammon) for row in (triplet, triplet_mu, split_mu))
        if split_beats_triplet and inertia_helps_tw and family_beats_sammon:
            passed += 1
    assert passed >= 4
