"""
Pipeline commands behind the CLI: generate, featurize, train, evaluate and
compare. Each command takes a resolved RunConfig plus file paths and writes
its artifacts atomically, with a provenance JSON next to each binary file.
"""

import hashlib
import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from core.config import RunConfig
from core.dataset_io import read_dataset, write_dataset
from core.errors import ChartError, ConfigError
from core.features import average_features, extract_features, feature_length, features_csv
from core.metrics import evaluate, k_from_percent
from core.model import init_model, load_checkpoint, save_checkpoint
from core.scenario import generate_dataset
from core.selection import (
    TripletSelector, inertial_csv, select_inertial, triplets_csv,
)
from core.storage import ArtifactWriter
from core.trainer import embed_dataset, history_rows, train
from plots.chart_svg import write_chart_svg

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.ccd"
FEATURES_FILE = "features.csv"
CHECKPOINT_FILE = "model.ccm"
LOSS_FILE = "loss.csv"
CHART_CSV = "chart.csv"
CHART_SVG = "chart.svg"
METRICS_FILE = "metrics.json"
TRIPLETS_FILE = "triplets.csv"
INERTIAL_FILE = "inertial.csv"
COMPARE_CSV = "compare.csv"
COMPARE_TXT = "compare.txt"

COMPARE_PERCENT = 5.0
COMPARE_HEADER = ["method", "mu", "ks", "sr", "tw_5", "ct_5"]


@dataclass
class Prepared:
    """Features and training sets derived from one dataset."""

    features: list
    selection: object
    triplets: list
    inertial: list
    stats: dict


@dataclass
class TrainResult:
    model: object
    history: list
    checkpoint: str
    provenance: dict


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _require_file(path, key):
    if not os.path.isfile(path):
        raise ConfigError(key, f"no such file: {path}")


def _provenance(cfg, **extra):
    data = {"config": cfg.to_dict(), "config_hash": cfg.config_hash(), "seed": cfg.seed}
    data.update(extra)
    return data


def load_input_dataset(path):
    _require_file(path, "dataset")
    return read_dataset(path)


# --- generate / featurize ---

def cmd_generate(cfg, out_path):
    """Synthesize a dataset from the scenario keys and write it as CCD1."""
    scenario = cfg.scenario_config()
    ds = generate_dataset(scenario)
    write_dataset(ds, out_path)
    writer = ArtifactWriter(os.path.dirname(os.path.abspath(out_path)))
    writer.write_provenance(os.path.basename(out_path), _provenance(cfg, scenario=scenario.to_dict()))
    times = ds.timestamps
    summary = {
        "path": os.fspath(out_path),
        "n_samples": len(ds),
        "n_antennas": ds.meta.n_antennas,
        "n_subcarriers": ds.meta.n_subcarriers,
        "duration_s": float(times[-1] - times[0]) if len(ds) else 0.0,
    }
    log.info("Generated dataset: N=%d B=%d W=%d duration=%.1f s",
             summary["n_samples"], summary["n_antennas"], summary["n_subcarriers"],
             summary["duration_s"])
    return summary


def dataset_features(cfg, ds, threads=1):
    features = extract_features(ds, threads=threads)
    return average_features(features, ds, cfg.feature_average)


def cmd_featurize(cfg, dataset_path, out_path, threads=1):
    ds = load_input_dataset(dataset_path)
    features = dataset_features(cfg, ds, threads)
    writer = ArtifactWriter(os.path.dirname(os.path.abspath(out_path)))
    writer.write_text(os.path.basename(out_path), features_csv(features))
    return features


# --- train ---

def prepare(cfg, ds, threads=1):
    """Features, triplets and inertial triples for ds under cfg."""
    features = dataset_features(cfg, ds, threads)
    selection = cfg.selection_config(ds)
    selector = TripletSelector(ds, features, selection, threads=threads)
    triplets = selector.select()
    inertial = select_inertial(ds, triplets, selection)
    stats = dict(selector.stats(), n_triplets=len(triplets), n_inertial=len(inertial))
    return Prepared(features, selection, triplets, inertial, stats)


def _resampler(ds, prepared, threads):
    def resample(epoch):
        selection = replace(prepared.selection, rng_seed=prepared.selection.rng_seed + epoch)
        selector = TripletSelector(ds, prepared.features, selection,
                                   threshold=prepared.stats["feature_threshold"],
                                   threads=threads)
        triplets = selector.select()
        return triplets, select_inertial(ds, triplets, selection)
    return resample


def train_on(cfg, ds, prepared, out_dir, threads=1, export_triplets=False, dataset_path=None):
    loss = cfg.loss_config(prepared.selection)
    train_cfg = cfg.train_config(loss)
    grid = cfg.grid(prepared.selection)
    n_features = feature_length(ds.meta.n_antennas, ds.meta.cyclic_prefix)
    model = init_model(n_features, grid, seed=cfg.seed)

    trained, history = train(
        model, ds, prepared.features, prepared.triplets, prepared.inertial, train_cfg,
        resampler=_resampler(ds, prepared, threads),
        on_epoch=lambda epoch, main, inert: log.info(
            "Epoch %d: main %.6g, inertial %.6g", epoch, main, inert),
    )

    writer = ArtifactWriter(out_dir)
    checkpoint = writer.path(CHECKPOINT_FILE)
    save_checkpoint(trained, checkpoint)
    writer.write_csv(LOSS_FILE, ["epoch", "mean_main_loss", "mean_inertial_loss"],
                     history_rows(history))
    if export_triplets:
        writer.write_text(TRIPLETS_FILE, triplets_csv(prepared.triplets))
        writer.write_text(INERTIAL_FILE, inertial_csv(prepared.inertial))

    provenance = _provenance(
        cfg,
        dataset=os.fspath(dataset_path) if dataset_path else None,
        dataset_sha256=file_sha256(dataset_path) if dataset_path else None,
        resolved={
            "t_c": prepared.selection.t_c,
            "t_f": prepared.selection.t_f,
            "b_pos": loss.b_pos,
            "b_neg": loss.b_neg,
            "chart_extent": grid.extent,
        },
        selection=prepared.stats,
        layer_dims=trained.layer_dims,
        final_loss=history[-1].mean_loss,
    )
    writer.write_provenance(CHECKPOINT_FILE, provenance)
    return TrainResult(trained, history, checkpoint, provenance)


def cmd_train(cfg, dataset_path, out_dir, threads=1, export_triplets=False):
    """Features -> triplets/inertial -> training; writes checkpoint, loss CSV, provenance."""
    ds = load_input_dataset(dataset_path)
    prepared = prepare(cfg, ds, threads)
    return train_on(cfg, ds, prepared, out_dir, threads, export_triplets, dataset_path)


# --- evaluate ---

def chart_rows(ds, chart):
    truth = ds.positions()
    rows = []
    for k, (t, point) in enumerate(zip(ds.timestamps, chart)):
        row = [k, repr(float(t)), repr(float(point[0])), repr(float(point[1]))]
        if truth is not None:
            row += [repr(float(truth[k, 0])), repr(float(truth[k, 1]))]
        rows.append(row)
    return rows


def chart_header(ds):
    header = ["index", "timestamp", "chart_x", "chart_y"]
    if ds.has_ground_truth:
        header += ["truth_x", "truth_y"]
    return header


def evaluate_model(cfg, model, ds, features, out_dir, threads=1, title="Channel chart"):
    """Embed ds; write chart CSV/SVG and, with ground truth, the metrics JSON."""
    chart = embed_dataset(model, features)
    writer = ArtifactWriter(out_dir)
    writer.write_csv(CHART_CSV, chart_header(ds), chart_rows(ds, chart))
    truth = ds.positions()
    write_chart_svg(writer.path(CHART_SVG), chart, truth, title)
    if truth is None:
        log.info("Dataset has no ground truth; metrics omitted")
        return chart, None
    report = evaluate(truth, chart, cfg.k_percents, cfg.metrics_max_n, cfg.seed, threads)
    writer.write_json(METRICS_FILE, report.to_dict())
    writer.write_provenance(METRICS_FILE, _provenance(cfg))
    return chart, report


def cmd_evaluate(cfg, checkpoint_path, dataset_path, out_dir, threads=1):
    _require_file(checkpoint_path, "checkpoint")
    model = load_checkpoint(checkpoint_path)
    ds = load_input_dataset(dataset_path)
    features = dataset_features(cfg, ds, threads)
    return evaluate_model(cfg, model, ds, features, out_dir, threads)


# --- compare ---

def _selection_key(cfg):
    return (cfg.feature_average, cfg.t_c, cfg.t_f, cfg.intersection_quantile,
            cfg.triplets_per_anchor, cfg.reidentify, cfg.v_min, cfg.v_max, cfg.seed)


def format_table(rows):
    lines = ["{:<16} {:>5} {:>7} {:>7} {:>7} {:>7}".format(
        "Method", "mu", "KS", "SR", "TW(5%)", "CT(5%)")]
    for method, mu, ks, sr, tw, ct in rows:
        lines.append("{:<16} {:>5.2f} {:>7.3f} {:>7.3f} {:>7.3f} {:>7.3f}".format(
            method, mu, ks, sr, tw, ct))
    return "\n".join(lines) + "\n"


def cmd_compare(runs, out_dir, dataset_path=None, threads=1):
    """Train and evaluate each (name, RunConfig) on one shared dataset.

    Runs with identical selection keys share features and triplets. Returns
    the table rows (method, mu, ks, sr, tw_5, ct_5).
    """
    if len(runs) < 2:
        raise ConfigError("configs", f"compare needs at least two run configs, got {len(runs)}")
    writer = ArtifactWriter(out_dir)
    if dataset_path is None:
        dataset_path = writer.path(DATASET_FILE)
        cmd_generate(runs[0][1], dataset_path)
    ds = load_input_dataset(dataset_path)
    if not ds.has_ground_truth:
        raise ConfigError("dataset", "compare needs a dataset with ground truth")

    shared = {}
    rows = []
    for name, cfg in runs:
        try:
            key = _selection_key(cfg)
            if key not in shared:
                shared[key] = prepare(cfg, ds, threads)
            run_dir = os.path.join(out_dir, name)
            result = train_on(cfg, ds, shared[key], run_dir, threads, dataset_path=dataset_path)
            percents = tuple(sorted(set(cfg.k_percents) | {COMPARE_PERCENT}))
            _, report = evaluate_model(replace(cfg, k_percents=percents), result.model, ds,
                                       shared[key].features, run_dir, threads, title=name)
        except ChartError:
            log.error("Run %r failed", name)
            raise
        k = k_from_percent(COMPARE_PERCENT, report.n_evaluated)
        rows.append((cfg.loss, cfg.mu, report.ks, report.sr, report.tw[k], report.ct[k]))
        log.info("Finished run %r", name)

    writer.write_csv(COMPARE_CSV, COMPARE_HEADER,
                     [[m, repr(float(mu)), repr(ks), repr(sr), repr(tw), repr(ct)]
                      for m, mu, ks, sr, tw, ct in rows])
    writer.write_text(COMPARE_TXT, format_table(rows))
    provenance = {
        "dataset": os.fspath(dataset_path),
        "dataset_sha256": file_sha256(dataset_path),
        "runs": [
            {"name": name, "config_hash": cfg.config_hash(), "seed": cfg.seed,
             "config": cfg.to_dict()}
            for name, cfg in runs
        ],
    }
    writer.write_provenance(COMPARE_CSV, provenance)
    writer.write_provenance(COMPARE_TXT, provenance)
    return rows


def load_runs(paths, overrides=None):
    """(name, RunConfig) per config file, name = file stem."""
    runs = []
    for path in paths:
        name = os.path.splitext(os.path.basename(path))[0]
        runs.append((name, RunConfig.from_file(path, overrides)))
    return runs
