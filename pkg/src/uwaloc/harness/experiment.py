"""Dataset generation, metrics, and SNR / sound-speed-mismatch sweeps.

Seed discipline
---------------
Every random stream is derived from the master seed with
``numpy.random.SeedSequence(master, spawn_key=(purpose, *key))``:

* ``(1,)`` network initialization and the train/validation split
* ``(2, r)`` training set, noise realization ``r``
* ``(3, r, crc32(repr(snr)))`` test set for realization ``r`` at that SNR

Test sets for the same realization and SNR share source ranges and noise
draws across sound-speed perturbations, so mismatch comparisons are paired.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..adaptation import EmptyConfidentSetError, jsea_adapt, shot_adapt
from ..features import ScmFeature, compute_scm
from ..labels import RangeGrid, estimate_range
from ..localizer import (
    RangeClassifier,
    bartlett_batch,
    build_replica_table,
    load_checkpoint,
    make_training_pairs,
    save_checkpoint,
    train,
    training_ranges,
)
from ..ocean import Environment, compute_modes, greens_vector, perturb_ssp
from ..signal import NoiseSource, add_noise, generate_snapshots
from .config import METHODS, ExperimentConfig

log = logging.getLogger(__name__)

PURPOSE_INIT, PURPOSE_TRAIN_DATA, PURPOSE_TEST_DATA = 1, 2, 3
RESULT_COLUMNS = ["method", "snr_db", "delta_c", "realization", "mae_m", "pcl_pct"]
SUMMARY_COLUMNS = ["method", "snr_db", "delta_c", "n", "mae_mean", "mae_std", "pcl_mean", "pcl_std"]


def derive_rng(master: int, purpose: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(purpose, *key)))


def value_key(x: float) -> int:
    return zlib.crc32(repr(float(x)).encode())


# -- metrics ------------------------------------------------------------------

def _check_pair(true_ranges, est_ranges):
    t = np.asarray(true_ranges, dtype=float)
    e = np.asarray(est_ranges, dtype=float)
    if t.shape != e.shape:
        raise ValueError("true and estimated ranges differ in length")
    if t.size == 0:
        raise ValueError("empty input")
    return t, e


def mae(true_ranges, est_ranges) -> float:
    t, e = _check_pair(true_ranges, est_ranges)
    return float(np.mean(np.abs(t - e)))


def pcl(true_ranges, est_ranges) -> float:
    """Percentage of estimates within 10% of the true range (boundary inclusive)."""
    t, e = _check_pair(true_ranges, est_ranges)
    return float(100.0 * np.mean(np.abs(t - e) <= 0.1 * t))


# -- datasets -----------------------------------------------------------------

def synthesize_features(env: Environment, ranges: np.ndarray, num_snapshots: int, snr_db: float,
                        noise: NoiseSource, rng: np.random.Generator) -> list[ScmFeature]:
    modes = compute_modes(env)
    fields = greens_vector(env, modes, np.asarray(ranges, dtype=float))
    feats = []
    for d, g in zip(ranges, fields):
        s = generate_snapshots(g, num_snapshots, rng, env.frequency)
        feats.append(compute_scm(add_noise(s, snr_db, noise, rng), true_range=float(d)))
    return feats


def generate_training_set(cfg: ExperimentConfig) -> list[ScmFeature]:
    ranges = training_ranges(cfg.grid, cfg.train_data.range_step)
    feats = []
    for r in range(cfg.train_data.realizations):
        rng = derive_rng(cfg.seed, PURPOSE_TRAIN_DATA, r)
        feats += synthesize_features(cfg.env, ranges, cfg.signal.num_snapshots, cfg.train_data.snr_db,
                                     cfg.signal.noise, rng)
    return feats


def sample_test_ranges(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.test.on_grid:
        return training_ranges(cfg.grid, cfg.train_data.range_step)
    return rng.uniform(cfg.grid.d_min, cfg.grid.d_max, cfg.test.n_test)


def generate_test_set(cfg: ExperimentConfig, snr_db: float, delta_c: float, realization: int) -> list[ScmFeature]:
    rng = derive_rng(cfg.seed, PURPOSE_TEST_DATA, realization, value_key(snr_db))
    ranges = sample_test_ranges(cfg, rng)
    env = perturb_ssp(cfg.env, delta_c)
    return synthesize_features(env, ranges, cfg.signal.num_snapshots, snr_db, cfg.signal.noise, rng)


def generate_dataset(cfg: ExperimentConfig, kind: str = "train", snr_db: float | None = None,
                     delta_c: float = 0.0, realization: int = 0) -> list[ScmFeature]:
    if kind == "train":
        return generate_training_set(cfg)
    if kind == "test":
        snr = cfg.signal.snr_db[0] if snr_db is None else snr_db
        return generate_test_set(cfg, snr, delta_c, realization)
    raise ValueError(f"unknown dataset kind {kind!r}")


# -- model --------------------------------------------------------------------

def train_model(cfg: ExperimentConfig, feats: Sequence[ScmFeature] | None = None):
    feats = generate_training_set(cfg) if feats is None else feats
    pairs = make_training_pairs(feats, cfg.grid, cfg.label)
    init_rng = derive_rng(cfg.seed, PURPOSE_INIT)
    train_cfg = dataclasses.replace(cfg.train, seed=int(init_rng.integers(2**63)))
    return train(pairs, train_cfg)


def obtain_model(cfg: ExperimentConfig, out_dir: Path | None = None) -> RangeClassifier:
    if cfg.checkpoint:
        path = Path(cfg.checkpoint)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        return load_checkpoint(path)[0]
    model, history = train_model(cfg)
    if out_dir is not None:
        save_checkpoint(out_dir / "model.uwar", model, {"seed": cfg.seed, "best_epoch": history.best_epoch})
        write_train_log(out_dir / "train_log.csv", history)
    return model


def write_train_log(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "learning_rate"])
        for i, row in enumerate(zip(history.train_loss, history.val_loss, history.learning_rate)):
            w.writerow([i, *(repr(float(v)) for v in row)])


# -- evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    delta_c: float
    realization: int
    mae_m: float
    pcl_pct: float

    def __post_init__(self):
        if not 0 <= self.pcl_pct <= 100 or self.mae_m < 0:
            raise ValueError("metric out of range")

    def sort_key(self):
        return (METHODS.index(self.method), self.snr_db, self.delta_c, self.realization)


def estimate_ranges(method: str, model: RangeClassifier | None, feats: Sequence[ScmFeature],
                    cfg: ExperimentConfig, replicas=None) -> np.ndarray:
    if method == "mfp":
        return bartlett_batch(feats, replicas)
    if method == "cnn":
        return estimate_range(model.predict(feats), cfg.grid)
    if method in ("cnn_shot", "cnn_jsea"):
        adapt = shot_adapt if method == "cnn_shot" else jsea_adapt
        try:
            adapted, _ = adapt(model, feats, cfg.adapt, cfg.grid)
        except EmptyConfidentSetError as exc:
            # nothing to adapt from; the cell reports the unadapted network
            log.warning("%s skipped: %s", method, exc)
            adapted = model
        return estimate_range(adapted.predict(feats), cfg.grid)
    raise ValueError(f"unknown method {method!r}")


def evaluate_cell(cfg: ExperimentConfig, model: RangeClassifier | None, replicas,
                  snr_db: float, delta_c: float, realization: int) -> list[ResultRow]:
    feats = generate_test_set(cfg, snr_db, delta_c, realization)
    truth = np.array([f.true_range for f in feats])
    rows = []
    for method in cfg.methods:
        # each adaptation starts from the untouched pre-trained model
        est = estimate_ranges(method, model, feats, cfg, replicas)
        rows.append(ResultRow(method, float(snr_db), float(delta_c), realization, mae(truth, est), pcl(truth, est)))
    log.info("cell snr=%s dc=%s r=%d: %s", snr_db, delta_c, realization,
             ", ".join(f"{r.method} pcl={r.pcl_pct:.1f}" for r in rows))
    return rows


def _evaluate_cell_star(args):
    return evaluate_cell(*args)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   model: RangeClassifier | None = None) -> list[ResultRow]:
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    needs_model = any(m != "mfp" for m in cfg.methods)
    if model is None and needs_model:
        model = obtain_model(cfg, out)
    replicas = build_replica_table(cfg.env, training_ranges(cfg.grid, cfg.train_data.range_step)) \
        if "mfp" in cfg.methods else None
    cells = [(cfg, model, replicas, snr, dc, r)
             for snr in cfg.signal.snr_db
             for dc in cfg.signal.delta_c
             for r in range(cfg.signal.realizations)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_evaluate_cell_star, cells))
    else:
        chunks = [evaluate_cell(*c) for c in cells]
    rows = sorted((r for chunk in chunks for r in chunk), key=ResultRow.sort_key)
    if out is not None:
        write_results(out / "results.csv", rows)
        write_summary(out / "summary.csv", summarize(rows))
    return rows


# -- persistence --------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_results(path: str | Path, rows: Iterable[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([r.method, _fmt(r.snr_db), _fmt(r.delta_c), r.realization, _fmt(r.mae_m), _fmt(r.pcl_pct)])


def read_results(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow(r["method"], float(r["snr_db"]), float(r["delta_c"]), int(r["realization"]),
                          float(r["mae_m"]), float(r["pcl_pct"])) for r in reader]


def summarize(rows: Sequence[ResultRow]) -> list[dict]:
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.method, r.snr_db, r.delta_c), []).append(r)
    out = []
    for (method, snr, dc), grp in sorted(groups.items(), key=lambda kv: (METHODS.index(kv[0][0]), kv[0][1], kv[0][2])):
        maes = np.array([r.mae_m for r in grp])
        pcls = np.array([r.pcl_pct for r in grp])
        ddof = 1 if len(grp) > 1 else 0
        out.append(dict(method=method, snr_db=snr, delta_c=dc, n=len(grp),
                        mae_mean=float(maes.mean()), mae_std=float(maes.std(ddof=ddof)),
                        pcl_mean=float(pcls.mean()), pcl_std=float(pcls.std(ddof=ddof))))
    return out


def write_summary(path: str | Path, summary: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s["method"], _fmt(s["snr_db"]), _fmt(s["delta_c"]), s["n"],
                        *(_fmt(s[k]) for k in SUMMARY_COLUMNS[4:])])


def read_summary(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(SUMMARY_COLUMNS) <= set(reader.fieldnames):
            raise ValueError(f"{path}: not a summary CSV (header {reader.fieldnames})")
        rows = []
        for r in reader:
            try:
                rows.append(dict(method=r["method"], snr_db=float(r["snr_db"]), delta_c=float(r["delta_c"]),
                                 n=int(r["n"]), **{k: float(r[k]) for k in SUMMARY_COLUMNS[4:]}))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: malformed row {r}") from exc
        return rows
