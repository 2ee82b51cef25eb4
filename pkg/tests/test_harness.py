import dataclasses
import math

import numpy as np
import pytest

from uwaloc.harness.cli import main
from uwaloc.harness.config import ExperimentConfig, SignalConfig, TestConfig, load_config, parse_config_text
from uwaloc.harness.experiment import (
    RESULT_COLUMNS,
    ResultRow,
    generate_dataset,
    generate_test_set,
    mae,
    obtain_model,
    pcl,
    read_results,
    read_summary,
    run_experiment,
    summarize,
    write_results,
    write_summary,
)
from uwaloc.harness.plot import AxisSpec, collect_series, emit_plot, render_svg
from uwaloc.localizer import RangeClassifier, save_checkpoint


def mfp_config(**signal):
    sig = dict(snr_db=(float("inf"),), delta_c=(0.0,), realizations=1)
    sig.update(signal)
    return ExperimentConfig(signal=SignalConfig(**sig), test=TestConfig(n_test=20), methods=("mfp",), seed=3)


# -- metrics ------------------------------------------------------------------

def test_mae_examples():
    assert mae([1000, 2000], [1000, 2000]) == 0
    assert mae([1000, 2000], [1100, 1800]) == 150
    assert mae([2000, 1000], [1800, 1100]) == 150
    with pytest.raises(ValueError):
        mae([], [])
    with pytest.raises(ValueError):
        mae([1, 2], [1])


def test_pcl_examples():
    assert pcl([1000, 5000], [1000, 5000]) == 100
    assert pcl([1000], [1100]) == 100
    assert pcl([1000], [1101]) == 0
    assert pcl([1000, 5000], [1100, 6000]) == 50
    with pytest.raises(ValueError):
        pcl([], [])


def test_result_row_validation():
    with pytest.raises(ValueError):
        ResultRow("mfp", 0.0, 0.0, 0, -1.0, 50.0)
    with pytest.raises(ValueError):
        ResultRow("mfp", 0.0, 0.0, 0, 1.0, 101.0)


# -- config -------------------------------------------------------------------

def test_parse_config_text(tmp_path):
    (tmp_path / "ssp.csv").write_text("depth,speed\n0,1500\n216,1490\n")
    text = """
    # comment
    env.ssp_file = ssp.csv
    env.source_depth = 60
    signal.snr_db = -5, 0, inf   # trailing comment
    signal.realizations = 3
    train.max_epochs = 7
    adapt.num_steps = 4
    test.n_test = 12
    methods = mfp, cnn_jsea
    seed = 42
    """
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    cfg = load_config(path)
    assert cfg.env.ssp_base == ((0.0, 1500.0), (216.0, 1490.0))
    assert cfg.env.source_depth == 60
    assert cfg.signal.snr_db[:2] == (-5.0, 0.0) and math.isinf(cfg.signal.snr_db[2])
    assert cfg.signal.realizations == 3
    assert cfg.train.max_epochs == 7 and cfg.adapt.num_steps == 4 and cfg.test.n_test == 12
    assert cfg.methods == ("mfp", "cnn_jsea") and cfg.seed == 42


def test_parse_inline_ssp_and_array():
    cfg = parse_config_text("env.ssp = 0:1500, 216:1490\nenv.array_depths = 100, 150, 200")
    assert cfg.env.ssp_base == ((0.0, 1500.0), (216.0, 1490.0))
    assert cfg.env.num_sensors == 3


@pytest.mark.parametrize("text", ["nonsense", "foo.bar = 1", "signal.nope = 1", "colour = red",
                                  "methods = mfp, magic", "signal.realizations = 0", "test.on_grid = maybe"])
def test_parse_config_errors(text):
    with pytest.raises(ValueError):
        parse_config_text(text)


def test_config_invariants():
    with pytest.raises(ValueError):
        ExperimentConfig(methods=())
    with pytest.raises(ValueError):
        ExperimentConfig(signal=SignalConfig(realizations=0))


# -- datasets -----------------------------------------------------------------

def test_training_set_size_and_determinism():
    cfg = ExperimentConfig(seed=5)
    a = generate_dataset(cfg, "train")
    assert len(a) == 811
    b = generate_dataset(cfg, "train")
    assert all(np.array_equal(x.scm, y.scm) and x.true_range == y.true_range for x, y in zip(a, b))


def test_test_set_ranges_and_pairing():
    cfg = dataclasses.replace(ExperimentConfig(seed=5), test=TestConfig(n_test=50))
    a = generate_test_set(cfg, 0.0, 0.0, 1)
    b = generate_test_set(cfg, 0.0, 1.0, 1)
    c = generate_test_set(cfg, 0.0, 0.0, 2)
    ra = np.array([f.true_range for f in a])
    assert len(a) == 50 and np.all((ra >= 900) & (ra <= 9000))
    np.testing.assert_array_equal(ra, [f.true_range for f in b])
    assert not np.array_equal(ra, [f.true_range for f in c])
    again = generate_test_set(cfg, 0.0, 0.0, 1)
    assert all(np.array_equal(x.scm, y.scm) for x, y in zip(a, again))
    with pytest.raises(ValueError):
        generate_dataset(cfg, "validation")


# -- experiments --------------------------------------------------------------

def test_mfp_oracle_row(tmp_path):
    cfg = dataclasses.replace(mfp_config(), test=TestConfig(on_grid=True))
    rows = run_experiment(cfg, tmp_path)
    assert len(rows) == 1
    assert rows[0].mae_m == 0 and rows[0].pcl_pct == 100
    assert (tmp_path / "results.csv").read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_row_count_and_deterministic_csv(tmp_path):
    cfg = mfp_config(snr_db=(0.0, 10.0), delta_c=(0.0, 0.5, 1.0), realizations=2)
    run_experiment(cfg, tmp_path / "a")
    rows = run_experiment(cfg, tmp_path / "b")
    assert len(rows) == 1 * 2 * 3 * 2
    for name in ("results.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_matches_serial(tmp_path):
    cfg = mfp_config(snr_db=(0.0,), delta_c=(0.0, 1.0), realizations=2)
    run_experiment(cfg, tmp_path / "serial")
    run_experiment(dataclasses.replace(cfg, workers=2), tmp_path / "parallel")
    assert (tmp_path / "serial" / "results.csv").read_bytes() == (tmp_path / "parallel" / "results.csv").read_bytes()


def test_summary_matches_recomputation(tmp_path):
    rng = np.random.default_rng(0)
    rows = [ResultRow(m, s, 0.0, r, float(rng.uniform(0, 900)), float(rng.uniform(0, 100)))
            for m in ("mfp", "cnn") for s in (0.0, 5.0) for r in range(4)]
    write_results(tmp_path / "r.csv", rows)
    back = read_results(tmp_path / "r.csv")
    assert back == rows
    summary = summarize(back)
    write_summary(tmp_path / "s.csv", summary)
    for s in read_summary(tmp_path / "s.csv"):
        grp = [r for r in rows if (r.method, r.snr_db, r.delta_c) == (s["method"], s["snr_db"], s["delta_c"])]
        assert s["n"] == len(grp)
        assert abs(s["mae_mean"] - np.mean([r.mae_m for r in grp])) < 1e-12
        assert abs(s["pcl_std"] - np.std([r.pcl_pct for r in grp], ddof=1)) < 1e-12


def test_adaptation_rows_start_from_same_checkpoint(tmp_path):
    model = RangeClassifier(seed=1)
    snapshot = {k: v.copy() for k, v in model.parameters().items()}
    cfg = dataclasses.replace(mfp_config(realizations=2), methods=("cnn", "cnn_shot"),
                              test=TestConfig(n_test=6))
    cfg.adapt.num_steps = 2
    cfg.adapt.peak_dominance = 1.0
    rows = run_experiment(cfg, None, model)
    assert len(rows) == 4
    for k, v in model.parameters().items():
        np.testing.assert_array_equal(v, snapshot[k])


def test_missing_checkpoint():
    cfg = dataclasses.replace(ExperimentConfig(), checkpoint="/nonexistent/model.uwar")
    with pytest.raises(FileNotFoundError):
        obtain_model(cfg)


# -- plots --------------------------------------------------------------------

def _summary_rows(methods=("mfp", "cnn"), snrs=(-10, -5, 0, 5, 10)):
    return [dict(method=m, snr_db=float(s), delta_c=0.1, n=3, mae_mean=100.0 + i + s, mae_std=5.0,
                 pcl_mean=50.0 + s, pcl_std=2.0) for i, m in enumerate(methods) for s in snrs]


def test_plot_series_structure(tmp_path):
    write_summary(tmp_path / "s.csv", _summary_rows())
    out = emit_plot(tmp_path / "s.csv", tmp_path / "p.svg")
    svg = out.read_text()
    polylines = [line for line in svg.splitlines() if line.startswith("<polyline")]
    assert len(polylines) == 2
    for line in polylines:
        points = line.split('points="')[1].split('"')[0].split()
        assert len(points) == 5
    assert svg.count('class="errorbar"') == 10
    emit_plot(tmp_path / "s.csv", tmp_path / "q.svg")
    assert (tmp_path / "p.svg").read_bytes() == (tmp_path / "q.svg").read_bytes()


def test_plot_slices_by_fixed_value():
    rows = _summary_rows() + [dict(r, delta_c=1.0) for r in _summary_rows()]
    with pytest.raises(ValueError):
        collect_series(rows, AxisSpec())
    series = collect_series(rows, AxisSpec(fixed=1.0))
    assert list(series) == ["mfp", "cnn"]
    by_dc = collect_series(rows, AxisSpec(x="delta_c", metric="mae", fixed=0.0))
    assert [p[0] for p in by_dc["mfp"]] == [0.1, 1.0]


def test_plot_errors(tmp_path):
    write_summary(tmp_path / "empty.csv", [])
    with pytest.raises(ValueError):
        emit_plot(tmp_path / "empty.csv", tmp_path / "e.svg")
    assert not (tmp_path / "e.svg").exists()
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        emit_plot(tmp_path / "bad.csv", tmp_path / "b.svg")
    write_summary(tmp_path / "s.csv", _summary_rows())
    text = (tmp_path / "s.csv").read_text().replace("mfp,-10.0", "mfp,oops", 1)
    (tmp_path / "broken.csv").write_text(text)
    with pytest.raises(ValueError):
        emit_plot(tmp_path / "broken.csv", tmp_path / "c.svg")
    with pytest.raises(ValueError):
        render_svg({"mfp": []}, AxisSpec())
    with pytest.raises(ValueError):
        AxisSpec(metric="accuracy")


# -- CLI ----------------------------------------------------------------------

TINY = """
signal.snr_db = 0
signal.delta_c = 0, 1
signal.realizations = 2
train_data.range_step = 1000
train.max_epochs = 2
adapt.num_steps = 2
adapt.peak_dominance = 1
test.n_test = 8
"""


def test_cli_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    common = ["--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "run")]
    assert main(["gen-data", *common, "--kind", "test", "--snr", "0", "--delta-c", "1"]) == 0
    data = np.load(tmp_path / "run" / "test_snr0_dc1_r0.npz")
    assert data["x"].shape == (8, 2, 21, 21)
    assert main(["gen-data", *common]) == 0
    assert np.load(tmp_path / "run" / "train.npz")["x"].shape[0] == 9
    assert main(["train", *common]) == 0
    ckpt = str(tmp_path / "run" / "model.uwar")
    assert (tmp_path / "run" / "train_log.csv").exists()
    assert main(["adapt", *common, "--checkpoint", ckpt, "--method", "jsea"]) == 0
    assert (tmp_path / "run" / "adapt_jsea.csv").exists()
    assert main(["eval", *common, "--checkpoint", ckpt, "--delta-c", "1"]) == 0
    assert len(read_results(tmp_path / "run" / "results.csv")) == 4 * 2
    assert main(["sweep", *common, "--checkpoint", ckpt]) == 0
    assert len(read_results(tmp_path / "run" / "results.csv")) == 4 * 2 * 2
    assert main(["plot", *common, "--x", "delta_c", "--fixed", "0"]) == 0
    assert (tmp_path / "run" / "pcl_vs_delta_c.svg").exists()
    capsys.readouterr()


def test_cli_errors(tmp_path, capsys):
    out = ["--out", str(tmp_path)]
    assert main(["plot", *out, "--summary", str(tmp_path / "missing.csv")]) == 2
    with pytest.raises(SystemExit):
        main(["adapt", *out, "--method", "shot"])
    with pytest.raises(SystemExit):
        main(["adapt", *out, "--method", "tent"])
    capsys.readouterr()


def test_cli_sweep_deterministic(tmp_path):
    cfg = tmp_path / "mfp.cfg"
    cfg.write_text("signal.snr_db = 0, 10\nsignal.delta_c = 0, 1\nsignal.realizations = 2\n"
                   "test.n_test = 10\nmethods = mfp\n")
    for name in ("a", "b"):
        assert main(["sweep", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_empty_confident_set_falls_back_to_unadapted(caplog):
    model = RangeClassifier(seed=1)
    model.classifier.params["weight"][:] = 0.0  # uniform outputs: no sample is confident
    cfg = dataclasses.replace(mfp_config(), methods=("cnn", "cnn_shot", "cnn_jsea"), test=TestConfig(n_test=5))
    rows = run_experiment(cfg, None, model)
    assert len({(r.mae_m, r.pcl_pct) for r in rows}) == 1
    assert "skipped" in caplog.text
