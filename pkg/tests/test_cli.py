import json
import sys
from pathlib import Path

import numpy as np
import pytest

import ppgrocket.rocket
from ppgrocket import cli, metrics
from ppgrocket.config import RunConfig, dump_config
from ppgrocket.pipelines import METHODS, load_pipeline
from ppgrocket.signal_model import load_dataset

FAST = """
n_subjects = 20
windows_per_subject = 2
duration = 4
target_features = 840
n_trees = 15
methods = rocket+ridge, hr+ridge
fractions = 0.0625, 0.125, 0.25, 0.5, 1.0
ablation_seeds = 0
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(FAST + f"out_dir = {tmp_path / 'out'}\n" + extra)
    return str(path)


def run(*args):
    return cli.main(list(args))


def files(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(Path(directory).rglob("*")) if p.is_file()}


@pytest.fixture
def synthed(tmp_path):
    cfg = write_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    return cfg, tmp_path / "out"


def test_synth_writes_disjoint_balanced_splits(synthed, capsys):
    _, out = synthed
    parts = [load_dataset(out / f"{s}.csv") for s in ("train", "val", "test")]
    sets = [set(p.subjects()) for p in parts]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert sum(len(s) for s in sets) == 20
    labels = np.concatenate([p.labels for p in parts])
    # 20% positive within one subject's worth of windows
    assert abs(labels.mean() - 0.2) <= 2 / len(labels)


def test_synth_is_byte_identical_across_runs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = write_config(tmp_path)
    assert run("synth", "--config", cfg, "--out-dir", str(a)) == 0
    assert run("synth", "--config", cfg, "--out-dir", str(b)) == 0
    assert files(a) == files(b)
    assert run("synth", "--config", cfg, "--out-dir", str(tmp_path / "c"), "--seed", "1") == 0
    assert files(tmp_path / "c") != files(a)


def test_binary_data_format(tmp_path):
    cfg = write_config(tmp_path, "data_format = binary\nmethod = hr+ridge\n")
    assert run("synth", "--config", cfg) == 0
    assert (tmp_path / "out" / "train.rpgd").read_bytes()[:4] == b"RPGD"
    assert run("train", "--config", cfg) == 0


def test_train_hr_ridge_emits_all_report_fields(synthed, capsys):
    cfg, out = synthed
    capsys.readouterr()
    assert run("train", "--config", cfg, "--method", "hr+ridge") == 0
    printed = json.loads(capsys.readouterr().out)
    assert set(metrics.REPORT_FIELDS) <= set(printed)
    assert json.loads((out / "val_report.json").read_text()) == printed


@pytest.mark.parametrize("method", METHODS)
def test_saved_model_reproduces_val_predictions(synthed, method):
    cfg, out = synthed
    assert run("train", "--config", cfg, "--method", method) == 0
    pipe, saved_method = load_pipeline(out / "model")
    assert saved_method == method
    val = load_dataset(out / "val.csv")
    expected = np.loadtxt(out / "model" / "val_predictions.txt", dtype=int, ndmin=1)
    np.testing.assert_array_equal(pipe.predict(val.signals()), expected)


def test_bias_fitting_reads_only_training_data(synthed, monkeypatch):
    cfg, out = synthed
    train = load_dataset(out / "train.csv").signals()
    held_out = np.vstack([load_dataset(out / f"{s}.csv").signals() for s in ("val", "test")])
    opened, samples = [], []
    watching = [False]

    def audit(event, args):
        if watching[0] and event == "open" and isinstance(args[0], (str, bytes, Path)):
            opened.append(str(args[0]))

    sys.addaudithook(audit)
    real = ppgrocket.rocket.fit_biases

    def spy(sample, *a, **kw):
        watching[0] = True
        try:
            samples.append(np.array(sample))
            return real(sample, *a, **kw)
        finally:
            watching[0] = False

    monkeypatch.setattr(ppgrocket.rocket, "fit_biases", spy)
    assert run("train", "--config", cfg, "--method", "rocket+ridge") == 0
    assert len(samples) == 1
    assert not any(("val" in Path(p).name or "test" in Path(p).name) for p in opened)
    train_rows = {r.tobytes() for r in train}
    assert {r.tobytes() for r in samples[0]} <= train_rows
    assert not ({r.tobytes() for r in samples[0]} & {r.tobytes() for r in held_out})


def test_eval_is_deterministic_and_matches_metrics(synthed, capsys):
    cfg, out = synthed
    assert run("train", "--config", cfg, "--method", "rocket+ridge") == 0
    assert run("eval", "--config", cfg) == 0
    first = (out / "test_report.json").read_bytes()
    assert run("eval", "--config", cfg) == 0
    assert (out / "test_report.json").read_bytes() == first
    pipe, _ = load_pipeline(out / "model")
    test = load_dataset(out / "test.csv")
    cm, rep = metrics.evaluate(test.labels, pipe.predict(test.signals()))
    assert first.decode() == rep.to_json(cm)


class Memorizer:
    """Stub that recalls labels of rows it has seen."""

    def fit(self, X, y):
        self.table = {x.tobytes(): int(v) for x, v in zip(np.asarray(X), y)}
        return self

    def predict(self, X):
        return np.array([self.table[x.tobytes()] for x in np.asarray(X)])


def test_memorizing_stub_scores_perfectly_on_training_file(synthed):
    _, out = synthed
    train = load_dataset(out / "train.csv")
    stub = Memorizer().fit(train.signals(), train.labels)
    _, _, rep = cli._evaluate(stub, train)
    assert rep.weighted_f1 == 1.0


def test_train_twice_gives_identical_model_files(tmp_path):
    cfg = write_config(tmp_path)
    assert run("synth", "--config", cfg) == 0
    snapshots = []
    for method in ("rocket+forest", "rocket+forest"):
        assert run("train", "--config", cfg, "--method", method) == 0
        snapshots.append(files(tmp_path / "out" / "model") | {"val": (tmp_path / "out" / "val_report.json").read_bytes()})
    assert snapshots[0] == snapshots[1]


def test_ablation_rows_and_determinism(synthed, capsys):
    cfg, out = synthed
    assert run("ablate", "--config", cfg) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 5
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    assert sorted({float(r["fraction"]) for r in rows}) == [0.0625, 0.125, 0.25, 0.5, 1.0]
    assert {r["method"] for r in rows} == {"rocket+ridge", "hr+ridge"}
    summary = (out / "ablation_summary.csv").read_bytes()
    first = (out / "ablation.csv").read_bytes()
    assert run("ablate", "--config", cfg) == 0
    assert (out / "ablation.csv").read_bytes() == first
    assert (out / "ablation_summary.csv").read_bytes() == summary


def test_ablation_survives_a_failing_cell(tmp_path):
    cfg = RunConfig(out_dir=str(tmp_path), n_subjects=20, windows_per_subject=1, duration=4,
                    target_features=840, methods=("hr+ridge",), fractions=(0.05, 1.0),
                    ablation_seeds=(0,))
    cli.cmd_synth(cfg)
    train = load_dataset(tmp_path / "train.csv")
    test = load_dataset(tmp_path / "test.csv")
    rows = cli.run_ablation(cfg, train, test)
    assert len(rows) == 2
    assert rows[0]["error"].startswith("data:")  # a single record has one class
    assert rows[1]["error"] == ""


def test_features_command(synthed):
    cfg, out = synthed
    assert run("features", "--config", cfg) == 0
    lines = (out / "features.csv").read_text().splitlines()
    assert lines[0].startswith("label,heart_rate")
    assert len(lines) == 1 + len(load_dataset(out / "train.csv"))


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


def test_exit_code_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert run("synth", "--config", str(bad)) == 2
    assert _error_line(capsys).startswith("error code=2 kind=config:")
    assert run("train", "--method", "cnn+ridge") == 2


def test_exit_code_data_error(tmp_path, capsys):
    assert run("train", "--out-dir", str(tmp_path / "empty"), "--method", "hr+ridge") == 3
    assert _error_line(capsys).startswith("error code=3 kind=data:")


def test_exit_code_model_error(synthed, capsys):
    cfg, _ = synthed
    assert run("eval", "--config", cfg) == 4
    assert _error_line(capsys).startswith("error code=4 kind=model:")


def test_config_file_round_trip_through_cli(tmp_path):
    cfg = RunConfig(seed=3, out_dir=str(tmp_path / "o"), n_subjects=12, duration=3,
                    windows_per_subject=1)
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert run("synth", "--config", str(path)) == 0
    assert (tmp_path / "o" / "test.csv").exists()
