"""Acceptance gate: one test per criterion, each at its stated tolerance and time budget.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per criterion
is printed at the end of the session.
"""

import csv
import time
from dataclasses import replace

import numpy as np
import pytest

from oracles import naive_convolve
from ppgrocket import cli, metrics
from ppgrocket.config import RunConfig
from ppgrocket.pipelines import METHODS, fit_pipeline
from ppgrocket.ppg_features import ampd_peaks
from ppgrocket.rocket import (
    RandomKernelTransform,
    dilated_convolve,
    dilation_schedule,
    enumerate_kernels,
    fit_biases,
    transform,
    transform_batch,
)
from ppgrocket.signal_model import split_by_subject, synth_ppg

CRITERIA = {
    1: "kernel combinatorics",
    2: "feature dimensionality",
    3: "convolution oracle",
    4: "DC-offset invariance",
    5: "positive-scale equivariance",
    6: "metrics hand-check",
    7: "AMPD correctness",
    8: "synthetic end-to-end ordering",
    9: "learning-curve trend",
    10: "determinism",
}


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_criterion_01_kernel_combinatorics():
    with Timer() as t:
        ks = enumerate_kernels()
    assert len(ks) == 84
    assert len({k.weights for k in ks}) == 84
    for k in ks:
        assert len(k.weights) == 9
        assert set(k.weights) <= {-1, 2}
        assert k.weights.count(2) == 3
        assert sum(k.weights) == 0
    assert t.elapsed < 1.0


def test_criterion_02_feature_dimensionality():
    rng = np.random.default_rng(0)
    schedule = dilation_schedule(875, 9996)
    model = fit_biases(rng.standard_normal((4, 875)).cumsum(axis=1), enumerate_kernels(), schedule)
    signals = rng.standard_normal((5, 875)).cumsum(axis=1)
    with Timer() as t:
        feats = [transform(x, model) for x in signals]
    for f in feats:
        assert f.shape == (9996,)
        assert np.all((f >= 0) & (f <= 1))
    assert t.elapsed / len(signals) < 1.0


def test_criterion_03_convolution_oracle():
    rng = np.random.default_rng(3)
    kernels = enumerate_kernels()
    dilations = dilation_schedule(875, 9996).dilations
    with Timer() as t:
        for case in range(1000):
            d = int(dilations[case % len(dilations)])
            padded = bool((case // len(dilations)) % 2)
            low = 1 if padded else 8 * d + 1
            n = int(rng.integers(low, 876))
            x = rng.standard_normal(n) * rng.choice([1e-3, 1.0, 1e3])
            k = kernels[int(rng.integers(84))]
            got = dilated_convolve(x, k, d, padded)
            want = np.array(naive_convolve(x, k.weights, d, padded))
            # relative 1e-6; the absolute floor only matters where taps cancel to ~0
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-12 * np.abs(x).max())
    assert t.elapsed < 30.0


def test_criterion_04_dc_offset_invariance():
    rng = np.random.default_rng(4)
    schedule = dilation_schedule(875, 9996)
    model = fit_biases(rng.standard_normal((8, 875)).cumsum(axis=1), enumerate_kernels(), schedule)
    X = rng.standard_normal((50, 875)).cumsum(axis=1)
    unpadded = ~schedule.padded
    with Timer() as t:
        base = transform_batch(X, model)
        for c in (-10.0, 0.5, 1e3):
            shifted = transform_batch(X + c, model)
            assert np.max(np.abs(shifted[:, unpadded] - base[:, unpadded])) <= 1e-9
    assert t.elapsed < 30.0


def test_criterion_05_positive_scale_equivariance():
    corpus = synth_ppg(replace(RunConfig().synth_params(), n_normal=6, n_hypertension=4,
                               windows_per_subject=1))
    X = corpus.signals()
    train, test = X[:6], X[6:]
    with Timer() as t:
        base = RandomKernelTransform(random_state=2).fit(train).transform(test)
        for alpha in (0.01, 3.0, 100.0):
            scaled = RandomKernelTransform(random_state=2).fit(alpha * train).transform(alpha * test)
            assert np.max(np.abs(scaled - base)) <= 1e-9
    assert t.elapsed < 60.0


def test_criterion_06_metrics_hand_check():
    r = metrics.report(metrics.ConfusionMatrix(tp=60, fp=40, tn=160, fn=40))
    # scripted by hand: supports 100 / 200, per-class F1 0.6 / 0.8
    expected = {
        "sensitivity_hypertension": 0.6,
        "sensitivity_normal": 0.8,
        "weighted_precision": (100 * 0.6 + 200 * 0.8) / 300,
        "weighted_sensitivity": 220 / 300,
        "weighted_f1": (100 * 0.6 + 200 * 0.8) / 300,
    }
    for name, value in expected.items():
        assert abs(getattr(r, name) - value) <= 1e-12, name
    rng = np.random.default_rng(6)
    for _ in range(1000):
        tp, fp, tn, fn = (int(v) for v in rng.integers(0, 1000, 4))
        if tp + fp + tn + fn == 0:
            continue
        cm = metrics.ConfusionMatrix(tp, fp, tn, fn)
        assert abs(metrics.report(cm).weighted_sensitivity - cm.accuracy) <= 1e-12


def test_criterion_07_ampd_correctness():
    checked = 0
    with Timer() as t:
        for fs in (50, 125, 500):
            for cycles in range(2, 11):
                for phase in np.linspace(0, 2 * np.pi, 7, endpoint=False):
                    n = cycles * fs
                    x = np.sin(2 * np.pi * np.arange(n) / fs + phase)
                    expected = []
                    for c in range(cycles):
                        seg = x[c * fs:(c + 1) * fs]
                        i = c * fs + int(np.argmax(seg))
                        if 0 < i < n - 1 and x[i] >= x[i - 1] and x[i] >= x[i + 1]:
                            expected.append(i)
                    peaks = ampd_peaks(x)
                    assert len(peaks) == len(expected), (fs, cycles, phase)
                    assert np.all(np.abs(peaks - np.array(expected)) <= 1), (fs, cycles, phase)
                    checked += 1
    assert checked == 3 * 9 * 7
    assert t.elapsed < 10.0


@pytest.mark.slow
def test_criterion_08_synthetic_ordering(capsys):
    base = RunConfig()
    assert base.n_subjects >= 200 and base.positive_fraction == 0.2
    gap = abs(base.hypertension.hr_mean - base.normal.hr_mean)
    assert gap < min(base.normal.hr_sd, base.hypertension.hr_sd)  # heart rates overlap heavily
    scores = {m: [] for m in METHODS}
    with Timer() as t:
        for seed in (0, 1, 2):
            cfg = replace(base, seed=seed)
            corpus = synth_ppg(cfg.synth_params())
            train, _, test = split_by_subject(corpus, cfg.split_fractions, seed, stratify=True)
            assert not set(train.subjects()) & set(test.subjects())
            for method in METHODS:
                pipe = fit_pipeline(method, train, cfg.pipeline_settings(), seed)
                _, rep = metrics.evaluate(test.labels, pipe.predict(test.signals()))
                scores[method].append(rep.weighted_f1)
    mean = {m: float(np.mean(v)) for m, v in scores.items()}
    with capsys.disabled():
        print("\n  mean weighted F1: " + ", ".join(f"{m}={v:.4f}" for m, v in mean.items()))
    morph = [mean["morph+ridge"], mean["morph+forest"]]
    assert mean["rocket+forest"] >= mean["rocket+ridge"]
    assert mean["rocket+ridge"] > max(morph)
    assert min(morph) > mean["hr+ridge"]
    assert mean["rocket+forest"] >= 0.90
    assert mean["hr+ridge"] <= min(morph) - 0.05
    assert t.elapsed < 600.0


@pytest.mark.slow
def test_criterion_09_learning_curve(tmp_path, capsys):
    cfg = replace(RunConfig(), out_dir=str(tmp_path), methods=("rocket+forest",),
                  ablation_seeds=(0, 1, 2))
    with Timer() as t:
        cli.cmd_synth(cfg)
        cli.cmd_ablate(cfg)
    with open(tmp_path / "ablation_summary.csv", newline="") as fh:
        summary = {float(r["fraction"]): float(r["weighted_f1"]) for r in csv.DictReader(fh)}
    with open(tmp_path / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 3 and all(r["error"] == "" for r in rows)
    with capsys.disabled():
        print("\n  rocket+forest weighted F1 by fraction: "
              + ", ".join(f"{f:g}={v:.4f}" for f, v in sorted(summary.items())))
    assert sorted(summary) == [0.0625, 0.125, 0.25, 0.5, 1.0]
    assert summary[1.0] - summary[0.0625] >= 0.03
    assert t.elapsed < 1200.0


def _snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(tmp_path):
    text = (
        "n_subjects = 30\nwindows_per_subject = 2\nduration = 5\ntarget_features = 2520\n"
        "n_trees = 30\nmethods = rocket+forest, morph+forest\nfractions = 0.5, 1.0\n"
        "ablation_seeds = 0, 1\nseed = 5\n"
    )
    snapshots = []
    for run in ("a", "b"):
        out = tmp_path / run
        cfg_path = tmp_path / f"{run}.cfg"
        cfg_path.write_text(text + f"out_dir = {out}\n")
        for command in (["synth"], ["train", "--method", "rocket+forest"], ["eval"],
                        ["ablate"], ["features"]):
            args = command[:1] + ["--config", str(cfg_path)] + command[1:]
            assert cli.main(args) == 0, args
        snapshots.append(_snapshot(out))
    assert snapshots[0].keys() == snapshots[1].keys()
    assert len(snapshots[0]) >= 10
    for name in snapshots[0]:
        assert snapshots[0][name] == snapshots[1][name], name


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
