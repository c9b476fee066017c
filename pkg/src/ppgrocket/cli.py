"""Command-line entry point: ``ppgrocket {synth,train,eval,ablate,features}``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 model error. Failures
print one line to stderr of the form ``error code=<n> kind=<kind>: <message>``.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import RunConfig, load_config
from .exceptions import DataError, PpgRocketError
from .pipelines import fit_pipeline, load_pipeline, save_pipeline
from .ppg_features import FEATURE_CSV_HEADER, MorphologicalFeatureExtractor, save_feature_csv
from .signal_model import load_dataset, save_dataset, split_by_subject, subsample_training, synth_ppg

log = logging.getLogger("ppgrocket")

_EXT = {"csv": "csv", "binary": "rpgd"}


def _data_path(cfg, split):
    return cfg.path(f"{split}_path", f"{split}.{_EXT[cfg.data_format]}")


def _model_dir(cfg):
    return cfg.path("model_dir", "model")


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _balance(d):
    labels = d.labels
    return {
        "records": len(d),
        "subjects": len(d.subjects()),
        "positive_records": int(labels.sum()),
        "positive_fraction": float(labels.mean()) if len(d) else 0.0,
    }


def cmd_synth(cfg):
    """Generate a synthetic corpus and write subject-disjoint train/val/test files."""
    corpus = synth_ppg(cfg.synth_params())
    splits = split_by_subject(corpus, cfg.split_fractions, cfg.seed, stratify=cfg.stratify)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"corpus": _balance(corpus)}
    for d in splits:
        path = _data_path(cfg, d.split_tag)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(d, path, cfg.data_format)
        summary[d.split_tag] = dict(_balance(d), path=str(path))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _evaluate(pipe, d):
    pred = pipe.predict(d.signals())
    cm, rep = metrics.evaluate(d.labels, pred)
    return pred, cm, rep


def cmd_train(cfg):
    """Fit the configured method on train, persist it and report on val."""
    train = load_dataset(_data_path(cfg, "train"), cfg.data_format)
    val = load_dataset(_data_path(cfg, "val"), cfg.data_format)
    settings = cfg.pipeline_settings()
    pipe = fit_pipeline(cfg.method, train, settings, cfg.seed)
    model_dir = _model_dir(cfg)
    save_pipeline(pipe, cfg.method, model_dir, settings, cfg.seed)
    pred, cm, rep = _evaluate(pipe, val)
    np.savetxt(model_dir / "val_predictions.txt", pred, fmt="%d")
    text = rep.to_json(cm)
    _write(Path(cfg.out_dir) / "val_report.json", text)
    print(text, end="")
    return rep


def cmd_eval(cfg):
    """Score a saved model on the test split."""
    pipe, method = load_pipeline(_model_dir(cfg))
    test = load_dataset(_data_path(cfg, "test"), cfg.data_format)
    _, cm, rep = _evaluate(pipe, test)
    text = rep.to_json(cm)
    _write(Path(cfg.out_dir) / "test_report.json", text)
    print(text, end="")
    return rep


ABLATION_COLUMNS = ("method", "fraction", "seed", "n_train", "error")


def run_ablation(cfg, train, test):
    """One row per (method, fraction, seed); failed cells carry an error message."""
    settings = cfg.pipeline_settings()
    rows = []
    for method in cfg.methods:
        for fraction in cfg.fractions:
            for seed in cfg.ablation_seeds:
                row = {"method": method, "fraction": fraction, "seed": seed, "error": ""}
                try:
                    sub = subsample_training(train, fraction, seed)
                    row["n_train"] = len(sub)
                    pipe = fit_pipeline(method, sub, settings, seed)
                    _, cm, rep = _evaluate(pipe, test)
                    row.update({k: getattr(rep, k) for k in metrics.REPORT_FIELDS})
                    row.update(tp=cm.tp, fp=cm.fp, tn=cm.tn, fn=cm.fn)
                except PpgRocketError as exc:
                    log.warning("ablation cell %s/%s/%s failed: %s", method, fraction, seed, exc)
                    row["error"] = f"{exc.kind}: {exc}"
                rows.append(row)
    rows.sort(key=lambda r: (r["method"], r["fraction"], r["seed"]))
    return rows


def summarize_ablation(rows):
    """Mean of each metric per (method, fraction) over successful seeds."""
    groups = {}
    for r in rows:
        if not r["error"]:
            groups.setdefault((r["method"], r["fraction"]), []).append(r)
    out = []
    for (method, fraction), group in sorted(groups.items()):
        summary = {"method": method, "fraction": fraction, "seed": "mean", "n_train": "", "error": ""}
        for k in metrics.REPORT_FIELDS:
            summary[k] = float(np.mean([r[k] for r in group]))
        out.append(summary)
    return out


def cmd_ablate(cfg):
    """Retrain every method on growing fractions of train and score on test."""
    train = load_dataset(_data_path(cfg, "train"), cfg.data_format)
    test = load_dataset(_data_path(cfg, "test"), cfg.data_format)
    rows = run_ablation(cfg, train, test)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
    summary = summarize_ablation(rows)
    metrics.write_report_csv(out / "ablation_summary.csv", summary, ABLATION_COLUMNS)
    for s in summary:
        print(f"{s['method']:<14} {s['fraction']:<7} weighted_f1={s['weighted_f1']:.4f}")
    return rows


def cmd_features(cfg):
    """Dump per-record morphology features of ``input_path`` (default: train split)."""
    path = Path(cfg.input_path) if cfg.input_path else _data_path(cfg, "train")
    d = load_dataset(path, cfg.data_format)
    F = MorphologicalFeatureExtractor(d.fs).extract(d.signals())
    out = Path(cfg.out_dir) / "features.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_feature_csv(out, F, d.labels)
    print(f"wrote {len(d)} rows x {len(FEATURE_CSV_HEADER) - 1} features to {out}")
    return F


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "features": cmd_features,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ppgrocket",
        description="Hypertension screening from PPG windows: synthesize data, train, evaluate, ablate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--method")
        p.add_argument("--out-dir")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.method is not None:
        overrides["method"] = args.method
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    return replace(cfg, **overrides).validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except PpgRocketError as exc:
        print(f"error code={exc.exit_code} kind={exc.kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = DataError(f"{exc.filename or ''}: {exc.strerror or exc}")
        print(f"error code={err.exit_code} kind={err.kind}: {err}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
