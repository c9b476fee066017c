"""Named feature+classifier pipelines and their on-disk layout.

A saved pipeline is a directory holding ``pipeline.json`` (method and
settings), the feature stage (``transform.rktm`` or ``features.json``) and
the classifier (``classifier.rdgm`` or ``classifier.brfm``).
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.pipeline import Pipeline

from .classifiers import (
    DEFAULT_LAMBDAS,
    BalancedRandomForestClassifier,
    BalancedRidgeClassifier,
    ForestModel,
    RidgeModel,
)
from .exceptions import ConfigError, ModelError
from .ppg_features import HeartRateExtractor, MorphologicalFeatureExtractor
from .rocket import DEFAULT_MAX_DILATIONS, DEFAULT_N_FEATURES, RandomKernelTransform, TransformModel

METHODS = ("rocket+ridge", "rocket+forest", "hr+ridge", "morph+ridge", "morph+forest")
LAYOUT_VERSION = 1


@dataclass(frozen=True)
class PipelineSettings:
    target_features: int = DEFAULT_N_FEATURES
    max_dilations_per_kernel: int = DEFAULT_MAX_DILATIONS
    lambda_grid: tuple = DEFAULT_LAMBDAS
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 1
    mtry: Optional[int] = None
    n_jobs: Optional[int] = None


def split_method(method):
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return method.split("+")


def make_pipeline(method, fs=125.0, settings=PipelineSettings(), seed=0):
    features, classifier = split_method(method)
    if features == "rocket":
        stage = RandomKernelTransform(
            settings.target_features, settings.max_dilations_per_kernel,
            random_state=seed, n_jobs=settings.n_jobs,
        )
    elif features == "hr":
        stage = HeartRateExtractor(fs)
    else:
        stage = MorphologicalFeatureExtractor(fs)
    if classifier == "ridge":
        clf = BalancedRidgeClassifier(tuple(settings.lambda_grid), random_state=seed)
    else:
        clf = BalancedRandomForestClassifier(
            settings.n_trees, settings.max_depth, settings.min_leaf, settings.mtry,
            random_state=seed, n_jobs=settings.n_jobs,
        )
    return Pipeline([("features", stage), ("classifier", clf)])


def fit_pipeline(method, train, settings=PipelineSettings(), seed=0):
    """Fit every stage of ``method`` on the training dataset only."""
    pipe = make_pipeline(method, train.fs, settings, seed)
    return pipe.fit(train.signals(), train.labels)


def save_pipeline(pipe, method, directory, settings=PipelineSettings(), seed=0):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stage = pipe.named_steps["features"]
    clf = pipe.named_steps["classifier"]
    meta = {
        "layout_version": LAYOUT_VERSION,
        "method": method,
        "seed": seed,
        "fs": getattr(stage, "fs", None),
        "settings": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(settings).items()},
    }
    if isinstance(stage, RandomKernelTransform):
        stage.model_.save(directory / "transform.rktm")
    else:
        (directory / "features.json").write_text(json.dumps(
            {"fill_values": [float(v) for v in stage.fill_values_]}, indent=2) + "\n")
    if isinstance(clf, BalancedRidgeClassifier):
        (directory / "classifier.rdgm").write_bytes(clf.model_.to_bytes())
        (directory / "ridge_weights.txt").write_text(clf.model_.to_text())
    else:
        (directory / "classifier.brfm").write_bytes(clf.model_.to_bytes())
    (directory / "pipeline.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_pipeline(directory):
    """Rebuild a fitted pipeline saved by :func:`save_pipeline`."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "pipeline.json").read_text())
    except FileNotFoundError:
        raise ModelError(f"{directory}: no pipeline.json, not a saved model") from None
    if meta.get("layout_version") != LAYOUT_VERSION:
        raise ModelError(f"unsupported model layout version {meta.get('layout_version')}")
    method = meta["method"]
    s = dict(meta["settings"])
    s["lambda_grid"] = tuple(s["lambda_grid"])
    settings = PipelineSettings(**s)
    pipe = make_pipeline(method, meta["fs"] or 125.0, settings, meta["seed"])
    stage = pipe.named_steps["features"]
    clf = pipe.named_steps["classifier"]
    try:
        if isinstance(stage, RandomKernelTransform):
            stage.model_ = TransformModel.load(directory / "transform.rktm")
            stage.n_features_out_ = stage.model_.n_features
        else:
            fill = json.loads((directory / "features.json").read_text())["fill_values"]
            stage.fill_values_ = np.array(fill, dtype=np.float64)
            stage.n_features_out_ = len(fill)
        if isinstance(clf, BalancedRidgeClassifier):
            clf.model_ = RidgeModel.from_bytes((directory / "classifier.rdgm").read_bytes())
            clf.alpha_ = clf.model_.lam
        else:
            clf.model_ = ForestModel.from_bytes((directory / "classifier.brfm").read_bytes())
    except FileNotFoundError as exc:
        raise ModelError(f"missing model file {exc.filename}") from None
    clf.classes_ = np.array([0, 1])
    clf.n_features_in_ = clf.model_.n_features
    return pipe, method
