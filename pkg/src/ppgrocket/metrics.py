"""Confusion counts and the per-class / support-weighted scores reported per run.

Class 1 (hypertension) is the positive class. Weighted averages weight each
class's score by its share of true labels, so weighted sensitivity equals
accuracy. Any 0/0 ratio is reported as 0 and named in ``undefined``.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DataError, DimensionMismatchError

log = logging.getLogger(__name__)

REPORT_FIELDS = (
    "sensitivity_normal",
    "sensitivity_hypertension",
    "weighted_precision",
    "weighted_sensitivity",
    "weighted_f1",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DataError(f"{name} must be a non-negative count, got {v}")
            object.__setattr__(self, name, int(v))
        if self.n < 1:
            raise DataError("confusion matrix must count at least one prediction")

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.n


@dataclass(frozen=True)
class MetricReport:
    sensitivity_normal: float
    sensitivity_hypertension: float
    weighted_precision: float
    weighted_sensitivity: float
    weighted_f1: float
    precision_normal: float = 0.0
    precision_hypertension: float = 0.0
    f1_normal: float = 0.0
    f1_hypertension: float = 0.0
    undefined: tuple = field(default=())

    def to_dict(self, cm=None):
        out = asdict(self)
        out["undefined"] = list(self.undefined)
        if cm is not None:
            out["counts"] = asdict(cm)
        return out

    def to_json(self, cm=None):
        return json.dumps(self.to_dict(cm), indent=2, sort_keys=True) + "\n"


def confusion(y_true, y_pred):
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.ndim != 1 or y_pred.ndim != 1:
        raise DataError("labels must be one-dimensional")
    if len(y_true) != len(y_pred):
        raise DimensionMismatchError(f"{len(y_true)} true labels but {len(y_pred)} predictions")
    if len(y_true) == 0:
        raise DataError("cannot score an empty prediction set")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if not np.all(np.isin(arr, (0, 1))):
            raise DataError(f"{name} must contain only 0 and 1")
    t = y_true.astype(bool)
    p = y_pred.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(t & p)), fp=int(np.sum(~t & p)),
        tn=int(np.sum(~t & ~p)), fn=int(np.sum(t & ~p)),
    )


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def report(cm):
    undefined = []
    sens_hyp = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity_hypertension", undefined)
    sens_norm = _ratio(cm.tn, cm.tn + cm.fp, "sensitivity_normal", undefined)
    prec_hyp = _ratio(cm.tp, cm.tp + cm.fp, "precision_hypertension", undefined)
    prec_norm = _ratio(cm.tn, cm.tn + cm.fn, "precision_normal", undefined)
    f1_hyp = _ratio(2 * prec_hyp * sens_hyp, prec_hyp + sens_hyp, "f1_hypertension", undefined)
    f1_norm = _ratio(2 * prec_norm * sens_norm, prec_norm + sens_norm, "f1_normal", undefined)

    if undefined:
        log.warning("undefined ratios reported as 0: %s", ", ".join(undefined))
    w_hyp = (cm.tp + cm.fn) / cm.n
    w_norm = (cm.tn + cm.fp) / cm.n
    return MetricReport(
        sensitivity_normal=sens_norm,
        sensitivity_hypertension=sens_hyp,
        weighted_precision=w_norm * prec_norm + w_hyp * prec_hyp,
        weighted_sensitivity=w_norm * sens_norm + w_hyp * sens_hyp,
        weighted_f1=w_norm * f1_norm + w_hyp * f1_hyp,
        precision_normal=prec_norm,
        precision_hypertension=prec_hyp,
        f1_normal=f1_norm,
        f1_hypertension=f1_hyp,
        undefined=tuple(undefined),
    )


def evaluate(y_true, y_pred):
    cm = confusion(y_true, y_pred)
    return cm, report(cm)


def write_report_csv(path, rows, extra_columns=()):
    """One row per run: ``extra_columns`` first, then the report fields."""
    columns = list(extra_columns) + list(REPORT_FIELDS) + ["tp", "fp", "tn", "fn"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
