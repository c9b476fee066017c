"""Heart-rate and pulse-morphology baselines.

Peaks come from AMPD (automatic multiscale peak detection). Beats are cut
at the minimum between consecutive systolic peaks and key points are found
per beat from first and second differences.
"""

import math
import warnings
from dataclasses import astuple, dataclass, fields
from typing import Optional

import numpy as np
from scipy.signal import detrend
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError, InsufficientPeaksError
from .validation import check_signal, check_signals

MIN_AMPD_LENGTH = 8

MORPH_FIELDS = (
    "heart_rate", "pulse_width", "crest_time", "reflection_index",
    "lasi", "area_ratio", "mnpv",
)
FEATURE_CSV_HEADER = ("label",) + MORPH_FIELDS + ("notch_present",)


def _is_flat(x):
    span = np.ptp(x)
    return span <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def ampd_peaks(x):
    """Indices of peaks found by automatic multiscale peak detection.

    The signal is linearly detrended, then for every scale ``k`` in
    ``1..ceil(T/2)-1`` each sample is tested against its neighbours ``k``
    samples away. The scale with the most local maxima is ``lam``; a peak is
    a sample that is a local maximum at every scale up to ``lam``.

    Samples closer than ``k`` to an edge are scored on their one in-range
    neighbour, so peaks near the window edges are kept; the first and last
    samples are never peaks. Ties go to the leftmost sample of a plateau.
    Each detection is finally moved uphill on the raw signal to its nearest
    local maximum, undoing the small shift the detrend introduces; one that
    would have to climb onto an endpoint is dropped.
    """
    raw = x = check_signal(x)
    n = len(x)
    if n < MIN_AMPD_LENGTH:
        raise DataError(f"AMPD needs at least {MIN_AMPD_LENGTH} samples, got {n}")
    if _is_flat(x):
        return np.empty(0, dtype=np.int64)
    x = detrend(x, type="linear")
    if _is_flat(x):
        return np.empty(0, dtype=np.int64)

    n_scales = math.ceil(n / 2) - 1
    counts = np.zeros(n_scales, dtype=np.int64)
    relaxed = np.ones((n_scales, n), dtype=bool)
    for k in range(1, n_scales + 1):
        left = np.ones(n, dtype=bool)
        right = np.ones(n, dtype=bool)
        left[k:] = x[k:] > x[:-k]
        right[:-k] = x[:-k] >= x[k:]
        both = left & right
        counts[k - 1] = np.count_nonzero(both[k:n - k])
        relaxed[k - 1] = both
    if counts.max() == 0:
        return np.empty(0, dtype=np.int64)
    lam = int(np.argmax(counts)) + 1
    is_peak = relaxed[:lam].all(axis=0)
    is_peak[0] = is_peak[-1] = False
    peaks = np.unique([_climb(raw, p) for p in np.flatnonzero(is_peak)]).astype(np.int64)
    # a climb blocked by a window edge is a partial beat, not a peak
    keep = (raw[peaks] >= raw[peaks - 1]) & (raw[peaks] >= raw[peaks + 1])
    return peaks[keep]


def _climb(x, i):
    while True:
        if i + 1 < len(x) - 1 and x[i + 1] > x[i]:
            i += 1
        elif i - 1 > 0 and x[i - 1] > x[i]:
            i -= 1
        else:
            return int(i)


def heart_rate(peaks, fs):
    """Mean heart rate in bpm from peak sample indices."""
    peaks = np.asarray(peaks)
    if len(peaks) < 2:
        raise InsufficientPeaksError(f"need at least 2 peaks for a heart rate, got {len(peaks)}")
    if fs <= 0:
        raise DataError(f"sampling rate must be positive, got {fs}")
    return 60.0 * fs / np.mean(np.diff(peaks))


@dataclass(frozen=True)
class PulseKeypoints:
    onset: int
    max_slope: int
    systolic_peak: int
    dicrotic_notch: Optional[int] = None
    diastolic_peak: Optional[int] = None


def _first_local_min(x, start):
    for i in range(max(start, 1), len(x) - 1):
        if x[i] < x[i - 1] and x[i] <= x[i + 1]:
            return i
    return None


def _first_local_max(x, start):
    for i in range(max(start, 1), len(x) - 1):
        if x[i] > x[i - 1] and x[i] >= x[i + 1]:
            return i
    return None


def _slope_peak_after(x, start):
    # second difference turning from + to -: the slope has a local maximum
    dd = x[2:] - 2 * x[1:-1] + x[:-2]  # dd[i - 1] is centred on sample i
    for i in range(max(start, 2), len(x) - 1):
        if dd[i - 2] > 0 and dd[i - 1] <= 0:
            return i
    return None


def detect_keypoints(pulse, fs):
    """Key points of one onset-to-onset beat, as indices into ``pulse``.

    The dicrotic notch is the first local minimum after the systolic peak;
    without one, the first point past the peak where the slope stops rising
    (a shoulder) is used. The diastolic peak is the first local maximum
    after the notch. Either may be ``None``.
    """
    pulse = check_signal(pulse, "pulse")
    if fs <= 0:
        raise DataError(f"sampling rate must be positive, got {fs}")
    sys_peak = int(np.argmax(pulse))
    if sys_peak == 0:
        raise DataError("pulse has no upstroke: maximum at its onset")
    slope = np.diff(pulse[: sys_peak + 1])
    max_slope = int(np.argmax(slope)) + 1
    notch = _first_local_min(pulse, sys_peak + 1)
    if notch is None:
        notch = _slope_peak_after(pulse, sys_peak + 1)
    diastolic = None if notch is None else _first_local_max(pulse, notch)
    return PulseKeypoints(0, max_slope, sys_peak, notch, diastolic)


@dataclass(frozen=True)
class MorphFeatures:
    """Median per-pulse morphology of one window; NaN marks a missing value.

    Times are in seconds, heart rate in bpm. ``notch_present`` is the
    fraction of pulses on which a dicrotic notch was found.
    """

    heart_rate: float
    pulse_width: float
    crest_time: float
    reflection_index: float
    lasi: float
    area_ratio: float
    mnpv: float
    notch_present: float = 0.0

    @property
    def missing(self):
        return tuple(f.name for f in fields(self) if math.isnan(getattr(self, f.name)))

    def to_array(self):
        return np.array(astuple(self), dtype=np.float64)


def _half_width(pulse, base, sys_peak, fs):
    level = base + 0.5 * (pulse[sys_peak] - base)
    below = np.flatnonzero(pulse[:sys_peak] < level)
    after = np.flatnonzero(pulse[sys_peak:] < level)
    if below.size == 0 or after.size == 0:
        return math.nan
    i = below[-1]
    left = i + (level - pulse[i]) / (pulse[i + 1] - pulse[i])
    j = sys_peak + after[0]
    right = j - 1 + (pulse[j - 1] - level) / (pulse[j - 1] - pulse[j])
    return (right - left) / fs


def _pulse_features(pulse, fs):
    kp = detect_keypoints(pulse, fs)
    base = pulse[0]
    amp = pulse[kp.systolic_peak] - base
    row = {
        "heart_rate": 60.0 * fs / (len(pulse) - 1),
        "pulse_width": _half_width(pulse, base, kp.systolic_peak, fs),
        "crest_time": kp.systolic_peak / fs,
        "reflection_index": math.nan,
        "lasi": math.nan,
        "area_ratio": math.nan,
    }
    if kp.diastolic_peak is not None and amp > 0:
        row["reflection_index"] = max(pulse[kp.diastolic_peak] - base, 0.0) / amp
        row["lasi"] = (kp.diastolic_peak - kp.systolic_peak) / fs
    if kp.dicrotic_notch is not None:
        lifted = np.clip(pulse - base, 0.0, None)
        before = np.trapezoid(lifted[: kp.dicrotic_notch + 1])
        after = np.trapezoid(lifted[kp.dicrotic_notch:])
        if before > 0:
            row["area_ratio"] = after / before
    return row, kp.dicrotic_notch is not None


def morphological_features(x, fs):
    """Median pulse morphology of a PPG window.

    Raises InsufficientPeaksError when AMPD finds fewer than two peaks.
    """
    raw = check_signal(x)
    peaks = ampd_peaks(raw)
    if len(peaks) < 2:
        raise InsufficientPeaksError(f"found {len(peaks)} peaks, need at least 2")
    xd = detrend(raw, type="linear")
    onsets = [int(a + np.argmin(xd[a:b])) for a, b in zip(peaks[:-1], peaks[1:])]

    rows, notches = [], []
    for a, b in zip(onsets[:-1], onsets[1:]):
        if b - a < 3:
            continue
        try:
            row, has_notch = _pulse_features(xd[a:b + 1], fs)
        except DataError:
            continue
        rows.append(row)
        notches.append(has_notch)

    ac = float(np.ptp(raw))
    dc = abs(float(raw.min()))
    mnpv = ac / (ac + dc) if ac + dc > 0 else math.nan

    def median(name):
        values = np.array([r[name] for r in rows], dtype=np.float64)
        values = values[~np.isnan(values)]
        return float(np.median(values)) if values.size else math.nan

    hr = median("heart_rate") if rows else float(heart_rate(peaks, fs))
    return MorphFeatures(
        heart_rate=hr,
        pulse_width=median("pulse_width"),
        crest_time=median("crest_time"),
        reflection_index=median("reflection_index"),
        lasi=median("lasi"),
        area_ratio=median("area_ratio"),
        mnpv=mnpv,
        notch_present=float(np.mean(notches)) if notches else 0.0,
    )


def _morph_or_missing(x, fs):
    try:
        return morphological_features(x, fs).to_array()
    except InsufficientPeaksError:
        out = np.full(len(FEATURE_CSV_HEADER) - 1, np.nan)
        out[-1] = 0.0
        return out


def _hr_or_missing(x, fs):
    try:
        return heart_rate(ampd_peaks(x), fs)
    except InsufficientPeaksError:
        return math.nan


def save_feature_csv(path, features, labels):
    """Write morphology rows; missing values become empty fields."""
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(FEATURE_CSV_HEADER) + "\n")
        for y, row in zip(labels, features):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
            fh.write(",".join([str(int(y))] + cells) + "\n")


class _ImputingExtractor(TransformerMixin, BaseEstimator):
    """Per-signal feature extraction with training-median imputation."""

    def extract(self, X):
        raise NotImplementedError

    def fit(self, X, y=None):
        F = self.extract(X)
        if len(F) == 0:
            raise DataError("cannot fit a feature extractor on zero signals")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            medians = np.nanmedian(F, axis=0)
        self.fill_values_ = np.where(np.isnan(medians), 0.0, medians)
        self.n_features_out_ = F.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "fill_values_")
        F = self.extract(X)
        return np.where(np.isnan(F), self.fill_values_[None, :], F)


class HeartRateExtractor(_ImputingExtractor):
    """One column: mean AMPD heart rate (bpm) per signal.

    Signals with fewer than two detected peaks get the training median.
    """

    def __init__(self, fs=125.0):
        self.fs = fs

    def extract(self, X):
        X = check_signals(X)
        return np.array([[_hr_or_missing(x, self.fs)] for x in X], dtype=np.float64).reshape(-1, 1)


class MorphologicalFeatureExtractor(_ImputingExtractor):
    """Morphology columns plus the notch-presence fraction.

    Missing values are imputed with the per-column training median; the
    ``notch_present`` column keeps the information that a value was missing.
    """

    def __init__(self, fs=125.0):
        self.fs = fs

    def extract(self, X):
        X = check_signals(X)
        n_cols = len(FEATURE_CSV_HEADER) - 1
        rows = [_morph_or_missing(x, self.fs) for x in X]
        return np.array(rows, dtype=np.float64).reshape(-1, n_cols)

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_CSV_HEADER[1:], dtype=object)
