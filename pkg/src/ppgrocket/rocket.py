"""Random-convolution-kernel transform with PPV pooling.

The kernel bank is the full family of length-9 kernels with three weights
of 2 and six of -1 (84 kernels). Each kernel is applied at a geometric set
of dilations; each (kernel, dilation) pair owns a number of bias slots, and
every slot emits one feature: the proportion of convolution outputs that
exceed its bias.

Features are laid out kernel-major, then dilation, then bias slot.
"""

import io
import itertools
import math
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    DataError,
    FitError,
    InfeasibleQuotaError,
    ModelError,
    SignalTooShortError,
)
from .validation import check_signal, check_signals, signal_lengths

KERNEL_LENGTH = 9
N_TWOS = 3
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_N_FEATURES = 9996
DEFAULT_MAX_DILATIONS = 32

MODEL_MAGIC = b"RKTM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Kernel:
    weights: tuple

    def __post_init__(self):
        w = tuple(int(v) for v in self.weights)
        if len(w) != KERNEL_LENGTH or set(w) - {-1, 2} or w.count(2) != N_TWOS:
            raise ValueError(f"invalid kernel weights {w}")
        object.__setattr__(self, "weights", w)

    @property
    def two_indices(self):
        return tuple(i for i, v in enumerate(self.weights) if v == 2)

    @classmethod
    def from_indices(cls, indices):
        w = [-1] * KERNEL_LENGTH
        for i in indices:
            w[i] = 2
        return cls(tuple(w))


@dataclass(frozen=True)
class KernelSet:
    kernels: tuple

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(self.kernels)

    def __getitem__(self, i):
        return self.kernels[i]

    @cached_property
    def weights(self):
        return np.array([k.weights for k in self.kernels], dtype=np.int64)

    @cached_property
    def two_indices(self):
        return np.array([k.two_indices for k in self.kernels], dtype=np.int64)


def enumerate_kernels():
    """All C(9, 3) = 84 kernels, ordered lexicographically by the 2-positions."""
    return KernelSet(tuple(
        Kernel.from_indices(idx)
        for idx in itertools.combinations(range(KERNEL_LENGTH), N_TWOS)
    ))


@dataclass(frozen=True, eq=False)
class DilationSchedule:
    """Dilations and bias-slot quotas for one reference signal length.

    ``quotas[k, l]`` is the number of bias slots of kernel ``k`` at
    ``dilations[l]``; ``padded`` holds one flag per feature in canonical order.
    """

    T: int
    dilations: np.ndarray
    quotas: np.ndarray
    padded: np.ndarray
    max_dilations_per_kernel: int
    kernel_len: int = KERNEL_LENGTH

    @property
    def n_features(self):
        return int(self.quotas.sum())

    @property
    def n_dilations(self):
        return len(self.dilations)

    @property
    def l_max(self):
        return math.log2((self.T - 1) / (self.kernel_len - 1))

    @property
    def features_per_pair(self):
        return self.quotas

    @property
    def min_length(self):
        """Shortest signal admitting every scheduled dilation unpadded."""
        return (self.kernel_len - 1) * int(self.dilations.max()) + 1

    @cached_property
    def offsets(self):
        """Index of the first feature of each (kernel, dilation) pair."""
        flat = np.concatenate([[0], np.cumsum(self.quotas.ravel())[:-1]])
        return flat.reshape(self.quotas.shape)


def dilation_schedule(T, target_features=DEFAULT_N_FEATURES, kernel_set=None,
                      max_dilations_per_kernel=DEFAULT_MAX_DILATIONS):
    """Plan dilations and per-pair feature quotas for signals of length ``T``.

    Dilations are ``floor(2 ** (i * l_max / L'))`` for ``i = 0..L'`` with
    ``L' + 1 = min(features per kernel, max_dilations_per_kernel)``; equal
    dilations are merged and their slot counts summed. Slots are spread as
    evenly as possible, leftovers going to the smallest dilations.
    """
    kernel_set = enumerate_kernels() if kernel_set is None else kernel_set
    n_kernels = len(kernel_set)
    T = int(T)
    min_T = 2 * (KERNEL_LENGTH - 1) + 1
    if T < min_T:
        raise SignalTooShortError(f"signal length {T} is below the minimum {min_T}")
    target_features = int(target_features)
    if target_features < n_kernels:
        raise InfeasibleQuotaError(
            f"cannot spread {target_features} features over {n_kernels} kernels"
        )
    if max_dilations_per_kernel < 1:
        raise InfeasibleQuotaError("max_dilations_per_kernel must be at least 1")

    per_kernel, extra = divmod(target_features, n_kernels)
    n_slots = min(per_kernel, int(max_dilations_per_kernel))
    l_max = math.log2((T - 1) / (KERNEL_LENGTH - 1))
    if n_slots > 1:
        exponents = np.arange(n_slots) * (l_max / (n_slots - 1))
    else:
        exponents = np.zeros(1)
    # nudge so exact powers such as 9 ** 0.5 do not floor to the integer below
    raw = np.floor(2.0 ** exponents + 1e-9).astype(np.int64)
    raw = np.clip(raw, 1, (T - 1) // (KERNEL_LENGTH - 1))

    counts = np.full(n_slots, per_kernel // n_slots, dtype=np.int64)
    counts[: per_kernel % n_slots] += 1
    dilations = np.unique(raw)
    per_dilation = np.array([counts[raw == d].sum() for d in dilations], dtype=np.int64)

    quotas = np.tile(per_dilation, (n_kernels, 1))
    quotas[:extra, 0] += 1

    # odd counts hand the extra slot to the unpadded side
    padded = np.concatenate([np.arange(q) % 2 == 1 for q in quotas.ravel()])
    return DilationSchedule(T, dilations, quotas, padded, int(max_dilations_per_kernel))


def quantile_levels(n):
    """First ``n`` terms of the golden-ratio sequence ``frac((j + 1) * phi)``."""
    return np.array([((j + 1) * GOLDEN) % 1.0 for j in range(n)])


def _taps(x, d, n_out):
    return [x[..., m * d: m * d + n_out] for m in range(KERNEL_LENGTH)]


def _tap_sum(taps):
    total = taps[0].copy()
    for tap in taps[1:]:
        total += tap
    return total


def _kernel_output(total, taps, idx):
    # weights are -1 everywhere plus 3 at the 2-positions
    a, b, c = idx
    return (taps[a] + taps[b] + taps[c]) * 3.0 - total


def _prepare(x, d, padded):
    if padded:
        pad = (KERNEL_LENGTH - 1) // 2 * d
        width = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
        x = np.pad(x, width)
    n_out = x.shape[-1] - (KERNEL_LENGTH - 1) * d
    taps = _taps(x, d, n_out)
    return _tap_sum(taps), taps


def dilated_convolve(x, kernel, d, padded=False):
    """Valid-mode (or zero-padded, same-length) dilated convolution.

    ``u[i] = sum_m w[m] * x[i + m*d]``; padding adds ``4*d`` zeros per side.
    """
    x = check_signal(x)
    d = int(d)
    if d < 1:
        raise DataError(f"dilation must be positive, got {d}")
    if not padded and len(x) < (KERNEL_LENGTH - 1) * d + 1:
        raise SignalTooShortError(
            f"signal of length {len(x)} is shorter than the receptive field "
            f"{(KERNEL_LENGTH - 1) * d + 1} at dilation {d}"
        )
    if not isinstance(kernel, Kernel):
        kernel = Kernel(tuple(kernel))
    total, taps = _prepare(x, d, padded)
    return _kernel_output(total, taps, kernel.two_indices)


def ppv(v):
    """Proportion of strictly positive entries."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DataError("ppv of an empty sequence")
    return np.count_nonzero(v > 0) / v.size


@dataclass(frozen=True, eq=False)
class TransformModel:
    kernel_set: KernelSet
    schedule: DilationSchedule
    biases: np.ndarray
    fit_seed: int

    def __post_init__(self):
        biases = np.asarray(self.biases, dtype=np.float64)
        if biases.shape != (self.schedule.n_features,):
            raise ModelError(
                f"{biases.size} biases do not match the schedule's "
                f"{self.schedule.n_features} features"
            )
        biases.setflags(write=False)
        object.__setattr__(self, "biases", biases)

    @property
    def n_features(self):
        return self.schedule.n_features

    @cached_property
    def _slot_plan(self):
        # per dilation: [(kernel, unpadded feature idx, padded feature idx)]
        sched = self.schedule
        plan = []
        for l in range(sched.n_dilations):
            entries = []
            for k in range(len(self.kernel_set)):
                start = sched.offsets[k, l]
                idx = np.arange(start, start + sched.quotas[k, l])
                pad = sched.padded[idx]
                entries.append((k, idx[~pad], idx[pad]))
            plan.append(entries)
        return plan

    def to_bytes(self):
        sched = self.schedule
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack(
            "<HIIIIIq", MODEL_VERSION, sched.T, sched.n_features, len(self.kernel_set),
            sched.n_dilations, sched.max_dilations_per_kernel, int(self.fit_seed),
        ))
        buf.write(sched.dilations.astype("<u4").tobytes())
        buf.write(sched.quotas.astype("<u4").tobytes())
        buf.write(sched.padded.astype("u1").tobytes())
        buf.write(self.biases.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != MODEL_MAGIC:
            raise ModelError("not a transform model file (bad magic)")
        head = struct.Struct("<HIIIIIq")
        try:
            version, T, D, K, L, max_dil, seed = head.unpack_from(data, 4)
        except struct.error:
            raise ModelError("truncated transform model header") from None
        if version != MODEL_VERSION:
            raise ModelError(f"unsupported transform model version {version}")
        kernel_set = enumerate_kernels()
        if K != len(kernel_set):
            raise ModelError(f"model was built for {K} kernels, expected {len(kernel_set)}")
        pos = 4 + head.size
        expected = pos + 4 * L + 4 * K * L + D + 8 * D
        if len(data) != expected:
            raise ModelError(f"transform model has {len(data)} bytes, expected {expected}")
        dilations = np.frombuffer(data, "<u4", L, pos).astype(np.int64)
        pos += 4 * L
        quotas = np.frombuffer(data, "<u4", K * L, pos).astype(np.int64).reshape(K, L)
        pos += 4 * K * L
        padded = np.frombuffer(data, "u1", D, pos).astype(bool)
        pos += D
        biases = np.frombuffer(data, "<f8", D, pos).copy()
        if quotas.sum() != D:
            raise ModelError("quota table does not sum to the feature count")
        schedule = DilationSchedule(T, dilations, quotas, padded, max_dil)
        return cls(kernel_set, schedule, biases, seed)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_lengths(signals, schedule):
    for i, n in enumerate(signal_lengths(signals)):
        if n < schedule.min_length:
            raise SignalTooShortError(
                f"signal {i} has length {n}; the schedule needs at least {schedule.min_length}"
            )


def fit_biases(sample, kernel_set, schedule, seed=0):
    """Fit one bias per feature slot from quantiles of training convolutions.

    Slots are visited in canonical order; slot ``f`` draws its training signal
    round-robin from a seed-shuffled ``sample``, convolves it with or without
    padding per the slot's flag, and takes the empirical quantile (linear
    interpolation) at level ``frac((j + 1) * phi)`` where ``j`` is the slot's
    position inside its (kernel, dilation) pair.
    """
    if sample is None or len(sample) == 0:
        raise FitError("cannot fit biases on an empty sample")
    signals = check_signals(sample, "sample")
    _check_lengths(signals, schedule)
    n = len(signals)
    order = np.random.default_rng(seed).permutation(n)
    levels = quantile_levels(int(schedule.quotas.max()))
    biases = np.empty(schedule.n_features)
    idx = kernel_set.two_indices
    for l, d in enumerate(schedule.dilations):
        cache = {}
        for k in range(len(kernel_set)):
            start = schedule.offsets[k, l]
            outputs = {}
            for j in range(schedule.quotas[k, l]):
                f = start + j
                s = int(order[f % n])
                pad = bool(schedule.padded[f])
                if (s, pad) not in outputs:
                    if (s, pad) not in cache:
                        cache[s, pad] = _prepare(signals[s], int(d), pad)
                    total, taps = cache[s, pad]
                    outputs[s, pad] = _kernel_output(total, taps, idx[k])
                biases[f] = np.quantile(outputs[s, pad], levels[j])
    return TransformModel(kernel_set, schedule, biases, int(seed))


def _transform_block(X, m):
    """Features for an (n, T) block of equal-length signals."""
    n, _ = X.shape
    out = np.empty((n, m.n_features))
    idx = m.kernel_set.two_indices
    for l, d in enumerate(m.schedule.dilations):
        prepared = {}
        for k, unpadded, padded in m._slot_plan[l]:
            for pad, features in ((False, unpadded), (True, padded)):
                if features.size == 0:
                    continue
                if pad not in prepared:
                    prepared[pad] = _prepare(X, int(d), pad)
                total, taps = prepared[pad]
                u = _kernel_output(total, taps, idx[k])
                b = m.biases[features]
                hits = np.count_nonzero(u[:, None, :] > b[None, :, None], axis=-1)
                out[:, features] = hits / u.shape[-1]
    return out


def transform(x, m):
    """Feature vector of one signal under a fitted model."""
    x = check_signal(x)
    if len(x) < m.schedule.min_length:
        raise SignalTooShortError(
            f"signal has length {len(x)}; the schedule needs at least {m.schedule.min_length}"
        )
    return _transform_block(x[None, :], m)[0]


def transform_batch(d, m, n_jobs=None, chunk_size=32):
    """Row-wise :func:`transform` over a dataset or batch of signals.

    Rows are processed in chunks, optionally on a thread pool; all arithmetic
    is element-wise per row so the result does not depend on chunking or
    ``n_jobs``.
    """
    if hasattr(d, "records"):
        signals = [r.samples for r in d.records]
    else:
        signals = d
    if len(signals) == 0:
        return np.empty((0, m.n_features))
    signals = check_signals(signals)
    for i, n in enumerate(signal_lengths(signals)):
        if n < m.schedule.min_length:
            raise SignalTooShortError(
                f"record {i}: length {n} is below the schedule minimum {m.schedule.min_length}"
            )
    lengths = np.array(signal_lengths(signals))
    jobs = []
    for T in np.unique(lengths):
        rows = np.flatnonzero(lengths == T)
        for start in range(0, len(rows), chunk_size):
            chunk = rows[start:start + chunk_size]
            if isinstance(signals, np.ndarray):
                block = signals[chunk]
            else:
                block = np.vstack([signals[i] for i in chunk])
            jobs.append((chunk, block))
    if n_jobs in (None, 1):
        results = [_transform_block(block, m) for _, block in jobs]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_transform_block)(block, m) for _, block in jobs
        )
    out = np.empty((len(lengths), m.n_features))
    for (chunk, _), res in zip(jobs, results):
        out[chunk] = res
    return out


def save_feature_csv(path, features, labels):
    """Write a feature matrix with the label as the first column."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if len(features) != len(labels):
        raise DataError(f"{len(features)} feature rows but {len(labels)} labels")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["label"] + [f"f{i}" for i in range(features.shape[1])]) + "\n")
        for y, row in zip(labels, features):
            fh.write(",".join([str(int(y))] + [repr(float(v)) for v in row]) + "\n")


class RandomKernelTransform(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer around :func:`fit_biases` / :func:`transform_batch`.

    Parameters
    ----------
    n_features : int, default=9996
        Total number of PPV features emitted per signal.
    max_dilations_per_kernel : int, default=32
        Number of raw dilation slots per kernel before duplicates merge.
    random_state : int, default=0
        Seed for the shuffle that assigns training signals to bias slots.
    n_jobs : int, optional
        Threads used by ``transform``.

    Attributes
    ----------
    model_ : TransformModel
        Fitted biases and schedule.
    """

    def __init__(self, n_features=DEFAULT_N_FEATURES, max_dilations_per_kernel=DEFAULT_MAX_DILATIONS,
                 random_state=0, n_jobs=None):
        self.n_features = n_features
        self.max_dilations_per_kernel = max_dilations_per_kernel
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        X = check_signals(X)
        if len(X) == 0:
            raise FitError("cannot fit the transform on zero signals")
        kernels = enumerate_kernels()
        T = min(signal_lengths(X))
        schedule = dilation_schedule(T, self.n_features, kernels, self.max_dilations_per_kernel)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.model_ = fit_biases(X, kernels, schedule, seed)
        self.n_features_out_ = schedule.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return transform_batch(X, self.model_, n_jobs=self.n_jobs)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        return np.array([f"ppv{i}" for i in range(self.n_features_out_)], dtype=object)
