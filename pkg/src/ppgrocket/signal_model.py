"""PPG records and datasets: labels, file formats, splits and a synthetic corpus."""

import csv
import hashlib
import io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ConsistencyError, DataError, InfeasibleSplitError, ParseError

SBP_THRESHOLD = 140.0
DBP_THRESHOLD = 90.0

SPLIT_TAGS = ("train", "val", "test", "unsplit")

BINARY_MAGIC = b"RPGD"
BINARY_VERSION = 1


def binarize_label(sbp, dbp, sbp_threshold=SBP_THRESHOLD, dbp_threshold=DBP_THRESHOLD):
    """Map a blood-pressure reading to 0 (normal) or 1 (hypertension).

    Both thresholds are inclusive: 140/80 is hypertensive.
    """
    sbp = float(sbp)
    dbp = float(dbp)
    if not (math.isfinite(sbp) and math.isfinite(dbp)):
        raise DataError(f"blood pressure must be finite, got sbp={sbp}, dbp={dbp}")
    if dbp <= 0 or sbp <= dbp:
        raise DataError(f"expected sbp > dbp > 0, got sbp={sbp}, dbp={dbp}")
    return int(sbp >= sbp_threshold or dbp >= dbp_threshold)


@dataclass(frozen=True, eq=False)
class PpgRecord:
    """One windowed PPG signal.

    ``samples`` is stored as a read-only float64 array. When both ``sbp`` and
    ``dbp`` are given, ``label`` must agree with :func:`binarize_label`.
    """

    subject_id: str
    samples: np.ndarray
    fs: float
    label: int
    sbp: Optional[float] = None
    dbp: Optional[float] = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError(f"subject {self.subject_id}: samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise DataError(f"subject {self.subject_id}: samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        fs = float(self.fs)
        if not (math.isfinite(fs) and fs > 0):
            raise DataError(f"subject {self.subject_id}: sampling rate must be positive, got {fs}")
        object.__setattr__(self, "fs", fs)
        if self.label not in (0, 1):
            raise DataError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "label", int(self.label))
        if (self.sbp is None) != (self.dbp is None):
            raise DataError(f"subject {self.subject_id}: sbp and dbp must be given together")
        if self.sbp is not None:
            expected = binarize_label(self.sbp, self.dbp)
            if expected != self.label:
                raise ConsistencyError(
                    f"subject {self.subject_id}: label {self.label} contradicts "
                    f"sbp={self.sbp}, dbp={self.dbp}"
                )
            object.__setattr__(self, "sbp", float(self.sbp))
            object.__setattr__(self, "dbp", float(self.dbp))

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, PpgRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.fs == other.fs
            and self.label == other.label
            and self.sbp == other.sbp
            and self.dbp == other.dbp
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    records: tuple = ()
    split_tag: str = "unsplit"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.split_tag not in SPLIT_TAGS:
            raise DataError(f"unknown split tag {self.split_tag!r}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def subject_ids(self):
        return [r.subject_id for r in self.records]

    def subjects(self):
        """Distinct subject IDs in first-appearance order."""
        return list(dict.fromkeys(r.subject_id for r in self.records))

    @property
    def fs(self):
        rates = {r.fs for r in self.records}
        if len(rates) != 1:
            raise DataError(f"dataset mixes sampling rates {sorted(rates)}")
        return rates.pop()

    def signals(self):
        """Samples as an (N, T) matrix, or a list when lengths differ."""
        lengths = {len(r) for r in self.records}
        if len(lengths) == 1:
            return np.vstack([r.samples for r in self.records])
        return [r.samples for r in self.records]

    def subset(self, indices, split_tag=None):
        return Dataset(
            tuple(self.records[i] for i in indices),
            self.split_tag if split_tag is None else split_tag,
        )

    def with_tag(self, split_tag):
        return replace(self, split_tag=split_tag)


# -- CSV -----------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(float(v))


def save_csv(dataset, path):
    """Write ``dataset`` in the header-first CSV layout.

    Ragged datasets pad the header to the longest record; shorter rows simply
    have fewer sample columns.
    """
    T = max((len(r) for r in dataset), default=0)
    header = ["subject_id", "fs", "sbp", "dbp", "label"] + [f"s{i}" for i in range(T)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in dataset:
            writer.writerow(
                [r.subject_id, _fmt(r.fs), _fmt(r.sbp), _fmt(r.dbp), str(r.label)]
                + [repr(float(v)) for v in r.samples]
            )


def _parse_float(text, what, row):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} is not numeric: {text!r}", row) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} is not finite: {text!r}", row)
    return value


def _make_record(subject_id, fs, sbp, dbp, label, samples, row):
    if not subject_id:
        raise ParseError("empty subject_id", row)
    if fs <= 0:
        raise ParseError(f"fs must be positive, got {fs}", row)
    if (sbp is None) != (dbp is None):
        raise ParseError("sbp and dbp must both be present or both be empty", row)
    if sbp is not None:
        try:
            expected = binarize_label(sbp, dbp)
        except DataError as exc:
            raise ParseError(str(exc), row) from None
        if label is None:
            label = expected
        elif label != expected:
            raise ConsistencyError(
                f"row {row}: stored label {label} contradicts sbp={sbp}, dbp={dbp} "
                f"(expected {expected})"
            )
    if label is None:
        raise ParseError("label missing and no blood pressure to derive it", row)
    if label not in (0, 1):
        raise ParseError(f"label must be 0 or 1, got {label}", row)
    if len(samples) == 0:
        raise ParseError("no samples", row)
    return PpgRecord(subject_id, np.asarray(samples), fs, label, sbp, dbp)


def _load_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file") from None
        if header[:5] != ["subject_id", "fs", "sbp", "dbp", "label"]:
            raise ParseError(f"unexpected header {header[:5]}", 1)
        n_cols = len(header)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 6 or len(row) > n_cols:
                raise ParseError(f"expected between 6 and {n_cols} fields, got {len(row)}", row_no)
            subject_id = row[0]
            fs = _parse_float(row[1], "fs", row_no)
            sbp = _parse_float(row[2], "sbp", row_no) if row[2] else None
            dbp = _parse_float(row[3], "dbp", row_no) if row[3] else None
            if row[4]:
                try:
                    label = int(row[4])
                except ValueError:
                    raise ParseError(f"label is not an integer: {row[4]!r}", row_no) from None
            else:
                label = None
            samples = [_parse_float(v, f"sample s{i}", row_no) for i, v in enumerate(row[5:])]
            records.append(_make_record(subject_id, fs, sbp, dbp, label, samples, row_no))
    return Dataset(tuple(records))


# -- binary --------------------------------------------------------------

def save_binary(dataset, path):
    """Write the compact binary layout (samples stored as float32)."""
    buf = io.BytesIO()
    buf.write(BINARY_MAGIC)
    buf.write(struct.pack("<HQ", BINARY_VERSION, len(dataset)))
    for r in dataset:
        sid = r.subject_id.encode("utf-8")
        buf.write(struct.pack("<I", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<d", r.fs))
        for v in (r.sbp, r.dbp):
            buf.write(struct.pack("<?d", v is not None, 0.0 if v is None else v))
        buf.write(struct.pack("<?B", True, r.label))
        buf.write(struct.pack("<I", len(r)))
        buf.write(r.samples.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _load_binary(path):
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ParseError("truncated binary dataset")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    if data[:4] != BINARY_MAGIC:
        raise ParseError("bad magic, not an RPGD file")
    pos = 4
    version, count = take("<HQ")
    if version != BINARY_VERSION:
        raise ParseError(f"unsupported binary version {version}")
    records = []
    for row in range(1, count + 1):
        (n,) = take("<I")
        if pos + n > len(data):
            raise ParseError("truncated subject id", row)
        sid = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (fs,) = take("<d")
        has_sbp, sbp = take("<?d")
        has_dbp, dbp = take("<?d")
        has_label, label = take("<?B")
        (T,) = take("<I")
        if pos + 4 * T > len(data):
            raise ParseError("truncated samples", row)
        samples = np.frombuffer(data, dtype="<f4", count=T, offset=pos).astype(np.float64)
        pos += 4 * T
        if not np.all(np.isfinite(samples)):
            raise ParseError("non-finite sample", row)
        records.append(_make_record(
            sid, fs, sbp if has_sbp else None, dbp if has_dbp else None,
            label if has_label else None, samples, row,
        ))
    if pos != len(data):
        raise ParseError("trailing bytes after last record")
    return Dataset(tuple(records))


def load_dataset(path, format=None):
    """Read a dataset from ``path``.

    ``format`` is ``"csv"`` or ``"binary"``; when omitted it is sniffed from
    the file's magic bytes.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if format is None:
        with open(path, "rb") as fh:
            format = "binary" if fh.read(4) == BINARY_MAGIC else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ConfigError(f"unknown dataset format {format!r}")


def save_dataset(dataset, path, format="csv"):
    if format == "csv":
        save_csv(dataset, path)
    elif format == "binary":
        save_binary(dataset, path)
    else:
        raise ConfigError(f"unknown dataset format {format!r}")


# -- splitting -----------------------------------------------------------

def _subject_key(subject_id, seed):
    h = hashlib.blake2b(
        subject_id.encode("utf-8"),
        digest_size=8,
        key=int(seed).to_bytes(8, "little", signed=True),
    )
    return h.digest()


def _quotas(n, fractions):
    raw = [f * n for f in fractions]
    quotas = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - quotas[i]), i))
    for i in order[: n - sum(quotas)]:
        quotas[i] += 1
    return quotas


def _check_fractions(fractions):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError(f"need three split fractions, got {len(fractions)}")
    if any(not (f > 0) for f in fractions):
        raise ConfigError(f"split fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)}")
    return fractions


def split_by_subject(d, fractions=(0.8, 0.1, 0.1), seed=0, stratify=False):
    """Partition ``d`` into (train, val, test) with no subject in two splits.

    Subjects are ordered by a seed-keyed hash of their ID and cut at quota
    boundaries rounded by largest remainder, so the assignment is
    reproducible without storing it. With ``stratify`` the quotas are applied
    separately to subjects whose records are mostly positive and mostly
    negative, keeping the class balance of each split close to the corpus.
    """
    fractions = _check_fractions(fractions)
    subjects = d.subjects()
    if len(subjects) < len(fractions):
        raise InfeasibleSplitError(
            f"cannot split {len(subjects)} subjects into {len(fractions)} non-empty splits"
        )
    if stratify:
        labels = {}
        for r in d:
            labels.setdefault(r.subject_id, []).append(r.label)
        groups = [
            [s for s in subjects if np.mean(labels[s]) < 0.5],
            [s for s in subjects if np.mean(labels[s]) >= 0.5],
        ]
    else:
        groups = [subjects]

    assignment = {}
    for group in groups:
        ordered = sorted(group, key=lambda s: (_subject_key(s, seed), s))
        quotas = _quotas(len(ordered), fractions)
        if not stratify:
            # every split gets at least one subject
            while min(quotas) == 0:
                quotas[quotas.index(max(quotas))] -= 1
                quotas[quotas.index(0)] += 1
        start = 0
        for split, q in enumerate(quotas):
            for s in ordered[start:start + q]:
                assignment[s] = split
            start += q

    parts = [[], [], []]
    for i, r in enumerate(d):
        parts[assignment[r.subject_id]].append(i)
    if any(not p for p in parts):
        raise InfeasibleSplitError("stratified split left a split without subjects")
    return tuple(d.subset(p, tag) for p, tag in zip(parts, ("train", "val", "test")))


def subsample_training(d, fraction, seed=0):
    """Keep ``ceil(fraction * N)`` records chosen uniformly without replacement.

    Selection ignores subjects and preserves the original record order.
    """
    fraction = float(fraction)
    if not (0 < fraction <= 1):
        raise ConfigError(f"training fraction must be in (0, 1], got {fraction}")
    n = len(d)
    if n == 0:
        raise DataError("cannot subsample an empty dataset")
    k = math.ceil(round(fraction * n, 9))
    if k == n:
        return Dataset(d.records, d.split_tag)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=k, replace=False))
    return d.subset(keep.tolist())


# -- synthetic corpus ------------------------------------------------------

@dataclass(frozen=True)
class PulseShape:
    """Per-class pulse template and heart-rate distribution.

    Widths and delays are in seconds; the dicrotic bump is a Gaussian of the
    same width as the systolic one, scaled by ``dicrotic_ratio`` and centred
    ``dicrotic_delay`` after it.
    """

    systolic_amplitude: float = 1.0
    systolic_width: float = 0.1
    dicrotic_ratio: float = 0.4
    dicrotic_delay: float = 0.3
    hr_mean: float = 75.0
    hr_sd: float = 0.0

    def validate(self):
        if self.systolic_amplitude < 0 or self.dicrotic_ratio < 0:
            raise ConfigError("pulse amplitudes must be non-negative")
        if not self.systolic_width > 0:
            raise ConfigError("systolic width must be positive")
        if self.dicrotic_delay < 0:
            raise ConfigError("dicrotic delay must be non-negative")
        if not 30 <= self.hr_mean <= 220:
            raise ConfigError(f"mean heart rate {self.hr_mean} outside [30, 220] bpm")
        if self.hr_sd < 0:
            raise ConfigError("heart-rate sd must be non-negative")


NORMAL_SHAPE = PulseShape(
    systolic_amplitude=1.0, systolic_width=0.10, dicrotic_ratio=0.40,
    dicrotic_delay=0.32, hr_mean=74.0, hr_sd=10.0,
)
HYPERTENSION_SHAPE = PulseShape(
    systolic_amplitude=1.0, systolic_width=0.09, dicrotic_ratio=0.55,
    dicrotic_delay=0.26, hr_mean=79.0, hr_sd=10.0,
)


@dataclass(frozen=True)
class SynthParams:
    """Configuration for :func:`synth_ppg`.

    ``shape_jitter`` is the relative standard deviation of per-subject
    perturbations applied to each pulse-shape parameter, so subjects of the
    same class differ from each other.
    """

    n_normal: int = 160
    n_hypertension: int = 40
    windows_per_subject: int = 5
    normal: PulseShape = field(default=NORMAL_SHAPE)
    hypertension: PulseShape = field(default=HYPERTENSION_SHAPE)
    noise_sd: float = 0.04
    wander_amplitude: float = 0.1
    wander_frequency: float = 0.25
    shape_jitter: float = 0.12
    dc_level: float = 2.0
    duration: float = 7.0
    fs: float = 125.0
    seed: int = 0

    def validate(self):
        if self.n_normal < 0 or self.n_hypertension < 0 or self.windows_per_subject < 1:
            raise ConfigError("subject and window counts must be non-negative (windows >= 1)")
        self.normal.validate()
        self.hypertension.validate()
        for name in ("noise_sd", "wander_amplitude", "wander_frequency", "shape_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not (self.fs > 0 and self.duration > 0):
            raise ConfigError("fs and duration must be positive")


def _gauss(t, width):
    return np.exp(-0.5 * (t / width) ** 2)


# plausible resting pressures per class; hypertensive draws clear 140 mmHg
_BP_RANGES = {0: ((100.0, 135.0), (60.0, 85.0)), 1: ((142.0, 180.0), (80.0, 105.0))}


def synth_ppg(p=SynthParams()):
    """Generate a labelled synthetic PPG corpus, deterministic in ``p.seed``."""
    p.validate()
    rng = np.random.default_rng(p.seed)
    n = int(round(p.duration * p.fs))
    t = np.arange(n) / p.fs
    records = []
    classes = [0] * p.n_normal + [1] * p.n_hypertension
    for subject, label in enumerate(classes):
        shape = p.hypertension if label else p.normal
        jitter = 1.0 + p.shape_jitter * rng.standard_normal(4)
        jitter = np.clip(jitter, 0.2, None)
        amp = shape.systolic_amplitude * jitter[0]
        width = shape.systolic_width * jitter[1]
        ratio = shape.dicrotic_ratio * jitter[2]
        delay = shape.dicrotic_delay * jitter[3]
        hr = float(np.clip(shape.hr_mean + shape.hr_sd * rng.standard_normal(), 35.0, 200.0))
        (s_lo, s_hi), (d_lo, d_hi) = _BP_RANGES[label]
        sbp = float(np.round(rng.uniform(s_lo, s_hi), 1))
        dbp = float(np.round(rng.uniform(d_lo, d_hi), 1))
        period = 60.0 / hr
        sid = f"S{subject:05d}"
        for _ in range(p.windows_per_subject):
            first = rng.uniform(0.0, period) - period
            beats = first + period * np.arange(int(np.ceil((p.duration + 2 * period) / period)) + 1)
            x = np.full(n, p.dc_level)
            for c in beats:
                x += amp * (_gauss(t - c, width) + ratio * _gauss(t - c - delay, width))
            if p.wander_amplitude > 0:
                phase = rng.uniform(0.0, 2 * np.pi)
                x += p.wander_amplitude * np.sin(2 * np.pi * p.wander_frequency * t + phase)
            if p.noise_sd > 0:
                x += p.noise_sd * rng.standard_normal(n)
            records.append(PpgRecord(sid, x, p.fs, label, sbp, dbp))
    return Dataset(tuple(records))


def synth_params_for(n_subjects=200, positive_fraction=0.2, **kwargs):
    """SynthParams with the subject count split by ``positive_fraction``."""
    if not 0 <= positive_fraction <= 1:
        raise ConfigError(f"positive fraction must be in [0, 1], got {positive_fraction}")
    n_pos = int(round(n_subjects * positive_fraction))
    return SynthParams(n_normal=n_subjects - n_pos, n_hypertension=n_pos, **kwargs)
