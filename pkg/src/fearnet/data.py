"""Datasets, file formats, session schedules and the synthetic benchmark.

Two on-disk encodings are supported:

CSV (``.csv``)
    one sample per line, ``label,f1,...,fd``, UTF-8, no header row.

Binary (``.dset``)
    little-endian; a 20-byte header ``b"DSET"``, ``u32 version`` (=1),
    ``u32 N``, ``u32 d``, ``u32 class_count``, followed by ``N`` records of
    ``u32 label`` and ``d`` float32 features.

Both encodings carry float32 features and round-trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError, ValidationError

MAGIC = b"DSET"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", np.ascontiguousarray(self.features, dtype=np.float32))
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.int64))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def validate(self):
        """Raise ValidationError unless labels are dense in [0, class_count) and features finite."""
        x, y = self.features, self.labels
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ValidationError(f"features {x.shape} and labels {y.shape} are not aligned")
        bad = np.flatnonzero(~np.isfinite(x).all(axis=1))
        if bad.size:
            raise ValidationError(f"row {int(bad[0])} has a NaN or infinite feature")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValidationError(f"labels must lie in [0, {self.class_count})")
        missing = np.setdiff1d(np.arange(self.class_count), y)
        if missing.size:
            raise ValidationError(f"labels are not dense: class {int(missing[0])} has no samples")
        return self

    def select(self, classes):
        """``(features, labels)`` of the rows whose label is in ``classes``."""
        keep = np.isin(self.labels, np.asarray(list(classes)))
        return self.features[keep], self.labels[keep]

    def checksum(self):
        h = hashlib.sha256()
        h.update(self.features.tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".dset", ".bin"):
        return "binary"
    raise InputError(f"cannot infer dataset format from {path!s}; use .csv or .dset")


def load(path, fmt=None, name=None):
    """Read and validate a dataset. ``fmt`` is ``"csv"`` or ``"binary"``."""
    fmt = _infer_format(path, fmt)
    name = name or Path(path).stem
    try:
        if fmt == "csv":
            ds = _load_csv(path, name)
        elif fmt == "binary":
            ds = _load_binary(path, name)
        else:
            raise InputError(f"unknown dataset format {fmt!r}")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror or exc}") from None
    return ds.validate()


def save(dataset, path, fmt=None):
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        _save_csv(dataset, path)
    elif fmt == "binary":
        _save_binary(dataset, path)
    else:
        raise InputError(f"unknown dataset format {fmt!r}")


def _load_csv(path, name):
    rows, labels = [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ParseError("row needs a label and at least one feature", offset=f"line {lineno}")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise ParseError(f"expected {width} features, found {len(parts) - 1}", offset=f"line {lineno}")
            try:
                label = int(parts[0])
                feats = [float(p) for p in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"bad value: {exc}", offset=f"line {lineno}") from None
            if label < 0:
                raise ValidationError(f"negative label {label} on line {lineno}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError("file contains no samples", offset="line 1")
    labels = np.asarray(labels, dtype=np.int64)
    return LabeledDataset(np.asarray(rows, dtype=np.float32), labels, int(labels.max()) + 1, name)


def _save_csv(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(str(int(label)) + "," + ",".join(str(v) for v in row) + "\n")


def _record_dtype(d):
    return np.dtype([("label", "<u4"), ("x", "<f4", (d,))])


def _load_binary(path, name):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated header", offset=len(raw))
    magic, version, n, d, class_count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    if d == 0:
        raise ParseError("feature dimension is zero", offset=12)
    rec = _record_dtype(d)
    expected = _HEADER.size + n * rec.itemsize
    if len(raw) < expected:
        whole = (len(raw) - _HEADER.size) // rec.itemsize
        raise ParseError(
            f"record {whole} is truncated ({n} records need {expected} bytes, file has {len(raw)})",
            offset=_HEADER.size + whole * rec.itemsize,
        )
    if len(raw) > expected:
        raise ParseError(f"{len(raw) - expected} trailing bytes after {n} records", offset=expected)
    records = np.frombuffer(raw, dtype=rec, count=n, offset=_HEADER.size)
    return LabeledDataset(records["x"].copy(), records["label"].astype(np.int64), class_count, name)


def _save_binary(dataset, path):
    rec = np.empty(len(dataset), dtype=_record_dtype(dataset.dim))
    rec["label"] = dataset.labels
    rec["x"] = dataset.features
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(dataset), dataset.dim, dataset.class_count))
        fh.write(rec.tobytes())


def convert(src, dst):
    save(load(src), dst)


def file_checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def normalize_unit_length(dataset):
    norms = np.linalg.norm(dataset.features.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValidationError(f"row {int(zero[0])} has zero norm and cannot be normalized")
    feats = dataset.features.astype(np.float64) / norms[:, None]
    return LabeledDataset(feats, dataset.labels, dataset.class_count, dataset.name)


def zero_pad(dataset, target_dim):
    if target_dim < dataset.dim:
        raise InputError(f"cannot pad {dataset.dim} features down to {target_dim}")
    feats = np.zeros((len(dataset), target_dim), dtype=np.float32)
    feats[:, : dataset.dim] = dataset.features
    return LabeledDataset(feats, dataset.labels, dataset.class_count, dataset.name)


def concatenate(first, second, name=None):
    """Stack two datasets with equal width; the second's labels are offset past the first's."""
    if first.dim != second.dim:
        raise InputError(f"feature widths differ ({first.dim} vs {second.dim}); zero-pad first")
    return LabeledDataset(
        np.concatenate([first.features, second.features]),
        np.concatenate([first.labels, second.labels + first.class_count]),
        first.class_count + second.class_count,
        name or f"{first.name}+{second.name}",
    )


def train_test_split(dataset, test_fraction=0.2, seed=0):
    """Stratified split: each class contributes ``round(test_fraction * n_c)`` test rows."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.class_count):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        n_test = int(round(test_fraction * idx.size))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return (
        LabeledDataset(dataset.features[tr], dataset.labels[tr], dataset.class_count, dataset.name),
        LabeledDataset(dataset.features[te], dataset.labels[te], dataset.class_count, dataset.name),
    )


def synthetic_gaussians(classes, dim, samples_per_class, separation, seed=0):
    """Isotropic unit-variance Gaussian blobs centred at ``separation`` times random unit vectors.

    Returns ``(train, test)`` from a stratified 80/20 split of
    ``samples_per_class`` draws per class.
    """
    if classes <= 0 or dim <= 0 or samples_per_class <= 0:
        raise InputError("classes, dim and samples_per_class must be positive")
    if separation < 0:
        raise InputError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= separation
    feats = centers[:, None, :] + rng.standard_normal((classes, samples_per_class, dim))
    labels = np.repeat(np.arange(classes), samples_per_class)
    full = LabeledDataset(
        feats.reshape(-1, dim), labels, classes, f"gauss{classes}x{dim}s{separation:g}"
    ).validate()
    return train_test_split(full, 0.2, seed)


@dataclass
class SessionSchedule:
    """Base-knowledge classes followed by one single-class study session per remaining class."""

    base_classes: list
    session_classes: list
    base: tuple
    sessions: list = field(default_factory=list)

    def __len__(self):
        return 1 + len(self.sessions)

    @property
    def class_order(self):
        return list(self.base_classes) + list(self.session_classes)


def make_schedule(dataset, base_class_count, seed=0, base_classes=None):
    """Split ``dataset`` into a base session and single-class sessions in seeded random order.

    ``base_classes`` pins the base set explicitly (used for multimodal runs);
    the remaining classes are still shuffled by ``seed``.
    """
    C = dataset.class_count
    rng = np.random.default_rng(seed)
    if base_classes is None:
        if not 1 <= base_class_count < C:
            raise InputError(f"base class count must be in [1, {C - 1}], got {base_class_count}")
        order = rng.permutation(C)
        base = sorted(int(c) for c in order[:base_class_count])
        rest = [int(c) for c in order[base_class_count:]]
    else:
        base = sorted(int(c) for c in base_classes)
        if not base or len(base) >= C or len(set(base)) != len(base):
            raise InputError("explicit base classes must be a proper, non-empty subset")
        pool = np.setdiff1d(np.arange(C), base)
        rest = [int(c) for c in rng.permutation(pool)]
    sessions = [dataset.select([c]) for c in rest]
    return SessionSchedule(base, rest, dataset.select(base), sessions)
