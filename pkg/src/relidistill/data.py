"""Feature datasets: file IO, synthetic benchmarks, simulated teachers.

Two feature formats are supported: CSV (inspectable) and a little-endian
binary layout (magic ``RCLF0001``, u64 N, u64 d, then N*d float32).
Feature values are canonically float32, so a matrix written to CSV and
to binary loads back identically from both.

True labels travel in a separate CSV column and exist only for
evaluation: the training code receives bare feature arrays and never
sees them.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .consensus import PseudoLabelMatrix
from .errors import ConfigError, DataError, ParseError
from .seeding import BLOBS, TEACHER_SIM, derive_rng
from .text_match import ClassVocab

FEATURES_MAGIC = b"RCLF0001"

CONFUSION_UNIFORM = "uniform-error"
CONFUSION_ADJACENT = "adjacent-class"

# Circumradius of the class-center simplex. Fixed (independent of the
# noise spread) so that shrinking the spread really does drive the
# nearest-center error to zero.
CENTER_RADIUS = 4.0


@dataclass
class FeatureDataset:
    """Feature matrix plus ids and optional evaluation-only labels."""

    sample_ids: list[str]
    features: np.ndarray
    true_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise DataError("features must be an (N, d) matrix with d >= 1")
        if self.features.shape[0] != len(self.sample_ids):
            raise DataError("sample ids and feature rows differ in length")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise DataError("duplicate sample ids")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.true_labels is not None:
            self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
            if self.true_labels.shape != (self.features.shape[0],):
                raise DataError("true labels must align with samples")
            if self.true_labels.size and self.true_labels.min() < 0:
                raise DataError("true labels must be non-negative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def load_features(path: str | Path) -> FeatureDataset:
    """Load a feature file, auto-detecting binary vs CSV by magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(FEATURES_MAGIC))
    if head == FEATURES_MAGIC:
        return _load_features_binary(path)
    return _load_features_csv(path)


def _load_features_csv(path: Path) -> FeatureDataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        has_label = bool(header) and header[-1] == "label"
        dim = len(header) - 1 - int(has_label)
        expected = ["sample_id"] + [f"f{j}" for j in range(dim)] + (
            ["label"] if has_label else []
        )
        if dim < 1 or header != expected:
            raise ParseError(f"{path}: malformed header {header}")
        sample_ids: list[str] = []
        rows: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            sample_ids.append(row[0])
            try:
                # Parse through float32: the canonical on-disk precision.
                values = np.array(row[1 : 1 + dim], dtype=np.float32)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric feature") from None
            if not np.all(np.isfinite(values)):
                raise ParseError(f"{path}:{lineno}: non-finite feature")
            rows.append(values)
            if has_label:
                try:
                    labels.append(int(row[-1]))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-integer label") from None
    features = np.array(rows, dtype=np.float32).reshape(len(sample_ids), dim)
    return FeatureDataset(
        sample_ids=sample_ids,
        features=features.astype(np.float64),
        true_labels=np.array(labels, dtype=np.int64) if has_label else None,
    )


def _load_features_binary(path: Path) -> FeatureDataset:
    raw = path.read_bytes()
    header_size = len(FEATURES_MAGIC) + 16
    if len(raw) < header_size:
        raise ParseError(f"{path}: truncated header")
    n, dim = struct.unpack("<QQ", raw[len(FEATURES_MAGIC) : header_size])
    if dim < 1:
        raise ParseError(f"{path}: dimension must be >= 1")
    expected = header_size + n * dim * 4
    if len(raw) != expected:
        raise ParseError(
            f"{path}: declared {n}x{dim} needs {expected} bytes, file has {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4", offset=header_size).reshape(n, dim)
    return FeatureDataset(
        sample_ids=[f"s{i:05d}" for i in range(n)],
        features=features.astype(np.float64),
    )


def save_features_csv(ds: FeatureDataset, path: str | Path) -> None:
    """Write features (and the label column when present) as CSV.

    Values are rounded to float32 and printed in shortest round-trip
    form, so reloading reproduces the binary loader's matrix exactly.
    """
    header = ["sample_id"] + [f"f{j}" for j in range(ds.dim)]
    if ds.true_labels is not None:
        header.append("label")
    as_f32 = ds.features.astype(np.float32)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, sid in enumerate(ds.sample_ids):
            row = [sid] + [np.format_float_positional(v, unique=True) for v in as_f32[i]]
            if ds.true_labels is not None:
                row.append(str(int(ds.true_labels[i])))
            writer.writerow(row)


def save_features_binary(ds: FeatureDataset, path: str | Path) -> None:
    """Write the binary layout; ids and labels are not stored by design."""
    payload = bytearray(FEATURES_MAGIC)
    payload += struct.pack("<QQ", ds.n, ds.dim)
    payload += ds.features.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(payload))


def load_class_vocab(path: str | Path) -> ClassVocab:
    """One class name per line; the line number is the class index."""
    with open(path, encoding="utf-8") as fh:
        names = [line.rstrip("\n") for line in fh]
    names = [n for n in names if n.strip()]
    if len(names) < 2:
        raise ParseError(f"{path}: need at least 2 class names")
    return ClassVocab(names)


def save_class_vocab(vocab: ClassVocab, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.names) + "\n", encoding="utf-8")


def load_labels_csv(path: str | Path) -> dict[str, int]:
    """Read a ``sample_id,label`` CSV into a dict."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "label"]:
            raise ParseError(f"{path}: expected header sample_id,label")
        out: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields")
            try:
                out[row[0]] = int(row[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer label") from None
    return out


def _class_centers(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic class centers at radius CENTER_RADIUS.

    When C <= d the centers are a regular simplex (scaled basis vectors)
    under a random rotation, so all pairwise distances are equal;
    otherwise C points are drawn on the sphere directly.
    """
    if n_classes <= dim:
        gauss = rng.standard_normal((dim, dim))
        q, r = np.linalg.qr(gauss)
        q *= np.sign(np.diag(r))  # fix the sign convention
        return CENTER_RADIUS * q[:, :n_classes].T
    directions = rng.standard_normal((n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return CENTER_RADIUS * directions


def make_blobs(
    n_samples: int, n_classes: int, dim: int, spread: float, seed: int
) -> FeatureDataset:
    """Isotropic Gaussian class blobs with balanced labels.

    ``spread`` is the per-coordinate noise standard deviation. Features
    are rounded to float32 so in-memory data matches a file round-trip.
    """
    if n_classes < 2:
        raise ConfigError("need at least 2 classes")
    if n_samples < n_classes:
        raise ConfigError("need at least one sample per class")
    if spread <= 0:
        raise ConfigError("spread must be positive")
    rng = derive_rng(seed, BLOBS)
    centers = _class_centers(n_classes, dim, rng)
    base = np.arange(n_samples) % n_classes  # balanced up to the remainder
    labels = base[rng.permutation(n_samples)]
    features = centers[labels] + rng.normal(0.0, spread, (n_samples, dim))
    features = features.astype(np.float32).astype(np.float64)
    return FeatureDataset(
        sample_ids=[f"s{i:05d}" for i in range(n_samples)],
        features=features,
        true_labels=labels,
    )


@dataclass
class SimTeacherSpec:
    """Behavior of one simulated teacher.

    The teacher emits the true label with probability ``accuracy`` and
    otherwise errs per its confusion model. ``correlation`` > 0 makes it
    copy the reference teacher's (spec index 0) emitted label with that
    probability before drawing on its own; the reference itself must
    have correlation 0.
    """

    accuracy: float
    confusion: str = CONFUSION_UNIFORM
    correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError("accuracy must lie in [0, 1]")
        if not 0.0 <= self.correlation <= 1.0:
            raise ConfigError("correlation must lie in [0, 1]")
        if self.confusion not in (CONFUSION_UNIFORM, CONFUSION_ADJACENT):
            raise ConfigError(f"unknown confusion model {self.confusion!r}")


def simulate_teachers(
    ds: FeatureDataset,
    specs: list[SimTeacherSpec],
    n_classes: int | None = None,
) -> PseudoLabelMatrix:
    """Draw a pseudo-label matrix from per-teacher accuracy specs."""
    if ds.true_labels is None:
        raise ConfigError("simulated teachers need true labels")
    if len(specs) < 2:
        raise ConfigError("need at least 2 teacher specs")
    if specs[0].correlation != 0.0:
        raise ConfigError("the reference teacher (spec 0) cannot be correlated")
    if n_classes is None:
        n_classes = int(ds.true_labels.max()) + 1
    if np.any(ds.true_labels >= n_classes):
        raise DataError("true labels exceed the class count")

    truth = ds.true_labels
    n = truth.shape[0]
    columns = np.empty((n, len(specs)), dtype=np.int64)
    for t, spec in enumerate(specs):
        rng = derive_rng(spec.seed, TEACHER_SIM, t)
        # Fixed draw order per teacher: copy coin, accuracy coin, error draw.
        copy_coin = rng.random(n)
        acc_coin = rng.random(n)
        if spec.confusion == CONFUSION_UNIFORM:
            offset = rng.integers(1, n_classes, size=n)
            wrong = (truth + offset) % n_classes
        else:
            step = rng.integers(0, 2, size=n) * 2 - 1
            wrong = (truth + step) % n_classes
        own = np.where(acc_coin < spec.accuracy, truth, wrong)
        if t > 0 and spec.correlation > 0.0:
            columns[:, t] = np.where(copy_coin < spec.correlation, columns[:, 0], own)
        else:
            columns[:, t] = own
    return PseudoLabelMatrix(
        sample_ids=list(ds.sample_ids), labels=columns, n_classes=n_classes
    )
