"""Inter-teacher agreement: reliability scores, partition, mode, masks.

The reliability of a sample is the fraction of ordered teacher pairs
that assigned it the same label. All tag decisions compare integer
agreement counts (never floats), so full agreement and zero agreement
are classified exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InvalidRowError, ParseError
from .seeding import MODE_TIE, derive_rng

TAG_RELIABLE = "R"
TAG_LESS_RELIABLE = "LR"
TAG_UNRELIABLE = "UR"
TAGS = (TAG_RELIABLE, TAG_LESS_RELIABLE, TAG_UNRELIABLE)


@dataclass
class PseudoLabelMatrix:
    """N x M matrix of per-teacher class assignments.

    Entries are class indices in 0..C-1, or -1 where a teacher produced
    no usable label. Rows with -1 must be removed (``drop_incomplete_rows``)
    before reliability is computed.
    """

    sample_ids: list[str]
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 2 or self.labels.shape[0] != len(self.sample_ids):
            raise DataError("labels must be an (N, M) matrix aligned with sample_ids")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise DataError("duplicate sample ids in pseudo-label matrix")
        if self.labels.shape[1] < 2:
            raise ConfigError("reliability needs at least 2 teachers")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.labels.size and (
            self.labels.min() < -1 or self.labels.max() >= self.n_classes
        ):
            raise DataError("labels must lie in -1..C-1")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return self.labels.shape[1]


@dataclass
class ReliabilityPartition:
    """Per-sample reliability score and R / LR / UR tag."""

    scores: np.ndarray
    tags: np.ndarray

    def indices(self, tag: str) -> np.ndarray:
        if tag not in TAGS:
            raise ConfigError(f"unknown tag {tag!r}")
        return np.flatnonzero(self.tags == tag)

    def counts(self) -> dict[str, int]:
        return {tag: int(np.sum(self.tags == tag)) for tag in TAGS}


def _check_row(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.int64).ravel()
    if row.size == 0:
        raise InvalidRowError("empty label row")
    if np.any(row < 0):
        raise InvalidRowError("row contains unlabeled (-1) entries")
    return row


def agreement_count(row) -> int:
    """Number of ordered pairs (m, n), m != n, with equal labels."""
    row = _check_row(row)
    if row.size < 2:
        raise ConfigError("agreement needs at least 2 teachers")
    _, counts = np.unique(row, return_counts=True)
    return int(np.sum(counts * (counts - 1)))


def reliability(row) -> float:
    """Agreeing ordered pairs over all M(M-1) ordered pairs, in [0, 1]."""
    row = _check_row(row)
    if row.size < 2:
        raise ConfigError("reliability needs at least 2 teachers")
    return agreement_count(row) / (row.size * (row.size - 1))


def partition(matrix: PseudoLabelMatrix) -> ReliabilityPartition:
    """Tag every sample R (unanimous), UR (all distinct), or LR (between).

    Tags come from the integer agreement count compared against 0 and
    M(M-1), so a sample can never be misfiled by float rounding.
    """
    m = matrix.m
    full = m * (m - 1)
    scores = np.empty(matrix.n)
    tags = np.empty(matrix.n, dtype="U2")
    for i in range(matrix.n):
        count = agreement_count(matrix.labels[i])
        scores[i] = count / full
        if count == full:
            tags[i] = TAG_RELIABLE
        elif count == 0:
            tags[i] = TAG_UNRELIABLE
        else:
            tags[i] = TAG_LESS_RELIABLE
    return ReliabilityPartition(scores=scores, tags=tags)


def mode_label(row, rng: np.random.Generator | None = None, tie_break: str = "random") -> int:
    """Most frequent label in the row.

    Ties are resolved uniformly at random via ``rng`` (default policy)
    or deterministically to the lowest class index with
    ``tie_break="lowest"``. A single-entry row is allowed.
    """
    row = _check_row(row)
    values, counts = np.unique(row, return_counts=True)
    top = values[counts == counts.max()]
    if top.size == 1 or tie_break == "lowest":
        return int(top[0])
    if tie_break != "random":
        raise ConfigError(f"unknown tie-break policy {tie_break!r}")
    if rng is None:
        raise ConfigError("random tie-break needs a seeded rng")
    return int(top[rng.integers(top.size)])


def mode_labels(
    matrix: PseudoLabelMatrix, seed: int, tie_break: str = "random"
) -> np.ndarray:
    """Per-row mode labels with the tie rng split per row.

    Each row's rng is keyed by its sample index, so the result does not
    depend on evaluation order or on which rows are consulted.
    """
    out = np.empty(matrix.n, dtype=np.int64)
    for i in range(matrix.n):
        rng = derive_rng(seed, MODE_TIE, i) if tie_break == "random" else None
        out[i] = mode_label(matrix.labels[i], rng=rng, tie_break=tie_break)
    return out


def multi_hot_mask(row, n_classes: int) -> np.ndarray:
    """Boolean length-C vector: bit c set iff some teacher predicted c."""
    row = _check_row(row)
    if np.any(row >= n_classes):
        raise DataError(f"label out of range for {n_classes} classes")
    mask = np.zeros(n_classes, dtype=bool)
    mask[row] = True
    return mask


def multi_hot_masks(matrix: PseudoLabelMatrix) -> np.ndarray:
    """(N, C) boolean stack of per-row masks."""
    masks = np.zeros((matrix.n, matrix.n_classes), dtype=bool)
    for i in range(matrix.n):
        masks[i] = multi_hot_mask(matrix.labels[i], matrix.n_classes)
    return masks


def drop_incomplete_rows(matrix: PseudoLabelMatrix) -> tuple[PseudoLabelMatrix, list[str]]:
    """Remove rows containing -1; returns (filtered matrix, dropped ids)."""
    complete = np.all(matrix.labels >= 0, axis=1)
    dropped = [matrix.sample_ids[i] for i in np.flatnonzero(~complete)]
    if not dropped:
        return matrix, []
    kept = np.flatnonzero(complete)
    filtered = PseudoLabelMatrix(
        sample_ids=[matrix.sample_ids[i] for i in kept],
        labels=matrix.labels[kept],
        n_classes=matrix.n_classes,
    )
    return filtered, dropped


def write_matrix_csv(matrix: PseudoLabelMatrix, path: str | Path) -> None:
    """CSV with header ``sample_id,teacher_0,...,teacher_{M-1}``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id"] + [f"teacher_{t}" for t in range(matrix.m)])
        for i, sid in enumerate(matrix.sample_ids):
            writer.writerow([sid] + [str(int(v)) for v in matrix.labels[i]])


def read_matrix_csv(path: str | Path, n_classes: int | None = None) -> PseudoLabelMatrix:
    """Read a pseudo-label CSV; infers C = max label + 1 when not given."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "sample_id":
            raise ParseError(f"{path}: expected header starting with sample_id")
        expected = ["sample_id"] + [f"teacher_{t}" for t in range(len(header) - 1)]
        if header != expected:
            raise ParseError(f"{path}: malformed header {header}")
        sample_ids: list[str] = []
        rows: list[list[int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([int(v) for v in row[1:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer label") from None
            sample_ids.append(row[0])
    labels = np.array(rows, dtype=np.int64).reshape(len(sample_ids), len(header) - 1)
    if n_classes is None:
        n_classes = max(2, int(labels.max()) + 1 if labels.size else 2)
    return PseudoLabelMatrix(sample_ids=sample_ids, labels=labels, n_classes=n_classes)


def write_partition_csv(
    part: ReliabilityPartition, sample_ids: list[str], path: str | Path
) -> None:
    """CSV with header ``sample_id,score,tag``."""
    if len(sample_ids) != part.scores.shape[0]:
        raise DataError("sample ids and partition length differ")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "score", "tag"])
        for sid, score, tag in zip(sample_ids, part.scores, part.tags):
            writer.writerow([sid, repr(float(score)), tag])
