"""Free-form teacher text to closed-set class labels.

Frozen teachers answer in free text ("The object is an alarm clock."),
so each response is embedded and matched against class-name embeddings
by cosine similarity; the argmax class becomes the pseudo-label. Two
embedding backends are supported:

* ``PrecomputedTable`` -- a TSV of text -> vector pairs produced offline
  by any sentence embedder.
* ``TrigramEmbedder`` -- a self-contained hashed character-trigram
  term-frequency embedder, so the pipeline runs with zero external
  assets.

Both are deterministic. Text that equals a class name verbatim (after
normalization) short-circuits to that class under either backend.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    LookupMissError,
    ParseError,
    ShapeMismatchError,
    UndefinedSimilarityError,
    UnlabeledSampleError,
)

TRIGRAM_DIM = 4096  # 2**12 buckets

# FNV-1a folds the trigram bytes to 64 bits; a golden-ratio
# multiply-shift then takes the top 12 bits as the bucket index.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN64 = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_BUCKET_SHIFT = 64 - 12

_PUNCT_RE = re.compile(r"[^\w\s]+")
_WS_RE = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace."""
    text = _PUNCT_RE.sub(" ", text.lower())
    return _WS_RE.sub(" ", text).strip()


def _bucket(trigram: str) -> int:
    h = _FNV_OFFSET
    for byte in trigram.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return ((h * _GOLDEN64) & _MASK64) >> _BUCKET_SHIFT


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    """A real vector for one text plus the backend that produced it."""

    vector: np.ndarray
    source: str  # "precomputed" or "ngram"

    @property
    def is_zero(self) -> bool:
        """All-zero vectors mean "unmatchable text" and must not enter cosines."""
        return not np.any(self.vector)


class TrigramEmbedder:
    """Hashed character-trigram counts, L2-normalized.

    Normalized texts shorter than three characters are right-padded with
    spaces, so every non-empty normalized text embeds to a unit vector.
    Text that normalizes to the empty string embeds to the zero vector.
    """

    source = "ngram"
    dim = TRIGRAM_DIM

    def embed(self, text: str) -> TextEmbedding:
        vec = np.zeros(self.dim)
        normalized = normalize_text(text)
        if normalized:
            padded = normalized.ljust(3)
            for i in range(len(padded) - 2):
                vec[_bucket(padded[i : i + 3])] += 1.0
            vec /= math.sqrt(float(vec @ vec))
        return TextEmbedding(vec, self.source)


class PrecomputedTable:
    """Text -> embedding lookup loaded from a TSV file.

    Line format: ``text<TAB>f1 f2 ... fd`` with d constant per file.
    Lookups match the raw text exactly; a miss raises
    :class:`LookupMissError` naming the text.
    """

    source = "precomputed"

    def __init__(self, table: dict[str, np.ndarray], dim: int):
        if not table:
            raise ParseError("empty embedding table")
        self.table = table
        self.dim = dim

    @classmethod
    def load(cls, path: str | Path) -> "PrecomputedTable":
        table: dict[str, np.ndarray] = {}
        dim: int | None = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                text, sep, payload = line.partition("\t")
                if not sep:
                    raise ParseError(f"{path}:{lineno}: expected 'text<TAB>values'")
                try:
                    vec = np.array([float(v) for v in payload.split()])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: non-numeric embedding value") from None
                if vec.size == 0:
                    raise ParseError(f"{path}:{lineno}: no embedding values")
                if dim is None:
                    dim = int(vec.size)
                elif vec.size != dim:
                    raise ParseError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
                if not np.all(np.isfinite(vec)):
                    raise ParseError(f"{path}:{lineno}: non-finite embedding value")
                if text in table:
                    raise ParseError(f"{path}:{lineno}: duplicate key {text!r}")
                table[text] = vec
        return cls(table, dim)

    def embed(self, text: str) -> TextEmbedding:
        vec = self.table.get(text)
        if vec is None:
            raise LookupMissError(f"no precomputed embedding for text {text!r}")
        return TextEmbedding(vec, self.source)


Embedder = TrigramEmbedder | PrecomputedTable


def embed_text(text: str, backend: Embedder) -> TextEmbedding:
    """Embed ``text`` with the chosen backend; deterministic per input."""
    return backend.embed(text)


def sts(a: TextEmbedding | np.ndarray, b: TextEmbedding | np.ndarray) -> float:
    """Cosine similarity in [-1, 1].

    The denominator is ``sqrt(dot(a,a) * dot(b,b))``; because IEEE-754
    square root is correctly rounded, identical vectors score exactly 1.0.
    """
    va = a.vector if isinstance(a, TextEmbedding) else np.asarray(a, dtype=np.float64)
    vb = b.vector if isinstance(b, TextEmbedding) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ShapeMismatchError(f"embedding dimensions differ: {va.shape} vs {vb.shape}")
    ma = float(np.max(np.abs(va))) if va.size else 0.0
    mb = float(np.max(np.abs(vb))) if vb.size else 0.0
    if ma == 0.0 or mb == 0.0:
        raise UndefinedSimilarityError("cosine of an all-zero vector is undefined")
    # Prescale by the max-abs entry: cosine is scale-invariant and the
    # squared norms land in [1, d], where they cannot under- or overflow.
    va = va / ma
    vb = vb / mb
    sim = float(va @ vb) / math.sqrt(float(va @ va) * float(vb @ vb))
    return min(1.0, max(-1.0, sim))


@dataclass
class ClassVocab:
    """Ordered closed label set; the class index is the list position.

    ``embeddings``, when present, is a (C, d) array of unit-norm rows
    aligned with ``names``.
    """

    names: list[str]
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        if len(self.names) < 2:
            raise ConfigError("a class vocabulary needs at least 2 classes")
        if any(not name.strip() for name in self.names):
            raise ConfigError("class names must be non-empty")
        folded = [_WS_RE.sub(" ", name.lower()).strip() for name in self.names]
        if len(set(folded)) != len(folded):
            raise ConfigError("class names must be unique after case/whitespace folding")
        if self.embeddings is not None:
            emb = np.asarray(self.embeddings, dtype=np.float64)
            if emb.ndim != 2 or emb.shape[0] != len(self.names):
                raise ConfigError("need exactly one embedding row per class")
            norms = np.sqrt(np.sum(emb * emb, axis=1))
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ConfigError("class embeddings must have unit L2 norm")
            self.embeddings = emb

    def __len__(self) -> int:
        return len(self.names)

    @cached_property
    def normalized_names(self) -> list[str]:
        return [normalize_text(name) for name in self.names]

    def with_embeddings(self, backend: Embedder) -> "ClassVocab":
        """Copy of the vocab with class-name embeddings from ``backend``.

        Rows are L2-normalized; cosine argmax is scale-invariant so this
        never changes an assignment.
        """
        rows = []
        for name in self.names:
            emb = embed_text(name, backend)
            if emb.is_zero:
                raise ConfigError(f"class name {name!r} embeds to the zero vector")
            vec = emb.vector.astype(np.float64)
            rows.append(vec / math.sqrt(float(vec @ vec)))
        return ClassVocab(list(self.names), np.array(rows))


@dataclass(frozen=True)
class TeacherRecord:
    """One cached teacher response for one sample."""

    sample_id: str
    teacher_id: int
    raw_text: str


def read_teacher_records(path: str | Path) -> list[TeacherRecord]:
    """Read JSON Lines records ``{"sample_id", "teacher", "text"}``.

    (sample_id, teacher) pairs must be unique within the file.
    """
    records: list[TeacherRecord] = []
    seen: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                sample_id = str(obj["sample_id"])
                teacher_id = int(obj["teacher"])
                text = str(obj["text"])
            except (KeyError, TypeError, ValueError):
                raise ParseError(
                    f"{path}:{lineno}: expected keys sample_id, teacher, text"
                ) from None
            if teacher_id < 0:
                raise ParseError(f"{path}:{lineno}: negative teacher id")
            key = (sample_id, teacher_id)
            if key in seen:
                raise ParseError(f"{path}:{lineno}: duplicate record for {key}")
            seen.add(key)
            records.append(TeacherRecord(sample_id, teacher_id, text))
    return records


def assign_pseudo_label(record: TeacherRecord, vocab: ClassVocab, backend: Embedder) -> int:
    """Index of the class name semantically closest to the record text.

    Text equal to a class name after normalization maps straight to that
    class; otherwise the cosine argmax decides, with similarity ties
    resolved to the lowest class index. Un-embeddable text (empty under
    the trigram backend, missing from a precomputed table) raises
    :class:`UnlabeledSampleError`.
    """
    normalized = normalize_text(record.raw_text)
    if normalized in vocab.normalized_names:
        return vocab.normalized_names.index(normalized)
    try:
        query = embed_text(record.raw_text, backend)
    except LookupMissError as exc:
        raise UnlabeledSampleError(str(exc)) from exc
    if query.is_zero:
        raise UnlabeledSampleError(
            f"text {record.raw_text!r} has no embeddable content"
        )
    class_emb = vocab.embeddings
    if class_emb is None:
        class_emb = vocab.with_embeddings(backend).embeddings
    sims = np.array([sts(query.vector, class_emb[c]) for c in range(len(vocab))])
    return int(np.argmax(sims))


@dataclass
class LabelingSummary:
    """Bookkeeping from one ingestion batch."""

    n_samples_in: int
    n_teachers: int
    per_teacher_labeled: list[int]
    per_teacher_unlabeled: list[int]
    dropped_sample_ids: list[str] = field(default_factory=list)


def label_records(
    records: list[TeacherRecord],
    vocab: ClassVocab,
    backend: Embedder,
    on_unlabeled: str = "drop",
):
    """Convert an ingestion batch into a pseudo-label matrix.

    Samples keep their first-appearance order, so output never depends
    on how the work is scheduled. Teacher ids must cover 0..M-1. A
    sample missing any teacher's label (un-embeddable text or absent
    record) is dropped under the ``drop`` policy or raises under
    ``error``.
    """
    from .consensus import PseudoLabelMatrix

    if on_unlabeled not in ("drop", "error"):
        raise ConfigError(f"unknown on-unlabeled policy {on_unlabeled!r}")
    if not records:
        raise DataError("no teacher records to label")

    teacher_ids = sorted({r.teacher_id for r in records})
    n_teachers = teacher_ids[-1] + 1
    if teacher_ids != list(range(n_teachers)):
        raise DataError(f"teacher ids must cover 0..M-1, got {teacher_ids}")
    if n_teachers < 2:
        raise ConfigError("need at least 2 teachers")

    sample_order: list[str] = []
    seen: set[str] = set()
    for record in records:
        if record.sample_id not in seen:
            seen.add(record.sample_id)
            sample_order.append(record.sample_id)
    row_of = {sid: i for i, sid in enumerate(sample_order)}

    vocab = vocab if vocab.embeddings is not None else vocab.with_embeddings(backend)
    labels = np.full((len(sample_order), n_teachers), -1, dtype=np.int64)
    for record in records:
        try:
            labels[row_of[record.sample_id], record.teacher_id] = assign_pseudo_label(
                record, vocab, backend
            )
        except UnlabeledSampleError:
            if on_unlabeled == "error":
                raise UnlabeledSampleError(
                    f"sample {record.sample_id!r}, teacher {record.teacher_id}: "
                    f"text {record.raw_text!r} could not be labeled"
                ) from None

    complete = np.all(labels >= 0, axis=1)
    if on_unlabeled == "error" and not np.all(complete):
        missing = [sample_order[i] for i in np.flatnonzero(~complete)]
        raise UnlabeledSampleError(f"samples missing teacher labels: {missing[:5]}")

    kept = np.flatnonzero(complete)
    summary = LabelingSummary(
        n_samples_in=len(sample_order),
        n_teachers=n_teachers,
        per_teacher_labeled=[int(np.sum(labels[:, t] >= 0)) for t in range(n_teachers)],
        per_teacher_unlabeled=[int(np.sum(labels[:, t] < 0)) for t in range(n_teachers)],
        dropped_sample_ids=[sample_order[i] for i in np.flatnonzero(~complete)],
    )
    matrix = PseudoLabelMatrix(
        sample_ids=[sample_order[i] for i in kept],
        labels=labels[kept],
        n_classes=len(vocab),
    )
    return matrix, summary
