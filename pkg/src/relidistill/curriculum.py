"""Three-stage training curriculum over reliability-partitioned data.

Stage 1 (RKT) trains on unanimously-labeled samples only. Stage 2
(SMKE) widens to partially-agreed samples, choosing per sample between
the student's own confident prediction and the teachers' mode label.
Stage 3 (MMR) trains on everything: low-confidence predictions are
restricted to the union of teacher-suggested classes, and a weak/strong
consistency term regularizes the fit.

Each stage starts from the previous stage's parameters; the whole run
is a deterministic function of (features, pseudo-labels, configs, seed).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consensus import (
    PseudoLabelMatrix,
    ReliabilityPartition,
    TAG_LESS_RELIABLE,
    TAG_RELIABLE,
    mode_label,
    mode_labels,
    multi_hot_mask,
    multi_hot_masks,
    partition,
)
from .data import FeatureDataset
from .errors import ConfigError, DataError, StageError
from .seeding import AUGMENT, SHUFFLE, derive_rng
from .student import (
    AugmentPolicy,
    StudentModel,
    augment,
    confidence,
    init_optimizer,
    init_student,
    loss_and_grads,
    optimizer_step,
    predict_proba,
    save_checkpoint,
)

STAGE_RKT = "RKT"
STAGE_SMKE = "SMKE"
STAGE_MMR = "MMR"
STAGES = (STAGE_RKT, STAGE_SMKE, STAGE_MMR)

DEFAULT_TAU = {STAGE_SMKE: 0.7, STAGE_MMR: 0.95}
DEFAULT_LAMBDA_CONS = 0.5
DEFAULT_HIDDEN_DIMS = [128]

LOSS_SAMPLE_EVERY = 50


@dataclass
class StageConfig:
    """Hyperparameters for one stage.

    ``tau`` is required for SMKE and MMR (and rejected for RKT);
    ``lambda_cons`` is required for MMR only.
    """

    stage: str
    learning_rate: float
    batch_size: int
    max_iter: int
    tau: float | None = None
    lambda_cons: float | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"{self.stage}: learning rate must be positive")
        if self.batch_size < 1 or self.max_iter < 1:
            raise ConfigError(f"{self.stage}: batch size and max iter must be >= 1")
        if self.stage == STAGE_RKT:
            if self.tau is not None or self.lambda_cons is not None:
                raise ConfigError("RKT takes neither tau nor lambda_cons")
            return
        if self.tau is None:
            raise ConfigError(f"{self.stage}: tau is required")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"{self.stage}: tau must lie in [0, 1]")
        if self.stage == STAGE_MMR:
            if self.lambda_cons is None:
                raise ConfigError("MMR: lambda_cons is required")
            if self.lambda_cons < 0:
                raise ConfigError("MMR: lambda_cons must be >= 0")
        elif self.lambda_cons is not None:
            raise ConfigError("SMKE takes no lambda_cons")


@dataclass
class TrainReport:
    """What one stage did.

    ``wall_time_s`` is the only non-deterministic field and is excluded
    from the JSON form so written reports are byte-reproducible.
    """

    stage: str
    iterations: int
    final_loss: float
    loss_curve: list[tuple[int, float]]
    accuracy: float | None = None
    label_sources: dict[str, int] | None = None
    touched_sample_indices: list[int] = field(default_factory=list)
    wall_time_s: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "stage": self.stage,
            "iterations": self.iterations,
            "final_loss": self.final_loss,
            "loss_curve": [[int(i), float(l)] for i, l in self.loss_curve],
            "accuracy": self.accuracy,
            "touched_sample_count": len(self.touched_sample_indices),
        }
        if self.label_sources is not None:
            out["label_sources"] = dict(self.label_sources)
        return out


@dataclass
class CurriculumRun:
    """Result bundle of a full three-stage run."""

    seed: int
    configs: list[StageConfig]
    reports: list[TrainReport]
    checkpoint_paths: dict[str, str] = field(default_factory=dict)

    def report_for(self, stage: str) -> TrainReport:
        for report in self.reports:
            if report.stage == stage:
                return report
        raise KeyError(stage)


def validate_stage_configs(configs: list[StageConfig]) -> None:
    """Exactly one config per stage, in curriculum order."""
    got = [cfg.stage for cfg in configs]
    missing = [stage for stage in STAGES if stage not in got]
    if missing:
        raise ConfigError(f"missing stage config: {', '.join(missing)}")
    if got != list(STAGES):
        raise ConfigError(f"stage configs must be ordered {STAGES}, got {got}")


def _stage_index(stage: str) -> int:
    return STAGES.index(stage)


def _minibatches(indices: np.ndarray, batch_size: int, max_iter: int, rng):
    """Uniform minibatching: reshuffle each epoch, keep the short tail."""
    done = 0
    while done < max_iter:
        order = indices[rng.permutation(indices.size)]
        for start in range(0, indices.size, batch_size):
            if done >= max_iter:
                return
            yield done, order[start : start + batch_size]
            done += 1


def smke_label(
    model: StudentModel,
    x: np.ndarray,
    row: np.ndarray,
    tau: float,
    rng: np.random.Generator | None = None,
    tie_break: str = "random",
) -> int:
    """The stage-2 label rule for one sample, from the current weights.

    Returns the student's own prediction when its confidence reaches
    ``tau``, otherwise the teachers' mode label.
    """
    p, predicted = confidence(model, np.asarray(x, dtype=np.float64))
    if p >= tau:
        return int(predicted)
    return mode_label(row, rng=rng, tie_break=tie_break)


def mmr_refine(
    probabilities: np.ndarray, row: np.ndarray, n_classes: int, tau: float
) -> int:
    """The stage-3 refined label for one probability vector.

    Confident predictions keep their argmax; below ``tau`` the argmax is
    taken over probabilities restricted to classes some teacher
    suggested. Ties go to the lowest index.
    """
    probs = np.asarray(probabilities, dtype=np.float64).ravel()
    if probs.shape[0] != n_classes:
        raise DataError("probability vector length != class count")
    if float(probs.max()) >= tau:
        return int(np.argmax(probs))
    return int(np.argmax(probs * multi_hot_mask(row, n_classes)))


def _refine_batch(probs: np.ndarray, masks: np.ndarray, tau: float):
    """Vectorized stage-3 refinement; returns (labels, confident_flags)."""
    p = probs.max(axis=1)
    confident = p >= tau
    plain = probs.argmax(axis=1)
    masked = (probs * masks).argmax(axis=1)
    return np.where(confident, plain, masked).astype(np.int64), confident


def run_rkt(
    model: StudentModel,
    X: np.ndarray,
    part: ReliabilityPartition,
    pl: PseudoLabelMatrix,
    cfg: StageConfig,
    seed: int,
) -> TrainReport:
    """Stage 1: supervised training on the unanimous subset."""
    if cfg.stage != STAGE_RKT:
        raise ConfigError(f"expected an RKT config, got {cfg.stage}")
    reliable = part.indices(TAG_RELIABLE)
    if reliable.size == 0:
        raise StageError(
            "no fully-agreed samples to start from; review teacher quality "
            "or the pseudo-labeling step"
        )
    labels = pl.labels[reliable, 0]  # unanimous rows: any column works
    shuffle_rng = derive_rng(seed, SHUFFLE, _stage_index(STAGE_RKT))
    optimizer = init_optimizer(model, cfg.learning_rate)
    curve: list[tuple[int, float]] = []
    last_loss = float("nan")
    positions = np.arange(reliable.size)
    for iteration, batch_pos in _minibatches(
        positions, cfg.batch_size, cfg.max_iter, shuffle_rng
    ):
        batch = reliable[batch_pos]
        loss, grads = loss_and_grads(model, X[batch], labels[batch_pos])
        if iteration % LOSS_SAMPLE_EVERY == 0:
            curve.append((iteration, loss))
        optimizer_step(model, optimizer, grads)
        last_loss = loss
    return TrainReport(
        stage=STAGE_RKT,
        iterations=cfg.max_iter,
        final_loss=last_loss,
        loss_curve=curve,
        touched_sample_indices=sorted(int(i) for i in reliable),
    )


def run_smke(
    model: StudentModel,
    X: np.ndarray,
    part: ReliabilityPartition,
    pl: PseudoLabelMatrix,
    cfg: StageConfig,
    seed: int,
    tie_break: str = "random",
) -> TrainReport:
    """Stage 2: widen to partial agreement with self-correcting labels.

    Labels are recomputed from the live weights at every batch, so a
    sample's label can flip between student and teacher sources as
    confidence evolves.
    """
    if cfg.stage != STAGE_SMKE:
        raise ConfigError(f"expected an SMKE config, got {cfg.stage}")
    pool = np.sort(
        np.concatenate([part.indices(TAG_RELIABLE), part.indices(TAG_LESS_RELIABLE)])
    )
    if pool.size == 0:
        raise StageError("no samples with any teacher agreement; SMKE cannot run")
    teacher_mode = mode_labels(pl, seed, tie_break=tie_break)
    shuffle_rng = derive_rng(seed, SHUFFLE, _stage_index(STAGE_SMKE))
    optimizer = init_optimizer(model, cfg.learning_rate)
    curve: list[tuple[int, float]] = []
    sources = {"student": 0, "teacher": 0}
    last_loss = float("nan")
    for iteration, batch in _minibatches(pool, cfg.batch_size, cfg.max_iter, shuffle_rng):
        probs = predict_proba(model, X[batch])
        p = probs.max(axis=1)
        own = probs.argmax(axis=1)
        use_student = p >= cfg.tau
        labels = np.where(use_student, own, teacher_mode[batch])
        sources["student"] += int(use_student.sum())
        sources["teacher"] += int((~use_student).sum())
        loss, grads = loss_and_grads(model, X[batch], labels)
        if iteration % LOSS_SAMPLE_EVERY == 0:
            curve.append((iteration, loss))
        optimizer_step(model, optimizer, grads)
        last_loss = loss
    return TrainReport(
        stage=STAGE_SMKE,
        iterations=cfg.max_iter,
        final_loss=last_loss,
        loss_curve=curve,
        label_sources=sources,
        touched_sample_indices=sorted(int(i) for i in pool),
    )


def run_mmr(
    model: StudentModel,
    X: np.ndarray,
    part: ReliabilityPartition,
    pl: PseudoLabelMatrix,
    cfg: StageConfig,
    policy: AugmentPolicy,
    seed: int,
) -> TrainReport:
    """Stage 3: full-set training with masked refinement and consistency.

    Per iteration the noise grids cover the whole dataset and are keyed
    by (view, iteration), so each sample's perturbation is a function of
    (sample index, iteration) alone, independent of batch membership.
    Confidence and the refined label come from the weak view; the
    combined loss is sup + lambda_cons * cons.
    """
    if cfg.stage != STAGE_MMR:
        raise ConfigError(f"expected an MMR config, got {cfg.stage}")
    pool = np.arange(pl.n)
    if pool.size == 0:
        raise StageError("empty dataset; MMR cannot run")
    masks = multi_hot_masks(pl).astype(np.float64)
    shuffle_rng = derive_rng(seed, SHUFFLE, _stage_index(STAGE_MMR))
    optimizer = init_optimizer(model, cfg.learning_rate)
    lam = float(cfg.lambda_cons)
    curve: list[tuple[int, float]] = []
    last_loss = float("nan")
    for iteration, batch in _minibatches(pool, cfg.batch_size, cfg.max_iter, shuffle_rng):
        weak_rng = derive_rng(seed, AUGMENT, 0, iteration)
        strong_rng = derive_rng(seed, AUGMENT, 1, iteration)
        x_weak = augment(X, policy, "weak", weak_rng)[batch]
        x_strong = augment(X, policy, "strong", strong_rng)[batch]
        probs_weak = predict_proba(model, x_weak)
        refined, _ = _refine_batch(probs_weak, masks[batch], cfg.tau)
        loss_sup, grads_weak = loss_and_grads(model, x_weak, refined)
        loss_cons, grads_strong = loss_and_grads(model, x_strong, refined)
        combined = [
            (gw + lam * gs, bw + lam * bs)
            for (gw, bw), (gs, bs) in zip(grads_weak, grads_strong)
        ]
        loss = loss_sup + lam * loss_cons
        if iteration % LOSS_SAMPLE_EVERY == 0:
            curve.append((iteration, loss))
        optimizer_step(model, optimizer, combined)
        last_loss = loss
    return TrainReport(
        stage=STAGE_MMR,
        iterations=cfg.max_iter,
        final_loss=last_loss,
        loss_curve=curve,
        touched_sample_indices=sorted(int(i) for i in pool),
    )


def _align(ds: FeatureDataset, pl: PseudoLabelMatrix):
    """Match matrix rows to feature rows by sample id, in matrix order."""
    position = {sid: i for i, sid in enumerate(ds.sample_ids)}
    missing = [sid for sid in pl.sample_ids if sid not in position]
    if missing:
        raise DataError(f"pseudo-labeled samples not in the feature set: {missing[:5]}")
    rows = np.array([position[sid] for sid in pl.sample_ids], dtype=np.int64)
    X = ds.features[rows]
    truths = ds.true_labels[rows] if ds.true_labels is not None else None
    return X, truths


def run_curriculum(
    ds: FeatureDataset,
    pl: PseudoLabelMatrix,
    configs: list[StageConfig],
    seed: int,
    policy: AugmentPolicy | None = None,
    hidden_dims: list[int] | None = None,
    checkpoint_dir: str | Path | None = None,
    tie_break: str = "random",
    warm_start: StudentModel | None = None,
) -> tuple[StudentModel, CurriculumRun]:
    """Chain the three stages; checkpoint after each.

    Training sees only the feature view of ``ds``; true labels, when
    present, feed the per-stage accuracy report and nothing else.
    A failed stage leaves earlier checkpoints in place.
    """
    validate_stage_configs(configs)
    if policy is None:
        policy = AugmentPolicy()
    X, truths = _align(ds, pl)
    part = partition(pl)
    if warm_start is not None:
        if warm_start.layer_dims[0] != X.shape[1] or warm_start.n_classes != pl.n_classes:
            raise ConfigError("warm-start checkpoint does not match data dims")
        model = warm_start.copy()
    else:
        dims = [X.shape[1], *(hidden_dims or DEFAULT_HIDDEN_DIMS), pl.n_classes]
        model = init_student(dims, seed)

    run = CurriculumRun(seed=seed, configs=list(configs), reports=[])
    for cfg in configs:
        started = time.perf_counter()
        if cfg.stage == STAGE_RKT:
            report = run_rkt(model, X, part, pl, cfg, seed)
        elif cfg.stage == STAGE_SMKE:
            report = run_smke(model, X, part, pl, cfg, seed, tie_break=tie_break)
        else:
            report = run_mmr(model, X, part, pl, cfg, policy, seed)
        report.wall_time_s = time.perf_counter() - started
        if truths is not None:
            # Clean (unaugmented) forward pass on the aligned set.
            _, predicted = confidence(model, X)
            report.accuracy = float(np.mean(predicted == truths))
        run.reports.append(report)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"checkpoint_{cfg.stage.lower()}.bin"
            save_checkpoint(model, path)
            run.checkpoint_paths[cfg.stage] = str(path)
    return model, run


def parse_stage_configs(raw: list[dict]) -> list[StageConfig]:
    """Stage configs from JSON dicts, filling documented defaults.

    ``tau`` defaults to 0.7 (SMKE) and 0.95 (MMR); ``lambda_cons``
    defaults to 0.5 for MMR.
    """
    configs = []
    for entry in raw:
        if not isinstance(entry, dict) or "stage" not in entry:
            raise ConfigError(f"bad stage config entry: {entry!r}")
        stage = str(entry["stage"]).upper()
        known = {"stage", "learning_rate", "batch_size", "max_iter", "tau", "lambda_cons"}
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"{stage}: unknown config keys {sorted(unknown)}")
        try:
            tau = entry.get("tau", DEFAULT_TAU.get(stage))
            lam = entry.get("lambda_cons", DEFAULT_LAMBDA_CONS if stage == STAGE_MMR else None)
            configs.append(
                StageConfig(
                    stage=stage,
                    learning_rate=float(entry["learning_rate"]),
                    batch_size=int(entry["batch_size"]),
                    max_iter=int(entry["max_iter"]),
                    tau=None if tau is None else float(tau),
                    lambda_cons=None if lam is None else float(lam),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"{stage}: missing config key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{stage}: bad config value: {exc}") from None
    validate_stage_configs(configs)
    return configs


def write_run_report(run: CurriculumRun, path: str | Path) -> None:
    """Deterministic JSON report.

    Checkpoints are referenced by file name (they sit next to the
    report) and timing lives elsewhere, so identical runs produce
    byte-identical report files regardless of where they ran.
    """
    payload = {
        "seed": run.seed,
        "checkpoints": {
            stage: Path(p).name for stage, p in sorted(run.checkpoint_paths.items())
        },
        "stages": [report.to_json_dict() for report in run.reports],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
