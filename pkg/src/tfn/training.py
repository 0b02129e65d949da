"""Training loop, grid search, speaker-independent cross-validation and ablation.

Seeds: every run derives its sub-seeds from ``TrainConfig.seed`` with
:func:`tfn.synth.derive_seed` under the labels ``"init"`` (weights),
``"train"`` (shuffling and dropout masks) and ``"folds"`` (speaker folds).
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError, Tape
from .data import Dataset, Utterance
from .fusion import FusionVariant
from .inference import Task, loss
from .metrics import AblationReport, ExperimentReport, MetricRow, metrics
from .model import ArchConfig, Batch, TfnModel
from .optim import AdamState, NonFiniteGradientError, adam_step, dropout_fn, l2_penalty
from .synth import derive_seed

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch, self.batch = epoch, batch
        where = f" (epoch {epoch}, batch {batch})" if epoch is not None else ""
        super().__init__(message + where)


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    dropout_p: float = 0.15
    l2_coeff: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    task: Task = Task.REGRESSION
    variant: FusionVariant = FusionVariant.FULL

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "variant", FusionVariant(self.variant))
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.value
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_score: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def selection_score(row: MetricRow, task: Task) -> float:
    """Higher is better: -MAE for regression, accuracy otherwise."""
    if task is Task.REGRESSION:
        return -row.mae
    if task is Task.BINARY:
        return row.binary_acc
    return row.five_class_acc


def _take(batch: Batch, idx: np.ndarray) -> Batch:
    lengths = batch.lengths[idx]
    return Batch(batch.words[idx, :int(lengths.max())], lengths, batch.visual[idx],
                 batch.acoustic[idx], batch.labels[idx])


def evaluate(model: TfnModel, utterances: Sequence[Utterance]) -> MetricRow:
    pred = model.predict(list(utterances))
    return metrics(pred, [u.label for u in utterances])


def train(config: TrainConfig, train_set: Sequence[Utterance], val_set: Sequence[Utterance],
          arch: ArchConfig | None = None) -> tuple[TfnModel, History]:
    """Mini-batch Adam on mean task loss + L2; returns the best-validation model."""
    train_set, val_set = list(train_set), list(val_set)
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    if arch is None:
        first = train_set[0]
        arch = ArchConfig(p=first.visual_frames.shape[1], q=first.acoustic_frames.shape[1],
                          word_dim=first.words.shape[1])
    model = TfnModel(arch, config.variant, config.task, seed=derive_seed(config.seed, "init"))
    rng = np.random.default_rng(derive_seed(config.seed, "train"))
    params = model.named_parameters()
    state = AdamState()
    data = Batch.from_utterances(train_set, arch.t_max)
    n = len(data)
    history = History()
    best_score, best_state = -np.inf, None

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = _take(data, order[start:start + config.batch_size])
            model.zero_grad()
            try:
                with Tape() as tape:
                    out = model.forward(batch, dropout_fn(config.dropout_p, rng, True))
                    task_loss = loss(out, batch.labels, config.task)
                    objective = task_loss + l2_penalty(model, config.l2_coeff)
                tape.backward(objective)
                adam_step(params, state, config.learning_rate)
            except (NonFiniteError, NonFiniteGradientError) as exc:
                raise DivergenceError(f"training diverged: {exc}", epoch, b) from None
            total += float(task_loss.data) * len(batch)
            count += len(batch)
        history.train_loss.append(total / count)
        try:
            score = selection_score(evaluate(model, val_set), config.task)
        except NonFiniteError as exc:
            raise DivergenceError(f"validation diverged: {exc}", epoch) from None
        history.val_score.append(score)
        if score > best_score:
            best_score, best_state = score, model.state_dict()
            history.best_epoch = epoch
        log.debug("epoch %d loss %.5f val %.5f", epoch, history.train_loss[-1], score)

    model.load_state_dict(best_state)
    return model, history


def grid_search(grid: Sequence[TrainConfig], train_set, val_set, arch: ArchConfig | None = None
                ) -> tuple[TrainConfig, TfnModel, list[float | None]]:
    """Train every config; return the best by validation score (first wins ties),
    its model, and each config's score (``None`` for configs that diverged)."""
    if not grid:
        raise ValueError("grid must contain at least one config")
    best = None
    scores: list[float | None] = []
    for cfg in grid:
        try:
            model, _ = train(cfg, train_set, val_set, arch)
        except DivergenceError as exc:
            log.warning("config %s diverged: %s", cfg.to_dict(), exc)
            scores.append(None)
            continue
        score = selection_score(evaluate(model, val_set), cfg.task)
        scores.append(score)
        if best is None or score > best[0]:
            best = (score, cfg, model)
    if best is None:
        raise DivergenceError("every configuration in the grid diverged")
    return best[1], best[2], scores


# ---------------------------------------------------------------- speaker folds


def speaker_folds(speakers: Sequence[str], k: int, seed: int) -> list[list[str]]:
    """Partition speakers into ``k`` folds: a seeded permutation of the sorted
    ids, dealt round-robin."""
    if k < 2:
        raise SplitError(f"need at least 2 folds, got {k}")
    unique = sorted(set(speakers))
    if len(unique) < k:
        raise SplitError(f"{len(unique)} speakers cannot fill {k} folds")
    perm = np.random.default_rng(derive_seed(seed, "folds")).permutation(len(unique))
    return [sorted(unique[j] for j in perm[i::k]) for i in range(k)]


def split_validation(train_fold: Sequence[Utterance], n_val_videos: int = 4
                     ) -> tuple[list[Utterance], list[Utterance]]:
    """Hold out the last ``n_val_videos`` videos (by id, lexicographic) for validation."""
    videos = sorted({u.video for u in train_fold})
    if len(videos) <= n_val_videos:
        raise SplitError(
            f"train fold has {len(videos)} videos; need more than {n_val_videos} to hold out"
        )
    held = set(videos[-n_val_videos:])
    return ([u for u in train_fold if u.video not in held],
            [u for u in train_fold if u.video in held])


def _run_fold(args):
    config, grid, train_part, val_part, test_part, arch = args
    if grid:
        _, model, _ = grid_search(grid, train_part, val_part, arch)
    else:
        model, _ = train(config, train_part, val_part, arch)
    return evaluate(model, test_part)


def cross_validate(dataset: Dataset, config: TrainConfig, k: int = 5,
                   arch: ArchConfig | None = None, n_val_videos: int = 4,
                   grid: Sequence[TrainConfig] | None = None, workers: int = 1
                   ) -> ExperimentReport:
    """Speaker-independent k-fold evaluation; each fold trains on the others."""
    folds = speaker_folds([u.speaker_id for u in dataset], k, config.seed)
    # grid entries vary hyper-parameters only; the variant and task are the run's
    grid = [g.replace(variant=config.variant, task=config.task) for g in grid or []]
    if arch is None:
        h = dataset.header
        arch = ArchConfig(p=h.p, q=h.q, word_dim=h.word_dim)
    jobs = []
    for fold in folds:
        test_speakers = set(fold)
        test_part = [u for u in dataset if u.speaker_id in test_speakers]
        train_fold = [u for u in dataset if u.speaker_id not in test_speakers]
        overlap = test_speakers & {u.speaker_id for u in train_fold}
        if overlap:
            raise SplitError(f"speakers {sorted(overlap)} appear in both train and test")
        train_part, val_part = split_validation(train_fold, n_val_videos)
        jobs.append((config, grid, train_part, val_part, test_part, arch))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_fold, jobs))
    else:
        rows = [_run_fold(job) for job in jobs]
    return ExperimentReport(variant=config.variant.value, task=config.task.value, folds=rows,
                            config=config.to_dict(), fold_speakers=folds)


TABLE2_ROWS: tuple[tuple[str, FusionVariant], ...] = (
    ("TFN_language", FusionVariant.LANGUAGE_ONLY),
    ("TFN_visual", FusionVariant.VISUAL_ONLY),
    ("TFN_acoustic", FusionVariant.ACOUSTIC_ONLY),
    ("TFN_bimodal", FusionVariant.BIMODAL_ONLY),
    ("TFN_trimodal", FusionVariant.TRIMODAL_ONLY),
    ("TFN_notrimodal", FusionVariant.NO_TRIMODAL),
    ("TFN", FusionVariant.FULL),
    ("TFN_early", FusionVariant.EARLY),
)


def cross_validate_tasks(dataset: Dataset, config: TrainConfig, tasks: Sequence[Task], **kwargs
                         ) -> ExperimentReport:
    """Cross-validate one network per task and merge their metric columns fold by fold."""
    reports = [cross_validate(dataset, config.replace(task=t), **kwargs) for t in tasks]
    folds = reports[0].folds
    for rep in reports[1:]:
        folds = [a.merged(b) for a, b in zip(folds, rep.folds)]
    task_name = "+".join(Task(t).value for t in tasks)
    return ExperimentReport(variant=config.variant.value, task=task_name, folds=folds,
                            config=config.to_dict(), fold_speakers=reports[0].fold_speakers)


def ablate(dataset: Dataset, config: TrainConfig, tasks: Sequence[Task] | None = None,
           **kwargs) -> AblationReport:
    """Cross-validate every ablation variant, in the canonical row order."""
    tasks = list(tasks or [config.task])
    rows = []
    for name, variant in TABLE2_ROWS:
        rep = cross_validate_tasks(dataset, config.replace(variant=variant), tasks, **kwargs)
        rows.append((name, rep))
    return AblationReport(rows)


# ---------------------------------------------------------------- held-out comparison

# Scaled-down architecture and schedule used for the interaction-ordering
# experiment; at the published widths every variant has enough capacity to
# learn the triple product from 2000 utterances and the ordering washes out.
COMPARISON_ARCH = dict(lstm_embed=16, lstm_hidden=16, language_dim=16, visual_dim=4,
                       acoustic_dim=4, trunk_width=16, t_max=10)
COMPARISON_TRAIN = dict(learning_rate=3e-3, l2_coeff=1e-4, dropout_p=0.0, epochs=40)


def heldout_mae(dataset: Dataset, variant: FusionVariant, seed: int,
                arch: ArchConfig | None = None, config: TrainConfig | None = None,
                n_val_videos: int = 1) -> float:
    """Test MAE of one variant on the first speaker fold, trained on the rest."""
    if arch is None:
        h = dataset.header
        arch = ArchConfig(p=h.p, q=h.q, word_dim=h.word_dim, **COMPARISON_ARCH)
    if config is None:
        config = TrainConfig(**COMPARISON_TRAIN)
    config = config.replace(variant=variant, task=Task.REGRESSION, seed=seed)
    test_speakers = set(speaker_folds(dataset.speakers(), 5, seed)[0])
    test = [u for u in dataset if u.speaker_id in test_speakers]
    rest = [u for u in dataset if u.speaker_id not in test_speakers]
    train_part, val_part = split_validation(rest, n_val_videos)
    model, _ = train(config, train_part, val_part, arch)
    return evaluate(model, test).mae
