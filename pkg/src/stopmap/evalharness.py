"""CNN training under leave-one-cage-out CV, confusion matrices and metrics."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .dataset import Recording, split_loco
from .errors import DataError, PipelineError, ShapeError
from .featurize import FeaturizeConfig, build_histogram_stack, detect_stops, normalize_stack
from .nncore import CLASS_NAMES, ModelParams, TrainConfig


@dataclass
class ConfusionMatrix:
    """4x4 counts, rows = true labels, cols = predictions, order AM/JM/AF/JF."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((4, 4), dtype=int))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.counts.shape != (4, 4):
            raise ShapeError(f"confusion matrix must be 4x4, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion matrix entries must be non-negative")

    def add(self, true: int, pred: int):
        self.counts[true, pred] += 1

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_lists(self):
        return self.counts.tolist()


def metrics(cm: ConfusionMatrix) -> dict:
    """Overall / male / female accuracies; empty groups report None."""
    c = cm.counts

    def ratio(num, den):
        return float(num) / float(den) if den > 0 else None

    return {
        "overall": ratio(np.trace(c), c.sum()),
        "male": ratio(c[0, 0] + c[1, 1], c[:2].sum()),
        "female": ratio(c[2, 2] + c[3, 3], c[2:].sum()),
    }


def featurize_recording(rec: Recording, fcfg: FeaturizeConfig, normalization: str):
    stack = build_histogram_stack(detect_stops(rec.samples, fcfg), fcfg)
    return normalize_stack(stack, normalization)


def train(train_set, config: TrainConfig, rng_seed: int | None = None):
    """Fixed-epoch mini-batch SGD from a fresh seeded init.

    train_set: list of (features [T,N,N], class index).  Returns
    (ModelParams, per-epoch mean-loss trace).
    """
    if not train_set:
        raise DataError("training set is empty")
    seed = config.rng_seed if rng_seed is None else rng_seed
    t_bins, n, n2 = np.asarray(train_set[0][0]).shape
    if n != n2:
        raise ShapeError(f"features must be square in space, got {n}x{n2}")
    params = nncore.init_params(t_bins, n, seed)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(1,))
    )
    velocity = None
    losses = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            try:
                loss, params, velocity = nncore.backprop_batch(
                    params, batch, config, velocity
                )
            except PipelineError as exc:
                raise type(exc)(
                    f"epoch {epoch}, batch at {start}: {exc}"
                ) from exc
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
    return params, losses


def evaluate(params: ModelParams, test_set) -> ConfusionMatrix:
    """Argmax predictions accumulated into a confusion matrix."""
    cm = ConfusionMatrix()
    if not test_set:
        return cm
    xb = np.stack([np.asarray(x, dtype=float) for x, _ in test_set])
    logits, _ = nncore._forward_batch(params, xb)
    preds = logits.argmax(axis=1)
    for (_, label), pred in zip(test_set, preds):
        cm.add(int(label), int(pred))
    return cm


@dataclass
class EvalReport:
    fold_matrices: dict  # cage_id -> ConfusionMatrix
    aggregate: ConfusionMatrix
    overall_accuracy: float | None
    male_accuracy: float | None
    female_accuracy: float | None
    config: dict
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "fold_matrices": {k: v.to_lists() for k, v in self.fold_matrices.items()},
            "aggregate": self.aggregate.to_lists(),
            "overall_accuracy": self.overall_accuracy,
            "male_accuracy": self.male_accuracy,
            "female_accuracy": self.female_accuracy,
            "config": self.config,
            "wall_time": self.wall_time,
            "class_order": list(CLASS_NAMES),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            fold_matrices={
                k: ConfusionMatrix(np.array(v)) for k, v in doc["fold_matrices"].items()
            },
            aggregate=ConfusionMatrix(np.array(doc["aggregate"])),
            overall_accuracy=doc["overall_accuracy"],
            male_accuracy=doc["male_accuracy"],
            female_accuracy=doc["female_accuracy"],
            config=doc.get("config", {}),
            wall_time=doc.get("wall_time", 0.0),
        )

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fold_seed(base_seed: int, fold_index: int) -> int:
    """Stable per-fold init seed; no weight reuse across folds."""
    return int(
        np.random.SeedSequence(entropy=base_seed, spawn_key=(fold_index,))
        .generate_state(1)[0]
    )


def _run_fold(args):
    fold_index, cage_id, train_data, test_data, tcfg = args
    try:
        params, _ = train(train_data, tcfg, rng_seed=fold_seed(tcfg.rng_seed, fold_index))
        return cage_id, evaluate(params, test_data), params
    except PipelineError as exc:
        raise type(exc)(f"fold {cage_id}: {exc}") from exc


def loco_item_folds(items):
    """LOCO folds over (rec_id, cage_id, features, class_index) items."""
    cages = sorted({it[1] for it in items})
    if len(cages) < 2:
        raise DataError(f"need at least 2 cages for LOCO, got {len(cages)}")
    return [
        (cage,
         [it for it in items if it[1] != cage],
         [it for it in items if it[1] == cage])
        for cage in cages
    ]


def run_loco_items(
    items,
    tcfg: TrainConfig,
    jobs: int = 1,
    save_fold_params: dict | None = None,
    config_echo: dict | None = None,
) -> EvalReport:
    """Train/evaluate one fold per cage over pre-featurized items.

    items: list of (recording_id, cage_id, features [T,N,N], class_index).
    save_fold_params, if given, is filled with cage_id -> trained ModelParams.
    """
    t0 = time.time()
    tasks = []
    for i, (cage_id, train_items, test_items) in enumerate(loco_item_folds(items)):
        train_data = [(it[2], it[3]) for it in train_items]
        test_data = [(it[2], it[3]) for it in test_items]
        tasks.append((i, cage_id, train_data, test_data, tcfg))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]

    fold_matrices = {}
    aggregate = ConfusionMatrix()
    for cage_id, cm, params in sorted(results, key=lambda r: r[0]):
        fold_matrices[cage_id] = cm
        aggregate = aggregate + cm
        if save_fold_params is not None:
            save_fold_params[cage_id] = params
    m = metrics(aggregate)
    return EvalReport(
        fold_matrices=fold_matrices,
        aggregate=aggregate,
        overall_accuracy=m["overall"],
        male_accuracy=m["male"],
        female_accuracy=m["female"],
        config=config_echo if config_echo is not None else {"train": vars(tcfg).copy()},
        wall_time=time.time() - t0,
    )


def featurize_items(recordings, fcfg: FeaturizeConfig, normalization: str):
    """(recording_id, cage_id, features, class_index) for every recording."""
    return [
        (r.recording_id, r.cage_id,
         featurize_recording(r, fcfg, normalization), r.class_index)
        for r in recordings
    ]


def run_loco(
    recordings,
    fcfg: FeaturizeConfig,
    tcfg: TrainConfig,
    jobs: int = 1,
    save_fold_params: dict | None = None,
) -> EvalReport:
    """Featurize once, then LOCO-train/evaluate and aggregate."""
    split_loco(recordings)  # early validation with recording-level context
    items = featurize_items(recordings, fcfg, tcfg.normalization)
    return run_loco_items(
        items,
        tcfg,
        jobs=jobs,
        save_fold_params=save_fold_params,
        config_echo={"featurize": vars(fcfg).copy(), "train": vars(tcfg).copy()},
    )
