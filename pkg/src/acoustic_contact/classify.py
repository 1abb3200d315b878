"""Datasets, training loop, evaluation and blank-aware prediction."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .audio_io import read_wav
from .errors import ClassTooSmall, EmptyDataset, ShapeMismatch
from .features import FeatureConfig, Featurizer, MelSpectrogram
from .nn import AdamState, Checkpoint, Model, adam_step, softmax, softmax_cross_entropy

log = logging.getLogger(__name__)

BLANK = "blank"
DEFAULT_TAU = 0.5


def order_class_names(names: Iterable[str]) -> list[str]:
    """Lexicographic order with ``blank`` pinned to index 0."""
    names = set(names)
    if BLANK not in names:
        raise ValueError(f"class set must contain {BLANK!r}, got {sorted(names)}")
    return [BLANK] + sorted(names - {BLANK})


@dataclass
class LabeledDataset:
    items: list[tuple[MelSpectrogram, int]]
    class_names: list[str]

    def __post_init__(self) -> None:
        if self.class_names.count(BLANK) != 1:
            raise ValueError(f"class_names must contain exactly one {BLANK!r}")
        K = len(self.class_names)
        for _, label in self.items:
            if not 0 <= label < K:
                raise ValueError(f"class id {label} out of range for {K} classes")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def blank_id(self) -> int:
        return self.class_names.index(BLANK)

    @property
    def labels(self) -> np.ndarray:
        return np.array([y for _, y in self.items], dtype=np.int64)

    def features(self, dtype=np.float32) -> np.ndarray:
        """Stacked inputs ``(N, 1, n_mels, n_frames)``."""
        if not self.items:
            raise EmptyDataset("dataset has no items")
        shapes = {spec.data.shape for spec, _ in self.items}
        if len(shapes) != 1:
            raise ShapeMismatch(f"spectrogram shapes differ across items: {sorted(shapes)}")
        return np.stack([spec.data for spec, _ in self.items]).astype(dtype)[:, None]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset([self.items[i] for i in indices], list(self.class_names))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_names))


def scan_corpus(root: str | Path) -> list[tuple[Path, str]]:
    """(wav path, class name) pairs, sorted by path.

    ``manifest.csv`` with ``path`` and ``class`` columns overrides the
    ``root/<class>/*.wav`` layout when present.
    """
    root = Path(root)
    manifest = root / "manifest.csv"
    if manifest.exists():
        with open(manifest, newline="") as fp:
            rows = [(root / r["path"], r["class"]) for r in csv.DictReader(fp)]
    else:
        rows = [(p, p.parent.name) for p in root.glob("*/*.wav")]
    return sorted(rows, key=lambda r: str(r[0]))


def load_dataset(root: str | Path, cfg: FeatureConfig) -> LabeledDataset:
    entries = scan_corpus(root)
    if not entries:
        raise EmptyDataset(f"no WAV files found under {root}")
    class_names = order_class_names(c for _, c in entries)
    index = {c: i for i, c in enumerate(class_names)}
    featurizers: dict[int, Featurizer] = {}
    items = []
    for path, cls in entries:
        clip = read_wav(path)
        fz = featurizers.get(clip.sample_rate_hz)
        if fz is None:
            fz = featurizers[clip.sample_rate_hz] = Featurizer(cfg, clip.sample_rate_hz)
        items.extend((spec, index[cls]) for spec in fz.clip(clip))
    if not items:
        raise EmptyDataset(f"corpus {root} produced no complete windows")
    return LabeledDataset(items, class_names)


def stratified_split(ds: LabeledDataset, ratio: float = 0.8, seed: int = 0):
    """Per-class seeded shuffle; ``round_half_up(ratio * n_c)`` items go to train,
    clamped to ``[1, n_c - 1]``."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    train_idx, val_idx = [], []
    for c, name in enumerate(ds.class_names):
        members = np.flatnonzero(labels == c)
        n = len(members)
        if n == 0:
            continue
        if n < 2:
            raise ClassTooSmall(f"class {name!r} has {n} item(s); at least 2 are needed to split")
        n_train = min(max(math.floor(ratio * n + 0.5), 1), n - 1)
        perm = members[rng.permutation(n)]
        train_idx.extend(perm[:n_train].tolist())
        val_idx.extend(perm[n_train:].tolist())
    return ds.subset(sorted(train_idx)), ds.subset(sorted(val_idx))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 2000
    split_ratio: float = 0.8
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ValueError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochRecord]
    best_epoch: int
    best_val_accuracy: float


def accuracy_of(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise EmptyDataset("cannot measure accuracy on an empty set")
    pred = model.predict_logits(x).argmax(axis=1)
    return float(np.mean(pred == y))


def train(
    ds: LabeledDataset,
    model: Model,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Adam training with best-validation-accuracy checkpoint selection.

    ``model`` is trained in place; the returned checkpoint holds a copy of the
    parameters from the best epoch (earliest on ties).
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if model.spec.n_classes != len(ds.class_names):
        raise ShapeMismatch(
            f"model has {model.spec.n_classes} outputs, dataset has {len(ds.class_names)} classes"
        )
    train_ds, val_ds = stratified_split(ds, cfg.split_ratio, cfg.seed)
    x_tr, y_tr = train_ds.features(model.dtype), train_ds.labels
    x_val, y_val = val_ds.features(model.dtype), val_ds.labels

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = AdamState()
    history: list[EpochRecord] = []
    best_acc, best_epoch, best_state = -1.0, 0, None
    order = np.arange(len(y_tr))
    for epoch in range(1, cfg.epochs + 1):
        if cfg.shuffle_each_epoch:
            order = rng.permutation(len(y_tr))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = model.forward(x_tr[idx], "train")
            loss, dlogits = softmax_cross_entropy(logits, y_tr[idx])
            grads = model.backward(dlogits.astype(model.dtype, copy=False), cache)
            adam_step(params, grads, opt, cfg.lr)
            total += loss * len(idx)
            seen += len(idx)
        val_acc = accuracy_of(model, x_val, y_val)
        rec = EpochRecord(epoch, total / seen, val_acc)
        history.append(rec)
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_state = {k: v.copy() for k, v in model.state().items()}
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, rec.train_loss, val_acc)

    best = model.copy()
    best.load_state(best_state)
    meta = {
        "class_names": list(ds.class_names),
        "best_epoch": best_epoch,
        "best_val_accuracy": best_acc,
        "train_config": {
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "split_ratio": cfg.split_ratio,
            "seed": cfg.seed,
            "shuffle_each_epoch": cfg.shuffle_each_epoch,
        },
    }
    digest = ds.items[0][0].config_digest
    return TrainResult(Checkpoint(best, digest, meta), history, best_epoch, best_acc)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    def normalized(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def render(self, class_names: Sequence[str]) -> str:
        norm = self.normalized()
        width = max(8, max(len(n) for n in class_names) + 1)
        lines = [" " * width + "".join(f"{n[:6]:>7}" for n in class_names)]
        for name, row in zip(class_names, norm):
            lines.append(f"{name:<{width}}" + "".join(f"{v:7.2f}" for v in row))
        return "\n".join(lines)


def evaluate(model: Model, ds: LabeledDataset) -> tuple[float, ConfusionMatrix]:
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    y = ds.labels
    pred = model.predict_logits(ds.features(model.dtype)).argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(y, pred, len(ds.class_names))
    return float(np.mean(pred == y)), cm


def evaluation_report(accuracy: float, cm: ConfusionMatrix, class_names: Sequence[str]) -> dict:
    return {
        "accuracy": accuracy,
        "class_names": list(class_names),
        "counts": cm.counts.tolist(),
        "normalized": cm.normalized().tolist(),
    }


@dataclass
class Prediction:
    class_id: int
    probs: np.ndarray
    is_contact: bool
    class_name: str | None = field(default=None)


def decide(probs: np.ndarray, blank_id: int, tau: float) -> tuple[int, bool]:
    class_id = int(np.argmax(probs))
    return class_id, bool(class_id != blank_id and 1.0 - probs[blank_id] >= tau)


def predict(
    model: Model,
    spec: MelSpectrogram | np.ndarray,
    blank_id: int = 0,
    tau: float = DEFAULT_TAU,
    class_names: Sequence[str] | None = None,
) -> Prediction:
    data = spec.data if isinstance(spec, MelSpectrogram) else np.asarray(spec)
    if data.ndim != 2:
        raise ShapeMismatch(f"expected an (n_mels, n_frames) spectrogram, got {data.shape}")
    logits = model.forward(data[None, None].astype(model.dtype), "eval")[0][0]
    probs = softmax(logits.astype(np.float64))
    class_id, contact = decide(probs, blank_id, tau)
    name = class_names[class_id] if class_names is not None else None
    return Prediction(class_id, probs, contact, name)


def rejection_sweep(
    model: Model, ds: LabeledDataset, taus: Iterable[float]
) -> list[tuple[float, float, float]]:
    """(tau, contact recall, false-contact rate) for each threshold.

    Recall is measured on non-blank windows, the false-contact rate on blank
    windows.
    """
    probs = softmax(model.predict_logits(ds.features(model.dtype)).astype(np.float64))
    y = ds.labels
    b = ds.blank_id
    argmax = probs.argmax(axis=1)
    contact_mass = 1.0 - probs[:, b]
    is_blank = y == b
    out = []
    for tau in taus:
        contact = (argmax != b) & (contact_mass >= tau)
        recall = float(contact[~is_blank].mean()) if (~is_blank).any() else float("nan")
        false_rate = float(contact[is_blank].mean()) if is_blank.any() else float("nan")
        out.append((float(tau), recall, false_rate))
    return out
