"""Loss, optimizer, and the training loop.

The optimizer is adaptive-moment with decoupled weight decay (the recipe
lists weight decay as its own hyperparameter, so decay multiplies the
weights directly instead of entering the gradient). The loss is 2-logit
softmax cross-entropy. Runs are deterministic under a fixed seed: data
order, augmentation draws, and parameter initialization all derive from
the run seed through separate streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import AugmentationPolicy, apply_augmentation
from .checkpoint import save_checkpoint
from .dataset import DatasetManifest, LABELS, Sample, SplitSpec, make_splits
from .errors import ContractError, NonFiniteError, TrainingError
from .image import ImageFrame, normalize_frame, read_png, resize_bilinear, standardize_frame
from .model import VitConfig, VitModel, patchify_stack
from .rng import SeededGenerator
from .tensor import Tape, Tensor, backward


@dataclass
class OptimizerState:
    """Adaptive-moment buffers plus the decoupled decay settings."""

    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState) -> None:
    """One bias-corrected update; decay applies directly to the weights."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        if g.shape != param.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' {param.data.shape}"
            )
        m = state.first_moment.setdefault(name, np.zeros_like(param.data, dtype=np.float64))
        v = state.second_moment.setdefault(name, np.zeros_like(param.data, dtype=np.float64))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        param.data = param.data - (state.learning_rate * update
                                   + state.learning_rate * state.weight_decay * param.data
                                   ).astype(param.data.dtype)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainRun:
    """Learning curves and the selected checkpoint of one training run."""

    epochs: list[EpochStats]
    best_epoch: int
    best_val_accuracy: float
    checkpoint_path: str | None
    seed: int
    config: VitConfig


def preprocess_frame(raw: ImageFrame, config: VitConfig) -> ImageFrame:
    """Shared eval/infer pipeline: scale to [0,1], resize, standardize."""
    frame = normalize_frame(raw, 0.0, 1.0)
    frame = resize_bilinear(frame, config.resized)
    if config.channel_mean is not None and config.channel_std is not None:
        frame = standardize_frame(frame, config.channel_mean, config.channel_std)
    return frame


def _load_unit_resized(samples: list[Sample], config: VitConfig) -> list[ImageFrame]:
    return [
        resize_bilinear(normalize_frame(read_png(s.path), 0.0, 1.0), config.resized)
        for s in samples
    ]


def _labels_array(samples: list[Sample]) -> np.ndarray:
    index = {name: i for i, name in enumerate(LABELS)}
    return np.array([index[s.label] for s in samples], dtype=np.int64)


def _channel_stats(frames: list[ImageFrame]) -> tuple[tuple[float, ...], tuple[float, ...]]:
    stacked = np.concatenate([f.pixels.reshape(-1, f.channels) for f in frames])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return tuple(float(m) for m in mean), tuple(float(s) for s in std)


def _standardize_all(frames: list[ImageFrame], config: VitConfig) -> list[ImageFrame]:
    if config.channel_mean is None or config.channel_std is None:
        return frames
    return [standardize_frame(f, config.channel_mean, config.channel_std) for f in frames]


def _evaluate_batches(model: VitModel, frames: list[ImageFrame],
                      labels: np.ndarray, batch_size: int) -> tuple[float, float]:
    """Mean loss and accuracy without gradient tracking."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(frames), batch_size):
        chunk = frames[start:start + batch_size]
        chunk_labels = labels[start:start + batch_size]
        rows = patchify_stack(chunk, model.config.patch_size)
        logits = model.forward(Tensor(rows))
        loss = T.softmax_cross_entropy(logits, chunk_labels)
        total_loss += loss.item() * len(chunk)
        correct += int((logits.data.argmax(axis=1) == chunk_labels).sum())
    return total_loss / len(frames), correct / len(frames)


def train(manifest: DatasetManifest | list[Sample],
          config: VitConfig,
          seed: int = 0,
          split: SplitSpec | None = None,
          policy: AugmentationPolicy | None = None,
          augment: bool = True,
          standardize: bool = False,
          subject_disjoint: bool = False,
          out_dir=None,
          checkpoint_name: str = "checkpoint.vgvt") -> TrainRun:
    """Train on the manifest's train split, validate per epoch, keep the best.

    Augmentation (train split only) and batch order derive from the seed;
    with standardize=True the train split's channel statistics are frozen
    into the model config so checkpoints carry their own preprocessing.
    Divergence (non-finite loss or gradient) aborts with a TrainingError.
    """
    split = split or SplitSpec(0.8, 0.2, seed=seed)
    train_samples, val_samples = make_splits(manifest, split,
                                             subject_disjoint=subject_disjoint)
    if not train_samples or not val_samples:
        raise ContractError("training requires non-empty train and validation splits")

    train_frames = _load_unit_resized(train_samples, config)
    val_frames = _load_unit_resized(val_samples, config)
    if standardize:
        mean, std = _channel_stats(train_frames)
        config = replace(config, channel_mean=mean, channel_std=std)
    train_labels = _labels_array(train_samples)
    val_labels = _labels_array(val_samples)

    model = VitModel.initialize(config, SeededGenerator(seed, stream=1))
    params = model.named_parameters()
    state = OptimizerState(learning_rate=config.learning_rate,
                           weight_decay=config.weight_decay)
    order_rng = SeededGenerator(seed, stream=2)
    augment_rng = SeededGenerator(seed, stream=3)
    policy = policy or AugmentationPolicy()

    curves: list[EpochStats] = []
    best_epoch = -1
    best_val_accuracy = -1.0
    best_params: dict[str, np.ndarray] | None = None

    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train_frames))
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            frames = []
            for i in batch_idx:
                frame = train_frames[i]
                if augment:
                    sample_rng = augment_rng.derive(epoch).derive(int(i))
                    frame = apply_augmentation(frame, policy, sample_rng)
                frames.append(frame)
            frames = _standardize_all(frames, config)
            batch_labels = train_labels[batch_idx]
            rows = patchify_stack(frames, config.patch_size)

            for p in params.values():
                p.zero_grad()
            try:
                with Tape() as tape:
                    logits = model.forward(Tensor(rows), train=True,
                                           rng=augment_rng if config.dropout_rate else None)
                    loss = T.softmax_cross_entropy(logits, batch_labels)
                backward(loss, tape)
            except NonFiniteError as exc:
                raise TrainingError(
                    f"training diverged at epoch {epoch} step {state.step_count}: {exc}"
                ) from exc
            epoch_loss += loss.item() * len(batch_idx)
            epoch_correct += int((logits.data.argmax(axis=1) == batch_labels).sum())
            grads = {name: p.grad for name, p in params.items() if p.grad is not None}
            adamw_step(params, grads, state)

        val_inputs = _standardize_all(val_frames, config)
        val_loss, val_accuracy = _evaluate_batches(model, val_inputs, val_labels,
                                                   config.batch_size)
        curves.append(EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / len(train_frames),
            train_accuracy=epoch_correct / len(train_frames),
            val_loss=val_loss,
            val_accuracy=val_accuracy,
        ))
        if val_accuracy > best_val_accuracy:
            best_val_accuracy = val_accuracy
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}

    if best_params is not None:
        for name, p in params.items():
            p.data = best_params[name]

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = str(Path(out_dir) / checkpoint_name)
        save_checkpoint(model, checkpoint_path)

    return TrainRun(
        epochs=curves,
        best_epoch=best_epoch,
        best_val_accuracy=best_val_accuracy,
        checkpoint_path=checkpoint_path,
        seed=seed,
        config=config,
    )


def predict_samples(model: VitModel, samples: list[Sample],
                    batch_size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(predicted indices, probability rows) for a sample list."""
    config = model.config
    batch = batch_size or config.batch_size
    frames = [preprocess_frame(read_png(s.path), config) for s in samples]
    probs = np.zeros((len(frames), config.num_classes))
    for start in range(0, len(frames), batch):
        chunk = frames[start:start + batch]
        rows = patchify_stack(chunk, config.patch_size)
        logits = model.forward(Tensor(rows))
        probs[start:start + batch] = T.softmax_rows(logits).data
    return probs.argmax(axis=1), probs
