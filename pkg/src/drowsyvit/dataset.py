"""Dataset ingestion, frame sampling, and split generation.

Expected layout:

    root/
      drowsy/*.png
      vigilant/*.png
      meta.csv        optional, header: path,subject,scenario,time

Labels come from the class directory names. Tags come from meta.csv when
present; otherwise scenario falls back to "other" and time to "unknown".
Per-channel normalization statistics are computed on the [0, 1] scale over
every ingested pixel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, IngestionError
from .image import read_png
from .rng import SeededGenerator

LABELS = ("drowsy", "vigilant")
SCENARIOS = ("bare_face", "spectacles", "sunglasses", "other")
TIMES = ("day", "evening", "night", "unknown")

_IMAGE_SUFFIXES = (".png",)


@dataclass(frozen=True)
class Sample:
    """One labeled frame with optional scenario metadata."""

    path: str
    label: str
    subject: str = "unknown"
    scenario: str = "other"
    time: str = "unknown"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"label must be one of {LABELS}, got '{self.label}'")
        if self.scenario not in SCENARIOS:
            raise ContractError(
                f"scenario must be one of {SCENARIOS}, got '{self.scenario}'"
            )
        if self.time not in TIMES:
            raise ContractError(f"time must be one of {TIMES}, got '{self.time}'")


@dataclass
class DatasetManifest:
    """Immutable-once-built record of a dataset directory."""

    root: str
    samples: list[Sample]
    class_counts: dict[str, int]
    channel_mean: tuple[float, ...]
    channel_std: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.samples)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "label", "subject", "scenario", "time"])
            for s in self.samples:
                writer.writerow([s.path, s.label, s.subject, s.scenario, s.time])


@dataclass(frozen=True)
class SplitSpec:
    """Fractions and seed controlling train/validation splitting."""

    train_fraction: float
    validation_fraction: float
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if self.train_fraction <= 0 or self.validation_fraction <= 0:
            raise ContractError("split fractions must be positive")
        if self.train_fraction + self.validation_fraction > 1.0 + 1e-9:
            raise ContractError("split fractions must sum to at most 1")


def _read_meta(root: Path) -> dict[str, tuple[str, str, str]]:
    meta_path = root / "meta.csv"
    tags: dict[str, tuple[str, str, str]] = {}
    if not meta_path.exists():
        return tags
    with open(meta_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"path", "subject", "scenario", "time"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise IngestionError(
                f"{meta_path}: header must contain {sorted(required)}"
            )
        for row in reader:
            scenario = row["scenario"].strip() or "other"
            time = row["time"].strip() or "unknown"
            if scenario not in SCENARIOS:
                raise IngestionError(
                    f"{meta_path}: scenario '{scenario}' not in {SCENARIOS}"
                )
            if time not in TIMES:
                raise IngestionError(f"{meta_path}: time '{time}' not in {TIMES}")
            tags[row["path"].strip()] = (row["subject"].strip() or "unknown",
                                         scenario, time)
    return tags


def ingest_directory(root) -> DatasetManifest:
    """Scan class directories, decode every image, compute channel stats."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset root {root} is not a directory")
    tags = _read_meta(root)

    samples: list[Sample] = []
    counts = {label: 0 for label in LABELS}
    pixel_sum = None
    pixel_sq = None
    pixel_count = 0
    channels = None

    for label in LABELS:
        class_dir = root / label
        files = sorted(p for p in class_dir.glob("*")
                       if p.suffix.lower() in _IMAGE_SUFFIXES) if class_dir.is_dir() else []
        if not files:
            raise IngestionError(
                f"class directory '{label}' is missing or empty under {root}"
            )
        for path in files:
            frame = read_png(path)  # raises IngestionError naming the path
            if channels is None:
                channels = frame.channels
                pixel_sum = np.zeros(channels)
                pixel_sq = np.zeros(channels)
            elif frame.channels != channels:
                raise IngestionError(
                    f"{path}: {frame.channels} channels, dataset started with {channels}"
                )
            unit = frame.pixels / 255.0
            pixel_sum += unit.sum(axis=(0, 1))
            pixel_sq += (unit ** 2).sum(axis=(0, 1))
            pixel_count += frame.height * frame.width

            rel = str(path.relative_to(root))
            subject, scenario, time = tags.get(rel, ("unknown", "other", "unknown"))
            samples.append(Sample(path=str(path), label=label, subject=subject,
                                  scenario=scenario, time=time))
            counts[label] += 1

    mean = pixel_sum / pixel_count
    var = pixel_sq / pixel_count - mean ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    return DatasetManifest(
        root=str(root),
        samples=samples,
        class_counts=counts,
        channel_mean=tuple(float(m) for m in mean),
        channel_std=tuple(float(s) for s in std),
    )


def stride_select(paths: list, stride: int, phase: int) -> list:
    """Every stride-th entry starting at phase; the arithmetic core."""
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if not 0 <= phase < stride:
        raise ContractError(f"phase {phase} outside [0, {stride})")
    return paths[phase::stride]


def sample_frames(frame_dir, stride: int, seed: int) -> list[str]:
    """Deterministic stride-k frame selection with a seeded phase offset."""
    frame_dir = Path(frame_dir)
    paths = sorted(str(p) for p in frame_dir.glob("*")
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise IngestionError(f"no frames found under {frame_dir}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    phase = SeededGenerator(seed).integers(stride)
    return stride_select(paths, stride, phase)


def _take_counts(total: int, spec: SplitSpec) -> tuple[int, int]:
    n_train = int(round(spec.train_fraction * total))
    if abs(spec.train_fraction + spec.validation_fraction - 1.0) <= 1e-9:
        n_val = total - n_train
    else:
        n_val = int(round(spec.validation_fraction * total))
    return n_train, n_val


def make_splits(manifest: DatasetManifest | list[Sample],
                spec: SplitSpec,
                subject_disjoint: bool = False) -> tuple[list[Sample], list[Sample]]:
    """Seeded disjoint train/validation split, stratified by label by default.

    subject_disjoint assigns whole subjects to a side (greedy over a
    shuffled subject order); stratification then holds only approximately.
    """
    samples = manifest.samples if isinstance(manifest, DatasetManifest) else list(manifest)
    if not samples:
        raise ContractError("cannot split an empty sample list")
    rng = SeededGenerator(spec.seed)

    if subject_disjoint:
        subjects = sorted({s.subject for s in samples})
        order = rng.shuffle(subjects)
        target = spec.train_fraction * len(samples)
        train_subjects: set[str] = set()
        assigned = 0
        for subject in order:
            if assigned >= target:
                break
            train_subjects.add(subject)
            assigned += sum(1 for s in samples if s.subject == subject)
        train = [s for s in samples if s.subject in train_subjects]
        rest = [s for s in samples if s.subject not in train_subjects]
        _, n_val = _take_counts(len(samples), spec)
        return train, rest[:n_val] if n_val < len(rest) else rest

    if spec.stratified:
        train: list[Sample] = []
        val: list[Sample] = []
        for label in LABELS:
            group = [s for s in samples if s.label == label]
            if not group:
                continue
            n_train, n_val = _take_counts(len(group), spec)
            if n_train == 0 or n_val == 0:
                raise ContractError(
                    f"class '{label}' has {len(group)} samples, too few for a "
                    f"{spec.train_fraction:.0%}/{spec.validation_fraction:.0%} split"
                )
            shuffled = rng.shuffle(group)
            train.extend(shuffled[:n_train])
            val.extend(shuffled[n_train:n_train + n_val])
        return train, val

    shuffled = rng.shuffle(samples)
    n_train, n_val = _take_counts(len(samples), spec)
    return shuffled[:n_train], shuffled[n_train:n_train + n_val]
