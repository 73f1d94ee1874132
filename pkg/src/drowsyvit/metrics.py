"""Classification metrics: confusion counts, precision/recall/F1, hamming
loss, binary cross-entropy, and the scenario-by-time breakdown table.

"drowsy" is the positive class throughout. For the binary single-label
setting here, hamming loss is exactly 1 - accuracy. Zero-denominator rates
are reported as 0.0 and flagged rather than raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import LABELS, Sample
from .errors import ContractError

PROB_CLIP = 1e-7

_TABLE_SCENARIOS = ("bare_face", "spectacles", "sunglasses")
_TABLE_TIMES = ("day", "evening", "night")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with drowsy as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    """Per-class and aggregate rates, plus the raw confusion counts."""

    confusion: ConfusionMatrix
    per_class: dict[str, ClassMetrics]
    accuracy: float
    hamming_loss: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    cross_entropy: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "accuracy": self.accuracy,
            "hamming_loss": self.hamming_loss,
            "macro": {"precision": self.macro_precision,
                      "recall": self.macro_recall, "f1": self.macro_f1},
            "weighted": {"precision": self.weighted_precision,
                         "recall": self.weighted_recall, "f1": self.weighted_f1},
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall,
                       "f1": m.f1, "support": m.support}
                for name, m in self.per_class.items()
            },
        }
        if self.cross_entropy is not None:
            out["cross_entropy"] = self.cross_entropy
        if self.flags:
            out["flags"] = list(self.flags)
        return out


def _as_label_array(values) -> np.ndarray:
    """Accept label names or {0, 1} indices; return int indices."""
    arr = np.asarray(values)
    if arr.dtype.kind in ("U", "S", "O"):
        index = {name: i for i, name in enumerate(LABELS)}
        try:
            return np.array([index[str(v)] for v in arr], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"unknown label {exc.args[0]!r}") from exc
    return arr.astype(np.int64)


def binary_cross_entropy(probabilities, labels) -> float:
    """Mean -log p(true class); probability pairs clipped to [1e-7, 1-1e-7]."""
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = _as_label_array(labels)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ContractError(f"probabilities must be (n, 2), got {probs.shape}")
    if probs.shape[0] != truth.shape[0]:
        raise ContractError(
            f"{probs.shape[0]} probability pairs vs {truth.shape[0]} labels"
        )
    if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-5):
        raise ContractError("probability pairs must each sum to 1")
    clipped = np.clip(probs, PROB_CLIP, 1.0 - PROB_CLIP)
    picked = clipped[np.arange(truth.size), truth]
    return float(-np.log(picked).mean())


def confusion_from_predictions(predictions, labels) -> ConfusionMatrix:
    pred = _as_label_array(predictions)
    truth = _as_label_array(labels)
    if pred.shape != truth.shape:
        raise ContractError(f"{pred.shape} predictions vs {truth.shape} labels")
    pos = 0  # index of "drowsy"
    return ConfusionMatrix(
        tp=int(np.sum((pred == pos) & (truth == pos))),
        fp=int(np.sum((pred == pos) & (truth != pos))),
        fn=int(np.sum((pred != pos) & (truth == pos))),
        tn=int(np.sum((pred != pos) & (truth != pos))),
    )


def _rate(numerator: int, denominator: int, flags: list[str], name: str) -> float:
    if denominator == 0:
        flags.append(f"{name}: zero denominator, reported as 0")
        return 0.0
    return numerator / denominator


def evaluate_metrics(predictions, labels, probabilities=None) -> MetricsReport:
    """Full report for aligned prediction/label lists.

    predictions/labels hold class names or indices; probabilities, when
    given, are (n, 2) rows used for the cross-entropy figure.
    """
    pred = _as_label_array(predictions)
    truth = _as_label_array(labels)
    if pred.size == 0:
        raise ContractError("evaluate_metrics on empty input")
    if pred.shape != truth.shape:
        raise ContractError(f"{pred.shape} predictions vs {truth.shape} labels")

    cm = confusion_from_predictions(pred, truth)
    flags: list[str] = []

    per_class: dict[str, ClassMetrics] = {}
    # drowsy treats tp as positive; vigilant swaps the roles
    layout = {
        "drowsy": (cm.tp, cm.fp, cm.fn, cm.tp + cm.fn),
        "vigilant": (cm.tn, cm.fn, cm.fp, cm.tn + cm.fp),
    }
    for name, (tp, fp, fn, support) in layout.items():
        precision = _rate(tp, tp + fp, flags, f"precision[{name}]")
        recall = _rate(tp, tp + fn, flags, f"recall[{name}]")
        if precision + recall == 0:
            flags.append(f"f1[{name}]: zero denominator, reported as 0")
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class[name] = ClassMetrics(precision, recall, f1, support)

    supports = np.array([per_class[n].support for n in LABELS], dtype=np.float64)
    weights = supports / supports.sum()

    def agg(attr):
        vals = np.array([getattr(per_class[n], attr) for n in LABELS])
        return float(vals.mean()), float((vals * weights).sum())

    macro_p, weighted_p = agg("precision")
    macro_r, weighted_r = agg("recall")
    macro_f, weighted_f = agg("f1")

    accuracy = cm.accuracy
    report = MetricsReport(
        confusion=cm,
        per_class=per_class,
        accuracy=accuracy,
        hamming_loss=1.0 - accuracy,
        macro_precision=macro_p, macro_recall=macro_r, macro_f1=macro_f,
        weighted_precision=weighted_p, weighted_recall=weighted_r,
        weighted_f1=weighted_f,
        flags=flags,
    )
    if probabilities is not None:
        report.cross_entropy = binary_cross_entropy(probabilities, truth)
    return report


# ---------------------------------------------------------------------------
# scenario x time breakdown
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioCell:
    drowsy_f1: float
    vigilant_f1: float
    accuracy: float
    count: int


@dataclass
class ScenarioTable:
    """Rows: scenarios (+ optional 'other'); columns: times (+ 'unknown')."""

    scenarios: tuple[str, ...]
    times: tuple[str, ...]
    cells: dict[tuple[str, str], ScenarioCell]

    def cell(self, scenario: str, time: str) -> ScenarioCell | None:
        return self.cells.get((scenario, time))

    def column_average(self, time: str) -> ScenarioCell | None:
        """Mean over populated scenario cells of one time column."""
        filled = [self.cells[(s, time)] for s in self.scenarios
                  if (s, time) in self.cells]
        if not filled:
            return None
        return ScenarioCell(
            drowsy_f1=float(np.mean([c.drowsy_f1 for c in filled])),
            vigilant_f1=float(np.mean([c.vigilant_f1 for c in filled])),
            accuracy=float(np.mean([c.accuracy for c in filled])),
            count=sum(c.count for c in filled),
        )

    def row_average(self, scenario: str) -> float | None:
        """Mean accuracy over populated time cells of one scenario row."""
        filled = [self.cells[(scenario, t)] for t in self.times
                  if (scenario, t) in self.cells]
        if not filled:
            return None
        return float(np.mean([c.accuracy for c in filled]))


def scenario_breakdown(predictions, samples: list[Sample]) -> ScenarioTable:
    """Per-(scenario, time) F-scores, cell accuracy = mean of the two F-scores.

    Samples tagged outside the three paper scenarios or times are pooled
    into extra 'other'/'unknown' rows or columns, which appear only when
    such samples exist. Cells with no samples are absent (rendered "-").
    """
    pred = _as_label_array(predictions)
    if pred.shape != (len(samples),):
        raise ContractError(f"{pred.size} predictions vs {len(samples)} samples")

    groups: dict[tuple[str, str], list[int]] = {}
    for i, sample in enumerate(samples):
        scenario = sample.scenario if sample.scenario in _TABLE_SCENARIOS else "other"
        time = sample.time if sample.time in _TABLE_TIMES else "unknown"
        groups.setdefault((scenario, time), []).append(i)

    scenarios = _TABLE_SCENARIOS + (("other",) if any(
        key[0] == "other" for key in groups) else ())
    times = _TABLE_TIMES + (("unknown",) if any(
        key[1] == "unknown" for key in groups) else ())

    truth = _as_label_array([s.label for s in samples])
    cells: dict[tuple[str, str], ScenarioCell] = {}
    for key, indices in groups.items():
        idx = np.array(indices)
        sub = evaluate_metrics(pred[idx], truth[idx])
        drowsy_f1 = sub.per_class["drowsy"].f1
        vigilant_f1 = sub.per_class["vigilant"].f1
        cells[key] = ScenarioCell(
            drowsy_f1=drowsy_f1,
            vigilant_f1=vigilant_f1,
            accuracy=(drowsy_f1 + vigilant_f1) / 2.0,
            count=len(indices),
        )
    return ScenarioTable(scenarios=scenarios, times=times, cells=cells)
