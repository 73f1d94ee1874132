"""Face-detector post-processing geometry.

The convolutional detector itself is external; this module consumes its
box proposals (from files or fixtures) and implements the surrounding
geometry: grid-cell responsibility, the confidence score as the product of
responsibility and IOU, non-maximum suppression, and ROI cropping.

Boxes are center-format and normalized: cx, cy in [0, 1], w, h in (0, 1].
Pixel conversion clips to the frame bounds.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, ParseError
from .image import ImageFrame


@dataclass(frozen=True)
class BoundingBox:
    """Normalized center-format box with a detector confidence."""

    cx: float
    cy: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ContractError(f"box center ({self.cx}, {self.cy}) outside [0, 1]^2")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ContractError(f"box extents ({self.w}, {self.h}) outside (0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ContractError(f"confidence {self.confidence} outside [0, 1]")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) in normalized coordinates, not clipped."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def to_pixels(self, width: int, height: int) -> tuple[int, int, int, int]:
        """(x1, y1, x2, y2) pixel box, clipped to the frame bounds."""
        x1, y1, x2, y2 = self.corners()
        px1 = max(0, int(round(x1 * width)))
        py1 = max(0, int(round(y1 * height)))
        px2 = min(width, int(round(x2 * width)))
        py2 = min(height, int(round(y2 * height)))
        return px1, py1, px2, py2


@dataclass(frozen=True)
class GridSpec:
    """A x A cell grid laid over the unit square."""

    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ContractError(f"grid side must be >= 1, got {self.side}")


@dataclass(frozen=True)
class DetectionTarget:
    """Scoring record for one predicted box against one ground truth."""

    cell: tuple[int, int]
    responsible: int
    iou_with_truth: float
    confidence: float

    def __post_init__(self):
        if self.responsible not in (0, 1):
            raise ContractError("responsibility flag must be 0 or 1")
        if self.confidence != self.responsible * self.iou_with_truth:
            raise ContractError("confidence must equal responsibility * IOU")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; symmetric, 0 for disjoint boxes."""
    area_a = a.w * a.h
    area_b = b.w * b.h
    if area_a <= 0 or area_b <= 0:
        raise ContractError("iou of a zero-area box")
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def grid_confidence(responsible: int, iou_value: float) -> float:
    """Confidence of a predicted box: responsibility times IOU with truth."""
    if responsible not in (0, 1):
        raise ContractError(f"responsibility must be 0 or 1, got {responsible}")
    if not 0.0 <= iou_value <= 1.0:
        raise ContractError(f"IOU {iou_value} outside [0, 1]")
    return responsible * iou_value


def assign_responsible_cell(truth: BoundingBox, grid: GridSpec) -> tuple[int, int]:
    """Cell (row, col) containing the truth center; 1.0 clamps into the last cell."""
    row = min(int(truth.cy * grid.side), grid.side - 1)
    col = min(int(truth.cx * grid.side), grid.side - 1)
    return row, col


def detection_target(truth: BoundingBox, predicted: BoundingBox, grid: GridSpec) -> DetectionTarget:
    """Score a prediction: responsible iff it falls in the truth's cell."""
    truth_cell = assign_responsible_cell(truth, grid)
    predicted_cell = assign_responsible_cell(predicted, grid)
    responsible = 1 if predicted_cell == truth_cell else 0
    overlap = iou(truth, predicted)
    return DetectionTarget(
        cell=predicted_cell,
        responsible=responsible,
        iou_with_truth=overlap,
        confidence=grid_confidence(responsible, overlap),
    )


def non_max_suppression(boxes: list[BoundingBox], iou_threshold: float = 0.45,
                        conf_threshold: float = 0.75) -> list[BoundingBox]:
    """Greedy NMS: drop low-confidence boxes, then suppress overlaps.

    Candidates are visited in descending confidence (ties keep input
    order); a candidate is dropped when it overlaps an already kept box
    with IOU strictly above the threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0 or not 0.0 <= conf_threshold <= 1.0:
        raise ContractError("NMS thresholds must lie in [0, 1]")
    candidates = [b for b in boxes if b.confidence >= conf_threshold]
    candidates.sort(key=lambda b: -b.confidence)
    kept: list[BoundingBox] = []
    for box in candidates:
        if all(iou(box, k) <= iou_threshold for k in kept):
            kept.append(box)
    return kept


def crop_roi(frame: ImageFrame, box: BoundingBox, margin: float = 0.10) -> ImageFrame:
    """Crop the box from the frame, expanded by margin per side, clipped.

    The margin is a fraction of the box extent added on each of the four
    sides before clipping to the frame.
    """
    if margin < 0:
        raise ContractError("crop margin must be >= 0")
    x1, y1, x2, y2 = box.corners()
    mx = margin * box.w
    my = margin * box.h
    px1 = max(0, int(round((x1 - mx) * frame.width)))
    py1 = max(0, int(round((y1 - my) * frame.height)))
    px2 = min(frame.width, int(round((x2 + mx) * frame.width)))
    py2 = min(frame.height, int(round((y2 + my) * frame.height)))
    if px2 <= px1 or py2 <= py1:
        raise ContractError(
            f"crop degenerates to {px2 - px1} x {py2 - py1} pixels after clipping"
        )
    return ImageFrame(frame.pixels[py1:py2, px1:px2, :].copy())


def parse_detections(path) -> list[tuple[str, BoundingBox]]:
    """Read 'image_id cx cy w h confidence' lines into (id, box) pairs.

    Blank lines are skipped. Malformed lines raise ParseError naming the
    1-based line number; out-of-range values surface the BoundingBox
    contract message with the same context.
    """
    results: list[tuple[str, BoundingBox]] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise ParseError(
                f"{path}:{lineno}: expected 6 fields (image_id cx cy w h confidence), "
                f"got {len(fields)}"
            )
        image_id = fields[0]
        try:
            cx, cy, w, h, conf = (float(v) for v in fields[1:])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric field: {exc}") from exc
        try:
            box = BoundingBox(cx=cx, cy=cy, w=w, h=h, confidence=conf)
        except ContractError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        results.append((image_id, box))
    return results
