"""Lesion bounding boxes from lesion masks, and box geometry.

Boxes use the half-open pixel convention ``[x_min, x_max) x [y_min, y_max)``
so ``x_max - x_min`` is the pixel width.  Tools that emit inclusive
corners (IDRiD-style) need ``x_max + 1`` / ``y_max + 1`` on import.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigError
from .morph import BinaryMask, connected_components

DEFAULT_MIN_AREA = 5


@dataclass(frozen=True)
class LesionBox:
    lesion_type: str
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    area: int = 0
    source_component: int = 0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ConfigError(f"degenerate box {self.coords}")

    @property
    def coords(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def box_area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        """Centre in pixel-index space: the middle of the covered pixel indices."""
        return ((self.x_min + self.x_max - 1) / 2, (self.y_min + self.y_max - 1) / 2)

    def contains_point(self, x: float, y: float) -> bool:
        """True if (x, y) lies within the span of covered pixel indices."""
        return self.x_min <= x <= self.x_max - 1 and self.y_min <= y <= self.y_max - 1

    def to_record(self, image_id: str = "") -> dict:
        rec = {"image_id": image_id} if image_id else {}
        rec.update(asdict(self))
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "LesionBox":
        fields = ("lesion_type", "x_min", "y_min", "x_max", "y_max", "area", "source_component")
        return cls(**{k: rec[k] for k in fields if k in rec})


def extract_boxes(lesion_mask: BinaryMask, lesion_type: str,
                  min_area: int = DEFAULT_MIN_AREA) -> list[LesionBox]:
    """One box per 8-connected component of at least ``min_area`` pixels, ordered by (y_min, x_min)."""
    if min_area < 1:
        raise ConfigError(f"min_area must be >= 1, got {min_area}")
    lab = connected_components(lesion_mask, 8)
    boxes = [
        LesionBox(lesion_type, x0, y0, x1 + 1, y1 + 1, size, k)
        for k, ((x0, y0, x1, y1), size) in enumerate(zip(lab.boxes, lab.sizes), start=1)
        if size >= min_area
    ]
    boxes.sort(key=lambda b: (b.y_min, b.x_min, b.source_component))
    return boxes


def iou(a, b) -> float:
    """Intersection over union of two half-open boxes (LesionBox or 4-tuples)."""
    ax0, ay0, ax1, ay1 = a.coords if isinstance(a, LesionBox) else a
    bx0, by0, bx1, by1 = b.coords if isinstance(b, LesionBox) else b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def center_in(pred, truth) -> bool:
    """Whether the centre of ``pred`` falls inside ``truth`` (directional)."""
    pred = pred if isinstance(pred, LesionBox) else LesionBox("", *pred)
    truth = truth if isinstance(truth, LesionBox) else LesionBox("", *truth)
    return truth.contains_point(*pred.center)
