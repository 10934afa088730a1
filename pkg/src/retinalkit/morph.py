"""Raster kernels on binary masks.

Everything here is a pure function of its inputs: thinning, exact Euclidean
distance transform, connected-component labeling and box counting.  Rasters
are numpy arrays indexed ``[row, col]``; public coordinates are ``(x, y)``
with ``x`` the column and ``y`` the row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError, DegenerateInputError, ShapeError

__all__ = [
    "BinaryMask",
    "Skeleton",
    "ComponentLabeling",
    "BoxCountSeries",
    "thin",
    "distance_transform",
    "connected_components",
    "box_count",
    "default_scales",
    "neighbor_count",
]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean raster with an optional camera field of view.

    Foreground outside ``fov`` is treated as background by every consumer;
    use :attr:`foreground` rather than :attr:`bits` when measuring.
    """

    bits: np.ndarray
    fov: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(bool)
        if bits.ndim != 2 or 0 in bits.shape:
            raise ShapeError(f"mask must be a non-empty 2-D raster, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if self.fov is not None:
            fov = np.asarray(self.fov).astype(bool)
            if fov.shape != bits.shape:
                raise ShapeError(f"fov shape {fov.shape} does not match mask shape {bits.shape}")
            fov.setflags(write=False)
            object.__setattr__(self, "fov", fov)

    @classmethod
    def from_points(cls, points, shape, fov=None, source=""):
        """Build a mask of ``shape`` (height, width) with the given (x, y) pixels set."""
        bits = np.zeros(shape, dtype=bool)
        pts = np.asarray(list(points), dtype=int).reshape(-1, 2)
        if len(pts):
            bits[pts[:, 1], pts[:, 0]] = True
        return cls(bits, fov, source)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def fov_bits(self) -> np.ndarray:
        """The field of view; the whole frame when none was given."""
        if self.fov is None:
            return np.ones(self.shape, dtype=bool)
        return self.fov

    @property
    def foreground(self) -> np.ndarray:
        if self.fov is None:
            return self.bits
        return self.bits & self.fov

    def with_fov(self, fov) -> "BinaryMask":
        return BinaryMask(self.bits, fov, self.source)


@dataclass(frozen=True, eq=False)
class Skeleton:
    """One-pixel-thick centerline raster derived from a mask."""

    bits: np.ndarray
    source: str = ""

    @property
    def pixels(self) -> set[tuple[int, int]]:
        ys, xs = np.nonzero(self.bits)
        return set(zip(xs.tolist(), ys.tolist()))

    def __len__(self) -> int:
        return int(self.bits.sum())

    def as_mask(self) -> BinaryMask:
        return BinaryMask(self.bits, source=self.source)


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Labels raster plus one inclusive ``(x_min, y_min, x_max, y_max)`` box per component."""

    labels: np.ndarray
    component_count: int
    boxes: list[tuple[int, int, int, int]] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class BoxCountSeries:
    scales: list[int]
    counts: list[int]
    slope: float | None
    r2: float | None


def _validate(mask: BinaryMask) -> BinaryMask:
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(mask)
    return mask


# ---------------------------------------------------------------------------
# neighborhoods

def _neighbors(img: np.ndarray) -> list[np.ndarray]:
    """The 8 neighbors of every pixel, clockwise from north (P2..P9)."""
    p = np.pad(img, 1)
    h, w = img.shape
    offsets = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    return [p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] for dy, dx in offsets]


def neighbor_count(bits: np.ndarray) -> np.ndarray:
    """Number of 8-connected foreground neighbors of each pixel."""
    b = np.asarray(bits, dtype=np.uint8)
    return sum(n.astype(np.int16) for n in _neighbors(b))


def _connectivity_number(P: list[np.ndarray]) -> np.ndarray:
    # Yokoi connectivity number for 8-connected foreground; 1 means removing
    # the pixel keeps the local topology (a "simple" pixel).
    xb = [1 - n for n in P]
    total = 0
    for k in (0, 2, 4, 6):
        total = total + xb[k] - xb[k] * xb[(k + 1) % 8] * xb[(k + 2) % 8]
    return total


# ---------------------------------------------------------------------------
# thinning

def _zhang_suen_pass(img: np.ndarray) -> bool:
    changed = False
    for step in (0, 1):
        P = [n.astype(np.int16) for n in _neighbors(img)]
        p2, p3, p4, p5, p6, p7, p8, p9 = P
        B = sum(P)
        ring = P + [P[0]]
        A = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int16) for i in range(8))
        if step == 0:
            side = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
        else:
            side = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
        # B >= 3 (rather than 2) keeps line tips from being eaten away.
        remove = (img == 1) & (B >= 3) & (B <= 6) & (A == 1) & side
        if remove.any():
            img[remove] = 0
            changed = True
    return changed


def _in_block(padded: np.ndarray, r: int, c: int) -> bool:
    for dy in (-1, 0):
        for dx in (-1, 0):
            if padded[r + dy:r + dy + 2, c + dx:c + dx + 2].all():
                return True
    return False


def _remove_redundant(img: np.ndarray) -> bool:
    """Sequentially delete simple pixels left in staircase corners and 2x2 blocks.

    A staircase corner has exactly two 4-neighbors at a right angle.  Other
    simple pixels (the centre of a T, say) are kept so junctions stay put.
    """
    P = [n.astype(np.int16) for n in _neighbors(img)]
    B = sum(P)
    candidates = (img == 1) & (B >= 2) & (_connectivity_number(P) == 1)
    if not candidates.any():
        return False
    padded = np.pad(img, 1)
    offsets = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    changed = False
    for y, x in np.argwhere(candidates):
        r, c = y + 1, x + 1
        nb = [int(padded[r + dy, c + dx]) for dy, dx in offsets]
        if sum(nb) < 2:
            continue
        axial = nb[0::2]  # N, E, S, W
        corner = sum(axial) == 2 and axial[0] != axial[2]
        if not corner and not _in_block(padded, r, c):
            continue
        xb = [1 - v for v in nb]
        cn = sum(xb[k] - xb[k] * xb[(k + 1) % 8] * xb[(k + 2) % 8] for k in (0, 2, 4, 6))
        if cn == 1:
            padded[r, c] = 0
            changed = True
    if changed:
        img[:] = padded[1:-1, 1:-1]
    return changed


def thin(mask: BinaryMask) -> Skeleton:
    """Iterative parallel thinning to a one-pixel-thick skeleton.

    Runs Zhang-Suen subiterations (with the ``B >= 3`` tip-preserving
    condition) to a fixed point, then strips remaining simple pixels in
    raster order so that no 2x2 block of skeleton pixels survives.  The two
    phases alternate until neither changes anything, which makes the
    operation idempotent.
    """
    mask = _validate(mask)
    img = mask.foreground.astype(np.uint8).copy()
    while True:
        changed = False
        while _zhang_suen_pass(img):
            changed = True
        if _remove_redundant(img):
            changed = True
        if not changed:
            break
    return Skeleton(img.astype(bool), mask.source)


# ---------------------------------------------------------------------------
# distance transform

def distance_transform(mask: BinaryMask) -> np.ndarray:
    """Exact Euclidean distance from each foreground pixel to the nearest background pixel.

    Pixels beyond the frame count as background, so an isolated pixel scores 1.
    """
    mask = _validate(mask)
    fg = np.pad(mask.foreground, 1)
    if not fg.any():
        return np.zeros(mask.shape, dtype=float)
    return ndi.distance_transform_edt(fg)[1:-1, 1:-1]


# ---------------------------------------------------------------------------
# connected components

_STRUCTURES = {
    4: ndi.generate_binary_structure(2, 1),
    8: ndi.generate_binary_structure(2, 2),
}


def connected_components(mask: BinaryMask, connectivity: int = 8) -> ComponentLabeling:
    """Label foreground components; ids follow raster order of each component's first pixel."""
    if connectivity not in _STRUCTURES:
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity!r}")
    mask = _validate(mask)
    labels, count = ndi.label(mask.foreground, structure=_STRUCTURES[connectivity])
    boxes = []
    for sl in ndi.find_objects(labels):
        ys, xs = sl
        boxes.append((xs.start, ys.start, xs.stop - 1, ys.stop - 1))
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:].tolist()
    return ComponentLabeling(labels, int(count), boxes, sizes)


# ---------------------------------------------------------------------------
# box counting

def default_scales(width: int, height: int) -> list[int]:
    """Powers of two from 2 up to min(width, height) / 4."""
    limit = min(width, height) / 4
    scales = []
    eps = 2
    while eps <= limit:
        scales.append(eps)
        eps *= 2
    return scales


def _occupied_cells(fg: np.ndarray, eps: int) -> int:
    h, w = fg.shape
    ph, pw = -h % eps, -w % eps
    grid = np.pad(fg, ((0, ph), (0, pw)))
    cells = grid.reshape((h + ph) // eps, eps, (w + pw) // eps, eps)
    return int(cells.any(axis=(1, 3)).sum())


def box_count(mask: BinaryMask, scales=None) -> BoxCountSeries:
    """Box-counting fractal dimension with an origin-anchored grid.

    ``slope`` is the ordinary least-squares slope of ``log N(eps)`` against
    ``log(1/eps)`` over every supplied scale.
    """
    mask = _validate(mask)
    if scales is None:
        scales = default_scales(mask.width, mask.height)
    scales = [int(s) for s in scales]
    if len(scales) < 4:
        raise ConfigError(f"box counting needs at least 4 scales, got {len(scales)}")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ConfigError(f"scales must be strictly increasing: {scales}")
    limit = min(mask.width, mask.height) / 2
    if scales[0] < 1 or scales[-1] > limit:
        raise ConfigError(f"scales must lie in [1, {limit:g}], got {scales}")
    fg = mask.foreground
    if not fg.any():
        raise DegenerateInputError("box counting needs at least one foreground pixel")

    counts = [_occupied_cells(fg, s) for s in scales]
    # base 2 leaves the slope unchanged and keeps dyadic scales/counts exact
    x = -np.log2(np.asarray(scales, dtype=float))
    y = np.log2(np.asarray(counts, dtype=float))
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    sxy = ((x - xm) * (y - ym)).sum()
    slope = sxy / sxx
    resid = y - (ym + slope * (x - xm))
    syy = ((y - ym) ** 2).sum()
    r2 = 1.0 if syy == 0 else float(max(0.0, 1.0 - (resid ** 2).sum() / syy))
    return BoxCountSeries(scales, counts, float(slope), r2)
