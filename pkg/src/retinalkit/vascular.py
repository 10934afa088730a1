"""Vascular morphology features from a vessel mask.

The mask is thinned, the skeleton is traced into a graph of junctions,
tips and polyline segments, and the graph plus the distance transform
yield the feature vector.  Global features are repeated for four
FOV-centred quadrant zones.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError, DegenerateInputError, ShapeError
from .morph import (
    BinaryMask,
    Skeleton,
    box_count,
    default_scales,
    distance_transform,
    neighbor_count,
    thin,
)

SCHEMA_VERSION = "retinalkit.features/1"

GLOBAL_FEATURES = (
    "fractal_dimension",
    "vessel_density",
    "mean_vessel_width",
    "width_std",
    "branchpoint_count",
    "endpoint_count",
    "segment_count",
    "total_skeleton_length",
    "mean_segment_length",
    "mean_arc_chord_tortuosity",
    "median_arc_chord_tortuosity",
    "max_arc_chord_tortuosity",
    "mean_curvature_tortuosity",
    "mean_branch_angle",
    "std_branch_angle",
)
ZONE_FEATURES = (
    "vessel_density",
    "fractal_dimension",
    "mean_vessel_width",
    "total_skeleton_length",
    "mean_arc_chord_tortuosity",
    "mean_curvature_tortuosity",
    "branchpoint_count",
)
ZONES = ("superior_temporal", "superior_nasal", "inferior_temporal", "inferior_nasal")
FEATURE_SCHEMA = GLOBAL_FEATURES + tuple(f"{z}_{f}" for z in ZONES for f in ZONE_FEATURES)

INSUFFICIENT_NULL_FRACTION = 0.5
DIRECTION_STEPS = 8
SMOOTHING_WINDOW = 5
CURVATURE_STEP = 4.0

_OFFSETS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


# ---------------------------------------------------------------------------
# skeleton graph

@dataclass
class Node:
    x: float
    y: float
    kind: str  # "endpoint" or "branchpoint"
    pixels: list[tuple[int, int]]


@dataclass
class Segment:
    points: list[tuple[int, int]]
    start: int | None = None
    end: int | None = None
    closed: bool = False

    @property
    def length(self) -> float:
        return _chain_length(self.points)


@dataclass
class SkeletonGraph:
    nodes: list[Node] = field(default_factory=list)
    segments: list[Segment] = field(default_factory=list)

    @property
    def total_length(self) -> float:
        return float(sum(s.length for s in self.segments))

    @property
    def endpoints(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "endpoint"]

    @property
    def branchpoints(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "branchpoint"]


def _chain_length(points) -> float:
    if len(points) < 2:
        return 0.0
    p = np.asarray(points, dtype=float)
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def build_graph(skeleton: Skeleton) -> SkeletonGraph:
    """Trace a skeleton into tips, junctions and the segments between them.

    Adjacent branch pixels (three or more neighbors) are merged into one
    junction node.  Segments include their terminal node pixels, so a
    straight 50-pixel line becomes one segment of length 49.  Rings with no
    node become a single closed segment whose last point repeats the first.
    Isolated pixels carry no length and are left out.
    """
    bits = skeleton.bits if isinstance(skeleton, Skeleton) else np.asarray(skeleton, bool)
    h, w = bits.shape
    counts = neighbor_count(bits)
    graph = SkeletonGraph()
    if not bits.any():
        return graph

    def nbrs(x, y):
        out = []
        for dy, dx in _OFFSETS:
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and bits[yy, xx]:
                out.append((xx, yy))
        return out

    node_of: dict[tuple[int, int], int] = {}
    branch = bits & (counts >= 3)
    labels, n_junctions = ndi.label(branch, structure=np.ones((3, 3), bool))
    clusters: dict[int, list[tuple[int, int]]] = {}
    for y, x in np.argwhere(branch):
        clusters.setdefault(int(labels[y, x]), []).append((int(x), int(y)))
    tips = [(int(x), int(y)) for y, x in np.argwhere(bits & (counts == 1))]

    starts = [(min(px), "branchpoint", px) for px in clusters.values()]
    starts += [(t, "endpoint", [t]) for t in tips]
    for _, kind, px in sorted(starts):
        px = sorted(px)
        idx = len(graph.nodes)
        cx = float(np.mean([p[0] for p in px]))
        cy = float(np.mean([p[1] for p in px]))
        graph.nodes.append(Node(cx, cy, kind, px))
        for p in px:
            node_of[p] = idx

    visited: set[tuple[int, int]] = set()
    links: set[frozenset] = set()
    for p in sorted(node_of):
        for q in nbrs(*p):
            if q in node_of:
                if node_of[q] != node_of[p] and frozenset((p, q)) not in links:
                    links.add(frozenset((p, q)))
                    graph.segments.append(Segment([p, q], node_of[p], node_of[q]))
                continue
            if q in visited:
                continue
            path = [p, q]
            visited.add(q)
            prev, cur = p, q
            end = None
            while True:
                options = [r for r in nbrs(*cur) if r != prev]
                stop = [r for r in options if r in node_of and r != p or (r == p and len(path) > 2)]
                if stop:
                    end = stop[0]
                    path.append(end)
                    break
                fresh = [r for r in options if r not in visited and r not in node_of]
                if not fresh:
                    break
                prev, cur = cur, fresh[0]
                visited.add(cur)
                path.append(cur)
            graph.segments.append(Segment(path, node_of[p], node_of.get(end)))

    # rings without any node
    for y, x in np.argwhere(bits & (counts == 2)):
        start = (int(x), int(y))
        if start in visited or start in node_of:
            continue
        path = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            fresh = [r for r in nbrs(*cur) if r != prev and r not in visited]
            if not fresh:
                break
            prev, cur = cur, fresh[0]
            visited.add(cur)
            path.append(cur)
        path.append(start)
        graph.segments.append(Segment(path, closed=True))
    return graph


# ---------------------------------------------------------------------------
# per-segment measurements

def smooth_polyline(points, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Centred moving average whose window shrinks symmetrically at the ends.

    End points are therefore preserved exactly.
    """
    p = np.asarray(points, dtype=float)
    n = len(p)
    half = window // 2
    csum = np.vstack([np.zeros((1, 2)), np.cumsum(p, axis=0)])
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), half)
    return (csum[idx + k + 1] - csum[idx - k]) / (2 * k + 1)[:, None]


def _resample(p: np.ndarray, step: float = 1.0) -> np.ndarray:
    seg = np.hypot(*np.diff(p, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0:
        return p[:1]
    t = np.arange(0.0, s[-1] + 1e-9, step)
    return np.column_stack([np.interp(t, s, p[:, 0]), np.interp(t, s, p[:, 1])])


@dataclass(frozen=True)
class Tortuosity:
    arc_chord: float | None
    curvature: float | None
    closed: bool = False


def tortuosity(points, closed: bool | None = None) -> Tortuosity:
    """Arc-chord ratio and curvature tortuosity of one polyline.

    Arc length is measured on the moving-average smoothed polyline, which
    removes most of the 8-connected staircase bias.  Curvature tortuosity is
    that arc length times the mean squared curvature of a smoothed
    resampling (``CURVATURE_STEP`` px spacing, then the same moving average);
    it needs at least five points.
    """
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        raise DegenerateInputError("tortuosity needs at least 2 points")
    if closed is None:
        closed = len(p) > 2 and bool(np.all(p[0] == p[-1]))
    sm = smooth_polyline(p)
    arc = _chain_length(sm)
    chord = float(np.hypot(*(sm[-1] - sm[0])))
    arc_chord = None
    if not closed and chord > 0:
        # triangle inequality; clamp rounding noise on collinear input
        arc_chord = max(arc / chord, 1.0)
    curvature = None
    if len(p) >= 5:
        r = smooth_polyline(_resample(p, CURVATURE_STEP))
        curvature = 0.0
        if len(r) >= 3:
            d = np.diff(r, axis=0)
            ds = np.hypot(*d.T)
            heading = np.arctan2(d[:, 1], d[:, 0])
            turn = np.angle(np.exp(1j * np.diff(heading)))
            kappa = turn / np.maximum(0.5 * (ds[1:] + ds[:-1]), 1e-12)
            curvature = float(arc * np.mean(kappa ** 2))
    return Tortuosity(arc_chord, curvature, closed)


def branch_angles(graph: SkeletonGraph, steps: int = DIRECTION_STEPS) -> list[float]:
    """All pairwise angles (degrees) between segments leaving each junction.

    Each segment's direction runs from the junction centroid to the point
    ``steps`` polyline steps beyond the junction pixel (or the far end of a
    shorter segment).
    """
    rays: dict[int, list[np.ndarray]] = {}
    for seg in graph.segments:
        pts = np.asarray(seg.points, dtype=float)
        k = min(steps, len(pts) - 1)
        if k < 1:
            continue
        for node, far in ((seg.start, pts[k]), (seg.end, pts[-1 - k])):
            if node is not None and graph.nodes[node].kind == "branchpoint":
                origin = np.array([graph.nodes[node].x, graph.nodes[node].y])
                rays.setdefault(node, []).append(far - origin)
    angles = []
    for node in sorted(rays):
        for a, b in combinations(rays[node], 2):
            na, nb = np.hypot(*a), np.hypot(*b)
            if na == 0 or nb == 0:
                continue
            cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
            angle = math.degrees(math.acos(cos))
            if angle > 0:
                angles.append(angle)
    return angles


@dataclass(frozen=True)
class WidthStats:
    mean: float
    std: float
    per_segment: list[float]


def vessel_width(mask: BinaryMask, skeleton: Skeleton, graph: SkeletonGraph | None = None) -> WidthStats:
    """Width as twice the distance-transform value at each skeleton pixel."""
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(mask)
    if skeleton.bits.shape != mask.shape:
        raise ShapeError("skeleton and mask shapes differ")
    if not skeleton.bits.any():
        raise DegenerateInputError("vessel width needs a non-empty skeleton")
    width = 2.0 * distance_transform(mask)
    values = width[skeleton.bits]
    if graph is None:
        graph = build_graph(skeleton)
    per_segment = []
    for seg in graph.segments:
        xs, ys = np.asarray(seg.points).T
        per_segment.append(float(width[ys, xs].mean()))
    return WidthStats(float(values.mean()), float(values.std()), per_segment)


def vessel_density(mask: BinaryMask) -> float:
    """Fraction of field-of-view pixels that are vessel."""
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(mask)
    fov = mask.fov_bits
    n = int(fov.sum())
    if n == 0:
        raise DegenerateInputError("field of view is empty")
    return int(mask.foreground.sum()) / n


# ---------------------------------------------------------------------------
# zones

@dataclass(frozen=True)
class QuadrantZones:
    """Four quadrants around ``(cx, cy)``; rows above ``cy`` are superior.

    ``temporal_side`` says which image half ("left" or "right") is temporal.
    """

    cx: float
    cy: float
    temporal_side: str = "left"

    @classmethod
    def from_mask(cls, mask: BinaryMask, temporal_side: str = "left") -> "QuadrantZones":
        ys, xs = np.nonzero(mask.fov_bits)
        if len(xs) == 0:
            raise DegenerateInputError("field of view is empty")
        return cls(float(xs.mean()), float(ys.mean()), temporal_side)

    def rasters(self, shape) -> dict[str, np.ndarray]:
        if self.temporal_side not in ("left", "right"):
            raise ConfigError(f"temporal_side must be 'left' or 'right', got {self.temporal_side!r}")
        yy, xx = np.indices(shape)
        superior = yy < self.cy
        left = xx < self.cx
        temporal = left if self.temporal_side == "left" else ~left
        return {
            "superior_temporal": superior & temporal,
            "superior_nasal": superior & ~temporal,
            "inferior_temporal": ~superior & temporal,
            "inferior_nasal": ~superior & ~temporal,
        }

    def zone_of(self, x: float, y: float) -> str:
        vert = "superior" if y < self.cy else "inferior"
        left = x < self.cx
        temporal = left if self.temporal_side == "left" else not left
        return f"{vert}_{'temporal' if temporal else 'nasal'}"


# ---------------------------------------------------------------------------
# feature vector

@dataclass
class MorphFeatureVector:
    """Fixed-schema feature values; ``None`` marks a value that could not be measured."""

    values: dict
    image_id: str = ""
    schema_version: str = SCHEMA_VERSION

    def __post_init__(self):
        unknown = set(self.values) - set(FEATURE_SCHEMA)
        if unknown:
            raise ConfigError(f"unknown feature names: {sorted(unknown)}")
        self.values = {k: self.values.get(k) for k in FEATURE_SCHEMA}

    def __getitem__(self, name):
        return self.values[name]

    @property
    def null_fraction(self) -> float:
        return sum(v is None for v in self.values.values()) / len(self.values)

    @property
    def insufficient(self) -> bool:
        return self.null_fraction > INSUFFICIENT_NULL_FRACTION

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "schema_version": self.schema_version,
            "insufficient": self.insufficient,
            "features": dict(self.values),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    @classmethod
    def from_record(cls, rec: dict) -> "MorphFeatureVector":
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported feature schema {rec.get('schema_version')!r}")
        return cls(dict(rec["features"]), rec.get("image_id", ""), rec["schema_version"])

    @classmethod
    def from_json(cls, line: str) -> "MorphFeatureVector":
        return cls.from_record(json.loads(line))


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _fractal(mask: BinaryMask, scales) -> float | None:
    try:
        return box_count(mask, scales).slope
    except (DegenerateInputError, ConfigError):
        return None


def compute_features(mask: BinaryMask, zones: QuadrantZones | None = None,
                     scales=None, image_id: str = "") -> MorphFeatureVector:
    """Full feature vector for one vessel mask.

    An empty foreground yields an all-null vector (flagged insufficient).
    Box-count scales default to powers of two from 2 to a quarter of the
    shorter side; frames too small for four scales get a null fractal
    dimension.
    """
    if not isinstance(mask, BinaryMask):
        mask = BinaryMask(mask)
    image_id = image_id or mask.source
    values = dict.fromkeys(FEATURE_SCHEMA)
    fg = mask.foreground
    if not fg.any():
        return MorphFeatureVector(values, image_id)
    if zones is None:
        zones = QuadrantZones.from_mask(mask)

    skel = thin(mask)
    graph = build_graph(skel)
    width = 2.0 * distance_transform(mask)
    torts = [tortuosity(s.points, s.closed) for s in graph.segments]
    arc_chords = [t.arc_chord for t in torts if t.arc_chord is not None]
    curvatures = [t.curvature for t in torts if t.curvature is not None]
    angles = branch_angles(graph)
    skel_widths = width[skel.bits]
    seg_lengths = [s.length for s in graph.segments]

    values.update(
        fractal_dimension=_fractal(mask, scales),
        vessel_density=vessel_density(mask),
        mean_vessel_width=_mean(skel_widths),
        width_std=float(skel_widths.std()) if len(skel_widths) else None,
        branchpoint_count=len(graph.branchpoints),
        endpoint_count=len(graph.endpoints),
        segment_count=len(graph.segments),
        total_skeleton_length=float(sum(seg_lengths)),
        mean_segment_length=_mean(seg_lengths),
        mean_arc_chord_tortuosity=_mean(arc_chords),
        median_arc_chord_tortuosity=float(np.median(arc_chords)) if arc_chords else None,
        max_arc_chord_tortuosity=max(arc_chords) if arc_chords else None,
        mean_curvature_tortuosity=_mean(curvatures),
        mean_branch_angle=_mean(angles),
        std_branch_angle=float(np.std(angles)) if angles else None,
    )

    if scales is None:
        scales = default_scales(mask.width, mask.height)
    fov = mask.fov_bits
    seg_zone = [zones.zone_of(*s.points[len(s.points) // 2]) for s in graph.segments]
    for name, zone in zones.rasters(mask.shape).items():
        zfov = fov & zone
        n = int(zfov.sum())
        zmask = BinaryMask(mask.bits, zfov, mask.source)
        zsk = skel.bits & zone
        zsegs = [i for i, z in enumerate(seg_zone) if z == name]
        zac = [torts[i].arc_chord for i in zsegs if torts[i].arc_chord is not None]
        zcurv = [torts[i].curvature for i in zsegs if torts[i].curvature is not None]
        values.update({
            f"{name}_vessel_density": int((fg & zone).sum()) / n if n else None,
            f"{name}_fractal_dimension": _fractal(zmask, scales),
            f"{name}_mean_vessel_width": _mean(width[zsk]),
            f"{name}_total_skeleton_length": float(sum(seg_lengths[i] for i in zsegs)),
            f"{name}_mean_arc_chord_tortuosity": _mean(zac),
            f"{name}_mean_curvature_tortuosity": _mean(zcurv),
            f"{name}_branchpoint_count": sum(
                1 for nd in graph.branchpoints if zones.zone_of(*nd.pixels[0]) == name),
        })
    return MorphFeatureVector(values, image_id)
