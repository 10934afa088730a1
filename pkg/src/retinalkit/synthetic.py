"""Synthetic rasters and a small synthetic corpus.

Used by the test-suite, the demo scripts and the end-to-end pipeline
smoke run.  Everything is seeded; nothing reads the wall clock.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .io import save_mask


def raster_line(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Bresenham line from (x0, y0) to (x1, y1), endpoints included."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        pts.append((x, y))
        if x == x1 and y == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def draw_polyline(points, shape, width: int = 1) -> np.ndarray:
    """Rasterize a polyline of (x, y) vertices; ``width`` > 1 dilates with a disk."""
    img = np.zeros(shape, dtype=bool)
    pts = [(int(round(x)), int(round(y))) for x, y in points]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        for x, y in raster_line(x0, y0, x1, y1):
            if 0 <= y < shape[0] and 0 <= x < shape[1]:
                img[y, x] = True
    if width > 1:
        img = ndi.binary_dilation(img, structure=disk_footprint((width - 1) / 2))
    return img


def disk_footprint(radius: float) -> np.ndarray:
    r = int(math.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx ** 2 + yy ** 2 <= radius ** 2 + 1e-9


def disk(shape, cx: float, cy: float, radius: float) -> np.ndarray:
    yy, xx = np.indices(shape)
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2


def junction(angles_deg, length: int = 20, size: int = 101, width: int = 1) -> np.ndarray:
    """Arms of ``length`` pixels leaving the frame centre at the given angles (y up)."""
    c = size // 2
    img = np.zeros((size, size), dtype=bool)
    for a in angles_deg:
        t = math.radians(a)
        end = (c + round(length * math.cos(t)), c - round(length * math.sin(t)))
        img |= draw_polyline([(c, c), end], img.shape, width)
    return img


def sierpinski(depth: int, size: int) -> np.ndarray:
    """Right-angled Sierpinski triangle: cell (i, j) is set iff ``i & j == 0``."""
    cells = 2 ** depth
    if size % cells:
        raise ValueError("size must be a multiple of 2**depth")
    k = size // cells
    idx = np.arange(size) // k
    return (idx[:, None] & idx[None, :]) == 0


def semicircle(radius: int, size: int | None = None) -> np.ndarray:
    """Upper half of a midpoint-algorithm digital circle (a minimal 8-connected arc)."""
    size = size or 2 * radius + 21
    c = size // 2
    img = np.zeros((size, size), dtype=bool)
    x, y, err = radius, 0, 1 - radius
    while x >= y:
        for px, py in ((x, y), (y, x), (-y, x), (-x, y)):
            img[c - py, c + px] = True
        y += 1
        if err < 0:
            err += 2 * y + 1
        else:
            x -= 1
            err += 2 * (y - x) + 1
    return img


def sine_arc(amplitude: float = 10.0, period_scale: float = 10.0, x_max: float = 62.0,
             margin: int = 5) -> tuple[np.ndarray, tuple[int, int]]:
    """Rasterized y = A sin(x / s) for x in [0, x_max]; returns (mask, origin offset)."""
    h = int(2 * amplitude + 2 * margin + 1)
    w = int(x_max + 2 * margin + 1)
    cy = h // 2
    xs = np.linspace(0.0, x_max, int(20 * x_max) + 1)
    pts = [(margin + x, cy - amplitude * math.sin(x / period_scale)) for x in xs]
    return draw_polyline(pts, (h, w)), (margin, cy)


def vessel_tree(size: int = 256, seed: int = 0, depth: int = 5, fov: bool = True,
                base_width: int = 5, tortuous: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Random branching vessel mask plus a circular field of view.

    Trunks start near the frame centre and bifurcate ``depth`` times; widths
    shrink per generation.  ``tortuous`` adds sinusoidal wiggle.
    """
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size), dtype=bool)
    c = size / 2

    def grow(x, y, heading, length, width, level):
        nonlocal img
        n = max(int(length), 2)
        phase = rng.uniform(0, 2 * math.pi)
        pts = []
        for i in range(n + 1):
            s = i / n
            off = tortuous * math.sin(phase + 6 * math.pi * s) * width
            px = x + s * length * math.cos(heading) - off * math.sin(heading)
            py = y + s * length * math.sin(heading) + off * math.cos(heading)
            pts.append((px, py))
        img |= draw_polyline(pts, img.shape, max(1, int(round(width))))
        if level >= depth:
            return
        ex, ey = pts[-1]
        spread = rng.uniform(0.35, 0.7)
        for sign in (-1, 1):
            grow(ex, ey, heading + sign * spread + rng.normal(0, 0.1),
                 length * rng.uniform(0.6, 0.8), width * 0.75, level + 1)

    for k in range(4):
        heading = k * math.pi / 2 + rng.uniform(-0.4, 0.4)
        grow(c, c, heading, size * 0.16, base_width, 1)
    fov_bits = disk((size, size), c - 0.5, c - 0.5, size * 0.48) if fov else np.ones((size, size), bool)
    return img & fov_bits, fov_bits


def lesion_mask(size: int, seed: int, count: int, radius=(2, 6), fov=None) -> np.ndarray:
    """Disjoint random disks; any disk too close to another is skipped."""
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size), dtype=bool)
    for _ in range(count):
        r = rng.uniform(*radius)
        cx, cy = rng.uniform(r + 2, size - r - 2, size=2)
        blob = disk(img.shape, cx, cy, r)
        if (ndi.binary_dilation(blob, iterations=2) & img).any():
            continue
        img |= blob
    if fov is not None:
        img &= fov
    return img


# ---------------------------------------------------------------------------
# corpus

DATASETS = {
    "APTOS": {"labels": {"0": "no diabetic retinopathy", "1": "diabetic retinopathy, grade 1",
                         "2": "diabetic retinopathy, grade 2"},
              "task": "dr_grading", "lesions": False},
    "IDRiD": {"labels": {"normal": "no apparent retinal disease",
                         "dr": "diabetic retinopathy with visible lesions"},
              "task": "lesion_localization", "lesions": True},
}

QUESTION_POOL = [
    "What can you tell me about this image?",
    "Describe the image briefly.",
    "What kind of image is this and what does it show?",
    "Summarize the findings in this picture.",
    "What is shown in this retinal photograph?",
    "Give a short description of this image.",
    "What does this image depict?",
    "Can you describe what you see?",
    "What is the main finding in this image?",
    "Provide a concise description of the image.",
    "What modality is this and what is the diagnosis?",
    "Briefly explain this image.",
    "What is visible in this scan?",
    "Tell me about this fundus picture.",
    "What does this photograph reveal?",
    "Please describe this image.",
    "What are the key observations here?",
    "How would you characterize this image?",
    "What is the diagnosis suggested by this image?",
    "Report the main content of this image.",
]


def build_corpus(root, n_images: int = 100, size: int = 96, seed: int = 0,
                 reject_every: int = 25, empty_every: int = 33) -> Path:
    """Write masks, sidecars and a manifest for ``n_images`` synthetic fundus images.

    Images alternate between the two datasets in :data:`DATASETS`.  Every
    ``reject_every``-th image is quality-rejected and every ``empty_every``-th
    has an empty vessel mask (insufficient features).  Returns the manifest
    path.
    """
    root = Path(root)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_images):
        image_id = f"img{i:04d}"
        name = "APTOS" if i % 2 == 0 else "IDRiD"
        spec = DATASETS[name]
        raw_labels = list(spec["labels"])
        label = raw_labels[(i // 2) % len(raw_labels)]
        severity = raw_labels.index(label)
        vessels, fov = vessel_tree(size, seed=seed * 1000 + i, depth=3 + severity % 2,
                                   base_width=3 + severity, tortuous=0.3 * severity)
        if empty_every and i % empty_every == empty_every - 1:
            vessels = np.zeros_like(vessels)
        vpath = root / "masks" / f"{image_id}_vessel.png"
        save_mask(vpath, vessels, fov)
        lesion_paths = []
        if spec["lesions"] and severity > 0:
            for j, kind in enumerate(("hemorrhage", "exudate")):
                lm = lesion_mask(size, seed * 1000 + i * 10 + j, count=int(rng.integers(1, 4)),
                                 radius=(2, 5), fov=fov)
                lpath = root / "masks" / f"{image_id}_{kind}.png"
                save_mask(lpath, lm)
                lesion_paths.append(f"{kind}={lpath.relative_to(root)}")
        quality = "reject" if reject_every and i % reject_every == reject_every - 1 else (
            "good" if rng.random() < 0.7 else "usable")
        rows.append({
            "image_id": image_id,
            "image_path": f"images/{image_id}.jpg",
            "vessel_mask_path": str(vpath.relative_to(root)),
            "lesion_mask_paths": ";".join(lesion_paths),
            "quality": quality,
            "disease_label": label,
            "dataset": name,
        })
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    (root / "questions.txt").write_text("\n".join(QUESTION_POOL) + "\n")
    return manifest


def generic_corpus(path, n: int, prefix: str = "generic", seed: int = 0) -> Path:
    """LLaVA-style generic QA records (``id`` / ``image`` / ``conversations``)."""
    rng = np.random.default_rng(seed)
    modalities = ["CXR", "CT", "MRI", "histopathology", "gross pathology"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for i in range(n):
            mod = modalities[int(rng.integers(len(modalities)))]
            rec = {
                "id": f"{prefix}-{i:06d}",
                "image": f"{prefix}/{i:06d}.jpg",
                "conversations": [
                    {"from": "human", "value": f"<image>\nWhat modality is shown?"},
                    {"from": "gpt", "value": f"This is a {mod} image."},
                ],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


NORMAL_ANSWERS = ["The image appears normal with no abnormalities.",
                  "No, the retina looks healthy.", "There is no evidence of disease."]
ABNORMAL_ANSWERS = ["There are signs of diabetic retinopathy.",
                    "Yes, hemorrhages and exudates are visible.", "The fundus shows lesions."]


def build_transcripts(root, manifest, seed: int = 0, accuracy: float = 0.9) -> Path:
    """Synthetic model answers for classification, localization and vascular questions.

    Roughly ``accuracy`` of the classification answers are right; lesion
    boxes are truth boxes jittered by a few pixels; metric values are the
    measured ones perturbed by up to 10%.
    """
    from .io import load_mask
    from .lesions import extract_boxes
    from .records import read_manifest
    from .vascular import compute_features

    root = Path(root)
    rng = np.random.default_rng(seed)
    out = []
    for row in read_manifest(manifest):
        spec = DATASETS[row.dataset]
        normal = list(spec["labels"]).index(row.disease_label) == 0
        right = rng.random() < accuracy
        says_normal = normal if right else not normal
        pool = NORMAL_ANSWERS if says_normal else ABNORMAL_ANSWERS
        out.append({"task": "classification", "image_id": row.image_id, "dataset": row.dataset,
                    "model": "synthetic", "question": "Are there any abnormalities in this image?",
                    "model_answer": pool[int(rng.integers(len(pool)))]})
        for kind, rel in row.lesion_mask_paths:
            for b in extract_boxes(load_mask(root / rel), kind):
                j = rng.integers(-2, 3, size=4)
                x0, y0 = max(0, b.x_min + int(j[0])), max(0, b.y_min + int(j[1]))
                x1, y1 = max(x0 + 1, b.x_max + int(j[2])), max(y0 + 1, b.y_max + int(j[3]))
                out.append({"task": "localization", "image_id": row.image_id, "dataset": row.dataset,
                            "model": "synthetic", "question": f"Where is the {kind}?",
                            "model_answer": f"The {kind} is located at ({x0}, {y0}, {x1}, {y1})."})
        fv = compute_features(load_mask(root / row.vessel_mask_path), image_id=row.image_id)
        fd, vd = fv["fractal_dimension"], fv["vessel_density"]
        if fd is not None and vd is not None:
            f = 1 + rng.uniform(-0.1, 0.1, size=2)
            out.append({"task": "vascular", "image_id": row.image_id, "dataset": row.dataset,
                        "model": "synthetic", "question": "What are the fractal dimension and vessel density?",
                        "model_answer": f"The fractal dimension is {fd * f[0]:.3f} and the vessel "
                                        f"density is {vd * f[1]:.3f}."})
    path = root / "transcripts.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in out:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


def build_workspace(root, n_images: int = 100, size: int = 96, seed: int = 0,
                    n_generic: int = 150, output_dir: str = "out") -> Path:
    """A complete pipeline workspace: corpus, generic QA corpus, transcripts and config.yaml."""
    import yaml

    root = Path(root)
    manifest = build_corpus(root, n_images, size, seed)
    generic_corpus(root / "generic_qa.jsonl", n_generic, prefix="generic", seed=seed)
    build_transcripts(root, manifest, seed)
    config = {
        "manifest": "manifest.csv",
        "output_dir": output_dir,
        "question_pool": "questions.txt",
        "feature_schema": "retinalkit.features/1",
        "box_count_scales": None,
        "min_lesion_area": 5,
        "selection": {"cap": 40, "redundancy_rho": 0.95, "min_per_label": 10},
        "datasets": {
            name: {"task": spec["task"], "labels": spec["labels"],
                   "normal_labels": [next(iter(spec["labels"].values()))]}
            for name, spec in DATASETS.items()
        },
        "seeds": {"compile": seed, "mix": seed},
        "mix": {"interleave": "shuffled",
                "sources": [{"path": "@tuning", "name": "retinal_tuning"},
                            {"path": "generic_qa.jsonl", "name": "generic_qa"}]},
        "evaluate": {"transcripts": "transcripts.jsonl", "iou_threshold": 0.5,
                     "metrics": ["fractal_dimension", "vessel_density"]},
    }
    path = root / "config.yaml"
    path.write_text(yaml.safe_dump(config, sort_keys=False))
    return path
