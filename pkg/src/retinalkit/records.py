"""Per-image structured descriptions and their assembly from a corpus manifest.

An :class:`ImageRecord` bundles retained features, image quality, disease
label, modality and lesion boxes for one image.  ``lesions`` is ``None``
when the image had no lesion annotation at all and ``[]`` when it was
annotated but nothing survived extraction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, CorpusIntegrityError
from .io import dumps
from .lesions import LesionBox
from .vascular import INSUFFICIENT_NULL_FRACTION, SCHEMA_VERSION, MorphFeatureVector

MODALITY = "Color Fundus Photograph"
RECORD_SCHEMA = "retinalkit.record/1"
QUALITY_LABELS = ("good", "usable", "reject")
MANIFEST_COLUMNS = ("image_id", "image_path", "vessel_mask_path", "lesion_mask_paths",
                    "quality", "disease_label", "dataset")


@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    image_path: str
    vessel_mask_path: str
    lesion_mask_paths: tuple = ()  # (lesion_type, path) pairs
    quality: str = ""
    disease_label: str = ""
    dataset: str = ""


def parse_lesion_paths(text: str) -> tuple:
    """``"hemorrhage=a.png;exudate=b.png"`` -> ``(("hemorrhage", "a.png"), ("exudate", "b.png"))``."""
    out = []
    for part in (text or "").split(";"):
        part = part.strip()
        if not part:
            continue
        kind, sep, path = part.partition("=")
        if not sep or not kind.strip() or not path.strip():
            raise ConfigError(f"lesion mask entry must be type=path, got {part!r}")
        out.append((kind.strip(), path.strip()))
    return tuple(out)


def read_manifest(path) -> list[ManifestRow]:
    """Read the comma-delimited corpus manifest (header row required)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"manifest {path} lacks columns {missing}")
        rows = []
        seen = set()
        for rec in reader:
            image_id = rec["image_id"].strip()
            if image_id in seen:
                raise CorpusIntegrityError(f"duplicate image_id {image_id!r} in manifest")
            seen.add(image_id)
            rows.append(ManifestRow(
                image_id=image_id,
                image_path=rec["image_path"].strip(),
                vessel_mask_path=rec["vessel_mask_path"].strip(),
                lesion_mask_paths=parse_lesion_paths(rec["lesion_mask_paths"]),
                quality=rec["quality"].strip().lower(),
                disease_label=rec["disease_label"].strip(),
                dataset=rec["dataset"].strip(),
            ))
    return rows


@dataclass
class ImageRecord:
    image_id: str
    disease_label: str
    quality: str
    features: dict
    lesions: list | None
    dataset: str
    modality: str = MODALITY
    provenance: dict = field(default_factory=dict)

    @property
    def insufficient(self) -> bool:
        """More than half of the carried feature values are null (or none are carried)."""
        if not self.features:
            return True
        nulls = sum(v is None for v in self.features.values())
        return nulls / len(self.features) > INSUFFICIENT_NULL_FRACTION

    def to_record(self) -> dict:
        return {
            "schema_version": RECORD_SCHEMA,
            "image_id": self.image_id,
            "dataset": self.dataset,
            "modality": self.modality,
            "disease_label": self.disease_label,
            "quality": self.quality,
            "features": dict(self.features),
            "lesions": None if self.lesions is None else [b.to_record() for b in self.lesions],
            "provenance": dict(self.provenance),
        }

    def to_json(self) -> str:
        return dumps(self.to_record())

    @classmethod
    def from_record(cls, rec: dict) -> "ImageRecord":
        if rec.get("schema_version") != RECORD_SCHEMA:
            raise ConfigError(f"unsupported record schema {rec.get('schema_version')!r}")
        lesions = rec["lesions"]
        return cls(
            image_id=rec["image_id"],
            disease_label=rec["disease_label"],
            quality=rec["quality"],
            features=dict(rec["features"]),
            lesions=None if lesions is None else [LesionBox.from_record(b) for b in lesions],
            dataset=rec["dataset"],
            modality=rec["modality"],
            provenance=dict(rec.get("provenance", {})),
        )

    @classmethod
    def from_json(cls, line: str) -> "ImageRecord":
        return cls.from_record(json.loads(line))


@dataclass(frozen=True)
class Rejection:
    image_id: str
    dataset: str
    reason: str  # reject_quality | missing_label | insufficient_features

    def to_record(self) -> dict:
        return {"image_id": self.image_id, "dataset": self.dataset, "reason": self.reason}


def _retained_for(retained, dataset: str) -> list[str]:
    if isinstance(retained, dict):
        if dataset not in retained:
            raise ConfigError(f"no retained feature list for dataset {dataset!r}")
        return list(retained[dataset])
    return list(retained)


def assemble(manifest, features: dict, boxes: dict, retained, label_maps: dict | None = None):
    """Gate images on quality and feature sufficiency and build their records.

    ``features`` maps image id to MorphFeatureVector; ``boxes`` maps image id
    to a list of LesionBox (ids absent from ``boxes`` have no lesion
    annotation).  ``retained`` is a feature-name list or a per-dataset dict
    of lists.  ``label_maps`` optionally maps dataset -> raw label -> text;
    a raw label missing from its dataset's map counts as missing.

    Returns ``(records, rejections)`` in manifest order.
    """
    label_maps = label_maps or {}
    records, rejections = [], []
    for row in manifest:
        if row.image_id not in features:
            raise CorpusIntegrityError(f"no feature record for image {row.image_id!r}")
        if row.quality not in QUALITY_LABELS:
            raise CorpusIntegrityError(
                f"image {row.image_id!r} has quality {row.quality!r}; expected one of {QUALITY_LABELS}")
        fv: MorphFeatureVector = features[row.image_id]
        label = row.disease_label
        if row.dataset in label_maps:
            label = label_maps[row.dataset].get(label, "")
        reason = None
        if row.quality == "reject":
            reason = "reject_quality"
        elif not label:
            reason = "missing_label"
        elif fv.insufficient:
            reason = "insufficient_features"
        if reason:
            rejections.append(Rejection(row.image_id, row.dataset, reason))
            continue
        names = _retained_for(retained, row.dataset)
        unknown = [n for n in names if n not in fv.values]
        if unknown:
            raise ConfigError(f"retained features not in schema: {unknown}")
        records.append(ImageRecord(
            image_id=row.image_id,
            disease_label=label,
            quality=row.quality,
            features={n: fv.values[n] for n in names},
            lesions=list(boxes[row.image_id]) if row.image_id in boxes else None,
            dataset=row.dataset,
            provenance={
                "image_path": row.image_path,
                "vessel_mask_path": row.vessel_mask_path,
                "lesion_mask_paths": [f"{k}={p}" for k, p in row.lesion_mask_paths],
                "feature_schema": fv.schema_version or SCHEMA_VERSION,
            },
        ))
    return records, rejections


def write_corpus(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
    return path


def read_corpus(path) -> list[ImageRecord]:
    with open(path, encoding="utf-8") as fh:
        return [ImageRecord.from_json(line) for line in fh if line.strip()]
