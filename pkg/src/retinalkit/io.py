"""File formats: 8-bit mask images, JSON-lines corpora and content hashes."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .morph import BinaryMask


def fov_path(path) -> Path:
    """``vessel.png`` -> ``vessel.fov.png``: the sibling field-of-view file."""
    path = Path(path)
    return path.with_name(f"{path.stem}.fov{path.suffix}")


def _read_bits(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def load_mask(path, source: str | None = None) -> BinaryMask:
    """Read a single-channel 8-bit mask (nonzero = foreground) and its optional FOV sibling."""
    path = Path(path)
    bits = _read_bits(path)
    fpath = fov_path(path)
    fov = _read_bits(fpath) if fpath.exists() else None
    return BinaryMask(bits, fov, source if source is not None else path.stem)


def save_mask(path, bits, fov=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(bits, dtype=np.uint8) * 255).save(path)
    if fov is not None:
        Image.fromarray(np.asarray(fov, dtype=np.uint8) * 255).save(fov_path(path))
    return path


def dumps(obj) -> str:
    """Canonical one-line JSON used for every record file."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec if isinstance(rec, str) else dumps(rec))
            fh.write("\n")
    return path


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
