"""Seeded composition of several conversation corpora into one training corpus.

Each source is read, sorted by record id, optionally subsampled, and the
concatenation (ordered by source index, then record id) is permuted with
a seeded generator.  The manifest records per-source counts, the seed and
a SHA-256 of the output bytes, so identical specs give identical checksums.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .conversations import CONVERSATION_SCHEMA, ConversationRecord, ConversationTurn
from .errors import ConfigError, CorpusIntegrityError
from .io import sha256_bytes, sha256_file

INTERLEAVE_MODES = ("shuffled", "stratified-by-source")
_LLAVA_ROLES = {"human": "human", "user": "human", "gpt": "assistant", "assistant": "assistant"}


@dataclass(frozen=True)
class MixSource:
    path: str
    take: int | None = None  # None with proportion None means the whole source
    proportion: float | None = None
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or Path(self.path).stem


@dataclass(frozen=True)
class MixSpec:
    sources: tuple
    seed: int
    interleave: str = "shuffled"
    total: int | None = None  # required when proportions are used

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("mix needs at least one source")
        if self.interleave not in INTERLEAVE_MODES:
            raise ConfigError(f"interleave must be one of {INTERLEAVE_MODES}, got {self.interleave!r}")
        props = [s.proportion for s in self.sources if s.proportion is not None]
        if props:
            if len(props) != len(self.sources) or any(s.take is not None for s in self.sources):
                raise ConfigError("use proportions for every source or for none")
            if not math.isclose(sum(props), 1.0, abs_tol=1e-9):
                raise ConfigError(f"proportions sum to {sum(props)}, expected 1")
            if not self.total or self.total < 1:
                raise ConfigError("proportion mixing needs a positive total")
        labels = [s.label for s in self.sources]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"source names must be unique, got {labels}")


def import_llava(rec: dict, dataset: str = "") -> ConversationRecord:
    """Adapter for ``{"id", "image", "conversations": [{"from", "value"}]}`` records."""
    try:
        turns = [ConversationTurn(_LLAVA_ROLES[t["from"]], t["value"]) for t in rec["conversations"]]
        rid = str(rec["id"])
    except (KeyError, TypeError) as exc:
        raise CorpusIntegrityError(f"not a LLaVA-style record: {exc}") from exc
    return ConversationRecord(rid, rid, "imported", turns, "import:llava", dataset,
                              str(rec.get("image", "")))


def _load(path, dataset: str) -> list[tuple[str, str]]:
    """(record_id, canonical line) pairs sorted by record id."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise CorpusIntegrityError(f"{path}:{n}: invalid JSON ({exc})") from exc
            if rec.get("schema_version") == CONVERSATION_SCHEMA:
                rid, text = rec["record_id"], line.rstrip("\n")
            else:
                conv = import_llava(rec, dataset)
                rid, text = conv.record_id, conv.to_json()
            if rid in out:
                raise CorpusIntegrityError(f"{path}:{n}: duplicate record id {rid!r}")
            out[rid] = text
    return sorted(out.items())


def _takes(spec: MixSpec, sizes: list[int]) -> list[int]:
    if spec.sources[0].proportion is not None:
        raw = [s.proportion * spec.total for s in spec.sources]
        takes = [math.floor(r) for r in raw]
        # largest remainder, ties to the earlier source
        order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - takes[i]), i))
        for i in order[: spec.total - sum(takes)]:
            takes[i] += 1
    else:
        takes = [size if s.take is None else s.take for s, size in zip(spec.sources, sizes)]
    for s, t, size in zip(spec.sources, takes, sizes):
        if t < 0 or t > size:
            raise ConfigError(f"source {s.label!r}: take {t} exceeds its {size} records")
    return takes


def mix(spec: MixSpec, out_path, manifest_path=None) -> dict:
    """Write the mixed corpus to ``out_path`` and return (and optionally write) its manifest."""
    loaded = [_load(s.path, s.label) for s in spec.sources]
    takes = _takes(spec, [len(x) for x in loaded])

    chosen = []
    for i, (items, take) in enumerate(zip(loaded, takes)):
        if take < len(items):
            idx = sorted(random.Random(f"{spec.seed}/select/{i}").sample(range(len(items)), take))
            items = [items[j] for j in idx]
        chosen.append(items)

    if spec.interleave == "shuffled":
        lines = [text for items in chosen for _, text in items]
        random.Random(f"{spec.seed}/shuffle").shuffle(lines)
    else:
        keyed = []
        for i, items in enumerate(chosen):
            order = list(range(len(items)))
            random.Random(f"{spec.seed}/order/{i}").shuffle(order)
            keyed += [((k + 0.5) / len(items), i, items[j][1]) for k, j in enumerate(order)]
        keyed.sort(key=lambda t: (t[0], t[1]))
        lines = [t[2] for t in keyed]

    data = ("\n".join(lines) + "\n" if lines else "").encode("utf-8")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(data)
    manifest = {
        "seed": spec.seed,
        "interleave": spec.interleave,
        "total": len(lines),
        "sources": [
            {"name": s.label, "path": str(s.path), "sha256": sha256_file(s.path),
             "available": len(items), "taken": t}
            for s, items, t in zip(spec.sources, loaded, takes)
        ],
        "counts": {s.label: t for s, t in zip(spec.sources, takes)},
        "checksum": sha256_bytes(data),
    }
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
