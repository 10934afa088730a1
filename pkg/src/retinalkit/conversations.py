"""Template conversations built from image records, and the fact checker that guards them.

Two corpus stages are produced.  Alignment records are one question and one
answer that states the modality and then the disease label.  Tuning records
are 2 to 4 question/answer rounds drawn from a per-dataset task profile.
Every number an answer states is formatted from the source record, so
:func:`verify` can re-derive and check each claim.

Seeded choices use ``random.Random(f"{seed}/{image_id}/{stage}")``, so a
record's conversation never depends on which other records are compiled
alongside it.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError
from .io import dumps
from .records import ImageRecord

STOP = "<STOP>"
CONVERSATION_SCHEMA = "retinalkit.conversation/1"
QUESTION_KINDS = ("generic_inquiry", "diagnosis", "grading", "lesion_location",
                  "vascular_metric", "quality")
# question kinds whose answer must state the disease label verbatim
LABEL_KINDS = ("generic_inquiry", "diagnosis", "grading")
MIN_ROUNDS, MAX_ROUNDS = 2, 4
MAX_METRICS_PER_TURN = 3

_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")
_INT_BOX = re.compile(r"\((\d+), (\d+), (\d+), (\d+)\)")
_FLOAT_BOX = re.compile(r"\((\d+\.\d{3}), (\d+\.\d{3}), (\d+\.\d{3}), (\d+\.\d{3})\)")


def fmt_value(v: float) -> str:
    """The one rendering used for every feature value in an answer."""
    return f"{v:.3f}"


def fmt_box(coords) -> str:
    return "(" + ", ".join(str(int(c)) for c in coords) + ")"


def fmt_norm_box(coords, size) -> str:
    w, h = size
    x0, y0, x1, y1 = coords
    return "(" + ", ".join(fmt_value(v) for v in (x0 / w, y0 / h, x1 / w, y1 / h)) + ")"


def metric_name(feature: str) -> str:
    return feature.replace("_", " ")


# ---------------------------------------------------------------------------
# types

@dataclass
class ConversationTurn:
    role: str  # human | assistant
    text: str
    question_kind: str | None = None
    detail: str | None = None  # lesion type or comma-joined metric names behind the question

    def to_record(self, stop: bool = False) -> dict:
        rec = {"role": self.role, "text": f"{self.text} {STOP}" if stop else self.text}
        if self.question_kind is not None:
            rec["question_kind"] = self.question_kind
        if self.detail is not None:
            rec["detail"] = self.detail
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ConversationTurn":
        text = rec["text"]
        if text.endswith(" " + STOP):
            text = text[: -len(STOP) - 1]
        return cls(rec["role"], text, rec.get("question_kind"), rec.get("detail"))


@dataclass
class ConversationRecord:
    record_id: str
    image_id: str
    stage: str  # alignment | tuning
    turns: list
    generator: str
    dataset: str = ""
    image: str = ""

    def to_record(self, stop: bool = False) -> dict:
        return {
            "schema_version": CONVERSATION_SCHEMA,
            "record_id": self.record_id,
            "image_id": self.image_id,
            "image": self.image,
            "dataset": self.dataset,
            "stage": self.stage,
            "generator": self.generator,
            "turns": [t.to_record(stop) for t in self.turns],
        }

    def to_json(self, stop: bool = False) -> str:
        return dumps(self.to_record(stop))

    @classmethod
    def from_record(cls, rec: dict) -> "ConversationRecord":
        if rec.get("schema_version") != CONVERSATION_SCHEMA:
            raise ConfigError(f"unsupported conversation schema {rec.get('schema_version')!r}")
        return cls(rec["record_id"], rec["image_id"], rec["stage"],
                   [ConversationTurn.from_record(t) for t in rec["turns"]],
                   rec["generator"], rec.get("dataset", ""), rec.get("image", ""))

    @classmethod
    def from_json(cls, line: str) -> "ConversationRecord":
        return cls.from_record(json.loads(line))


@dataclass(frozen=True)
class TaskProfile:
    """Question kinds asked of one dataset's images."""

    name: str
    datasets: tuple
    kinds: tuple
    box_mode: str = "pixels"  # pixels | normalized

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in QUESTION_KINDS]
        if bad or not self.kinds:
            raise ConfigError(f"profile {self.name!r} has invalid question kinds {bad or '[]'}")
        if self.box_mode not in ("pixels", "normalized"):
            raise ConfigError(f"box_mode must be pixels or normalized, got {self.box_mode!r}")


DEFAULT_PROFILES = {
    "dr_grading": ("generic_inquiry", "diagnosis", "grading", "vascular_metric", "quality"),
    "lesion_localization": ("generic_inquiry", "diagnosis", "lesion_location",
                            "vascular_metric", "quality"),
    "multi_disease": ("generic_inquiry", "diagnosis", "vascular_metric", "quality"),
}


def default_profile(task: str, dataset: str, box_mode: str = "pixels") -> TaskProfile:
    if task not in DEFAULT_PROFILES:
        raise ConfigError(f"unknown task {task!r}; choose from {sorted(DEFAULT_PROFILES)}")
    return TaskProfile(task, (dataset,), DEFAULT_PROFILES[task], box_mode)


# ---------------------------------------------------------------------------
# templates

GENERIC_QUESTIONS = (
    "What kind of image is this, and what does it show?",
    "Can you give an overview of this image?",
)
DIAGNOSIS_QUESTIONS = (
    "Is there any sign of disease in this image?",
    "What is the diagnosis for this retina?",
)
GRADING_QUESTIONS = (
    "What diabetic retinopathy grade would you assign?",
    "How severe is the retinopathy in this image?",
)
QUALITY_QUESTIONS = (
    "How would you rate the quality of this image?",
    "Is this image of sufficient quality for assessment?",
)


def alignment_answer(record: ImageRecord) -> str:
    return f"This {record.modality} shows {record.disease_label}."


def _label_answer(kind: str, record: ImageRecord) -> str:
    if kind == "generic_inquiry":
        return f"This is a {record.modality}; the findings indicate {record.disease_label}."
    if kind == "diagnosis":
        return f"The retina shows {record.disease_label}."
    return f"The assessment is {record.disease_label}."


def _box_text(boxes, record: ImageRecord, mode: str) -> list[str]:
    if mode == "pixels":
        return [fmt_box(b.coords) for b in boxes]
    size = record.provenance.get("image_size")
    if not size:
        raise ConfigError(f"normalized boxes need provenance.image_size for {record.image_id!r}")
    return [fmt_norm_box(b.coords, size) for b in boxes]


def _lesion_turns(rng, record: ImageRecord, mode: str):
    types = sorted({b.lesion_type for b in record.lesions})
    kind = rng.choice(types)
    boxes = [b for b in record.lesions if b.lesion_type == kind]
    q = f"Where are the {kind} lesions located?"
    a = f"{kind.capitalize()} lesions are found at " + " and ".join(_box_text(boxes, record, mode)) + "."
    return q, a, kind


def _metric_turns(rng, record: ImageRecord):
    names = [n for n, v in record.features.items() if v is not None]
    chosen = rng.sample(names, min(len(names), rng.randint(1, MAX_METRICS_PER_TURN)))
    q = "What is the " + " and the ".join(metric_name(n) for n in chosen) + " of the retinal vessels?"
    a = ", and ".join(f"the {metric_name(n)} is {fmt_value(record.features[n])}" for n in chosen)
    return q, a[0].upper() + a[1:] + ".", ",".join(chosen)


# ---------------------------------------------------------------------------
# compilers

def compile_alignment(record: ImageRecord, question_pool, seed: int) -> ConversationRecord:
    """One sampled generic question, answered with modality then disease label."""
    pool = list(question_pool)
    if not pool:
        raise ConfigError("alignment question pool is empty")
    if not record.disease_label or not record.modality:
        raise ConfigError(f"record {record.image_id!r} lacks a disease label or modality")
    rng = random.Random(f"{seed}/{record.image_id}/alignment")
    question = rng.choice(pool)
    return ConversationRecord(
        record_id=f"{record.image_id}/alignment",
        image_id=record.image_id,
        stage="alignment",
        turns=[ConversationTurn("human", question, "generic_inquiry"),
               ConversationTurn("assistant", alignment_answer(record))],
        generator="template:alignment/1",
        dataset=record.dataset,
        image=record.provenance.get("image_path", ""),
    )


def available_kinds(record: ImageRecord, profile: TaskProfile) -> list[str]:
    kinds = []
    for k in profile.kinds:
        if k == "lesion_location" and not record.lesions:
            continue
        if k == "vascular_metric" and not any(v is not None for v in record.features.values()):
            continue
        kinds.append(k)
    return kinds


def compile_tuning(record: ImageRecord, profile: TaskProfile, seed: int,
                   log: list | None = None) -> ConversationRecord | None:
    """Multi-round QA for one record, or ``None`` (with a log entry) if the record is insufficient."""
    if record.dataset not in profile.datasets:
        raise ConfigError(f"profile {profile.name!r} does not cover dataset {record.dataset!r}")
    if record.insufficient:
        if log is not None:
            log.append({"image_id": record.image_id, "stage": "tuning",
                        "event": "skipped_insufficient_features"})
        return None
    rng = random.Random(f"{seed}/{record.image_id}/tuning")
    kinds = available_kinds(record, profile)
    n = rng.randint(MIN_ROUNDS, MAX_ROUNDS)
    if len(kinds) >= n:
        rounds = rng.sample(kinds, n)
    else:
        rounds = kinds + rng.choices(kinds, k=n - len(kinds))
        rng.shuffle(rounds)
    turns = []
    for kind in rounds:
        detail = None
        if kind in LABEL_KINDS:
            pool = {"generic_inquiry": GENERIC_QUESTIONS, "diagnosis": DIAGNOSIS_QUESTIONS,
                    "grading": GRADING_QUESTIONS}[kind]
            q, a = rng.choice(pool), _label_answer(kind, record)
        elif kind == "quality":
            q, a = rng.choice(QUALITY_QUESTIONS), f"The image quality is rated {record.quality}."
        elif kind == "lesion_location":
            q, a, detail = _lesion_turns(rng, record, profile.box_mode)
        else:
            q, a, detail = _metric_turns(rng, record)
        turns.append(ConversationTurn("human", q, kind, detail))
        turns.append(ConversationTurn("assistant", a))
    return ConversationRecord(
        record_id=f"{record.image_id}/tuning",
        image_id=record.image_id,
        stage="tuning",
        turns=turns,
        generator=f"template:{profile.name}/1",
        dataset=record.dataset,
        image=record.provenance.get("image_path", ""),
    )


def compile_corpus(records, question_pool, profiles: dict, seed: int):
    """Compile both stages for every record; ``profiles`` maps dataset tag to TaskProfile.

    Returns ``(alignment, tuning, log)`` in input order.
    """
    alignment, tuning, log = [], [], []
    for rec in records:
        if rec.dataset not in profiles:
            raise ConfigError(f"no task profile for dataset {rec.dataset!r}")
        alignment.append(compile_alignment(rec, question_pool, seed))
        t = compile_tuning(rec, profiles[rec.dataset], seed, log)
        if t is not None:
            tuning.append(t)
    return alignment, tuning, log


# ---------------------------------------------------------------------------
# verification

def derivable_tokens(source: ImageRecord) -> set[str]:
    """Every numeric token an answer about ``source`` may legitimately contain."""
    tokens = {fmt_value(v) for v in source.features.values() if v is not None}
    size = source.provenance.get("image_size")
    for b in source.lesions or []:
        tokens.update(str(c) for c in b.coords)
        if size:
            tokens.update(_FLOAT_BOX.match(fmt_norm_box(b.coords, size)).groups())
    for text in (source.disease_label, source.modality, source.quality):
        tokens.update(_NUMBER.findall(text))
    return tokens


def _box_strings(source: ImageRecord, lesion_type: str | None) -> Counter:
    boxes = [b for b in source.lesions or [] if lesion_type is None or b.lesion_type == lesion_type]
    out = Counter(fmt_box(b.coords) for b in boxes)
    size = source.provenance.get("image_size")
    if size:
        out.update(fmt_norm_box(b.coords, size) for b in boxes)
    return out


def verify(record: ConversationRecord, source: ImageRecord) -> list[str]:
    """Return the list of violations; an empty list means the record passes."""
    v = []
    if record.image_id != source.image_id:
        v.append(f"image_id {record.image_id!r} does not match source {source.image_id!r}")
    turns = record.turns
    for i, t in enumerate(turns):
        want = "human" if i % 2 == 0 else "assistant"
        if t.role != want:
            v.append(f"turn {i}: expected {want}, got {t.role}")
    if len(turns) % 2:
        v.append("conversation ends on a human turn")
    if record.stage == "alignment" and len(turns) != 2:
        v.append(f"alignment record has {len(turns)} turns, expected 2")
    elif record.stage == "tuning" and len(turns) < 2 * MIN_ROUNDS:
        v.append(f"tuning record has {len(turns)} turns, expected at least {2 * MIN_ROUNDS}")
    elif record.stage not in ("alignment", "tuning"):
        v.append(f"unknown stage {record.stage!r}")

    allowed = derivable_tokens(source)
    for i in range(0, len(turns) - 1, 2):
        q, a = turns[i], turns[i + 1]
        if a.role != "assistant":
            continue
        for tok in _NUMBER.findall(a.text):
            if tok not in allowed:
                v.append(f"turn {i + 1}: number {tok} is not derivable from the source record")
        kind = q.question_kind
        if record.stage == "alignment" or kind in LABEL_KINDS:
            if source.disease_label not in a.text:
                v.append(f"turn {i + 1}: disease label {source.disease_label!r} missing")
            if record.stage == "alignment":
                m = a.text.find(source.modality)
                if m < 0 or a.text.find(source.disease_label, m) < 0:
                    v.append(f"turn {i + 1}: modality must precede the disease label")
        if kind == "quality" and source.quality not in a.text:
            v.append(f"turn {i + 1}: quality {source.quality!r} missing")
        if kind == "vascular_metric":
            for name in (q.detail or "").split(","):
                if not name:
                    continue
                value = source.features.get(name)
                if value is None:
                    v.append(f"turn {i + 1}: metric {name} has no source value")
                    continue
                claim = re.search(rf"\b[Tt]he {re.escape(metric_name(name))} is (\S+?)[,.]?(?:\s|$)", a.text)
                if claim is None:
                    v.append(f"turn {i + 1}: no value stated for {name}")
                elif claim.group(1) != fmt_value(value):
                    v.append(f"turn {i + 1}: {name} stated as {claim.group(1)}, "
                             f"source is {fmt_value(value)}")
        claimed = Counter(m.group(0) for m in _INT_BOX.finditer(a.text))
        claimed.update(m.group(0) for m in _FLOAT_BOX.finditer(a.text))
        if claimed:
            truth = _box_strings(source, q.detail if kind == "lesion_location" else None)
            extra = claimed - truth
            for box in sorted(extra):
                v.append(f"turn {i + 1}: box {box} is not among the source lesion boxes")
    return v


def fact_tokens(record: ConversationRecord) -> Counter:
    """Multiset of numbers and box tuples stated by the assistant."""
    out = Counter()
    for t in record.turns:
        if t.role == "assistant":
            out.update(_NUMBER.findall(t.text))
            out.update(m.group(0) for m in _INT_BOX.finditer(t.text))
            out.update(m.group(0) for m in _FLOAT_BOX.finditer(t.text))
    return out
