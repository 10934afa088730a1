"""Scoring free-text model answers against ground truth.

Three sections: abnormal-vs-normal classification accuracy, lesion
localization agreement (best IoU per truth box, hit rates at an IoU
threshold and at centre containment) and relative error of stated
vascular metrics.  All scoring is order independent: inputs are sorted
before aggregation.
"""

from __future__ import annotations

import json
import re
import statistics
from dataclasses import asdict, dataclass, field

from .errors import CorpusIntegrityError
from .lesions import LesionBox, center_in, iou

RULES_VERSION = "abnormality-rules/1"
REPORT_SCHEMA = "retinalkit.eval/1"
ACCURACY_NOTE = (
    "accuracy = 100 x correct / n over binary abnormal-vs-normal answers; unparseable answers "
    "count as incorrect. The reference comparison names no metric, so accuracy is presumed."
)

# ---------------------------------------------------------------------------
# answer normalization
#
# Rule table.  Each answer is lower-cased and split into clauses at sentence
# punctuation, commas, semicolons and "and"/"but"/"however"/"although", so a
# negation never reaches past a conjunction.  Within a clause:
#   * an ABNORMAL_TERM counts as abnormal evidence, unless a NEGATION cue
#     occurs earlier in the same clause, in which case it counts as normal;
#   * a NORMAL_TERM counts as normal evidence, or abnormal when negated.
# A leading bare "yes" adds abnormal evidence and a leading bare "no" adds
# normal evidence.  One-sided evidence decides; none or both is unparseable.

NEGATIONS = (
    r"no", r"not", r"without", r"absence of", r"absent", r"negative for", r"free of",
    r"free from", r"none", r"nor", r"neither", r"never", r"n't", r"rules? out", r"ruled out",
    r"lack of", r"lacks", r"unlikely",
)
ABNORMAL_TERMS = (
    r"abnormal\w*", r"lesions?", r"diseases?", r"diseased", r"retinopathy", r"glaucoma\w*",
    r"macular degeneration", r"amd", r"maculopathy", r"hemorrhag\w*", r"haemorrhag\w*",
    r"exudates?", r"microaneurysms?", r"drusen", r"edema", r"oedema", r"neovasculari[sz]ation",
    r"occlusions?", r"cataracts?", r"patholog\w*", r"papilledema", r"detachment",
    r"cotton wool spots?", r"signs? of",
)
NORMAL_TERMS = (r"normal", r"healthy", r"unremarkable", r"within normal limits")

_CLAUSE = re.compile(r"[.,;!?]+|\band\b|\bbut\b|\bhowever\b|\balthough\b|\bwhereas\b")
_NEG = re.compile(r"(?:\b(?:" + "|".join(n for n in NEGATIONS if n != "n't") + r")\b|n't\b)")
_ABN = re.compile(r"\b(?:" + "|".join(ABNORMAL_TERMS) + r")\b")
_NORM = re.compile(r"\b(?:" + "|".join(NORMAL_TERMS) + r")\b")


def _negated(clause: str, pos: int) -> bool:
    return _NEG.search(clause, 0, pos) is not None


def normalize_abnormality(answer: str) -> str:
    """Map a free-text answer to ``abnormal``, ``normal`` or ``unparseable``."""
    text = (answer or "").lower().strip()
    if not text:
        return "unparseable"
    abnormal = normal = 0
    lead = re.match(r"^\s*(yes|no)\b\s*(?:[,.;:!]|$)", text)
    if lead:
        if lead.group(1) == "yes":
            abnormal += 1
        else:
            normal += 1
        text = text[lead.end():]
    for clause in _CLAUSE.split(text):
        for m in _ABN.finditer(clause):
            if _negated(clause, m.start()):
                normal += 1
            else:
                abnormal += 1
        for m in _NORM.finditer(clause):
            if _negated(clause, m.start()):
                abnormal += 1
            else:
                normal += 1
    if abnormal and not normal:
        return "abnormal"
    if normal and not abnormal:
        return "normal"
    return "unparseable"


# ---------------------------------------------------------------------------
# transcripts

@dataclass(frozen=True)
class Transcript:
    image_id: str
    question: str
    model_answer: str
    model: str = ""
    dataset: str = ""

    @classmethod
    def from_record(cls, rec: dict) -> "Transcript":
        return cls(str(rec["image_id"]), str(rec.get("question", "")), str(rec.get("model_answer", "")),
                   str(rec.get("model", "")), str(rec.get("dataset", "")))


def _sorted(transcripts):
    return sorted(transcripts, key=lambda t: (t.model, t.dataset, t.image_id, t.question, t.model_answer))


def format_accuracy(correct: int, n: int) -> str:
    return f"{100 * correct / n:.2f}"


def score_classification(transcripts, truth: dict) -> dict:
    """Per model and dataset: n, correct, accuracy (2-decimal string) and unparseable answers."""
    cells: dict = {}
    for t in _sorted(transcripts):
        if t.image_id not in truth:
            raise CorpusIntegrityError(f"transcript image {t.image_id!r} is not in the ground truth")
        want = truth[t.image_id]
        if want not in ("normal", "abnormal"):
            raise CorpusIntegrityError(f"truth for {t.image_id!r} must be normal or abnormal, got {want!r}")
        cell = cells.setdefault(t.model, {}).setdefault(
            t.dataset, {"n": 0, "correct": 0, "unparseable": 0, "unparseable_ids": []})
        got = normalize_abnormality(t.model_answer)
        cell["n"] += 1
        if got == "unparseable":
            cell["unparseable"] += 1
            cell["unparseable_ids"].append(t.image_id)
        elif got == want:
            cell["correct"] += 1
    for model in cells.values():
        for cell in model.values():
            cell["accuracy"] = format_accuracy(cell["correct"], cell["n"])
    return {"rules_version": RULES_VERSION, "note": ACCURACY_NOTE, "models": cells}


# ---------------------------------------------------------------------------
# localization
#
# Box cue tokens open a span that runs to the next cue.  Integers inside a
# span are read in groups of four as (x_min, y_min, x_max, y_max); a trailing
# partial group is ignored, as are groups that do not form a valid box.  An
# answer with no complete group is unparseable.

BOX_CUES = (r"bounding box(?:es)?", r"bbox(?:es)?", r"box(?:es)?", r"coordinates?", r"located at",
            r"found at", r"located", r"at", r"region")
_CUE = re.compile(r"\b(?:" + "|".join(BOX_CUES) + r")\b", re.IGNORECASE)
_INT = re.compile(r"(?<![\d.])-?\d+(?![\d.])")


def parse_boxes(answer: str) -> list[tuple[int, int, int, int]]:
    cues = list(_CUE.finditer(answer or ""))
    boxes = []
    for k, cue in enumerate(cues):
        end = cues[k + 1].start() if k + 1 < len(cues) else len(answer)
        ints = [int(x) for x in _INT.findall(answer, cue.end(), end)]
        for j in range(0, len(ints) - 3, 4):
            x0, y0, x1, y1 = ints[j:j + 4]
            if x0 < x1 and y0 < y1:
                boxes.append((x0, y0, x1, y1))
    return boxes


def score_localization(transcripts, truth_boxes: dict, iou_threshold: float = 0.5) -> dict:
    """Best IoU per truth box over all boxes predicted for its image, plus hit rates."""
    preds: dict = {}
    unparseable = []
    for t in _sorted(transcripts):
        if t.image_id not in truth_boxes:
            raise CorpusIntegrityError(f"transcript image {t.image_id!r} has no lesion ground truth")
        boxes = parse_boxes(t.model_answer)
        if not boxes:
            unparseable.append(t.image_id)
        preds.setdefault(t.image_id, []).extend(boxes)

    items = []
    for image_id in sorted(truth_boxes):
        guesses = sorted(set(preds.get(image_id, [])))
        for b in truth_boxes[image_id]:
            truth = b if isinstance(b, LesionBox) else LesionBox("", *b)
            best = max((iou(g, truth) for g in guesses), default=0.0)
            items.append({
                "image_id": image_id,
                "lesion_type": truth.lesion_type,
                "box": list(truth.coords),
                "best_iou": best,
                "iou_hit": best >= iou_threshold,
                "center_hit": any(center_in(g, truth) for g in guesses),
            })
    n = len(items)
    return {
        "iou_threshold": iou_threshold,
        "truth_boxes": n,
        "iou_hit_rate": sum(i["iou_hit"] for i in items) / n if n else 0.0,
        "center_hit_rate": sum(i["center_hit"] for i in items) / n if n else 0.0,
        "unparseable": len(unparseable),
        "unparseable_ids": unparseable,
        "items": items,
    }


# ---------------------------------------------------------------------------
# vascular metrics

_NUM = re.compile(r"-?\d+(?:\.\d+)?")
REL_FLOOR = 1e-9


def _metric_spans(answer: str, metrics) -> dict:
    """Occurrences of each metric name that are not part of a longer metric name."""
    low = answer.lower()
    found = {}
    for m in metrics:
        pattern = r"\b" + r"[ _]".join(map(re.escape, m.lower().split("_"))) + r"\b"
        found[m] = [(x.start(), x.end()) for x in re.finditer(pattern, low)]
    out = {}
    for m, spans in found.items():
        keep = []
        for s, e in spans:
            inside = any(o != m and os_ <= s and e <= oe and (oe - os_) > (e - s)
                         for o, ospans in found.items() for os_, oe in ospans)
            if not inside:
                keep.append((s, e))
        out[m] = keep
    return out


def extract_metric(answer: str, metric: str, metrics=None) -> float | None:
    """First number after the first standalone mention of ``metric`` (case-insensitive).

    The search stops at the next mention of any other metric in ``metrics``,
    so "X is unclear; Y is 0.2" yields nothing for X.
    """
    names = list(dict.fromkeys(list(metrics or []) + [metric]))
    spans = _metric_spans(answer, names)
    if not spans[metric]:
        return None
    start = spans[metric][0][1]
    stop = min((s for m, sp in spans.items() if m != metric for s, _ in sp if s >= start),
               default=len(answer))
    m = _NUM.search(answer, start, stop)
    return float(m.group(0)) if m else None


def score_vascular(transcripts, truth: dict, metrics) -> dict:
    """Relative error ``|pred - truth| / max(|truth|, 1e-9)`` per stated metric.

    The floor only guards a zero truth value; an additive epsilon would bias
    every error by about ``1e-9 / |truth|``.
    """
    metrics = list(metrics)
    errors = {m: [] for m in metrics}
    skipped = []
    for t in _sorted(transcripts):
        if t.image_id not in truth:
            raise CorpusIntegrityError(f"transcript image {t.image_id!r} has no feature ground truth")
        values = truth[t.image_id]
        values = values.values if hasattr(values, "values") and isinstance(values.values, dict) else values
        spans = _metric_spans(t.model_answer + " " + t.question, metrics)
        for m in metrics:
            if not spans[m]:
                continue
            pred = extract_metric(t.model_answer, m, metrics)
            ref = values.get(m)
            if pred is None:
                skipped.append({"image_id": t.image_id, "metric": m, "reason": "no_number"})
            elif ref is None:
                skipped.append({"image_id": t.image_id, "metric": m, "reason": "no_truth_value"})
            else:
                errors[m].append(abs(pred - ref) / max(abs(ref), REL_FLOOR))
    per_metric = {}
    for m, errs in errors.items():
        if errs:
            per_metric[m] = {"n": len(errs), "mean": statistics.fmean(errs),
                             "median": statistics.median(errs), "max": max(errs)}
    return {"metrics": per_metric, "skipped": skipped}


# ---------------------------------------------------------------------------
# report

@dataclass
class EvalReport:
    classification: dict = field(default_factory=dict)
    localization: dict = field(default_factory=dict)
    vascular: dict = field(default_factory=dict)
    schema_version: str = REPORT_SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def to_table(self) -> str:
        lines = [f"# {ACCURACY_NOTE}", ""]
        if self.classification:
            lines.append(f"{'model':<20} {'dataset':<16} {'n':>6} {'correct':>8} {'accuracy':>9} {'unparse':>8}")
            for model, per in sorted(self.classification.get("models", {}).items()):
                for ds, c in sorted(per.items()):
                    lines.append(f"{model or '-':<20} {ds or '-':<16} {c['n']:>6} {c['correct']:>8} "
                                 f"{c['accuracy']:>9} {c['unparseable']:>8}")
            lines.append("")
        if self.localization:
            loc = self.localization
            lines.append(f"localization: {loc['truth_boxes']} truth boxes, "
                         f"IoU>={loc['iou_threshold']} hit rate {loc['iou_hit_rate']:.3f}, "
                         f"centre hit rate {loc['center_hit_rate']:.3f}, unparseable {loc['unparseable']}")
            lines.append("")
        if self.vascular:
            lines.append(f"{'metric':<40} {'n':>5} {'mean':>9} {'median':>9} {'max':>9}")
            for m, s in sorted(self.vascular.get("metrics", {}).items()):
                lines.append(f"{m:<40} {s['n']:>5} {s['mean']:>9.4f} {s['median']:>9.4f} {s['max']:>9.4f}")
            lines.append(f"skipped items: {len(self.vascular.get('skipped', []))}")
        return "\n".join(lines) + "\n"
