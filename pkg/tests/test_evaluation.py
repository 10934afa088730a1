import pytest

from corpora import labelled_answers
from retinalkit.errors import CorpusIntegrityError
from retinalkit.evaluation import (
    EvalReport, Transcript, extract_metric, normalize_abnormality, parse_boxes,
    score_classification, score_localization, score_vascular,
)
from retinalkit.lesions import LesionBox


@pytest.mark.parametrize("answer, want", [
    ("The image appears normal with no abnormalities.", "normal"),
    ("There are signs of diabetic retinopathy.", "abnormal"),
    ("No abnormal findings; the retina is healthy.", "normal"),
    ("This fundus is not normal.", "abnormal"),
    ("Hemorrhages are present but the disc looks normal.", "unparseable"),
    ("", "unparseable"),
    ("Yes.", "abnormal"),
    ("no", "normal"),
    ("The retina doesn't show any lesions.", "normal"),
])
def test_normalization_examples(answer, want):
    assert normalize_abnormality(answer) == want


def test_normalization_agrees_with_construction():
    pairs = labelled_answers(200, seed=0)
    agree = sum(normalize_abnormality(a) == k for a, k in pairs)
    assert agree / len(pairs) >= 0.98


def transcripts(n, correct, dataset="APTOS"):
    out, truth = [], {}
    for i in range(n):
        truth[f"{dataset}{i}"] = "abnormal"
        ans = "There are signs of diabetic retinopathy." if i < correct else "The retina is normal."
        out.append(Transcript(f"{dataset}{i}", "Is anything abnormal?", ans, "ours", dataset))
    return out, truth


def test_accuracy_arithmetic():
    ts, truth = transcripts(4, 3)
    assert score_classification(ts, truth)["models"]["ours"]["APTOS"]["accuracy"] == "75.00"
    ts, truth = transcripts(490, 466)
    cell = score_classification(ts, truth)["models"]["ours"]["APTOS"]
    assert (cell["n"], cell["correct"], cell["accuracy"]) == (490, 466, "95.10")


def test_all_unparseable_and_omitted_datasets():
    ts = [Transcript(f"i{k}", "q", "hmm", "m", "IDRiD") for k in range(5)]
    rep = score_classification(ts, {f"i{k}": "normal" for k in range(5)})
    cell = rep["models"]["m"]["IDRiD"]
    assert cell["accuracy"] == "0.00" and cell["unparseable"] == 5
    assert "APTOS" not in rep["models"]["m"]


def test_unknown_image_is_hard_error():
    with pytest.raises(CorpusIntegrityError):
        score_classification([Transcript("zz", "q", "normal")], {})


def test_order_independence():
    ts, truth = transcripts(30, 17)
    a = score_classification(ts, truth)
    b = score_classification(list(reversed(ts)), truth)
    assert a == b


def test_box_parsing():
    assert parse_boxes("Hemorrhage lesions are found at (120, 80, 200, 150) and (1, 2, 3, 4).") == [
        (120, 80, 200, 150), (1, 2, 3, 4)]
    assert parse_boxes("bbox: 1, 2, 3") == []
    assert parse_boxes("There is a lesion.") == []
    assert parse_boxes("box 0.1 0.2 0.3 0.4") == []


def test_localization_examples():
    truth = {"a": [LesionBox("hemorrhage", 5, 5, 15, 15)], "b": [LesionBox("exudate", 0, 0, 8, 8)]}
    ts = [Transcript("a", "where?", "The lesion is at box (0, 0, 10, 10)."),
          Transcript("b", "where?", "Located at (0, 0, 8, 8).")]
    rep = score_localization(ts, truth)
    items = {i["image_id"]: i for i in rep["items"]}
    assert abs(items["a"]["best_iou"] - 1 / 7) < 1e-9
    assert not items["a"]["iou_hit"] and not items["a"]["center_hit"]
    assert items["b"]["best_iou"] == 1.0 and items["b"]["iou_hit"] and items["b"]["center_hit"]
    assert rep["iou_hit_rate"] == 0.5 and rep["unparseable"] == 0


def test_localization_no_predictions():
    rep = score_localization([Transcript("a", "q", "I am not sure.")], {"a": [(0, 0, 4, 4)]})
    assert rep["iou_hit_rate"] == rep["center_hit_rate"] == 0.0
    assert rep["unparseable"] == 1


def test_iou_symmetry_center_direction():
    big, small = (0, 0, 20, 20), (12, 12, 18, 18)
    r1 = score_localization([Transcript("a", "", f"box {big}")], {"a": [small]})
    r2 = score_localization([Transcript("a", "", f"box {small}")], {"a": [big]})
    assert r1["items"][0]["best_iou"] == r2["items"][0]["best_iou"]
    assert r1["items"][0]["center_hit"] != r2["items"][0]["center_hit"]


def test_vascular_relative_error():
    truth = {"a": {"fractal_dimension": 1.482, "vessel_density": 0.08},
             "b": {"fractal_dimension": 1.3, "vessel_density": None}}
    ts = [Transcript("a", "q", "The fractal dimension is 1.482 and vessel density: 0.10"),
          Transcript("b", "q", "The fractal dimension is unclear; vessel density is 0.2")]
    rep = score_vascular(ts, truth, ["fractal_dimension", "vessel_density"])
    assert rep["metrics"]["fractal_dimension"]["max"] == 0.0
    assert abs(rep["metrics"]["vessel_density"]["mean"] - 0.25) < 1e-9
    reasons = sorted((s["metric"], s["reason"]) for s in rep["skipped"])
    assert reasons == [("fractal_dimension", "no_number"), ("vessel_density", "no_truth_value")]


def test_metric_name_inside_longer_name():
    text = "The superior temporal vessel density is 0.5, and the vessel density is 0.1."
    names = ["vessel_density", "superior_temporal_vessel_density"]
    assert extract_metric(text, "vessel_density", names) == 0.1
    assert extract_metric(text, "superior_temporal_vessel_density", names) == 0.5


def test_report_round_trip_and_table():
    ts, truth = transcripts(490, 466)
    rep = EvalReport(classification=score_classification(ts, truth))
    assert EvalReport.from_json(rep.to_json()) == rep
    table = rep.to_table()
    assert "95.10" in table and "presumed" in table
