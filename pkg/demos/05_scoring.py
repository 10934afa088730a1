# %% [markdown]
# # Scoring model answers
#
# Free-text answers are normalised to abnormal / normal / unparseable by a
# negation-aware rule table, then tallied per model and dataset.

# %%
from retinalkit.evaluation import (
    EvalReport, Transcript, normalize_abnormality, score_classification, score_localization,
    score_vascular,
)

for answer in ["The image appears normal with no abnormalities.",
               "There are signs of diabetic retinopathy.",
               "Hemorrhages are present but the disc looks normal.",
               "I cannot tell."]:
    print(f"{normalize_abnormality(answer):>12}  {answer}")

# %% [markdown]
# 466 right out of 490 prints as 95.10.

# %%
truth = {f"img{i}": "abnormal" for i in range(490)}
answers = ["There are signs of diabetic retinopathy."] * 466 + ["The retina looks healthy."] * 24
ts = [Transcript(f"img{i}", "Any abnormality?", a, "ours", "APTOS") for i, a in enumerate(answers)]
report = EvalReport(classification=score_classification(ts, truth))

# %% [markdown]
# Localization and vascular metrics.

# %%
report.localization = score_localization(
    [Transcript("img0", "Where?", "The lesion is located at (0, 0, 10, 10).")], {"img0": [(5, 5, 15, 15)]})
report.vascular = score_vascular(
    [Transcript("img0", "Vessel density?", "The vessel density: 0.10")],
    {"img0": {"vessel_density": 0.08}}, ["vessel_density"])
print(report.to_table())
