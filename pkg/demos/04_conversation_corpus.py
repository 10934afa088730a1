# %% [markdown]
# # From masks to a checked conversation corpus
#
# Build a small synthetic corpus, assemble per-image records, compile
# alignment and multi-turn conversations, and check every stated fact.

# %%
import random
import tempfile
from pathlib import Path

from retinalkit.conversations import compile_corpus, default_profile, verify
from retinalkit.io import load_mask
from retinalkit.lesions import extract_boxes
from retinalkit.records import assemble, read_manifest
from retinalkit.synthetic import DATASETS, QUESTION_POOL, build_corpus
from retinalkit.vascular import FEATURE_SCHEMA, compute_features

root = Path(tempfile.mkdtemp())
rows = read_manifest(build_corpus(root, n_images=24, size=96))
features = {r.image_id: compute_features(load_mask(root / r.vessel_mask_path), image_id=r.image_id)
            for r in rows}
boxes = {r.image_id: [b for k, p in r.lesion_mask_paths for b in extract_boxes(load_mask(root / p), k)]
         for r in rows if r.lesion_mask_paths}
labels = {name: spec["labels"] for name, spec in DATASETS.items()}
records, rejected = assemble(rows, features, boxes, list(FEATURE_SCHEMA[:8]), labels)
print(len(records), "records;", [(r.image_id, r.reason) for r in rejected])

# %%
profiles = {name: default_profile(spec["task"], name) for name, spec in DATASETS.items()}
alignment, tuning, log = compile_corpus(records, QUESTION_POOL, profiles, seed=0)
sample = next(c for c in tuning if any(t.question_kind == "lesion_location" for t in c.turns))
for turn in sample.turns:
    print(f"{turn.role:>9}: {turn.text}")

# %% [markdown]
# `verify` re-derives every number, label and box from the source record.
# Flip one digit and it objects.

# %%
source = {r.image_id: r for r in records}
print("clean:", all(not verify(c, source[c.image_id]) for c in alignment + tuning))
bad = sample.turns[1].text
i = next(k for k, ch in enumerate(bad) if ch.isdigit()) if any(ch.isdigit() for ch in bad) else None
if i is not None:
    sample.turns[1].text = bad[:i] + str((int(bad[i]) + 1) % 10) + bad[i + 1:]
    print(verify(sample, source[sample.image_id]))
