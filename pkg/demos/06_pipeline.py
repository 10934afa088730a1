# %% [markdown]
# # The whole pipeline from one config
#
# `retinalkit all config.yaml` chains feature extraction, lesion boxes,
# feature screening, record assembly, corpus compilation, mixing with a
# generic QA corpus, and scoring.  Stages are skipped when their inputs
# have not changed.

# %%
import json
import tempfile
from pathlib import Path

from retinalkit.cli import main
from retinalkit.synthetic import build_workspace

root = Path(tempfile.mkdtemp())
config = build_workspace(root, n_images=100)
print(config.read_text()[:400], "...")

# %%
assert main(["all", str(config)]) == 0
print(sorted(p.name for p in (root / "out").iterdir()))

# %%
print(json.dumps(json.loads((root / "out" / "mix_manifest.json").read_text())["counts"]))
print((root / "out" / "eval_report.txt").read_text())

# %% [markdown]
# A second run finds nothing to do.

# %%
main(["all", str(config)])
