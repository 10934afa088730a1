# %% [markdown]
# # Vessel morphology on a synthetic fundus mask
#
# A branching vessel tree is thinned to a skeleton, turned into a graph of
# segments and junctions, and summarised as a fixed 43-value feature vector.

# %%
import numpy as np

from retinalkit.morph import BinaryMask, box_count, thin
from retinalkit.synthetic import vessel_tree
from retinalkit.vascular import (
    FEATURE_SCHEMA, QuadrantZones, branch_angles, build_graph, compute_features, tortuosity,
)

bits, fov = vessel_tree(256, seed=3, depth=5, tortuous=0.4)
mask = BinaryMask(bits, fov, source="demo")
print("vessel pixels:", int(mask.foreground.sum()), "of", int(fov.sum()), "in the field of view")

# %% [markdown]
# Box counting: the slope of log N(eps) against log(1/eps).

# %%
series = box_count(mask)
for eps, n in zip(series.scales, series.counts):
    print(f"eps={eps:3d}  occupied boxes={n}")
print(f"fractal dimension {series.slope:.4f} (r^2 {series.r2:.4f})")

# %% [markdown]
# Skeleton graph, tortuosity and branch angles.

# %%
skel = thin(mask)
graph = build_graph(skel)
print(len(graph.segments), "segments,", len(graph.branchpoints), "junctions,", len(graph.endpoints), "tips")
ratios = [t.arc_chord for t in (tortuosity(s.points) for s in graph.segments) if t.arc_chord is not None]
print(f"arc/chord tortuosity: median {np.median(ratios):.3f}, max {max(ratios):.3f}")
angles = branch_angles(graph)
print(f"branch angles: mean {np.mean(angles):.1f} deg over {len(angles)} pairs")

# %% [markdown]
# The full vector, with quadrant zones centred on the field of view.

# %%
fv = compute_features(mask, QuadrantZones.from_mask(mask), image_id="demo")
for name in FEATURE_SCHEMA[:15]:
    v = fv[name]
    print(f"{name:<32} {'null' if v is None else f'{v:.4f}'}")
print("null fraction:", round(fv.null_fraction, 3), "insufficient:", fv.insufficient)
