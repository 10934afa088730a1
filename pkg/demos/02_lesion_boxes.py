# %% [markdown]
# # Lesion boxes from a lesion mask
#
# Each 8-connected blob becomes one half-open box.  Agreement with a
# predicted box is measured by IoU and by whether the predicted centre
# falls inside the truth box.

# %%
from retinalkit.lesions import LesionBox, center_in, extract_boxes, iou
from retinalkit.morph import BinaryMask
from retinalkit.synthetic import lesion_mask

mask = BinaryMask(lesion_mask(128, seed=4, count=6, radius=(2, 6)))
boxes = extract_boxes(mask, "hemorrhage")
for b in boxes:
    print(b.lesion_type, b.coords, "area", b.area)

# %% [markdown]
# Tiny specks below `min_area` pixels are dropped.

# %%
print(len(extract_boxes(mask, "hemorrhage", min_area=1)), "components,",
      len(boxes), "kept at min_area=5")

# %% [markdown]
# Box agreement.  (0,0,10,10) against (5,5,15,15) overlaps 25 of 175
# pixels, and the predicted centre (4.5, 4.5) misses the truth box.

# %%
pred, truth = (0, 0, 10, 10), (5, 5, 15, 15)
print("IoU", iou(pred, truth), "= 1/7 ->", abs(iou(pred, truth) - 1 / 7) < 1e-12)
print("centre of pred in truth:", center_in(pred, truth))
print("centre of truth in pred:", center_in(truth, pred))
print(LesionBox("exudate", *truth).center)
