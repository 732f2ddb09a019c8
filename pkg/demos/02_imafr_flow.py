# # Inverse multi-attentive feature refinement
#
# A four-level pyramid is refined so that information flows from the finest
# map up to the coarsest one. Levels are stored coarsest first.

import numpy as np

from evp.autodiff import Tensor
from evp.imafr import FeaturePyramid, ImafrParams, imafr_forward

rng = np.random.default_rng(0)
levels = [Tensor(rng.standard_normal((1, c, s, s))) for c, s in [(16, 2), (12, 4), (8, 8), (8, 16)]]
F = FeaturePyramid(levels)
p = ImafrParams.init(F.channels, rng, kernel=3, reduction=4, dtype="float64")
out = imafr_forward(F, p)
print("input shapes: ", F.shapes)
print("output shapes:", out.shapes)

# ## Which outputs does each input reach?
#
# Nudge one level at a time and see which refined levels move. The coarsest
# input only feeds the last step of the chain, while the finest one seeds it.

def nudged(i):
    moved = list(F.levels)
    moved[i] = Tensor(moved[i].data + 1e-3 * rng.standard_normal(moved[i].shape))
    return [t.data for t in imafr_forward(FeaturePyramid(moved), p)]

base = [t.data for t in out]
for i in range(4):
    changed = [j for j, (a, b) in enumerate(zip(base, nudged(i))) if not np.array_equal(a, b)]
    print(f"perturb level {i}: outputs that change {changed}")

# The mirrored direction is available for comparison.

q = ImafrParams.init(F.channels, rng, direction="top_down", kernel=3, reduction=4, dtype="float64")
print("top_down shapes:", imafr_forward(F, q).shapes)
