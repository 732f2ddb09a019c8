# # Depth from adaptive bins
#
# A logit vector per image becomes a partition of [d_min, d_max]. Softmax gives
# the bin widths and each center sits in the middle of its interval. Per-pixel
# probabilities over the bins then give depth as an expectation.

import numpy as np

from evp.autodiff import Tensor, softmax
from evp.depth_head import depth_from_bins, predict_bins, silog_loss

bins = predict_bins(Tensor(np.zeros((1, 4))), 0.0, 10.0)
print("uniform logits -> centers", bins.centers.data[0])

bins = predict_bins(Tensor(np.array([[3.0, 0.0, 0.0, 0.0]])), 0.0, 10.0)
print("one wide near bin -> centers", np.round(bins.centers.data[0], 3))

rng = np.random.default_rng(0)
probs = softmax(Tensor(rng.standard_normal((1, 4, 2, 3)) * 2), axis=1)
print("depth map:\n", np.round(depth_from_bins(probs, bins).data[0, 0], 3))

# ## The scale-invariant log loss
#
# A prediction off by a global factor e^c is charged alpha * |c| * sqrt(1 - lambda),
# far less than its raw log error.

gt = rng.uniform(0.5, 5.0, (1, 1, 4, 4))
mask = np.ones_like(gt, dtype=bool)
for c in (0.0, 0.1, 0.5):
    loss = silog_loss(Tensor(gt * np.exp(c)), gt, mask).item()
    print(f"c={c}: loss {loss:.4f}  closed form {10 * c * np.sqrt(0.15):.4f}")
