# # Aggregating text embeddings
#
# Each image carries a K x D set of vectors. Four strategies decide what the
# model sees: per image as is (i), the per-image mean vector (v), the
# dataset-wide mean set (d), or the single dataset-wide mean vector (vd).

import numpy as np

from evp.text import aggregate, synth_embeddings

sets = [synth_embeddings({"scene": i}, k=40, d=768, dtype="float64") for i in range(5)]
for strategy in ("i", "v", "d", "vd"):
    out = aggregate(sets, strategy)
    print(f"{strategy:>2}: {len(out)} set(s) of {out[0].k}x{out[0].d}")

# The dataset mean is exactly order independent in float64, so shuffling the
# images never changes a single bit.

shuffled = [sets[i] for i in (3, 0, 4, 1, 2)]
print("d is order independent:", np.array_equal(aggregate(sets, "d")[0].values, aggregate(shuffled, "d")[0].values))

# vd is d applied to the output of v.

vd = aggregate(sets, "vd")[0].values
composed = aggregate(aggregate(sets, "v"), "d")[0].values
print("max |vd - d(v)| =", np.abs(vd - composed).max())
