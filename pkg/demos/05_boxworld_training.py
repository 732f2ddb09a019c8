# # Training on BoxWorld
#
# BoxWorld renders axis-aligned boxes at known depths in front of a far wall.
# Nearer boxes are brighter, so depth is learnable from the image alone. This
# run uses a shrunken config so it finishes in a few seconds. The default
# config (64x64, 500 steps) takes under a minute.

import numpy as np

from evp.harness import RunConfig, evaluate, gen_boxworld, train

cfg = RunConfig.from_dict(
    {
        "steps": 120,
        "backbone": {"channels": [32, 32, 16, 16]},
        "data": {"image_size": 32, "train_size": 64, "eval_size": 16, "embed_k": 8, "embed_dim": 32},
    }
)
data = gen_boxworld(cfg, "train")
print("images", data.images.shape, "depth range", float(data.depth.min()), float(data.depth.max()))

result = train(cfg, data=data)
losses = np.array(result.losses)
print("mean loss, first 10 steps: %.3f   last 10 steps: %.3f" % (losses[:10].mean(), losses[-10:].mean()))

# Compare against predicting the median depth everywhere.

eval_data = gen_boxworld(cfg, "eval")
model = evaluate((cfg, result.model), eval_data)
median = evaluate((cfg, result.model), eval_data, "median")
print("eval RMSE  model %.3f   median baseline %.3f" % (model.rmse, median.rmse))
print(model.to_text())
