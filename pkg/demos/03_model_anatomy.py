"""
Model anatomy
=============

Builds the three variants, counts parameters, and traces tensor shapes
through one forward pass. Also shows the per-channel fusion weights a SAM
assigns to its three pyramid branches.
"""

import numpy as np

from esdnet.model import ModelConfig, build_model, forward, param_count, sam_forward

for variant in ("standard", "large", "weight_shared"):
    n = param_count(build_model(ModelConfig(variant)))
    print(f"{variant:14s} {n:>10,d} parameters ({n / 1e6:.3f} M)")

model = build_model(ModelConfig(), seed=0)
trace = []
img = np.random.default_rng(0).random((1, 3, 256, 256)).astype(np.float32)
i1, i2, i3 = forward(model, img, trace=trace)
for stage, shape in trace:
    print(f"  {stage:18s} {shape}")
print("predictions:", i1.shape, i2.shape, i3.shape)

# SAM on a random feature map: weights are sigmoid outputs in (0, 1)
params = {k.replace("enc1.sam1", "sam"): v for k, v in model.items() if k.startswith("enc1.sam1")}
feat = np.random.default_rng(1).standard_normal((1, 48, 32, 32)).astype(np.float32)
out, w = sam_forward(params, feat, return_weights=True)
w = w.data.reshape(3, 48)
print("mean fusion weight per branch (full, 1/2, 1/4):", np.round(w.mean(axis=1), 3))
