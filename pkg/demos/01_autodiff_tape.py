"""
Reverse-mode autodiff on a tape
===============================

Every op records a node; ``Tape.backward`` walks them in reverse. Here we
differentiate a small conv -> ReLU -> mean graph and compare against
central differences.
"""

import numpy as np

from esdnet import autodiff as ad

rng = np.random.default_rng(0)

tape = ad.Tape()
x = tape.leaf("x", rng.standard_normal((1, 3, 8, 8)))
w = tape.leaf("w", rng.standard_normal((4, 3, 3, 3)) * 0.3)
b = tape.leaf("b", np.zeros(4))

y = ad.relu(ad.conv2d(x, w, b, dilation=2, padding=2))
loss = ad.mean_all(y)
grads = tape.backward(loss)

print("loss", loss.item())
print("nodes on tape:", len(tape.nodes))
print("dL/dw shape:", grads["w"].shape)

# the same graph, checked numerically (float64, central differences)
err = ad.grad_check(lambda t: ad.mean_all(ad.relu(ad.conv2d(t[0], t[1], t[2], dilation=2, padding=2))),
                    [x.data, w.data, b.data], eps=1e-5)
print("max relative error vs finite differences: %.2e" % err)

# pixel shuffle is a pure permutation, so down then up is exact
img = rng.random((1, 3, 4, 4))
back = ad.pixel_shuffle(ad.pixel_shuffle(img, 2, "down"), 2, "up").data
print("pixel shuffle round trip exact:", np.array_equal(back, img))
