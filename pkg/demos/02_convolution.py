"""
The four convolution families
=============================

S, T, ST and FST layers differ only in filter shape. This script builds the
default two-layer stack of each family on a 40 x 16 log-Mel block, prints
the shape after every layer, and checks one layer against a loop oracle.
"""

import numpy as np

from cldnn import conv
from cldnn import models as M

for ct in ("S", "T", "ST", "FST"):
    cfg = M.make_config(ct, "logmel")
    h1, w1 = cfg.conv1.output_shape(40, 16)[1:]
    print(f"{cfg.name:22s} conv1 {cfg.conv1.filter_h}x{cfg.conv1.filter_w} -> "
          f"{h1}x{w1}, conv2 -> {cfg.conv_output_shape()}, BLSTM input {cfg.frame_dim}")

# a valid cross-correlation written as plain loops
rng = np.random.default_rng(1)
spec = conv.ConvLayerSpec(conv.ConvType.ST, 2, 3, 3, 2, stride=(2, 1))
x = rng.standard_normal((2, 7, 6))
p = conv.ConvParams(rng.standard_normal((3, 2, 3, 2)), rng.standard_normal(3))
fast = conv.conv_forward(x, p, spec)
slow = np.zeros_like(fast)
for k in range(3):
    for i in range(fast.shape[1]):
        for j in range(fast.shape[2]):
            slow[k, i, j] = p.bias[k] + np.sum(p.maps[k] * x[:, 2 * i:2 * i + 3, j:j + 2])
print("max |vectorized - loops|:", np.abs(fast - slow).max())

# shapes that break a family's rule are rejected up front
try:
    conv.validate_spec(conv.ConvLayerSpec(conv.ConvType.FST, 1, 1, 39, 5), 40)
except conv.SpecError as e:
    print("rejected:", e)
