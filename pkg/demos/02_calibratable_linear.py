#!/usr/bin/env python3
"""What a calibratable linear layer is, in one dimension.

A CaLinear holds M basis affine maps; its effective map is their
softmax-weighted mixture, and the weights come from a single scalar of
context fed through a tiny calibration MLP.  Here we hand the layer two
1-D bases, then recover a target mixture *by tuning only the context
scalar* -- the basis maps and the calibration MLP stay frozen.
"""

import numpy as np

from metafn import tensor as T
from metafn.calinear import CaLinear
from metafn.nn import Parameter
from metafn.optim import AdamW
from metafn.tensor import Tensor

rng = np.random.default_rng(0)

layer = CaLinear(d_in=1, d_out=1, n_basis=2, rng=rng, name="demo", cal_hidden=8)
layer.weight.data = np.array([[[2.0]], [[-1.0]]])   # basis 1: 2z + 1
layer.bias.data = np.array([[1.0], [0.0]])          # basis 2: -z
# give the calibration MLP some structure so the context has leverage
layer.cal_w1.data = rng.standard_normal((1, 8))
layer.cal_w2.data = rng.standard_normal((8, 2))

print("=== the mixture interpolates between the bases ===")
z = Tensor(np.array([[[2.0]]]))
for v_val in (-2.0, 0.0, 2.0):
    with T.no_grad():
        c = layer.coefficients(Tensor([v_val]))
        out = layer.forward(z, c)
    print(f"context {v_val:+.1f} -> coefficients {np.round(c.data[0], 3)} "
          f"-> f(2) = {out.data[0, 0, 0]:+.3f}")

print("\n=== calibrating the context to hit a target function ===")
# target: 0.3*(2z+1) + 0.7*(-z), sampled on a grid
grid = np.linspace(-3, 3, 64).reshape(1, 64, 1)
target = 0.3 * (2 * grid + 1) + 0.7 * (-grid)

v = Parameter(np.zeros(64), "context")  # one scalar per grid position
opt = AdamW([v], lr=0.05, weight_decay=0.0)
for step in range(300):
    c = layer.coefficients(v)
    pred = layer.forward(Tensor(grid), c)
    diff = pred - target
    loss = T.tmean(diff * diff)
    loss.backward()
    opt.step()
    opt.zero_grad()
    if step % 100 == 0 or step == 299:
        print(f"step {step:3d}: fit error {loss.item():.2e}")

with T.no_grad():
    final = layer.coefficients(v).data
print(f"recovered mixture weights (want ~[0.3, 0.7]): {np.round(final.mean(axis=0), 3)}")
print("only the context moved; the bases and calibration MLP never changed.")
