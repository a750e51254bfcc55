"""Rewriting a three-path training block into one 3x3 convolution.

The block computes ReLU( conv3x3+BN(x) + 1x1+BN -> 1x1+BN (x) + x ).
Every path is affine, so after BN folding the stacked 1x1 pair multiplies
out, 1x1 kernels and the identity embed into 3x3 kernels, and the three
kernels just add.  The trailing ReLU stays outside in both forms.
"""

import numpy as np

from rdrnet.blocks import rb_forward_deploy, rb_forward_train
from rdrnet.network import VARIANTS, build
from rdrnet.reparam import reparameterize_rb
from rdrnet.tensor import Tensor4

net = build(VARIANTS["micro"], 1)
block = net.stage3[0]  # a stride-1 block with all three paths
print("training-form paths:")
print("  dense 3x3:", block.spec3)
print("  1x1 pair :", block.spec1a, "->", block.spec1b)
print("  identity :", block.has_residual)

fused = reparameterize_rb(block)
print("\ndeployment form:", fused.spec)
print("parameters:", fused.param_count,
      f"(= out*(in*9+1) = {block.out_channels}*({block.in_channels}*9+1))")

rng = np.random.default_rng(3)
x = Tensor4(rng.standard_normal((2, block.in_channels, 16, 16)).astype(np.float32))
train_out = rb_forward_train(x, block)
deploy_out = rb_forward_deploy(x, fused)
print("\nmax |train - deploy| =",
      float(np.max(np.abs(train_out.data - deploy_out.data))))

# the center tap of the fused kernel carries the whole 1x1 path + identity
center = fused.weights.weight.data[:, :, 1, 1]
corner = fused.weights.weight.data[:, :, 0, 0]
print("center-tap mean |w| :", float(np.abs(center).mean()))
print("corner-tap mean |w| :", float(np.abs(corner).mean()),
      "(corners come from the 3x3 path alone)")
