"""Folding frozen batch-norm into a convolution, step by step.

A conv followed by inference-time BN is an affine function of an affine
function, so one convolution with adjusted weights and bias computes the
same thing.  This walks the algebra on a small example and measures the
round-off, which is the only difference.
"""

import numpy as np

from rdrnet import BNParams, ConvSpec, ConvWeights, Tensor4, batchnorm, conv2d
from rdrnet.reparam import fuse_conv_bn

rng = np.random.default_rng(0)

spec = ConvSpec(in_channels=3, out_channels=4, kernel=3, stride=1, padding=1)
w = ConvWeights(Tensor4(rng.standard_normal((4, 3, 3, 3)).astype(np.float32) / 5))
bn = BNParams(
    gamma=rng.uniform(0.5, 1.5, 4).astype(np.float32),
    beta=rng.normal(0, 0.3, 4).astype(np.float32),
    mean=rng.normal(0, 0.3, 4).astype(np.float32),
    var=rng.uniform(0.5, 1.5, 4).astype(np.float32),
    eps=1e-5,
)

print("per-channel BN factors:")
print("  gamma:", np.round(bn.gamma, 3))
print("  sqrt(var+eps):", np.round(np.sqrt(bn.var + bn.eps), 3))

fused = fuse_conv_bn(spec, w, bn)
scale = bn.gamma / np.sqrt(bn.var + np.float32(bn.eps))
print("\nfold scale gamma/sqrt(var+eps):", np.round(scale, 3))
print("fused bias (was bias-free conv):", np.round(fused.weights.bias, 3))

x = Tensor4(rng.standard_normal((1, 3, 8, 8)).astype(np.float32))
two_step = batchnorm(conv2d(x, spec, w), bn)
one_step = conv2d(x, fused.spec, fused.weights)
print("\nmax |two-step - one-step| =",
      float(np.max(np.abs(two_step.data - one_step.data))))
print("(pure float32 round-off; in float64 it drops below 1e-15)")
