import numpy as np
import pytest

from rdrnet.tensor import BNParams, ConvSpec, ConvWeights, Tensor4, np_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_tensor(rng, dims, dtype="f32", scale=1.0):
    return Tensor4((rng.standard_normal(dims) * scale).astype(np_dtype(dtype)))


def rand_conv_weights(rng, spec, dtype="f32", bias=False):
    dims = (
        spec.out_channels,
        spec.in_channels // spec.groups,
        spec.kernel,
        spec.kernel,
    )
    fan_in = dims[1] * spec.kernel * spec.kernel
    w = (rng.standard_normal(dims) / np.sqrt(fan_in)).astype(np_dtype(dtype))
    b = rng.standard_normal(spec.out_channels).astype(np_dtype(dtype)) if bias else None
    return ConvWeights(Tensor4(w), b)


def rand_bn(rng, channels, dtype="f32", eps=1e-5):
    dt = np_dtype(dtype)
    return BNParams(
        gamma=rng.uniform(0.5, 1.5, channels).astype(dt),
        beta=rng.normal(0.0, 0.3, channels).astype(dt),
        mean=rng.normal(0.0, 0.3, channels).astype(dt),
        var=rng.uniform(0.5, 1.5, channels).astype(dt),
        eps=eps,
    )


def identity_bn(channels, dtype="f32"):
    # eps must stay positive; 1e-30 underflows in var+eps so sqrt(1+eps) == 1
    dt = np_dtype(dtype)
    return BNParams(
        gamma=np.ones(channels, dt),
        beta=np.zeros(channels, dt),
        mean=np.zeros(channels, dt),
        var=np.ones(channels, dt),
        eps=1e-30,
    )


def rand_convbn(rng, spec, dtype="f32"):
    from rdrnet.blocks import ConvBN

    return ConvBN(spec, rand_conv_weights(rng, spec, dtype), rand_bn(rng, spec.out_channels, dtype))


def rand_rb(rng, cin, cout, stride=1, dtype="f32", use_1x1=True, use_second=True,
            residual=None, identity_bn_path=False):
    from rdrnet.blocks import RBParams
    from rdrnet.tensor import ConvSpec

    if residual is None:
        residual = stride == 1 and cin == cout
    spec3 = ConvSpec(cin, cout, kernel=3, stride=stride, padding=1)
    kw = dict(
        spec3=spec3,
        w3=rand_conv_weights(rng, spec3, dtype),
        bn3=rand_bn(rng, cout, dtype),
        has_residual=residual,
    )
    if use_1x1:
        spec1a = ConvSpec(cin, cout, kernel=1, stride=stride)
        kw.update(
            spec1a=spec1a,
            w1a=rand_conv_weights(rng, spec1a, dtype),
            bn1a=rand_bn(rng, cout, dtype),
        )
        if use_second:
            spec1b = ConvSpec(cout, cout, kernel=1, stride=1)
            kw.update(
                spec1b=spec1b,
                w1b=rand_conv_weights(rng, spec1b, dtype),
                bn1b=rand_bn(rng, cout, dtype),
            )
    if residual and identity_bn_path:
        kw["bn_res"] = rand_bn(rng, cout, dtype)
    return RBParams(**kw)


def max_abs_diff(a, b):
    da = a.data if isinstance(a, Tensor4) else np.asarray(a)
    db = b.data if isinstance(b, Tensor4) else np.asarray(b)
    return float(np.max(np.abs(da.astype(np.float64) - db.astype(np.float64))))
