"""Reparameterizable dual-resolution segmentation: training-form builder,
lossless deploy-form rewriter, and a forward-only CPU engine."""

from .tensor import (
    F32,
    F64,
    BNParams,
    ConvSpec,
    ConvWeights,
    Tensor4,
    add,
    avg_pool,
    batchnorm,
    bilinear_upsample,
    concat_channels,
    conv2d,
    conv2d_reference,
    global_avg_pool,
    relu,
    resize_bilinear,
)
from .reparam import (
    FusedConv,
    embed_1x1_into_3x3,
    fuse_conv_bn,
    identity_to_conv,
    merge_serial_1x1,
    reparameterize_rb,
    reparameterize_rppm_pair,
    sum_parallel,
)
from .network import (
    VARIANTS,
    NetworkDef,
    NetworkInstance,
    build,
    count_flops,
    count_params,
    forward,
    reparameterize_network,
    stage_shapes,
)
from .metrics import ConfusionMatrix, LabelMap, miou, ohem_ce, pixel_accuracy, total_loss
from .store import WeightStore, convert_checkpoint, load, save, store_from_network
from .config import load_config, parse_config, resolve_config

__version__ = "0.1.0"
