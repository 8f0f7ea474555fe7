"""
Convolutional front end producing a 1/2- and a 1/8-scale feature pyramid.

Layout: entry 3x3 convolution at full resolution, then four transition blocks
(each halving the resolution) interleaved with stages of 1, 2 and 3 MB blocks
at 1/2, 1/4 and 1/8. The 1/16 map is projected to the 1/8 width, upsampled
with nearest neighbour, summed into the 1/8 map and passed through one more
residual MBConv.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, PartitionError
from .nn import FeatureMap, activation, as_tensor, layer_norm, linear, param
from .tensor import DiffTensor, conv2d, depthwise_conv2d, max_pool2x2, reshape, upsample_nearest

DEFAULT_WIDTHS = (8, 16, 32, 64)
EXPANSION = 4


@dataclass
class MBConvParams:
    ln_gamma: DiffTensor
    ln_beta: DiffTensor
    w_expand: DiffTensor
    b_expand: DiffTensor
    dw_kernel: DiffTensor
    dw_bias: DiffTensor
    w_project: DiffTensor
    b_project: DiffTensor

    @property
    def in_channels(self) -> int:
        return self.w_expand.shape[0]

    @property
    def out_channels(self) -> int:
        return self.w_project.shape[1]


@dataclass
class MBBlockParams:
    first: MBConvParams
    second: MBConvParams


@dataclass
class TransBlockParams:
    mbconv: MBConvParams
    pool_weight: DiffTensor
    pool_bias: DiffTensor


@dataclass
class StemParams:
    entry_kernel: DiffTensor
    entry_bias: DiffTensor
    transitions: list[TransBlockParams]
    stages: list[list[MBBlockParams]]
    merge_weight: DiffTensor
    merge_bias: DiffTensor
    merge_mbconv: MBConvParams

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(t.pool_weight.shape[1] for t in self.transitions)


@dataclass
class PyramidFeatures:
    f_half: FeatureMap
    f_eighth: FeatureMap
    levels: dict[int, FeatureMap] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# initialisation


def init_mbconv(
    rng: np.random.Generator,
    c_in: int,
    c_out: int | None = None,
    expansion: int = EXPANSION,
    out_scale: float = 0.5,
) -> MBConvParams:
    c_out = c_in if c_out is None else c_out
    hidden = expansion * c_in
    return MBConvParams(
        ln_gamma=param(np.ones(c_in)),
        ln_beta=param(np.zeros(c_in)),
        w_expand=param(rng.normal(0.0, 1.0 / np.sqrt(c_in), (c_in, hidden))),
        b_expand=param(np.zeros(hidden)),
        dw_kernel=param(rng.normal(0.0, 1.0 / 3.0, (3, 3, hidden))),
        dw_bias=param(np.zeros(hidden)),
        w_project=param(rng.normal(0.0, out_scale / np.sqrt(hidden), (hidden, c_out))),
        b_project=param(np.zeros(c_out)),
    )


def zero_mbconv(c_in: int, c_out: int | None = None, expansion: int = EXPANSION) -> MBConvParams:
    """MBConv whose output is identically zero."""
    c_out = c_in if c_out is None else c_out
    hidden = expansion * c_in
    return MBConvParams(
        ln_gamma=param(np.zeros(c_in)),
        ln_beta=param(np.zeros(c_in)),
        w_expand=param(np.zeros((c_in, hidden))),
        b_expand=param(np.zeros(hidden)),
        dw_kernel=param(np.zeros((3, 3, hidden))),
        dw_bias=param(np.zeros(hidden)),
        w_project=param(np.zeros((hidden, c_out))),
        b_project=param(np.zeros(c_out)),
    )


def init_trans_block(rng: np.random.Generator, c_in: int, c_out: int) -> TransBlockParams:
    return TransBlockParams(
        mbconv=init_mbconv(rng, c_in, c_out),
        pool_weight=param(rng.normal(0.0, 1.0 / np.sqrt(c_in), (c_in, c_out))),
        pool_bias=param(np.zeros(c_out)),
    )


def init_stem(rng: np.random.Generator, widths=DEFAULT_WIDTHS) -> StemParams:
    widths = tuple(int(w) for w in widths)
    if len(widths) != 4:
        raise DimensionError(f"stem needs four widths (1/2 .. 1/16), got {widths}")
    c0 = widths[0]
    transitions = []
    prev = c0
    for w in widths:
        transitions.append(init_trans_block(rng, prev, w))
        prev = w
    stages = [
        [MBBlockParams(init_mbconv(rng, widths[i]), init_mbconv(rng, widths[i])) for _ in range(i + 1)]
        for i in range(3)
    ]
    return StemParams(
        entry_kernel=param(rng.normal(0.0, 1.0 / 3.0, (3, 3, 1, c0))),
        entry_bias=param(np.zeros(c0)),
        transitions=transitions,
        stages=stages,
        merge_weight=param(rng.normal(0.0, 1.0 / np.sqrt(widths[3]), (widths[3], widths[2]))),
        merge_bias=param(np.zeros(widths[2])),
        merge_mbconv=init_mbconv(rng, widths[2]),
    )


# ---------------------------------------------------------------------------
# forward


def _check_channels(x: DiffTensor, p: MBConvParams) -> None:
    if x.shape[-1] != p.in_channels:
        raise DimensionError(f"mbconv expects {p.in_channels} channels, got shape {x.shape}")


def mbconv(F, p: MBConvParams, stride: int = 1, padding: str = "zero") -> FeatureMap:
    """Inverted-residual bottleneck: expand, depthwise 3x3, linear project.

    Pre-normalized by a per-channel layer norm; SiLU after the expansion and
    after the depthwise convolution, none after the projection.
    """
    x = as_tensor(F)
    _check_channels(x, p)
    y = layer_norm(x, p.ln_gamma, p.ln_beta)
    y = activation(linear(y, p.w_expand, p.b_expand))
    y = activation(depthwise_conv2d(y, p.dw_kernel, stride, padding) + p.dw_bias)
    y = linear(y, p.w_project, p.b_project)
    scale = F.scale * stride if isinstance(F, FeatureMap) else stride
    return FeatureMap(y, scale)


def mb_block(F, p: MBBlockParams, padding: str = "zero") -> FeatureMap:
    x = as_tensor(F)
    y = x + mbconv(x, p.first, padding=padding).data
    out = y + mbconv(y, p.second, padding=padding).data
    return FeatureMap(out, F.scale if isinstance(F, FeatureMap) else 1)


def trans_block(F, p: TransBlockParams, padding: str = "zero") -> FeatureMap:
    """Halve the resolution: strided MBConv path plus max-pool and 1x1 projection."""
    x = as_tensor(F)
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise PartitionError(f"trans_block needs even extents, got h={h}, w={w}")
    conv_path = mbconv(x, p.mbconv, stride=2, padding=padding).data
    pool_path = linear(max_pool2x2(x), p.pool_weight, p.pool_bias)
    scale = (F.scale if isinstance(F, FeatureMap) else 1) * 2
    return FeatureMap(conv_path + pool_path, scale)


def upsample(F, factor: int = 2) -> FeatureMap:
    x = as_tensor(F)
    scale = F.scale // factor if isinstance(F, FeatureMap) else 1
    return FeatureMap(upsample_nearest(x, factor), max(scale, 1))


def stem_forward(image, p: StemParams, padding: str = "zero") -> PyramidFeatures:
    """Grayscale (H, W, 1) image to the 1/2 and 1/8 feature maps."""
    x = as_tensor(image)
    if x.ndim == 2:
        x = reshape(x, x.shape + (1,))
    H, W = x.shape[:2]
    if H % 16 or W % 16:
        raise PartitionError(f"stem input extents must be multiples of 16, got H={H}, W={W}")

    feat = FeatureMap(activation(conv2d(x, p.entry_kernel, padding=padding) + p.entry_bias), 1)
    levels: dict[int, FeatureMap] = {}
    for i, trans in enumerate(p.transitions):
        feat = trans_block(feat, trans, padding)
        if i < len(p.stages):
            for block in p.stages[i]:
                feat = mb_block(feat, block, padding)
        levels[feat.scale] = feat

    coarse = linear(levels[16].data, p.merge_weight, p.merge_bias)
    merged = levels[8].data + upsample_nearest(coarse, 2)
    f_eighth = merged + mbconv(merged, p.merge_mbconv, padding=padding).data
    return PyramidFeatures(f_half=levels[2], f_eighth=FeatureMap(f_eighth, 8), levels=levels)
