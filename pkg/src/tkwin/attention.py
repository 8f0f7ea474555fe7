"""
Top-K window attention and the attention block built around it.

Each query window attends at patch resolution to the T_k windows of the
other map whose mean tokens score highest against its own mean query, and
coarsely to the mean tokens of all n windows. Single head, scores scaled by
1/sqrt(c) and an optional temperature.

Window order is row-major over the window grid; patch order inside a window
is row-major as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ParameterError, PartitionError
from .nn import FeatureMap, as_tensor, linear, param
from .stem import MBConvParams, init_mbconv, mbconv, zero_mbconv
from .tensor import (
    DiffTensor,
    concat,
    matmul,
    mean_axis,
    reshape,
    softmax,
    take,
    topk_desc,
    transpose,
)

# gate initial values for the spatial and channel branches
ALPHA_SPATIAL_INIT = 1.0
ALPHA_CHANNEL_INIT = 0.1


@dataclass(frozen=True)
class WindowContext:
    s: int
    n_h: int
    n_w: int
    top_k: int

    def __post_init__(self):
        if self.s < 1 or self.n_h < 1 or self.n_w < 1:
            raise ParameterError(f"invalid window grid {self}")
        if not 1 <= self.top_k <= self.n:
            raise ParameterError(f"top_k={self.top_k} outside [1, {self.n}]")

    @property
    def n(self) -> int:
        return self.n_h * self.n_w

    @classmethod
    def for_grid(cls, h: int, w: int, s: int, top_k: int) -> "WindowContext":
        if s < 1 or h % s or w % s:
            raise PartitionError(f"window side s={s} does not tile h={h}, w={w}")
        return cls(s, h // s, w // s, top_k)


@dataclass
class WindowedFeatures:
    data: DiffTensor  # (n, s*s, c)
    ctx: WindowContext


@dataclass
class WindowSummary:
    data: DiffTensor  # (n, c)


@dataclass
class SimilarityMatrix:
    scores: DiffTensor  # (n, n)


@dataclass
class TopKIndex:
    indices: np.ndarray  # (n, T_k) int


@dataclass
class AugmentedKV:
    keys: DiffTensor  # (T_k*s*s + n, c)
    values: DiffTensor


@dataclass
class AttentionParams:
    wq: DiffTensor
    bq: DiffTensor
    wk: DiffTensor
    bk: DiffTensor
    wv: DiffTensor
    bv: DiffTensor
    wo: DiffTensor
    bo: DiffTensor
    wcq: DiffTensor
    wck: DiffTensor
    wcv: DiffTensor
    alpha_s: DiffTensor
    alpha_c: DiffTensor
    mbconv: MBConvParams

    @property
    def channels(self) -> int:
        return self.wq.shape[0]


def init_attention(rng: np.random.Generator, c: int, mb_out_scale: float = 0.5) -> AttentionParams:
    def w():
        return param(rng.normal(0.0, 1.0 / np.sqrt(c), (c, c)))

    def b():
        return param(np.zeros(c))

    return AttentionParams(
        wq=w(), bq=b(), wk=w(), bk=b(), wv=w(), bv=b(), wo=w(), bo=b(),
        wcq=w(), wck=w(), wcv=w(),
        alpha_s=param(ALPHA_SPATIAL_INIT),
        alpha_c=param(ALPHA_CHANNEL_INIT),
        mbconv=init_mbconv(rng, c, out_scale=mb_out_scale),
    )


def identity_attention(c: int) -> AttentionParams:
    """Identity projections, zero biases, both gates closed and a zero MBConv."""

    def eye():
        return param(np.eye(c))

    def b():
        return param(np.zeros(c))

    return AttentionParams(
        wq=eye(), bq=b(), wk=eye(), bk=b(), wv=eye(), bv=b(), wo=eye(), bo=b(),
        wcq=eye(), wck=eye(), wcv=eye(),
        alpha_s=param(0.0),
        alpha_c=param(0.0),
        mbconv=zero_mbconv(c),
    )


# ---------------------------------------------------------------------------
# Algorithm steps


def project_qkv(x1, x2, params: AttentionParams):
    a, b = as_tensor(x1), as_tensor(x2)
    if a.shape != b.shape:
        raise DimensionError(f"project_qkv: x1 {a.shape} and x2 {b.shape} differ")
    q = linear(a, params.wq, params.bq)
    k = linear(b, params.wk, params.bk)
    v = linear(b, params.wv, params.bv)
    return q, k, v


def window_partition(F, s: int, top_k: int = 1) -> WindowedFeatures:
    """(h, w, c) -> (n, s*s, c), windows and patches both row-major."""
    x = as_tensor(F)
    if x.ndim != 3:
        raise DimensionError(f"window_partition needs (h, w, c), got {x.shape}")
    h, w, c = x.shape
    if s < 1 or h % s or w % s:
        raise PartitionError(f"cannot partition h={h}, w={w} into windows of side s={s}")
    nh, nw = h // s, w // s
    ctx = WindowContext(s, nh, nw, min(top_k, nh * nw))
    y = reshape(x, (nh, s, nw, s, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return WindowedFeatures(reshape(y, (nh * nw, s * s, c)), ctx)


def window_reverse(W: WindowedFeatures, h: int, w: int) -> DiffTensor:
    n, ss, c = W.data.shape
    s = W.ctx.s
    if ss != s * s or n != W.ctx.n or h * w != n * ss or h != W.ctx.n_h * s or w != W.ctx.n_w * s:
        raise DimensionError(
            f"window_reverse: {n} windows of {ss} patches do not form an {h}x{w} grid with s={s}"
        )
    y = reshape(W.data, (W.ctx.n_h, W.ctx.n_w, s, s, c))
    y = transpose(y, (0, 2, 1, 3, 4))
    return reshape(y, (h, w, c))


def window_average(W: WindowedFeatures) -> WindowSummary:
    return WindowSummary(mean_axis(W.data, 1))


def window_similarity(qs: WindowSummary, ks: WindowSummary) -> SimilarityMatrix:
    if qs.data.shape[-1] != ks.data.shape[-1]:
        raise DimensionError(
            f"window_similarity: channel mismatch {qs.data.shape} vs {ks.data.shape}"
        )
    return SimilarityMatrix(matmul(qs.data, transpose(ks.data)))


def select_top_k(SM: SimilarityMatrix, top_k: int) -> TopKIndex:
    scores = SM.scores.data
    n = scores.shape[1]
    if not 1 <= top_k <= n:
        raise ParameterError(f"select_top_k: T_k={top_k} outside [1, {n}]")
    return TopKIndex(np.array([topk_desc(row, top_k) for row in scores], dtype=np.intp))


def gather_window_features(W: WindowedFeatures, idx: TopKIndex, query_window: int) -> DiffTensor:
    n, ss, c = W.data.shape
    if not 0 <= query_window < idx.indices.shape[0]:
        raise ContractError(f"query window {query_window} outside [0, {idx.indices.shape[0]})")
    row = idx.indices[query_window]
    if np.any(row < 0) or np.any(row >= n):
        raise ContractError(f"top-k row {row.tolist()} references windows outside [0, {n})")
    picked = take(W.data, row, axis=0)
    return reshape(picked, (len(row) * ss, c))


def build_kv(
    k_w: WindowedFeatures,
    v_w: WindowedFeatures,
    ks: WindowSummary,
    vs: WindowSummary,
    idx: TopKIndex,
    query_window: int,
) -> AugmentedKV:
    if k_w.data.shape != v_w.data.shape or ks.data.shape != vs.data.shape:
        raise DimensionError("build_kv: key and value shapes disagree")
    keys = concat([gather_window_features(k_w, idx, query_window), ks.data], axis=0)
    values = concat([gather_window_features(v_w, idx, query_window), vs.data], axis=0)
    return AugmentedKV(keys, values)


def attend(q_rows: DiffTensor, kv: AugmentedKV, temperature: float = 1.0) -> DiffTensor:
    """Scaled dot-product attention of (m, c) queries over one AugmentedKV."""
    c = q_rows.shape[-1]
    scores = matmul(q_rows, transpose(kv.keys)) * (1.0 / np.sqrt(c))
    return matmul(softmax(scores, axis=-1, temperature=temperature), kv.values)


def top_k_window_attention(
    x1,
    x2,
    ctx: WindowContext,
    params: AttentionParams,
    temperature: float = 1.0,
    return_weights: bool = False,
):
    """Batched top-K window attention; returns an (h, w, c) tensor.

    With ``return_weights`` the (n, s*s, T_k*s*s + n) attention weights and
    the top-k table are returned as well.
    """
    a, b = as_tensor(x1), as_tensor(x2)
    h, w, c = a.shape
    if a.shape != b.shape:
        raise DimensionError(f"top_k_window_attention: x1 {a.shape} and x2 {b.shape} differ")
    if ctx.n_h * ctx.s != h or ctx.n_w * ctx.s != w:
        raise PartitionError(f"window context {ctx} does not tile an {h}x{w} map")
    s, n, tk = ctx.s, ctx.n, ctx.top_k

    q, k, v = project_qkv(a, b, params)
    q_w = window_partition(q, s, tk)
    k_w = window_partition(k, s, tk)
    v_w = window_partition(v, s, tk)
    q_bar, k_bar, v_bar = window_average(q_w), window_average(k_w), window_average(v_w)
    idx = select_top_k(window_similarity(q_bar, k_bar), tk)

    flat = idx.indices.reshape(-1)
    k_fine = reshape(take(k_w.data, flat, axis=0), (n, tk * s * s, c))
    v_fine = reshape(take(v_w.data, flat, axis=0), (n, tk * s * s, c))
    every = np.zeros(n, dtype=np.intp)
    k_sum = take(reshape(k_bar.data, (1, n, c)), every, axis=0)
    v_sum = take(reshape(v_bar.data, (1, n, c)), every, axis=0)
    keys = concat([k_fine, k_sum], axis=1)
    values = concat([v_fine, v_sum], axis=1)

    scores = matmul(q_w.data, transpose(keys, (0, 2, 1))) * (1.0 / np.sqrt(c))
    weights = softmax(scores, axis=-1, temperature=temperature)
    out = window_reverse(WindowedFeatures(matmul(weights, values), q_w.ctx), h, w)
    if return_weights:
        return out, weights, idx
    return out


def channel_attention(x1, x2, params: AttentionParams, temperature: float = 1.0) -> DiffTensor:
    """Transposed (c x c) attention between channels.

    The channel affinity is the spatial mean of products of projected
    channels; its row softmax mixes the projected value channels.
    """
    a, b = as_tensor(x1), as_tensor(x2)
    h, w, c = a.shape
    qc = reshape(linear(a, params.wcq), (h * w, c))
    kc = reshape(linear(b, params.wck), (h * w, c))
    vc = reshape(linear(b, params.wcv), (h * w, c))
    affinity = matmul(transpose(qc), kc) * (1.0 / (h * w))
    mix = softmax(affinity, axis=-1, temperature=temperature)
    return reshape(matmul(vc, transpose(mix)), (h, w, c))


def attention_block(x1, x2, ctx: WindowContext, params: AttentionParams, temperature: float = 1.0) -> FeatureMap:
    """x1 + a_s*V_s + a_c*V_c, followed by a residual MBConv."""
    a = as_tensor(x1)
    spatial = linear(top_k_window_attention(x1, x2, ctx, params, temperature), params.wo, params.bo)
    chan = channel_attention(x1, x2, params, temperature)
    y = a + params.alpha_s * spatial + params.alpha_c * chan
    out = y + mbconv(y, params.mbconv).data
    return FeatureMap(out, x1.scale if isinstance(x1, FeatureMap) else 1)
