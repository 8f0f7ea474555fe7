"""Gradient-check suite over the differentiable building blocks."""

from __future__ import annotations

import numpy as np

from .attention import (
    WindowContext,
    attention_block,
    init_attention,
    project_qkv,
    top_k_window_attention,
)
from .config import PipelineConfig
from .gradcheck import GradReport, grad_check
from .matcher import init_matcher
from .nn import named_parameters
from .stem import init_stem, stem_forward
from .synthetic import gen_pair
from .train import compute_loss
from .tensor import DiffTensor, backward, sum_axis

STEP = 1e-5
TOLERANCE = 1e-4


def _weighted(t: DiffTensor, w: np.ndarray) -> DiffTensor:
    return sum_axis(t * w)


def _attention_case(rng, h=4, w=4, c=2, s=2, top_k=2):
    params = init_attention(rng, c)
    for t in (params.bq, params.bk, params.bv, params.bo):
        t.data[:] = rng.normal(0.0, 0.3, size=c)
    x1 = DiffTensor(rng.normal(size=(h, w, c)))
    x2 = DiffTensor(rng.normal(size=(h, w, c)))
    ctx = WindowContext.for_grid(h, w, s, top_k)
    return params, x1, x2, ctx


def check_projections(seed: int = 0) -> list[GradReport]:
    rng = np.random.default_rng(seed)
    params, x1, x2, _ = _attention_case(rng)
    wts = [rng.normal(size=x1.shape) for _ in range(3)]

    def f(_):
        q, k, v = project_qkv(x1, x2, params)
        return _weighted(q, wts[0]) + _weighted(k, wts[1]) + _weighted(v, wts[2])

    out = []
    for name in ("wq", "bq", "wk", "bk", "wv", "bv"):
        out.append(grad_check(f, getattr(params, name), STEP, op_name=f"project_qkv.{name}"))
    out.append(grad_check(f, x1, STEP, op_name="project_qkv.x1"))
    out.append(grad_check(f, x2, STEP, op_name="project_qkv.x2"))
    return out


def check_window_attention(seed: int = 0) -> list[GradReport]:
    rng = np.random.default_rng(seed + 1)
    params, x1, x2, ctx = _attention_case(rng)
    wt = rng.normal(size=x1.shape)

    def f(_):
        return _weighted(top_k_window_attention(x1, x2, ctx, params), wt)

    targets = {"x1": x1, "x2": x2, "wq": params.wq, "wk": params.wk, "wv": params.wv, "bk": params.bk}
    return [grad_check(f, t, STEP, op_name=f"top_k_window_attention.{n}") for n, t in targets.items()]


def check_attention_block(seed: int = 0) -> list[GradReport]:
    """Every parameter tensor of the block, plus both inputs; objective ||out||^2."""
    rng = np.random.default_rng(seed + 2)
    params, x1, x2, ctx = _attention_case(rng)

    def f(_):
        out = attention_block(x1, x2, ctx, params).data
        return sum_axis(out * out)

    reports = [grad_check(f, x1, STEP, op_name="attention_block.x1")]
    reports.append(grad_check(f, x2, STEP, op_name="attention_block.x2"))
    for name, t in named_parameters(params):
        reports.append(grad_check(f, t, STEP, probes=8, seed=seed, op_name=f"attention_block.{name}"))
    return reports


def check_stem(seed: int = 0, size: int = 16, probes: int = 3) -> list[GradReport]:
    rng = np.random.default_rng(seed + 3)
    params = init_stem(rng)
    image = DiffTensor(rng.random((size, size, 1)))
    pyr = stem_forward(image, params)
    w_half = rng.normal(size=pyr.f_half.shape)
    w_eighth = rng.normal(size=pyr.f_eighth.shape)

    def f(_):
        p = stem_forward(image, params)
        return _weighted(p.f_half.data, w_half) + _weighted(p.f_eighth.data, w_eighth)

    reports = [grad_check(f, image, STEP, probes=16, seed=seed, op_name="stem.image")]
    for name, t in named_parameters(params):
        reports.append(grad_check(f, t, STEP, probes=probes, seed=seed, op_name=f"stem.{name}"))
    return reports


def tiny_config() -> PipelineConfig:
    """16x16 images: a 2x2 coarse grid, so two stages and a 3x3 refinement window."""
    return PipelineConfig(size=[16, 16], stages=2, fine_window=3)


def check_total_loss(seed: int = 0, tensors: int = 40, probes: int = 2) -> list[GradReport]:
    """Total training loss on a 16x16 pair w.r.t. an even spread of STEM and encoder tensors."""

    cfg = tiny_config()
    params = init_matcher(cfg, seed)
    pair = gen_pair("translate", 16, 16, 8, 0.01, seed=seed)
    _, parts = compute_loss(pair, cfg, params)
    frozen = parts.sigma2

    def f(_):
        return compute_loss(pair, cfg, params, frozen_sigma2=frozen)[0]

    # key biases shift every score in a softmax row equally, so their exact
    # gradient is zero and a relative error would only measure roundoff
    named = [(n, t) for n, t in named_parameters(params) if not n.endswith(".bk")]
    pick = np.unique(np.linspace(0, len(named) - 1, tensors).round().astype(int))
    return [
        grad_check(f, named[k][1], STEP, probes=probes, seed=seed, op_name=f"total_loss.{named[k][0]}")
        for k in pick
    ]


def key_bias_gradients(seed: int = 0) -> dict[str, float]:
    """Largest analytic |dL/d bk| per attention block of the 16x16 total loss."""
    cfg = tiny_config()
    params = init_matcher(cfg, seed)
    pair = gen_pair("translate", 16, 16, 8, 0.01, seed=seed)
    loss, _ = compute_loss(pair, cfg, params)
    backward(loss)
    return {n: float(np.abs(t.grad).max()) for n, t in named_parameters(params) if n.endswith(".bk")}


def gradient_suite(seed: int = 0) -> list[GradReport]:
    return (
        check_projections(seed)
        + check_window_attention(seed)
        + check_attention_block(seed)
        + check_stem(seed)
        + check_total_loss(seed)
    )
