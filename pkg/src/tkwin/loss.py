"""
Training objective: latent-window negative log-likelihood for coarse pairs,
variance-weighted refinement loss, and their weighted sum.

For a ground-truth pair (i, j) with query window W(i) and partner window
W(j), the window term is the log-probability that W(j) is among the top-k
windows of W(i), or that it falls in the leftover bucket when it is not;
the bucket's logit is the logsumexp of the excluded windows so the restricted
distribution normalizes over all n. The patch term is the log of the
dual-softmax confidence renormalized over the patches of W(j).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .attention import SimilarityMatrix, TopKIndex, WindowContext
from .errors import ContractError, DegenerateInputError, ParameterError
from .matcher import ConfidenceMatrix, log_confidence
from .tensor import DiffTensor, constant, logsumexp, mean_axis, sum_axis, take

SIGMA2_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    window: float = 1.0
    patch: float = 1.0
    pixel: float = 0.25

    def __post_init__(self):
        values = (self.window, self.patch, self.pixel)
        if any(v < 0 for v in values) or not any(v > 0 for v in values):
            raise ParameterError(f"loss weights must be nonnegative with one positive, got {values}")


def window_of(patch: int, ctx: WindowContext) -> int:
    gw = ctx.n_w * ctx.s
    r, c = divmod(int(patch), gw)
    return (r // ctx.s) * ctx.n_w + c // ctx.s


def window_patches(window: int, ctx: WindowContext) -> np.ndarray:
    gw = ctx.n_w * ctx.s
    wr, wc = divmod(int(window), ctx.n_w)
    rows = wr * ctx.s + np.arange(ctx.s)
    cols = wc * ctx.s + np.arange(ctx.s)
    return (rows[:, None] * gw + cols[None, :]).reshape(-1)


def _check_pairs(pairs, n_a: int, n_b: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    if np.any(arr < 0) or np.any(arr[:, 0] >= n_a) or np.any(arr[:, 1] >= n_b):
        raise ParameterError(f"patch pair outside a {n_a}x{n_b} grid")
    return arr


def _assignment_logprobs(SM: SimilarityMatrix, idx: TopKIndex, ctx: WindowContext, pairs) -> DiffTensor:
    n_patches = ctx.n * ctx.s * ctx.s
    arr = _check_pairs(pairs, n_patches, n_patches)
    wi = np.array([window_of(i, ctx) for i in arr[:, 0]], dtype=np.intp)
    wj = np.array([window_of(j, ctx) for j in arr[:, 1]], dtype=np.intp)
    rows = take(SM.scores, wi, axis=0)  # (m, n)
    mask = np.full(rows.shape, -np.inf)
    for m, (qi, kj) in enumerate(zip(wi, wj)):
        top = idx.indices[qi]
        if kj in top:
            mask[m, kj] = 0.0
        else:
            excluded = np.setdiff1d(np.arange(ctx.n), top)
            mask[m, excluded] = 0.0
    return logsumexp(rows + mask, axis=1) - logsumexp(rows, axis=1)


def _patch_logprobs(conf: ConfidenceMatrix, ctx: WindowContext, pairs, windows=None) -> DiffTensor:
    logP = log_confidence(conf)
    n_a, n_b = logP.shape
    arr = _check_pairs(pairs, n_a, n_b)
    rows = take(logP, arr[:, 0], axis=0)  # (m, n_b)
    pick = np.full(rows.shape, -np.inf)
    cand = np.full(rows.shape, -np.inf)
    for m, (_, j) in enumerate(arr):
        k = window_of(j, ctx) if windows is None else int(windows[m])
        members = window_patches(k, ctx)
        if j not in members:
            raise ContractError(f"patch {j} is not inside window {k}")
        pick[m, j] = 0.0
        cand[m, members] = 0.0
    return logsumexp(rows + pick, axis=1) - logsumexp(rows + cand, axis=1)


def window_assignment_logprob(SM: SimilarityMatrix, idx: TopKIndex, ctx: WindowContext, pair) -> DiffTensor:
    """log P(Z_ij = k | window features) for one patch pair."""
    return _assignment_logprobs(SM, idx, ctx, [pair])[0]


def assignment_distribution(SM: SimilarityMatrix, idx: TopKIndex, window: int) -> np.ndarray:
    """Probabilities of the T_k selected windows followed by the leftover bucket."""
    row = SM.scores.data[window]
    top = idx.indices[window]
    peak = row.max()
    e = np.exp(row - peak)
    total = e.sum()
    rest = np.setdiff1d(np.arange(row.size), top)
    return np.append(e[top] / total, e[rest].sum() / total)


def patch_match_logprob(conf: ConfidenceMatrix, ctx: WindowContext, pair, window: int | None = None) -> DiffTensor:
    """log P(m_ij | Z_ij = k, patch features): confidence renormalized over window k."""
    windows = None if window is None else [window]
    return _patch_logprobs(conf, ctx, [pair], windows)[0]


def window_patch_loss(SM: SimilarityMatrix, idx: TopKIndex, conf: ConfidenceMatrix, ctx: WindowContext, gt_pairs):
    """(L_w, L_pa): negated mean log-likelihoods over the ground-truth pairs."""
    if len(gt_pairs) == 0:
        raise DegenerateInputError("window_patch_loss needs at least one ground-truth pair")
    lw = mean_axis(_assignment_logprobs(SM, idx, ctx, gt_pairs), 0) * -1.0
    lpa = mean_axis(_patch_logprobs(conf, ctx, gt_pairs), 0) * -1.0
    return lw, lpa


def pixel_loss(predicted, sigma2, gt_fine) -> DiffTensor:
    """Mean of ||predicted - gt||^2 / sigma^2 with sigma^2 held constant.

    An empty match set gives 0 and a RuntimeWarning.
    """
    pred = constant(predicted)
    s2 = np.maximum(np.asarray(sigma2, dtype=float).reshape(-1), SIGMA2_FLOOR)
    if pred.shape[0] == 0:
        warnings.warn("pixel_loss: no refined matches, returning 0", RuntimeWarning, stacklevel=2)
        return DiffTensor(0.0)
    diff = pred - np.asarray(gt_fine, dtype=float).reshape(-1, 2)
    per_pair = sum_axis(diff * diff, axis=1) * (1.0 / s2)
    return mean_axis(per_pair, 0)


def total_loss(l_w, l_pa, l_pi, weights: LossWeights) -> DiffTensor:
    return constant(l_w) * weights.window + constant(l_pa) * weights.patch + constant(l_pi) * weights.pixel
