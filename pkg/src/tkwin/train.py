"""Desk-scale training on synthetic translated pairs."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import WindowContext, select_top_k, window_average, window_partition, window_similarity
from .config import PipelineConfig
from .errors import NumericalError, ParameterError
from .loss import LossWeights, pixel_loss, total_loss, window_patch_loss
from .matcher import (
    MatcherParams,
    extract_features,
    init_matcher,
    match_pipeline,
    patch_confidence,
    refine_pairs,
)
from .nn import named_parameters, parameters
from .synthetic import derive_ground_truth, gen_pair
from .tensor import DiffTensor, backward

logger = logging.getLogger(__name__)

TRAIN_SHIFT = 8
TRAIN_NOISE = 0.01


class Adam:
    def __init__(self, params: list[DiffTensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints: little-endian float64 payload plus a JSON manifest


def save_checkpoint(params: MatcherParams, path, config: PipelineConfig | None = None) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = list(named_parameters(params))
    payload = np.concatenate([t.data.reshape(-1) for _, t in named]).astype("<f8")
    bin_path = path.with_suffix(".bin")
    manifest_path = path.with_suffix(".json")
    bin_path.write_bytes(payload.tobytes())
    manifest = {
        "dtype": "<f8",
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "config": config.to_dict() if config is not None else None,
    }
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return bin_path, manifest_path


def load_checkpoint(path, cfg: PipelineConfig | None = None) -> tuple[MatcherParams, PipelineConfig]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    if cfg is None:
        cfg = PipelineConfig.from_dict(manifest["config"]) if manifest.get("config") else PipelineConfig()
    params = init_matcher(cfg)
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    named = dict(named_parameters(params))
    offset = 0
    for entry in manifest["tensors"]:
        t = named[entry["name"]]
        if list(t.shape) != entry["shape"]:
            raise ParameterError(f"checkpoint tensor {entry['name']} has shape {entry['shape']}, expected {t.shape}")
        size = int(np.prod(entry["shape"], dtype=int))
        t.data[...] = flat[offset : offset + size].reshape(t.shape)
        offset += size
    if offset != flat.size:
        raise ParameterError(f"checkpoint payload has {flat.size} values, manifest describes {offset}")
    return params, cfg


# ---------------------------------------------------------------------------


def loss_context(grid: tuple[int, int], cfg: PipelineConfig) -> WindowContext:
    gh, gw = grid
    s = cfg.loss_window
    while s > 1 and (gh % s or gw % s):
        s -= 1
    n = (gh // s) * (gw // s)
    top_k = max(1, min(n, int(round(np.sqrt(n)))))
    return WindowContext.for_grid(gh, gw, s, top_k)


@dataclass
class StepLosses:
    window: float
    patch: float
    pixel: float
    total: float
    sigma2: np.ndarray = field(default=None, repr=False)


def compute_loss(pair, cfg: PipelineConfig, params: MatcherParams, frozen_sigma2=None):
    """Total loss tensor and its components for one synthetic pair.

    ``frozen_sigma2`` replaces the heatmap variances used as pixel-loss
    weights; gradient checks pass the base-point values so the finite
    differences see the same constant weights as the analytic gradient.
    """
    feats = extract_features(pair.image_a, pair.image_b, cfg, params)
    grid = feats.coarse_a.shape[:2]
    ctx = loss_context(grid, cfg)
    ratio = feats.fine_a.shape[0] // grid[0]
    gt = derive_ground_truth(pair.H_gt, pair.image_a.shape, grid, ratio, ctx.s)

    conf = patch_confidence(feats.coarse_a, feats.coarse_b, cfg.match_temperature)
    qa = window_average(window_partition(feats.coarse_a, ctx.s, ctx.top_k))
    kb = window_average(window_partition(feats.coarse_b, ctx.s, ctx.top_k))
    SM = window_similarity(qa, kb)
    idx = select_top_k(SM, ctx.top_k)
    l_w, l_pa = window_patch_loss(SM, idx, conf, ctx, gt.coarse)

    ref = refine_pairs(
        gt.coarse, grid, feats.fine_a, feats.fine_b, cfg.fine_window,
        pair.image_a.shape, cfg.refine_temperature,
    )
    sigma2 = ref.sigma2 if frozen_sigma2 is None else frozen_sigma2
    l_pi = pixel_loss(ref.point_b, sigma2, gt.fine[ref.kept]) if ref.kept else DiffTensor(0.0)
    w = LossWeights(*cfg.loss_weights)
    loss = total_loss(l_w, l_pa, l_pi, w)
    parts = StepLosses(l_w.item(), l_pa.item(), l_pi.item(), loss.item(), ref.sigma2)
    return loss, parts


def training_pair(cfg: PipelineConfig, seed: int, index: int):
    rng = np.random.default_rng([seed, index])
    shift = int(rng.integers(-TRAIN_SHIFT, TRAIN_SHIFT + 1))
    return gen_pair("translate", cfg.height, cfg.width, shift, TRAIN_NOISE, seed=int(rng.integers(2**31)))


@dataclass
class TrainResult:
    losses: list[float]
    components: list[StepLosses]
    params: MatcherParams
    initial_params: dict[str, np.ndarray] = field(default_factory=dict)


def train_tiny(cfg: PipelineConfig, steps: int, seed: int = 0, params: MatcherParams | None = None) -> TrainResult:
    """Adam on the total loss, one freshly generated pair per step."""
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if cfg.features != "learned":
        raise ParameterError("training needs features='learned'")
    params = init_matcher(cfg, seed) if params is None else params
    initial = {n: t.data.copy() for n, t in named_parameters(params)}
    opt = Adam(parameters(params), lr=cfg.learning_rate)
    losses, components = [], []
    for step in range(steps):
        pair = training_pair(cfg, seed, step)
        opt.zero_grad()
        loss, parts = compute_loss(pair, cfg, params)
        if not np.isfinite(parts.total):
            raise NumericalError(f"non-finite loss at step {step}: {parts}")
        backward(loss)
        if not all(np.all(np.isfinite(p.grad)) for p in opt.params):
            raise NumericalError(f"non-finite gradient at step {step}")
        opt.step()
        losses.append(parts.total)
        components.append(parts)
        if step % 50 == 0:
            logger.info("step %d loss %.4f", step, parts.total)
    return TrainResult(losses, components, params, initial)


def held_out_precision(cfg: PipelineConfig, params: MatcherParams, pairs: int = 10, seed: int = 10_000) -> float:
    """Pooled coarse precision of mutual-NN matches on seeded unseen pairs."""
    correct = total = 0
    for k in range(pairs):
        pair = training_pair(cfg, seed, k)
        matches = match_pipeline(pair.image_a, pair.image_b, cfg, params)
        gt = set(derive_ground_truth(pair.H_gt, pair.image_a.shape, matches.grid).coarse)
        total += len(matches.coarse)
        correct += sum((m.i, m.j) in gt for m in matches.coarse)
    return correct / total if total else 0.0
