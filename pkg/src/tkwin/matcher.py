"""
Coarse-to-fine matching: interleaved self/cross attention over a stage
schedule, dual-softmax patch confidences, mutual nearest neighbours, and
correlation-heatmap refinement on the 1/2-scale maps.

Point coordinates are (x, y) in pixels with pixel centres at integer
positions. Patch index ``i`` on a (gh, gw) grid is ``row * gw + col``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, WindowContext, attention_block, init_attention
from .config import PipelineConfig
from .errors import DimensionError, ParameterError, PartitionError
from .nn import FeatureMap, as_tensor
from .stem import StemParams, init_stem, stem_forward
from .tensor import DiffTensor, logsumexp, matmul, reshape, softmax, sqrt, sum_axis, take, transpose


@dataclass(frozen=True)
class Stage:
    index: int
    windows: int
    top_k: int

    @property
    def side(self) -> int:
        """Windows per side of the square window grid."""
        return 2**self.index


def interaction_schedule(num_stages: int) -> list[Stage]:
    if num_stages < 1:
        raise ParameterError(f"num_stages must be >= 1, got {num_stages}")
    return [Stage(m, 4**m, 2**m) for m in range(num_stages)]


@dataclass
class EncoderParams:
    self_blocks: list[AttentionParams]
    cross_blocks: list[AttentionParams]


@dataclass
class MatcherParams:
    stem: StemParams
    encoder: EncoderParams


def init_encoder(rng: np.random.Generator, c: int, num_stages: int) -> EncoderParams:
    return EncoderParams(
        self_blocks=[init_attention(rng, c) for _ in range(num_stages)],
        cross_blocks=[init_attention(rng, c) for _ in range(num_stages)],
    )


def init_matcher(cfg: PipelineConfig, seed: int | None = None) -> MatcherParams:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    stem = init_stem(rng, cfg.widths)
    return MatcherParams(stem=stem, encoder=init_encoder(rng, int(cfg.widths[2]), cfg.stages))


def stage_context(stage: Stage, h: int, w: int, fixed_topk: int | None = None) -> WindowContext:
    side = stage.side
    if h % side or w % side or h // side != w // side:
        raise PartitionError(
            f"stage {stage.index}: a {side}x{side} window grid does not tile the {h}x{w} patch grid"
            " with square windows"
        )
    n = stage.windows
    top_k = stage.top_k if fixed_topk is None else min(fixed_topk, n)
    return WindowContext(h // side, side, side, top_k)


def encode(
    fa,
    fb,
    schedule: list[Stage],
    params: EncoderParams,
    temperature: float = 1.0,
    fixed_topk: int | None = None,
) -> tuple[FeatureMap, FeatureMap]:
    """Per stage: self attention on each map, then cross attention both ways.

    Cross updates for the two maps are computed from the same pre-update pair,
    so swapping the inputs swaps the outputs.
    """
    a, b = as_tensor(fa), as_tensor(fb)
    if a.shape != b.shape:
        raise DimensionError(f"encode: maps differ in shape, {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    for stage, self_p, cross_p in zip(schedule, params.self_blocks, params.cross_blocks):
        ctx = stage_context(stage, h, w, fixed_topk)
        a = attention_block(a, a, ctx, self_p, temperature).data
        b = attention_block(b, b, ctx, self_p, temperature).data
        a, b = (
            attention_block(a, b, ctx, cross_p, temperature).data,
            attention_block(b, a, ctx, cross_p, temperature).data,
        )
    return FeatureMap(a, 8), FeatureMap(b, 8)


# ---------------------------------------------------------------------------
# patch level


@dataclass
class ConfidenceMatrix:
    P: DiffTensor  # (N_a, N_b)
    scores: DiffTensor  # S = <a_i, b_j> / tau


def _flatten(F) -> DiffTensor:
    x = as_tensor(F)
    h, w, c = x.shape
    return reshape(x, (h * w, c))


def patch_confidence(ga, gb, temperature: float = 0.1) -> ConfidenceMatrix:
    a, b = _flatten(ga), _flatten(gb)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"patch_confidence: channel mismatch {a.shape} vs {b.shape}")
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    scores = matmul(a, transpose(b)) * (1.0 / temperature)
    P = softmax(scores, axis=1) * softmax(scores, axis=0)
    return ConfidenceMatrix(P, scores)


def log_confidence(conf: ConfidenceMatrix) -> DiffTensor:
    """log P computed from the scores without forming P (no underflow)."""
    S = conf.scores
    n_a, n_b = S.shape
    row = reshape(logsumexp(S, axis=1), (n_a, 1))
    col = reshape(logsumexp(S, axis=0), (1, n_b))
    return S * 2.0 - row - col


@dataclass(frozen=True)
class CoarseMatch:
    i: int
    j: int
    confidence: float


@dataclass(frozen=True)
class FineMatch:
    point_a: tuple[float, float]
    point_b: tuple[float, float]
    confidence: float
    sigma2: float


@dataclass
class MatchSet:
    coarse: list[CoarseMatch] = field(default_factory=list)
    fine: list[FineMatch] = field(default_factory=list)
    dropped: int = 0
    grid: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "dropped": self.dropped,
            "coarse": [[m.i, m.j, m.confidence] for m in self.coarse],
            "fine": [
                {
                    "point_a": list(m.point_a),
                    "point_b": list(m.point_b),
                    "confidence": m.confidence,
                    "sigma2": m.sigma2,
                }
                for m in self.fine
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchSet":
        return cls(
            coarse=[CoarseMatch(int(i), int(j), float(c)) for i, j, c in d.get("coarse", [])],
            fine=[
                FineMatch(tuple(m["point_a"]), tuple(m["point_b"]), m["confidence"], m["sigma2"])
                for m in d.get("fine", [])
            ],
            dropped=int(d.get("dropped", 0)),
            grid=tuple(d.get("grid", (0, 0))),
        )

    def fine_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pa = np.array([m.point_a for m in self.fine], dtype=float).reshape(-1, 2)
        pb = np.array([m.point_b for m in self.fine], dtype=float).reshape(-1, 2)
        return pa, pb


def mutual_nn_select(conf, theta: float) -> list[CoarseMatch]:
    """Pairs that are each other's arg-max with confidence >= theta."""
    P = conf.P.data if isinstance(conf, ConfidenceMatrix) else np.asarray(
        conf.data if isinstance(conf, DiffTensor) else conf, dtype=float
    )
    if P.size == 0:
        return []
    best_j = np.argmax(P, axis=1)
    best_i = np.argmax(P, axis=0)
    out = []
    for i, j in enumerate(best_j):
        if best_i[j] == i and P[i, j] >= theta:
            out.append(CoarseMatch(int(i), int(j), float(P[i, j])))
    return out


# ---------------------------------------------------------------------------
# pixel level


@dataclass
class RefineResult:
    """Differentiable refinement output for the kept pairs."""

    kept: list[int]  # positions in the input pair list
    point_a: np.ndarray  # (M, 2) pixels
    point_b: DiffTensor  # (M, 2) pixels
    sigma2: np.ndarray  # (M,) pixels^2
    heatmaps: np.ndarray  # (M, w_f, w_f)


def _fine_center(cell: int, grid_w: int, ratio: int) -> tuple[int, int]:
    r, c = divmod(cell, grid_w)
    return r * ratio + ratio // 2, c * ratio + ratio // 2


def refine_pairs(
    pairs,
    grid: tuple[int, int],
    fine_a,
    fine_b,
    w_f: int = 5,
    image_shape: tuple[int, int] | None = None,
    temperature: float = 1.0,
) -> RefineResult:
    """Correlation-heatmap refinement for a list of (i, j) coarse pairs.

    The centre feature of A's w_f x w_f window is correlated with every cell
    of B's window (scaled by 1/sqrt(c) and the temperature); the softmax
    heatmap's expectation is the refined offset and the trace of its
    covariance is sigma^2. Pairs whose window would leave either fine map are
    skipped.
    """
    if w_f < 1 or w_f % 2 == 0:
        raise ParameterError(f"w_f must be a positive odd integer, got {w_f}")
    A, B = as_tensor(fine_a), as_tensor(fine_b)
    fh, fw, c = A.shape
    gh, gw = grid
    if fh % gh or fw % gw or fh // gh != fw // gw:
        raise DimensionError(f"fine map {fh}x{fw} is not a whole multiple of the {gh}x{gw} grid")
    ratio = fh // gh
    stride = 1.0 if image_shape is None else image_shape[0] / fh
    rad = w_f // 2

    def inside(r, col):
        return rad <= r < fh - rad and rad <= col < fw - rad

    kept, centers_a, centers_b = [], [], []
    for pos, (i, j) in enumerate(pairs):
        ra, ca = _fine_center(i, gw, ratio)
        rb, cb = _fine_center(j, gw, ratio)
        if inside(ra, ca) and inside(rb, cb):
            kept.append(pos)
            centers_a.append((ra, ca))
            centers_b.append((rb, cb))

    m = len(kept)
    offsets = np.array([(dx, dy) for dy in range(-rad, rad + 1) for dx in range(-rad, rad + 1)], float)
    if m == 0:
        empty = DiffTensor(np.zeros((0, 2)))
        return RefineResult([], np.zeros((0, 2)), empty, np.zeros(0), np.zeros((0, w_f, w_f)))

    ca_arr = np.array(centers_a)
    cb_arr = np.array(centers_b)
    flat_a = reshape(A, (fh * fw, c))
    flat_b = reshape(B, (fh * fw, c))
    query = take(flat_a, ca_arr[:, 0] * fw + ca_arr[:, 1], axis=0)  # (m, c)
    cell_idx = (cb_arr[:, None, 0] + offsets[None, :, 1].astype(int)) * fw + (
        cb_arr[:, None, 1] + offsets[None, :, 0].astype(int)
    )
    window = take(flat_b, cell_idx, axis=0)  # (m, w_f^2, c)
    corr = matmul(window, reshape(query, (m, c, 1)))  # (m, w_f^2, 1)
    corr = reshape(corr, (m, w_f * w_f)) * (1.0 / np.sqrt(c))
    heat = softmax(corr, axis=-1, temperature=temperature)
    expect = matmul(heat, DiffTensor(offsets))  # (m, 2) in fine cells

    h = heat.data
    mean = h @ offsets
    second = h @ (offsets**2)
    var = np.maximum(second - mean**2, 0.0).sum(axis=1) * stride**2

    def to_px(centers):
        return np.stack([centers[:, 1], centers[:, 0]], axis=1) * stride + (stride - 1.0) / 2.0

    point_a = to_px(ca_arr)
    point_b = expect * stride + to_px(cb_arr)
    return RefineResult(kept, point_a, point_b, var, h.reshape(m, w_f, w_f))


def pixel_refine(
    coarse: list[CoarseMatch],
    grid: tuple[int, int],
    fine_a,
    fine_b,
    w_f: int = 5,
    image_shape: tuple[int, int] | None = None,
    temperature: float = 1.0,
) -> tuple[list[FineMatch], int]:
    """Refined matches plus the number of coarse matches dropped at the border."""
    res = refine_pairs([(m.i, m.j) for m in coarse], grid, fine_a, fine_b, w_f, image_shape, temperature)
    fine = []
    for row, pos in enumerate(res.kept):
        fine.append(
            FineMatch(
                point_a=(float(res.point_a[row, 0]), float(res.point_a[row, 1])),
                point_b=(float(res.point_b.data[row, 0]), float(res.point_b.data[row, 1])),
                confidence=coarse[pos].confidence,
                sigma2=float(res.sigma2[row]),
            )
        )
    return fine, len(coarse) - len(res.kept)


# ---------------------------------------------------------------------------
# feature extraction and the full pipeline


def _block_descriptors(image: np.ndarray, size: int) -> np.ndarray:
    H, W = image.shape
    blocks = image.reshape(H // size, size, W // size, size).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(H // size, W // size, size * size)
    blocks = blocks - blocks.mean(axis=-1, keepdims=True)
    norm = np.linalg.norm(blocks, axis=-1, keepdims=True)
    return blocks / np.maximum(norm, 1e-8)


def handcrafted_features(image) -> tuple[FeatureMap, FeatureMap]:
    """Zero-mean, unit-norm raw intensity blocks: 8x8 at 1/8, 2x2 at 1/2."""
    img = np.asarray(as_tensor(image).data, dtype=float)
    if img.ndim == 3:
        img = img[..., 0]
    H, W = img.shape
    if H % 16 or W % 16:
        raise PartitionError(f"image extents must be multiples of 16, got H={H}, W={W}")
    return FeatureMap(_block_descriptors(img, 8), 8), FeatureMap(_block_descriptors(img, 2), 2)


@dataclass
class Features:
    coarse_a: FeatureMap
    coarse_b: FeatureMap
    fine_a: FeatureMap
    fine_b: FeatureMap


def extract_features(image_a, image_b, cfg: PipelineConfig, params: MatcherParams | None) -> Features:
    if cfg.features == "handcrafted":
        ca, fa = handcrafted_features(image_a)
        cb, fb = handcrafted_features(image_b)
        return Features(ca, cb, fa, fb)
    if params is None:
        raise ParameterError("learned features need matcher parameters")
    pa = stem_forward(_as_image(image_a), params.stem)
    pb = stem_forward(_as_image(image_b), params.stem)
    schedule = interaction_schedule(cfg.stages)
    ga, gb = encode(
        pa.f_eighth, pb.f_eighth, schedule, params.encoder, cfg.attn_temperature, cfg.fixed_topk
    )
    return Features(unit_normalize(ga), unit_normalize(gb), pa.f_half, pb.f_half)


def unit_normalize(F, eps: float = 1e-8) -> FeatureMap:
    """Scale every descriptor to unit L2 norm."""
    x = as_tensor(F)
    norm = sqrt(sum_axis(x * x, axis=-1, keepdims=True) + eps)
    return FeatureMap(x / norm, F.scale if isinstance(F, FeatureMap) else 1)


def _as_image(image) -> DiffTensor:
    x = as_tensor(image)
    return reshape(x, x.shape + (1,)) if x.ndim == 2 else x


def match_pipeline(image_a, image_b, cfg: PipelineConfig, params: MatcherParams | None = None) -> MatchSet:
    """stem -> encode -> dual softmax -> mutual NN -> refinement."""
    a, b = np.asarray(as_tensor(image_a).data), np.asarray(as_tensor(image_b).data)
    if a.shape != b.shape:
        raise DimensionError(f"images differ in shape: {a.shape} vs {b.shape}")
    if cfg.features == "learned" and params is None:
        params = init_matcher(cfg)
    feats = extract_features(a, b, cfg, params)
    conf = patch_confidence(feats.coarse_a, feats.coarse_b, cfg.match_temperature)
    coarse = mutual_nn_select(conf, cfg.threshold)
    grid = feats.coarse_a.shape[:2]
    fine, dropped = pixel_refine(
        coarse, grid, feats.fine_a, feats.fine_b, cfg.fine_window, a.shape[:2], cfg.refine_temperature
    )
    return MatchSet(coarse=coarse, fine=fine, dropped=dropped, grid=tuple(int(g) for g in grid))
