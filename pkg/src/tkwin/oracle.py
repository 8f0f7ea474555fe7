"""
Loop-level reference for top-K window attention.

Plain Python lists and floats, one loop per step, sharing no
code with :mod:`tkwin.attention`. Used by the equivalence tests and the
``oracle`` CLI subcommand.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np


def _affine(vec, weight, bias):
    c_in, c_out = len(weight), len(weight[0])
    return [sum(vec[i] * weight[i][j] for i in range(c_in)) + bias[j] for j in range(c_out)]


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def reference_top_k_window_attention(x1, x2, s, top_k, wq, bq, wk, bk, wv, bv, temperature=1.0):
    """Direct transcription; arrays in, nested lists of shape (h, w, c) out."""
    x1 = np.asarray(x1, dtype=float).tolist()
    x2 = np.asarray(x2, dtype=float).tolist()
    wq, wk, wv = (np.asarray(m, dtype=float).tolist() for m in (wq, wk, wv))
    bq, bk, bv = (np.asarray(m, dtype=float).tolist() for m in (bq, bk, bv))
    h, w, c = len(x1), len(x1[0]), len(x1[0][0])

    # window count
    n = h * w // (s * s)
    n_w = w // s

    # projections
    q = [[_affine(x1[r][col], wq, bq) for col in range(w)] for r in range(h)]
    k = [[_affine(x2[r][col], wk, bk) for col in range(w)] for r in range(h)]
    v = [[_affine(x2[r][col], wv, bv) for col in range(w)] for r in range(h)]

    # row-major window partition
    def partition(t):
        windows = []
        for win in range(n):
            r0, c0 = (win // n_w) * s, (win % n_w) * s
            windows.append([t[r0 + dr][c0 + dc] for dr in range(s) for dc in range(s)])
        return windows

    q_w, k_w, v_w = partition(q), partition(k), partition(v)

    # window means
    def average(windows):
        return [[sum(p[ch] for p in win) / len(win) for ch in range(c)] for win in windows]

    q_bar, k_bar, v_bar = average(q_w), average(k_w), average(v_w)

    # window similarity
    sm = [[_dot(q_bar[i], k_bar[j]) for j in range(n)] for i in range(n)]

    # top-k, ties to the lower index
    top = [sorted(range(n), key=lambda j, row=row: (-row[j], j))[:top_k] for row in sm]

    out = [[None] * w for _ in range(h)]
    scale = 1.0 / (math.sqrt(c) * temperature)
    for win in range(n):
        # selected windows plus every summary
        keys = [p for j in top[win] for p in k_w[j]] + k_bar
        values = [p for j in top[win] for p in v_w[j]] + v_bar
        # softmax attention per query
        r0, c0 = (win // n_w) * s, (win % n_w) * s
        for pi, query in enumerate(q_w[win]):
            logits = [_dot(query, key) * scale for key in keys]
            peak = max(logits)
            e = [math.exp(z - peak) for z in logits]
            total = sum(e)
            o = [sum(e[t] * values[t][ch] for t in range(len(keys))) / total for ch in range(c)]
            out[r0 + pi // s][c0 + pi % s] = o
    # outputs were written back in place
    return out


@dataclass(frozen=True)
class OracleCase:
    h: int
    w: int
    c: int
    s: int
    top_k: int
    max_abs_diff: float


def valid_configs(h: int, w: int) -> list[tuple[int, int]]:
    """Every (s, T_k) with s dividing both extents and 1 <= T_k <= n."""
    out = []
    for s in range(1, min(h, w) + 1):
        if h % s == 0 and w % s == 0:
            n = (h // s) * (w // s)
            out.extend((s, tk) for tk in range(1, n + 1))
    return out


def run_oracle_suite(instances: int = 50, seed: int = 0, max_side: int = 8, max_c: int = 4):
    """Compare the batched implementation with the transcription on seeded instances.

    Instance ``i`` draws h, w in [1, max_side], c in [1, max_c] and one of the
    valid (s, T_k) pairs for that grid, cycling through window sides so every
    admissible side gets exercised.
    """
    from .attention import WindowContext, init_attention, top_k_window_attention

    rng = np.random.default_rng(seed)
    cases = []
    start = time.perf_counter()
    for i in range(instances):
        h = int(rng.integers(1, max_side + 1))
        w = int(rng.integers(1, max_side + 1))
        c = int(rng.integers(1, max_c + 1))
        sides = sorted({s for s, _ in valid_configs(h, w)})
        s = sides[i % len(sides)]
        n = (h // s) * (w // s)
        top_k = int(rng.integers(1, n + 1))
        temperature = float(rng.uniform(0.5, 2.0))
        params = init_attention(rng, c)
        for t in (params.bq, params.bk, params.bv):
            t.data[:] = rng.normal(size=c)
        x1 = rng.normal(size=(h, w, c))
        x2 = rng.normal(size=(h, w, c))
        ctx = WindowContext.for_grid(h, w, s, top_k)
        fast = top_k_window_attention(x1, x2, ctx, params, temperature).data
        slow = np.array(
            reference_top_k_window_attention(
                x1, x2, s, top_k,
                params.wq.data, params.bq.data, params.wk.data, params.bk.data,
                params.wv.data, params.bv.data, temperature,
            )
        )
        cases.append(OracleCase(h, w, c, s, top_k, float(np.max(np.abs(fast - slow)))))
    elapsed = time.perf_counter() - start
    return cases, elapsed
