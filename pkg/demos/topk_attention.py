"""Show how each interaction stage sizes its key/value set on a 16x16 patch grid.

    python demos/topk_attention.py

Each query attends to the patches of its top-k windows plus one summary per
window, so the key count stays well below the full 256 at every later stage.
"""

import numpy as np

from tkwin import (
    WindowContext,
    attention_block,
    build_kv,
    init_attention,
    interaction_schedule,
    select_top_k,
    top_k_window_attention,
    window_average,
    window_partition,
    window_similarity,
)
from tkwin.oracle import reference_top_k_window_attention

GRID = 16


def main():
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=(GRID, GRID, 8))
    x2 = rng.normal(size=(GRID, GRID, 8))

    print("stage  windows  top_k  side  keys per query")
    for st in interaction_schedule(4):
        s = GRID // st.side
        W = window_partition(x2, s, st.top_k)
        summ = window_average(W)
        idx = select_top_k(window_similarity(summ, summ), st.top_k)
        rows = build_kv(W, W, summ, summ, idx, 0).keys.shape[0]
        print(f"{st.index:5d}  {st.windows:7d}  {st.top_k:5d}  {s:4d}  {rows:4d} of {GRID * GRID}")

    params = init_attention(rng, 8)
    ctx = WindowContext.for_grid(GRID, GRID, 4, 4)
    fast = top_k_window_attention(x1, x2, ctx, params).data
    slow = np.array(
        reference_top_k_window_attention(
            x1, x2, 4, 4, params.wq.data, params.bq.data, params.wk.data, params.bk.data, params.wv.data, params.bv.data
        )
    )
    print(f"batched vs loop reference, max |diff|: {np.abs(fast - slow).max():.2e}")

    out = attention_block(x1, x2, ctx, params)
    print(f"attention block output shape: {out.data.shape}")


if __name__ == "__main__":
    main()
