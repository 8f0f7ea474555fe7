import numpy as np
import pytest

from tkwin.attention import (
    AugmentedKV,
    SimilarityMatrix,
    TopKIndex,
    WindowContext,
    WindowSummary,
    attend,
    attention_block,
    build_kv,
    channel_attention,
    gather_window_features,
    identity_attention,
    init_attention,
    project_qkv,
    select_top_k,
    top_k_window_attention,
    window_average,
    window_partition,
    window_reverse,
    window_similarity,
)
from tkwin.errors import ContractError, DimensionError, ParameterError, PartitionError
from tkwin.gradcheck import grad_check
from tkwin.matcher import interaction_schedule
from tkwin.nn import linear
from tkwin.oracle import reference_top_k_window_attention, run_oracle_suite, valid_configs
from tkwin.suites import check_attention_block
from tkwin.tensor import DiffTensor, sum_axis


def grid_10r_c():
    F = np.array([[10 * r + c for c in range(4)] for r in range(4)], dtype=float)
    return F[..., None]


def random_params(rng, c, biases=True):
    p = init_attention(rng, c)
    if biases:
        for t in (p.bq, p.bk, p.bv):
            t.data[:] = rng.normal(size=c)
    return p


class TestProjection:
    def test_identity(self):
        rng = np.random.default_rng(0)
        x1, x2 = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4, 2))
        q, k, v = project_qkv(x1, x2, identity_attention(2))
        assert np.array_equal(q.data, x1)
        assert np.array_equal(k.data, x2)
        assert np.array_equal(v.data, x2)

    def test_zero_weights(self):
        p = identity_attention(3)
        for t in (p.wq, p.wk, p.wv):
            t.data[:] = 0.0
        q, k, v = project_qkv(np.ones((2, 2, 3)), np.ones((2, 2, 3)), p)
        for t in (q, k, v):
            assert not t.data.any()

    def test_per_position_oracle(self):
        rng = np.random.default_rng(1)
        p = random_params(rng, 3)
        x1, x2 = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
        q, k, v = project_qkv(x1, x2, p)
        for r in range(2):
            for c in range(3):
                np.testing.assert_allclose(q.data[r, c], x1[r, c] @ p.wq.data + p.bq.data, atol=1e-12)
                np.testing.assert_allclose(k.data[r, c], x2[r, c] @ p.wk.data + p.bk.data, atol=1e-12)
                np.testing.assert_allclose(v.data[r, c], x2[r, c] @ p.wv.data + p.bv.data, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            project_qkv(np.ones((2, 2, 2)), np.ones((2, 4, 2)), identity_attention(2))


class TestPartition:
    def test_single_window(self):
        F = np.random.default_rng(0).normal(size=(3, 3, 2))
        W = window_partition(F, 3)
        assert W.ctx.n == 1
        assert np.array_equal(W.data.data[0], F.reshape(9, 2))

    def test_hand_enumeration(self):
        W = window_partition(grid_10r_c(), 2)
        got = W.data.data[..., 0].tolist()
        assert got == [[0, 1, 10, 11], [2, 3, 12, 13], [20, 21, 30, 31], [22, 23, 32, 33]]

    def test_reverse_of_hand_example(self):
        F = grid_10r_c()
        assert np.array_equal(window_reverse(window_partition(F, 2), 4, 4).data, F)

    def test_n_one_reverse_is_reshape(self):
        F = np.arange(8.0).reshape(2, 2, 2)
        W = window_partition(F, 2)
        assert np.array_equal(window_reverse(W, 2, 2).data, W.data.data.reshape(2, 2, 2))

    def test_non_divisible(self):
        with pytest.raises(PartitionError, match="h=4.*w=6.*s=4"):
            window_partition(np.ones((4, 6, 1)), 4)

    def test_reverse_inconsistent_extents(self):
        W = window_partition(np.ones((4, 4, 1)), 2)
        with pytest.raises(DimensionError):
            window_reverse(W, 2, 8)

    def test_round_trip_both_directions(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            s = int(rng.integers(1, 4))
            h, w = s * int(rng.integers(1, 4)), s * int(rng.integers(1, 4))
            F = rng.normal(size=(h, w, int(rng.integers(1, 4))))
            W = window_partition(F, s)
            assert np.array_equal(window_reverse(W, h, w).data, F)
            assert np.array_equal(window_partition(window_reverse(W, h, w), s).data.data, W.data.data)


class TestSummaries:
    def test_s_one(self):
        F = np.random.default_rng(0).normal(size=(2, 3, 2))
        np.testing.assert_array_equal(window_average(window_partition(F, 1)).data.data, F.reshape(6, 2))

    def test_constant_window(self):
        F = np.tile([1.5, -2.0], (4, 4, 1))
        np.testing.assert_allclose(window_average(window_partition(F, 2)).data.data, [[1.5, -2.0]] * 4)

    def test_hand_mean(self):
        F = np.array([[1.0, 2.0], [3.0, 4.0]])[..., None]
        assert window_average(window_partition(F, 2)).data.data.tolist() == [[2.5]]

    def test_similarity_identity(self):
        I = WindowSummary(DiffTensor(np.eye(3)))
        np.testing.assert_array_equal(window_similarity(I, I).scores.data, np.eye(3))

    def test_similarity_zero(self):
        Z = WindowSummary(DiffTensor(np.zeros((4, 2))))
        assert not window_similarity(Z, Z).scores.data.any()

    def test_similarity_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        SM = window_similarity(WindowSummary(DiffTensor(a)), WindowSummary(DiffTensor(b))).scores.data
        for i in range(3):
            for j in range(3):
                assert SM[i, j] == pytest.approx(a[i, 0] * b[j, 0] + a[i, 1] * b[j, 1], abs=1e-12)

    def test_similarity_channel_mismatch(self):
        with pytest.raises(DimensionError):
            window_similarity(WindowSummary(DiffTensor(np.ones((2, 3)))), WindowSummary(DiffTensor(np.ones((2, 2)))))


def sm(rows):
    return SimilarityMatrix(DiffTensor(np.asarray(rows, dtype=float)))


class TestTopKSelection:
    def test_full_permutation(self):
        rows = np.random.default_rng(0).normal(size=(4, 4))
        idx = select_top_k(sm(rows), 4).indices
        for r in range(4):
            assert sorted(idx[r]) == [0, 1, 2, 3]
            assert np.all(np.diff(rows[r, idx[r]]) <= 0)

    def test_hand_row(self):
        assert select_top_k(sm([[0.1, 0.9, 0.5]]), 2).indices.tolist() == [[1, 2]]

    def test_identity_diagonal(self):
        assert select_top_k(sm(np.eye(5)), 1).indices[:, 0].tolist() == list(range(5))

    @pytest.mark.parametrize("k", [0, 4])
    def test_out_of_range(self, k):
        with pytest.raises(ParameterError):
            select_top_k(sm(np.eye(3)), k)

    def test_thousand_random_with_ties(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            rows = rng.integers(0, 3, size=(n, n)).astype(float)  # coarse values force ties
            k = int(rng.integers(1, n + 1))
            expect = np.argsort(-rows, axis=1, kind="stable")[:, :k]
            assert np.array_equal(select_top_k(sm(rows), k).indices, expect)

    def test_positive_scaling_keeps_selection(self):
        rng = np.random.default_rng(5)
        q, k = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        base = select_top_k(window_similarity(WindowSummary(DiffTensor(q)), WindowSummary(DiffTensor(k))), 3)
        scaled = select_top_k(
            window_similarity(WindowSummary(DiffTensor(2.5 * q)), WindowSummary(DiffTensor(0.3 * k))), 3
        )
        assert np.array_equal(base.indices, scaled.indices)


def sentinel_windows():
    """Four 2x2 windows, window w holding the values 100w + patch."""
    F = np.zeros((4, 4, 1))
    for w in range(4):
        wr, wc = divmod(w, 2)
        for p in range(4):
            pr, pc = divmod(p, 2)
            F[2 * wr + pr, 2 * wc + pc, 0] = 100 * w + p
    return window_partition(F, 2)


class TestGatherAndKV:
    def test_single_window_verbatim(self):
        W = sentinel_windows()
        got = gather_window_features(W, TopKIndex(np.array([[3], [0], [0], [0]])), 0).data[:, 0]
        assert got.tolist() == [300, 301, 302, 303]

    def test_complete_permutation(self):
        W = sentinel_windows()
        got = gather_window_features(W, TopKIndex(np.array([[2, 0, 3, 1]] * 4)), 1).data[:, 0]
        assert sorted(got.tolist()) == sorted(W.data.data[..., 0].ravel().tolist())

    def test_hand_enumeration(self):
        W = sentinel_windows()
        got = gather_window_features(W, TopKIndex(np.array([[1, 2], [3, 1], [0, 0], [2, 3]])), 1).data[:, 0]
        assert got.tolist() == [300, 301, 302, 303, 100, 101, 102, 103]

    def test_bad_index(self):
        W = sentinel_windows()
        with pytest.raises(ContractError):
            gather_window_features(W, TopKIndex(np.array([[4]] * 4)), 0)
        with pytest.raises(ContractError):
            gather_window_features(W, TopKIndex(np.array([[0]] * 4)), 7)

    def test_summaries_at_tail(self):
        W = sentinel_windows()
        summ = window_average(W)
        kv = build_kv(W, W, summ, summ, TopKIndex(np.array([[1, 3]] * 4)), 2)
        assert np.array_equal(kv.keys.data[-4:], summ.data.data)
        assert np.array_equal(kv.values.data[-4:], summ.data.data)

    def test_s_one_full_topk(self):
        F = np.random.default_rng(0).normal(size=(2, 3, 2))
        W = window_partition(F, 1)
        summ = window_average(W)
        idx = select_top_k(window_similarity(summ, summ), 6)
        kv = build_kv(W, W, summ, summ, idx, 0)
        assert kv.keys.shape == (12, 2)

    def test_row_count_every_configuration(self):
        rng = np.random.default_rng(1)
        for h, w in [(4, 4), (6, 4), (8, 8), (3, 5)]:
            F = rng.normal(size=(h, w, 2))
            for s, tk in valid_configs(h, w):
                W = window_partition(F, s, tk)
                summ = window_average(W)
                idx = select_top_k(window_similarity(summ, summ), tk)
                for qw in range(W.ctx.n):
                    assert build_kv(W, W, summ, summ, idx, qw).keys.shape[0] == tk * s * s + W.ctx.n


def schedule_stage_counts(grid=16, stages=4):
    out = []
    for st in interaction_schedule(stages):
        s = grid // st.side
        out.append((st.index, s, st.top_k, st.windows, st.top_k * s * s + st.windows))
    return out


def test_kv_count_per_schedule_stage():
    assert [row[-1] for row in schedule_stage_counts()] == [257, 132, 80, 96]
    for _, s, tk, n, rows in schedule_stage_counts():
        W = window_partition(np.zeros((16, 16, 1)), s, tk)
        summ = window_average(W)
        kv = build_kv(W, W, summ, summ, select_top_k(window_similarity(summ, summ), tk), 0)
        assert kv.keys.shape[0] == rows
        if rows < 256:
            assert rows < 16 * 16


class TestWindowAttention:
    def test_constant_x2_gives_constant_output(self):
        rng = np.random.default_rng(0)
        p = random_params(rng, 3)
        x1 = rng.normal(size=(4, 4, 3))
        x2 = np.tile(rng.normal(size=3), (4, 4, 1))
        out = top_k_window_attention(x1, x2, WindowContext.for_grid(4, 4, 2, 2), p).data
        np.testing.assert_allclose(out, np.broadcast_to(out[0, 0], out.shape), atol=1e-12)

    def test_matches_transcription(self):
        rng = np.random.default_rng(1)
        for h, w, s, tk in [(4, 4, 2, 2), (6, 4, 2, 6), (8, 8, 4, 1), (3, 3, 1, 5), (2, 6, 2, 3)]:
            c = 3
            p = random_params(rng, c)
            x1, x2 = rng.normal(size=(h, w, c)), rng.normal(size=(h, w, c))
            fast = top_k_window_attention(x1, x2, WindowContext.for_grid(h, w, s, tk), p, 0.8).data
            slow = reference_top_k_window_attention(
                x1, x2, s, tk, p.wq.data, p.bq.data, p.wk.data, p.bk.data, p.wv.data, p.bv.data, 0.8
            )
            assert np.max(np.abs(fast - np.array(slow))) < 1e-10

    def test_oracle_suite(self):
        cases, elapsed = run_oracle_suite(50, seed=0)
        assert len(cases) == 50
        assert max(c.max_abs_diff for c in cases) < 1e-10
        assert len({c.s for c in cases}) > 3

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, 2)
        ctx = WindowContext.for_grid(4, 4, 2, 3)
        _, weights, _ = top_k_window_attention(
            rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2)), ctx, p, return_weights=True
        )
        assert weights.shape == (4, 4, 3 * 4 + 4)
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_kv_row_permutation_invariance(self):
        rng = np.random.default_rng(3)
        W = window_partition(rng.normal(size=(4, 4, 2)), 2)
        summ = window_average(W)
        kv = build_kv(W, W, summ, summ, select_top_k(window_similarity(summ, summ), 2), 1)
        q = DiffTensor(rng.normal(size=(4, 2)))
        perm = rng.permutation(kv.keys.shape[0])
        shuffled = AugmentedKV(DiffTensor(kv.keys.data[perm]), DiffTensor(kv.values.data[perm]))
        np.testing.assert_allclose(attend(q, kv).data, attend(q, shuffled).data, atol=1e-12)

    def test_batched_equals_per_window_attend(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, 2)
        x1, x2 = rng.normal(size=(4, 6, 2)), rng.normal(size=(4, 6, 2))
        ctx = WindowContext.for_grid(4, 6, 2, 2)
        out = top_k_window_attention(x1, x2, ctx, p).data
        q, k, v = project_qkv(x1, x2, p)
        qw, kw, vw = (window_partition(t, 2, 2) for t in (q, k, v))
        ks, vs = window_average(kw), window_average(vw)
        idx = select_top_k(window_similarity(window_average(qw), ks), 2)
        per = np.stack([attend(qw.data[i], build_kv(kw, vw, ks, vs, idx, i)).data for i in range(ctx.n)])
        np.testing.assert_allclose(out, window_reverse(type(qw)(DiffTensor(per), qw.ctx), 4, 6).data, atol=1e-12)

    def test_grad_check_alg_output_norm(self):
        rng = np.random.default_rng(5)
        p = random_params(rng, 2)
        x2 = DiffTensor(rng.normal(size=(4, 4, 2)))
        ctx = WindowContext.for_grid(4, 4, 2, 2)

        def f(t):
            out = top_k_window_attention(t, x2, ctx, p)
            return sum_axis(out * out)

        assert grad_check(f, DiffTensor(rng.normal(size=(4, 4, 2)))).max_rel_error < 1e-4


class TestBlock:
    def test_identity_params(self):
        x1 = np.random.default_rng(0).normal(size=(4, 4, 3))
        x2 = np.random.default_rng(1).normal(size=(4, 4, 3))
        out = attention_block(x1, x2, WindowContext.for_grid(4, 4, 2, 2), identity_attention(3))
        assert np.array_equal(out.data.data, x1)

    def test_channel_gate_closed(self):
        rng = np.random.default_rng(2)
        p = random_params(rng, 2)
        p.alpha_c.data[...] = 0.0
        p.mbconv = identity_attention(2).mbconv
        x1, x2 = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        ctx = WindowContext.for_grid(4, 4, 2, 2)
        spatial = linear(top_k_window_attention(x1, x2, ctx, p), p.wo, p.bo).data
        expect = x1 + p.alpha_s.data * spatial
        np.testing.assert_allclose(attention_block(x1, x2, ctx, p).data.data, expect, atol=1e-12)

    def test_channel_attention_rows(self):
        rng = np.random.default_rng(3)
        p = random_params(rng, 3)
        x1, x2 = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
        qc, kc, vc = (x.reshape(4, 3) @ w.data for x, w in ((x1, p.wcq), (x2, p.wck), (x2, p.wcv)))
        aff = qc.T @ kc / 4
        mix = np.exp(aff - aff.max(axis=1, keepdims=True))
        mix /= mix.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(channel_attention(x1, x2, p).data, (vc @ mix.T).reshape(2, 2, 3), atol=1e-12)

    def test_alpha_s_gradient(self):
        rng = np.random.default_rng(4)
        p = random_params(rng, 2)
        x1, x2 = rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2))
        ctx = WindowContext.for_grid(4, 4, 2, 2)

        def f(_):
            out = attention_block(x1, x2, ctx, p).data
            return sum_axis(out * out)

        assert grad_check(f, p.alpha_s).max_rel_error < 1e-4

    def test_every_parameter_group(self):
        reports = check_attention_block(seed=0)
        assert len(reports) >= 16
        worst = max(reports, key=lambda r: r.max_rel_error)
        assert worst.max_rel_error < 1e-4, worst
