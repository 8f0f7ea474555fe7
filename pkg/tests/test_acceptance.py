"""Acceptance criteria, one test each.

Every test prints a single ``[ACCEPT n] PASS|FAIL ...`` line. The lines are
also collected into the terminal summary by conftest.py, so any pytest run
that includes this file ends with the full table.
"""

import json
import time

import numpy as np

from tkwin import cli
from tkwin.attention import (
    SimilarityMatrix,
    WindowContext,
    build_kv,
    select_top_k,
    window_average,
    window_partition,
    window_reverse,
    window_similarity,
)
from tkwin.config import PipelineConfig
from tkwin.evaluate import corner_error
from tkwin.homography import RansacOptions, estimate_from_matches, estimate_homography, project
from tkwin.loss import assignment_distribution, patch_match_logprob, window_assignment_logprob, window_of, window_patches
from tkwin.matcher import init_matcher, interaction_schedule, match_pipeline, patch_confidence
from tkwin.oracle import run_oracle_suite
from tkwin.suites import TOLERANCE, gradient_suite, tiny_config
from tkwin.synthetic import derive_ground_truth, gen_pair
from tkwin.tensor import DiffTensor
from tkwin.train import compute_loss, held_out_precision, train_tiny, training_pair

ORACLE_TOL = 1e-10
ORACLE_SECONDS = 10.0
GRAD_SECONDS = 60.0
IDENTITY_TOL = 1e-9
SUM_TOL = 1e-12
AGREEMENT = 0.95
CORNER_PX = 1.0
MATCH_SECONDS = 30.0
LOSS_RATIO = 0.5
PRECISION = 0.8
TRAIN_SECONDS = 300.0
EXACT_PX = 1e-6
OUTLIER_PX = 0.5

RESULTS = []


def report(n, name, ok, detail):
    line = f"[ACCEPT {n:>2}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_01_oracle_equivalence():
    start = time.perf_counter()
    cases, _ = run_oracle_suite(50, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(c.max_abs_diff for c in cases)
    sides = sorted({c.s for c in cases})
    ok = len(cases) == 50 and worst < ORACLE_TOL and elapsed < ORACLE_SECONDS
    report(1, "oracle equivalence", ok, f"max |diff| {worst:.2e} over {len(cases)} instances, sides {sides}, {elapsed:.2f} s")


def test_02_kv_shape_law():
    grid = 16
    F = np.random.default_rng(0).normal(size=(grid, grid, 2))
    rows_seen, ok = [], True
    for st in interaction_schedule(4):
        s = grid // st.side
        W = window_partition(F, s, st.top_k)
        summ = window_average(W)
        idx = select_top_k(window_similarity(summ, summ), st.top_k)
        expect = st.top_k * s * s + st.windows
        counts = {build_kv(W, W, summ, summ, idx, q).keys.shape[0] for q in range(W.ctx.n)}
        ok &= counts == {expect}
        if expect < grid * grid:
            ok &= max(counts) < grid * grid
        rows_seen.append(expect)
    report(2, "augmented KV shape law", ok, f"rows per stage {rows_seen} on a {grid}x{grid} grid")


def test_03_schedule_law():
    got = [(st.windows, st.top_k) for st in interaction_schedule(6)]
    expect = [(4**m, 2**m) for m in range(6)]
    report(3, "interaction schedule", got == expect, f"{got}")


def test_04_gradient_suite():
    start = time.perf_counter()
    reports = gradient_suite(seed=0)
    elapsed = time.perf_counter() - start
    worst = max(reports, key=lambda r: r.max_rel_error)
    groups = sorted({r.op_name.split(".")[0] for r in reports})
    ok = all(r.passed(TOLERANCE) for r in reports) and elapsed < GRAD_SECONDS
    report(
        4,
        "gradient suite",
        ok,
        f"{len(reports)} checks in {groups}, worst {worst.op_name} {worst.max_rel_error:.2e}, {elapsed:.1f} s",
    )


def test_05_loss_identity():
    worst_identity = worst_sum = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ctx = WindowContext.for_grid(8, 8, 2, 3)
        SM = SimilarityMatrix(DiffTensor(rng.normal(size=(ctx.n, ctx.n)) * 2))
        idx = select_top_k(SM, 3)
        conf = patch_confidence(rng.normal(size=(8, 8, 4)), rng.normal(size=(8, 8, 4)), 0.2)
        P = conf.P.data
        for i, j in rng.integers(0, 64, size=(20, 2)):
            wi, wj = window_of(i, ctx), window_of(j, ctx)
            row = SM.scores.data[wi]
            p = np.exp(row - row.max())
            p /= p.sum()
            top = list(idx.indices[wi])
            p_z = p[wj] if wj in top else p[[k for k in range(ctx.n) if k not in top]].sum()
            product = p_z * P[i, j] / P[i, window_patches(wj, ctx)].sum()
            total = window_assignment_logprob(SM, idx, ctx, (i, j)).item() + patch_match_logprob(conf, ctx, (i, j)).item()
            worst_identity = max(worst_identity, abs(total - np.log(product)))
        for w in range(ctx.n):
            worst_sum = max(worst_sum, abs(assignment_distribution(SM, idx, w).sum() - 1.0))
    ok = worst_identity < IDENTITY_TOL and worst_sum <= SUM_TOL
    report(5, "loss identity", ok, f"log identity {worst_identity:.2e}, distribution sum {worst_sum:.2e}")


def test_06_partition_round_trip():
    rng = np.random.default_rng(0)
    exact = 0
    for _ in range(200):
        s = int(rng.integers(1, 5))
        h, w = s * int(rng.integers(1, 5)), s * int(rng.integers(1, 5))
        c = int(rng.integers(1, 5))
        F = rng.normal(size=(h, w, c))
        back = window_reverse(window_partition(F, s), h, w).data
        exact += back.shape == F.shape and back.tobytes() == F.tobytes()
    report(6, "partition round trip", exact == 200, f"{exact}/200 bit-exact")


def test_07_handcrafted_translation():
    start = time.perf_counter()
    cfg = PipelineConfig(features="handcrafted")
    pair = gen_pair("translate", 128, 128, 8, 0.01, seed=0)
    ms = match_pipeline(pair.image_a, pair.image_b, cfg)
    gt = set(derive_ground_truth(pair.H_gt, pair.image_a.shape, ms.grid).coarse)
    agree = float(np.mean([(m.i, m.j) in gt for m in ms.coarse])) if ms.coarse else 0.0
    H, _ = estimate_from_matches(ms, RansacOptions(cfg.ransac_iters, cfg.inlier_px, cfg.seed))
    err = corner_error(H, pair.H_gt, pair.image_a.shape)
    elapsed = time.perf_counter() - start
    ok = agree >= AGREEMENT and err < CORNER_PX and elapsed < MATCH_SECONDS
    report(
        7,
        "handcrafted 8 px translation",
        ok,
        f"{len(ms.coarse)} coarse matches, agreement {agree:.3f}, corner error {err:.2e} px, {elapsed:.1f} s",
    )


def batch_loss(cfg, params, seed=777, pairs=10):
    return float(np.mean([compute_loss(training_pair(cfg, seed, k), cfg, params)[1].total for k in range(pairs)]))


def test_08_tiny_training():
    start = time.perf_counter()
    cfg = tiny_config()
    initial = batch_loss(cfg, init_matcher(cfg, 0))
    result = train_tiny(cfg, 300, seed=0)
    final = batch_loss(cfg, result.params)
    finite = bool(np.all(np.isfinite(result.losses)))
    precision = held_out_precision(cfg, result.params, pairs=10)
    elapsed = time.perf_counter() - start
    ok = finite and final <= LOSS_RATIO * initial and precision >= PRECISION and elapsed < TRAIN_SECONDS
    report(
        8,
        "tiny training",
        ok,
        f"batch loss {initial:.3f} -> {final:.3f} (ratio {final / initial:.3f}), finite {finite}, "
        f"held-out precision {precision:.3f}, {elapsed:.0f} s",
    )


def test_09_ransac():
    H = np.array([[1.05, 0.04, 3.0], [-0.03, 0.97, -2.0], [1e-4, -2e-4, 1.0]])
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 128, size=(60, 2))
    dst = project(H, src)
    H_exact, _ = estimate_homography(src, dst)
    exact = corner_error(H_exact, H, (128, 128))
    bad = rng.permutation(60)[:30]
    dst[bad] = rng.uniform(0, 128, size=(30, 2))
    H_rob, _ = estimate_homography(src, dst, RansacOptions(iters=1000, inlier_px=3.0, seed=0))
    robust = corner_error(H_rob, H, (128, 128))
    ok = exact <= EXACT_PX and robust < OUTLIER_PX
    report(9, "RANSAC and DLT", ok, f"noiseless {exact:.2e} px, 50% outliers {robust:.2e} px")


def test_10_cli_determinism(tmp_path, capsys):
    flags = ["--features", "handcrafted", "--size", "64x64", "--seed", "5"]
    outputs = {}
    for name, argv in [
        ("match", ["match", *flags]),
        ("eval", ["eval", "--pairs", "3", *flags]),
        ("learned match", ["match", "--size", "32x32", "--stages", "2", "--seed", "5"]),
    ]:
        # identical flags, so both runs write to the same directory
        out = tmp_path / name.replace(" ", "_")
        texts = []
        for _ in range(2):
            code = cli.main([*argv, "--out", str(out), "--report", str(out / "report.json")])
            stdout = capsys.readouterr().out
            files = sorted(out.rglob("*.json"))
            texts.append((code, stdout, [(f.name, f.read_bytes()) for f in files]))
            for f in files:
                f.unlink()
        outputs[name] = texts[0] == texts[1] and texts[0][0] == 0
        json.loads(texts[0][1])
    ok = all(outputs.values())
    report(10, "CLI determinism", ok, ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in outputs.items()))

