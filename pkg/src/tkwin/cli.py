"""``tkwin`` command line: gen, train, match, eval, gradcheck, oracle."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import NumericalError, TkwinError
from .evaluate import THRESHOLDS, evaluate
from .homography import RansacOptions, estimate_from_matches
from .imageio import ImageFileError, read_pgm, write_pgm
from .matcher import match_pipeline
from .oracle import run_oracle_suite
from .render import render_matches
from .suites import TOLERANCE, gradient_suite, key_bias_gradients, tiny_config
from .synthetic import KINDS, SyntheticPair, gen_pair
from .train import held_out_precision, load_checkpoint, save_checkpoint, train_tiny

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

ORACLE_TOLERANCE = 1e-10

logger = logging.getLogger("tkwin")


class UsageError(TkwinError):
    pass


# ---------------------------------------------------------------------------
# argument handling


def _size(text: str) -> list[int]:
    try:
        h, w = text.lower().split("x")
        return [int(h), int(w)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected <H>x<W>, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="PipelineConfig JSON; flags below override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--size", type=_size, default=None, metavar="HxW")
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--topk-schedule", default=None, metavar="auto|fixed:K")
    p.add_argument("--features", choices=("learned", "handcrafted"), default=None)
    p.add_argument("--report", type=Path, default=None, help="also write the JSON report here")
    p.add_argument("-v", "--verbose", action="store_true")


def _pair_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pair", type=Path, default=None, help="directory written by `gen`")
    p.add_argument("--kind", choices=KINDS, default="translate")
    p.add_argument("--magnitude", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--checkpoint", type=Path, default=None, help="weights written by `train`")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tkwin", description="Top-K window attention matcher harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic pair (PGM images + warp JSON)")
    _common(p)
    p.add_argument("--kind", choices=KINDS, default="translate")
    p.add_argument("--magnitude", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.01)

    p = sub.add_parser("train", help="Adam on synthetic translated pairs")
    _common(p)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--held-out", type=int, default=10, help="pairs for post-training precision (0 skips)")

    p = sub.add_parser("match", help="match one pair and write matches.json")
    _common(p)
    _pair_source(p)
    p.add_argument("--render", type=Path, default=None, help="write a PPM match visualization")

    p = sub.add_parser("eval", help="match, fit a homography and score against ground truth")
    _common(p)
    _pair_source(p)
    p.add_argument("--pairs", type=int, default=1, help="number of generated pairs (seed, seed+1, ...)")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _common(p)

    p = sub.add_parser("oracle", help="batched attention vs the loop-by-loop reference")
    _common(p)
    p.add_argument("--instances", type=int, default=50)
    return parser


def resolve_config(args, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else (base or PipelineConfig())
    changes = {}
    if args.size is not None:
        changes["size"] = args.size
    if args.stages is not None:
        changes["stages"] = args.stages
    if args.topk_schedule is not None:
        changes["topk_schedule"] = args.topk_schedule
    if args.features is not None:
        changes["features"] = args.features
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


# ---------------------------------------------------------------------------
# JSON


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ImageFileError(f"{path}: cannot write ({exc.strerror})") from exc


def emit(report: dict, args) -> None:
    text = dumps(report)
    if args.report is not None:
        _write(args.report, text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# pairs on disk


def save_pair(pair: SyntheticPair, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "image_a.pgm", pair.image_a)
    write_pgm(out / "image_b.pgm", pair.image_b)
    meta = {
        "H_gt": pair.H_gt,
        "kind": pair.kind,
        "magnitude": pair.magnitude,
        "noise_sigma": pair.noise_sigma,
        "seed": pair.seed,
    }
    _write(out / "pair.json", dumps(meta))
    return meta


def load_pair(directory: Path) -> SyntheticPair:
    try:
        meta = json.loads((directory / "pair.json").read_text())
    except OSError as exc:
        raise ImageFileError(f"{directory / 'pair.json'}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ImageFileError(f"{directory / 'pair.json'}: invalid JSON ({exc})") from exc
    return SyntheticPair(
        read_pgm(directory / "image_a.pgm"),
        read_pgm(directory / "image_b.pgm"),
        np.array(meta["H_gt"], dtype=float),
        float(meta["noise_sigma"]),
        meta["kind"],
        float(meta["magnitude"]),
        int(meta["seed"]),
    )


def _pair_for(args, cfg: PipelineConfig) -> tuple[SyntheticPair, PipelineConfig]:
    """The stored pair (its size wins over --size) or a freshly generated one."""
    if args.pair is not None:
        pair = load_pair(args.pair)
        return pair, cfg.replace(size=[int(v) for v in pair.image_a.shape])
    pair = gen_pair(args.kind, cfg.height, cfg.width, args.magnitude, args.noise, seed=cfg.seed)
    return pair, cfg


def _checkpoint_config(args) -> PipelineConfig:
    """With --checkpoint, its saved config is the base that flags override."""
    if getattr(args, "checkpoint", None) is None:
        return resolve_config(args)
    try:
        saved = json.loads(args.checkpoint.with_suffix(".json").read_text()).get("config")
    except OSError as exc:
        raise ImageFileError(f"{args.checkpoint}: cannot read ({exc.strerror})") from exc
    base = PipelineConfig.from_dict(saved) if saved else None
    return resolve_config(args, base=base)


def _params(args, cfg: PipelineConfig):
    if args.checkpoint is None or cfg.features == "handcrafted":
        return None
    return load_checkpoint(args.checkpoint, cfg)[0]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> dict:
    cfg = resolve_config(args)
    out = args.out or Path("pair")
    pair = gen_pair(args.kind, cfg.height, cfg.width, args.magnitude, args.noise, seed=cfg.seed)
    meta = save_pair(pair, out)
    return {"command": "gen", "out": out, "size": cfg.size, **meta}


def cmd_train(args) -> dict:
    cfg = resolve_config(args, base=tiny_config())
    if args.steps < 1:
        raise UsageError(f"--steps must be >= 1, got {args.steps}")
    out = args.out or Path("run")
    result = train_tiny(cfg, args.steps, seed=cfg.seed)
    bin_path, manifest = save_checkpoint(result.params, out / "checkpoint", cfg)
    report = {
        "command": "train",
        "config": cfg.to_dict(),
        "steps": args.steps,
        "losses": result.losses,
        "initial_loss": result.losses[0],
        "final_loss": result.losses[-1],
        "checkpoint": [bin_path, manifest],
    }
    if args.held_out > 0:
        report["held_out_precision"] = held_out_precision(cfg, result.params, pairs=args.held_out)
    return report


def cmd_match(args) -> dict:
    pair, cfg = _pair_for(args, _checkpoint_config(args))
    params = _params(args, cfg)
    matches = match_pipeline(pair.image_a, pair.image_b, cfg, params)
    out = args.out or Path("match")
    _write(out / "matches.json", dumps(matches.to_dict()))
    if args.render is not None:
        render_matches(pair, matches, args.render)
    return {
        "command": "match",
        "config": cfg.to_dict(),
        "num_coarse": len(matches.coarse),
        "num_fine": len(matches.fine),
        "dropped": matches.dropped,
        "matches": out / "matches.json",
    }


def _eval_one(cfg_dict: dict, checkpoint, pair_dir, kind, magnitude, noise, seed) -> dict:
    cfg = PipelineConfig.from_dict(cfg_dict)
    params = None
    if checkpoint is not None and cfg.features == "learned":
        params, _ = load_checkpoint(checkpoint, cfg)
    if pair_dir is not None:
        pair = load_pair(Path(pair_dir))
    else:
        pair = gen_pair(kind, cfg.height, cfg.width, magnitude, noise, seed=seed)
    matches = match_pipeline(pair.image_a, pair.image_b, cfg, params)
    H_est = None
    if len(matches.fine) >= 4:
        H_est, _ = estimate_from_matches(matches, RansacOptions(cfg.ransac_iters, cfg.inlier_px, cfg.seed))
    report = evaluate(pair, matches, H_est).to_dict()
    report["seed"] = pair.seed
    report["H_est"] = H_est
    return report


def cmd_eval(args) -> dict:
    cfg = _checkpoint_config(args)
    if args.pairs < 1:
        raise UsageError(f"--pairs must be >= 1, got {args.pairs}")
    if args.pair is not None and args.pairs != 1:
        raise UsageError("--pair evaluates a single stored pair; drop --pairs")
    if args.pair is not None:
        _, cfg = _pair_for(args, cfg)
    ckpt = str(args.checkpoint) if args.checkpoint is not None and cfg.features == "learned" else None
    pair_dir = str(args.pair) if args.pair is not None else None
    jobs = [
        (cfg.to_dict(), ckpt, pair_dir, args.kind, args.magnitude, args.noise, cfg.seed + k)
        for k in range(args.pairs)
    ]
    workers = args.workers or min(args.pairs, os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_pair = list(pool.map(_eval_one, *zip(*jobs)))
    else:
        per_pair = [_eval_one(*job) for job in jobs]

    summary = {
        "precision": float(np.mean([r["precision"] for r in per_pair])),
        "coarse_precision": float(np.mean([r["coarse_precision"] for r in per_pair])),
        "num_matches": int(sum(r["num_matches"] for r in per_pair)),
        "corner_pass": {
            str(t): float(np.mean([r["corner_pass"][str(t)] for r in per_pair])) for t in THRESHOLDS
        },
        "empty_pairs": int(sum(r["empty"] for r in per_pair)),
    }
    return {"command": "eval", "config": cfg.to_dict(), "pairs": per_pair, "summary": summary}


def cmd_gradcheck(args) -> dict:
    cfg = resolve_config(args)
    start = time.perf_counter()
    reports = gradient_suite(cfg.seed)
    zero_grads = key_bias_gradients(cfg.seed)
    logger.info("gradient suite took %.1f s", time.perf_counter() - start)
    failed = [r.op_name for r in reports if not r.passed(TOLERANCE)]
    report = {
        "command": "gradcheck",
        "tolerance": TOLERANCE,
        "checks": [
            {"op": r.op_name, "max_rel_error": r.max_rel_error, "probes": r.probe_count} for r in reports
        ],
        "max_rel_error": max(r.max_rel_error for r in reports),
        "zero_gradient_tensors": zero_grads,
        "failed": failed,
        "passed": not failed,
    }
    if failed:
        raise NumericalError(dumps(report))
    return report


def cmd_oracle(args) -> dict:
    cfg = resolve_config(args)
    if args.instances < 1:
        raise UsageError(f"--instances must be >= 1, got {args.instances}")
    cases, elapsed = run_oracle_suite(args.instances, seed=cfg.seed)
    logger.info("oracle suite took %.2f s", elapsed)
    worst = max(c.max_abs_diff for c in cases)
    report = {
        "command": "oracle",
        "instances": len(cases),
        "max_abs_diff": worst,
        "tolerance": ORACLE_TOLERANCE,
        "cases": [c.__dict__ for c in cases],
        "passed": worst < ORACLE_TOLERANCE,
    }
    if worst >= ORACLE_TOLERANCE:
        raise NumericalError(dumps(report))
    return report


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "match": cmd_match,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        emit(COMMANDS[args.command](args), args)
    except NumericalError as exc:
        print(f"tkwin {args.command}: numerical failure\n{exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:  # includes ImageFileError
        print(f"tkwin {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TkwinError, ValueError, KeyError) as exc:
        print(f"tkwin {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
