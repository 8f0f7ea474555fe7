"""Train the learned matcher on 16x16 translated pairs and report held-out precision.

    python demos/train_tiny.py [--steps 300] [--seed 0]
"""

import argparse

import numpy as np

from tkwin.matcher import init_matcher
from tkwin.suites import tiny_config
from tkwin.train import compute_loss, held_out_precision, train_tiny, training_pair


def batch_loss(cfg, params, pairs=10):
    return np.mean([compute_loss(training_pair(cfg, 777, k), cfg, params)[1].total for k in range(pairs)])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = tiny_config()
    before = init_matcher(cfg, args.seed)
    print(f"held-out precision before: {held_out_precision(cfg, before):.3f}")
    print(f"fixed-batch loss before:   {batch_loss(cfg, before):.4f}")

    result = train_tiny(cfg, args.steps, seed=args.seed)
    curve = np.array(result.losses)
    chunk = max(len(curve) // 10, 1)
    for start in range(0, len(curve), chunk):
        window = curve[start : start + chunk]
        print(f"  steps {start:4d}-{start + len(window) - 1:4d}  mean loss {window.mean():.4f}")

    print(f"fixed-batch loss after:    {batch_loss(cfg, result.params):.4f}")
    print(f"held-out precision after:  {held_out_precision(cfg, result.params):.3f}")


if __name__ == "__main__":
    main()
