#!/usr/bin/env python3
"""Compare training-time mode-indicator policies.

Trains one model per policy (always-plain, always-suppressed, and a
bernoulli(p) coin flip per step) on the same synthetic corpus, then
evaluates each checkpoint under both inference modes.

Usage:
    python3 scripts/run_mode_policies.py --steps 1000 --out mode_policies.csv
"""

from __future__ import annotations

import argparse
import csv
import time

import numpy as np

from negdet.dataengine import DataConfig, synthesize_dataset
from negdet.detector import Detector, DetectorConfig, TrainConfig, train
from negdet.evalkit import default_bank_builder, evaluate
from negdet.scoring import MODE_POLICIES, NNCConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--beta", type=float, default=0.3)
    ap.add_argument("--bernoulli-p", type=float, default=0.5)
    ap.add_argument("--policies", nargs="+", default=list(MODE_POLICIES))
    ap.add_argument("--out", default="mode_policies.csv")
    args = ap.parse_args()

    manifest = synthesize_dataset(DataConfig(seed=args.seed))
    rows = []
    for policy in args.policies:
        t0 = time.time()
        nnc = NNCConfig(beta=args.beta, mode_policy=policy,
                        bernoulli_p=args.bernoulli_p)
        model = Detector(DetectorConfig(), np.random.default_rng(args.seed))
        train(model, manifest, TrainConfig(steps=args.steps, seed=args.seed, nnc=nnc))
        bank = default_bank_builder(model, manifest, seed=args.seed)
        for indicator in (0, 1):
            res = evaluate(model, manifest, bank, nnc, indicator)
            rows.append({"policy": policy, "indicator": indicator, "ap": res.ap,
                         "counting_mae": res.counting_mae})
            print(f"{policy:>10}  indicator={indicator}  AP={res.ap:.4f}  "
                  f"counting_mae={res.counting_mae:.2f}")
        print(f"  ({policy}: {time.time() - t0:.0f}s)")

    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["policy", "indicator", "ap", "counting_mae"])
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
