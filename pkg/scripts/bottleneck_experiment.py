#!/usr/bin/env python3
"""Train the toy policy on the sufficient-template task and compare with the exact optimum.

    python scripts/bottleneck_experiment.py --config configs/bottleneck.json --out runs/bottleneck
"""

import argparse
import dataclasses
import csv
import json
import time
from pathlib import Path

import numpy as np

from semloop.config import load_config
from semloop.grpo import CURVE_COLUMNS, train
from semloop.policy import ToyPolicy, softmax
from semloop.toy_oracle import bucket_labels, expected_reward, optimal_expected_reward


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/bottleneck.json")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/bottleneck")
    args = ap.parse_args()

    cfg = load_config(args.config, seed=args.seed)
    tcfg = cfg.train if args.steps is None else dataclasses.replace(cfg.train, steps=args.steps)
    ds = cfg.load_data()
    toy = cfg.toy_config()
    policy = ToyPolicy(toy, seed=tcfg.seed)
    buckets, labels = bucket_labels(policy, ds, cfg.task)
    optimum = optimal_expected_reward(buckets, labels, toy, cfg.reward)
    start = expected_reward(policy.params, buckets, labels, toy, cfg.reward)

    t0 = time.perf_counter()
    result = train(ds, cfg.task, tcfg, cfg.reward, policy)
    elapsed = time.perf_counter() - t0

    final = expected_reward(result.params, buckets, labels, toy, cfg.reward)
    p_sufficient = softmax(result.params.stage1_logits)[:, 0]
    counts = np.bincount(buckets, minlength=toy.buckets)
    print(f"samples {len(ds)}  steps {len(result.curve)}  time {elapsed:.1f}s")
    print(f"expected reward: uniform {start:.4f}  trained {final:.4f}  optimum {optimum:.4f}  ratio {final / optimum:.4f}")
    print("bucket  n    P(sufficient template)")
    for b in range(toy.buckets):
        print(f"{b:>6} {counts[b]:>4}    {p_sufficient[b]:.4f}")
    if result.stable_step is not None:
        print(f"mean reward stabilized at step {result.stable_step}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "learning_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in result.curve:
            w.writerow([row[c] for c in CURVE_COLUMNS])
    summary = {
        "config_hash": cfg.hash,
        "optimum": optimum,
        "uniform": start,
        "trained": final,
        "ratio": final / optimum,
        "p_sufficient": p_sufficient.tolist(),
        "seconds": elapsed,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
