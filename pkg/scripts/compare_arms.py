#!/usr/bin/env python3
"""Desk-scale arm comparison: default dynamics vs bandit (beta=0) vs
random-action baseline, probe accuracy per seed.

Usage: python3 scripts/compare_arms.py --steps 30000 --seeds 0,1 --out /tmp/arms
"""

import argparse
import copy
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from latentlab import config as cfgmod
from latentlab import runner


def base_cfg(steps):
    return cfgmod.from_dict({
        "profile": "desk",
        "total_steps": steps,
        "metrics_every": 10_000,
    })


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=30_000)
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--arms", default="default,beta0,random_action")
    ap.add_argument("--out", default="/tmp/arms")
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    results = {}
    for arm in args.arms.split(","):
        accs = []
        for seed in seeds:
            cfg = base_cfg(args.steps)
            cfg.master_seed = seed
            if arm == "beta0":
                cfg.env.beta = 0.0
            elif arm == "random_action":
                cfg.agent.action_source = "random_normal"
            elif arm != "default":
                raise SystemExit(f"unknown arm {arm}")
            t0 = time.time()
            out_dir = os.path.join(args.out, f"{arm}_s{seed}")
            summary = runner.pretrain_and_probe(cfg, out_dir)
            accs.append(summary["probe_accuracy"])
            print(f"{arm} seed={seed}: acc={accs[-1]:.3f} "
                  f"({(time.time()-t0)/60:.1f} min)", flush=True)
        results[arm] = {"accs": accs, "median": float(np.median(accs))}
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
