#!/usr/bin/env python3
"""End-to-end desk demo: short pretrain on blob-world, probe, coverage.

Usage: python3 scripts/desk_demo.py [--steps 20000] [--out /tmp/desk_demo]
"""

import argparse
import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from latentlab import config as cfgmod
from latentlab import evalkit, runner
from latentlab.numcore import Rng


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--out", default="/tmp/desk_demo")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = cfgmod.from_dict({"profile": "desk", "master_seed": args.seed,
                            "total_steps": args.steps, "metrics_every": 2000})
    summary = runner.pretrain_and_probe(cfg, args.out)
    print(json.dumps({k: v for k, v in summary.items() if isinstance(v, (int, float, str))},
                     indent=2))

    gen = runner.build_generator(cfg)
    spec = gen.spec()
    policy_set = np.load(os.path.join(args.out, "coverage_set.npy"))
    m = len(policy_set)
    rng = Rng(args.seed + 500, 61)
    ref = gen.generate_batch(rng.normal((m, spec.latent_dim)),
                             rng.integers(0, spec.num_classes, (m,))).reshape(m, -1)
    uni = gen.generate_batch(rng.normal((m, spec.latent_dim)),
                             rng.integers(0, spec.num_classes, (m,))).reshape(m, -1)
    print(f"coverage: policy {evalkit.coverage(policy_set, ref):.1f}% "
          f"vs uniform {evalkit.coverage(uni, ref):.1f}%")


if __name__ == "__main__":
    main()
