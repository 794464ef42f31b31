"""Command-line orchestration.

Subcommands: pretrain, probe, ablate, coverage, baseline, bridge-test.
Exit codes: 0 success, 1 usage/config, 2 environment or bridge failure,
3 numerical failure (NaN watchdog). PALM_RUN_DIR overrides the output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from . import evalkit, runner
from .agent import NumericalError
from .bridge import BridgeClient, BridgeError
from .generator import IdentityDebug
from .numcore import CheckpointError, Rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_root(explicit):
    if explicit:
        return explicit
    return os.environ.get("PALM_RUN_DIR", "runs")


def _floats(text):
    return [float(v) for v in text.split(",") if v != ""]


def _ints(text):
    return [int(v) for v in text.split(",") if v != ""]


def cmd_pretrain(args):
    cfg = cfgmod.load(args.config)
    if args.dump_trajectory:
        cfg.dump_trajectory = True
    if args.total_steps:
        cfg.total_steps = args.total_steps
    run_dir = args.out or os.path.join(_out_root(None), f"run-{int(time.time())}")
    try:
        summary = runner.pretrain(cfg, run_dir)
    except NumericalError as e:
        os.makedirs(run_dir, exist_ok=True)
        dump_path = os.path.join(run_dir, "nan_dump.npz")
        np.savez(dump_path, **e.dump)
        print(f"numerical failure: {e}; offending batch dumped to {dump_path}",
              file=sys.stderr)
        return 3
    print(json.dumps({k: v for k, v in summary.items() if not isinstance(v, np.ndarray)}))
    return 0


def cmd_probe(args):
    cfg = cfgmod.load(args.config)
    acc = runner.probe_checkpoint(args.encoder, cfg)
    print(f"probe_accuracy {acc:.4f}")
    if args.csv:
        with open(args.csv, "a") as f:
            f.write(f"{args.encoder},{acc}\n")
    return 0


def cmd_ablate(args):
    cfg = cfgmod.load(args.config)
    if args.total_steps:
        cfg.total_steps = args.total_steps
    grid = evalkit.AblationGrid(_floats(args.alphas), _floats(args.betas), _ints(args.seeds))
    out = args.out or os.path.join(_out_root(None), "ablation")
    csv_path, rows = evalkit.ablation_grid(grid, cfg, out, resume=not args.no_resume)
    for a, b, s, acc in rows:
        print(f"alpha={a} beta={b} seed={s} accuracy={acc:.4f}")
    print(f"csv: {csv_path}")
    return 0


def cmd_coverage(args):
    cfg = cfgmod.load(args.config)
    gen = runner.build_generator(cfg)
    spec = gen.spec()
    pal = np.load(os.path.join(args.run_dir, "coverage_set.npy"))
    n = len(pal)
    rng = Rng(cfg.eval.data_seed, stream=31)
    ref = gen.generate_batch(rng.normal((n, spec.latent_dim)),
                             rng.integers(0, spec.num_classes, (n,))).reshape(n, -1)
    uni = gen.generate_batch(rng.normal((n, spec.latent_dim)),
                             rng.integers(0, spec.num_classes, (n,))).reshape(n, -1)
    cov_policy = evalkit.coverage(pal, ref)
    cov_uniform = evalkit.coverage(uni, ref)
    print(f"coverage_policy {cov_policy:.2f}")
    print(f"coverage_uniform {cov_uniform:.2f}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("set,coverage\npolicy,%f\nuniform,%f\n" % (cov_policy, cov_uniform))
    return 0


def cmd_baseline(args):
    cfg = cfgmod.load(args.config)
    if args.total_steps:
        cfg.total_steps = args.total_steps
    out = args.out or os.path.join(_out_root(None), f"baseline_{args.kind}")
    accs = evalkit.run_baseline(args.kind, cfg, out, _ints(args.seeds), dump_path=args.dump)
    for s, acc in zip(_ints(args.seeds), accs):
        print(f"kind={args.kind} seed={s} accuracy={acc:.4f}")
    print(f"median {float(np.median(accs)):.4f}")
    return 0


def cmd_bridge_test(args):
    trips = args.trips
    with BridgeClient(args.cmd.split() if isinstance(args.cmd, str) else args.cmd) as client:
        spec = client.handshake()
        client.ping()
        rng = Rng(args.seed, stream=37)
        reference = IdentityDebug(spec.latent_dim, spec.num_classes) if args.expect == "identity" else None
        worst = 0.0
        for i in range(trips):
            z = rng.normal((spec.latent_dim,))
            c = int(rng.integers(0, spec.num_classes))
            obs = client.generate(z, c)
            if reference is not None:
                want = reference.generate(z, c)
                worst = max(worst, float(np.max(np.abs(obs - want))))
        client.ping()
    print(f"round_trips {trips}")
    print(f"max_abs_deviation {worst:.3e}")
    ok = worst <= args.tolerance if reference is not None else True
    print("bridge-test PASS" if ok else "bridge-test FAIL")
    return 0 if ok else 2


def build_parser():
    p = _Parser(prog="latentlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pretrain", help="run exploration + representation pretraining")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--total-steps", type=int, default=0)
    sp.add_argument("--dump-trajectory", action="store_true")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("probe", help="linear-probe a frozen encoder checkpoint")
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--config", required=True)
    sp.add_argument("--csv")
    sp.set_defaults(fn=cmd_probe)

    sp = sub.add_parser("ablate", help="alpha/beta ablation grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--alphas", required=True)
    sp.add_argument("--betas", required=True)
    sp.add_argument("--seeds", required=True)
    sp.add_argument("--out")
    sp.add_argument("--total-steps", type=int, default=0)
    sp.add_argument("--no-resume", action="store_true")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("coverage", help="policy-set vs uniform-set coverage")
    sp.add_argument("--config", required=True)
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--csv")
    sp.set_defaults(fn=cmd_coverage)

    sp = sub.add_parser("baseline", help="random-action / passive / static baselines")
    sp.add_argument("--kind", required=True, choices=evalkit.BASELINE_KINDS)
    sp.add_argument("--config", required=True)
    sp.add_argument("--seeds", required=True)
    sp.add_argument("--dump", help="trajectory dump (passive baselines)")
    sp.add_argument("--out")
    sp.add_argument("--total-steps", type=int, default=0)
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("bridge-test", help="conformance-test an external generator server")
    sp.add_argument("--cmd", required=True, help="server command line")
    sp.add_argument("--trips", type=int, default=10000)
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--expect", choices=("identity", "none"), default="identity")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_bridge_test)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except cfgmod.ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return 1
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 1
    except BridgeError as e:
        print(f"bridge failure: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
