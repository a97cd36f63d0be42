#!/usr/bin/env python3
"""Reproduce the delay-strategy sweep: mainchain rate and delayer orphans
over the (x_d, t_d) grid, seed-averaged.

The full grid (5 shares x 12 delays x 20 seeds at N = 128, 1000 s) takes
roughly half an hour on one core; --quick shrinks it to a smoke run.
"""

import argparse
import sys
import time

from timinggames.waitinggame import SimConfig, sweep


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="delay_sweep.csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="replicates per cell")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--mean-degree", type=float, default=8.0)
    p.add_argument("--tau", type=float, default=3.0, help="gossip latency (s)")
    p.add_argument("--duration", type=float, default=1000.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--quick", action="store_true", help="tiny grid for smoke runs")
    return p.parse_args()


def main():
    args = parse_args()
    if args.quick:
        x_values = [0.0, 1.0]
        t_values = [0.0, 10.0]
        seeds = min(args.seeds, 2)
    else:
        x_values = [0.0, 0.25, 0.5, 0.75, 1.0]
        t_values = [float(t) for t in range(12)]
        seeds = args.seeds

    base = SimConfig(
        n=args.n,
        mean_degree=args.mean_degree,
        tau_block=args.tau,
        tau_attestation=args.tau,
        duration=args.duration,
        seed=args.seed,
    )
    start = time.time()
    result = sweep(x_values, t_values, seeds, base, jobs=args.jobs)
    result.to_csv(args.out)
    print(f"{len(result.cells)} cells x {seeds} seeds -> {args.out} "
          f"({time.time() - start:.0f}s)")
    if result.errors:
        for cell, message in sorted(result.errors.items()):
            print(f"cell {cell} failed: {message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
