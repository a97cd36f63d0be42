#!/usr/bin/env python3
"""Mainchain rate as a function of the release delay at full delayer share.

Sweeps t_d over [0, 11] seconds with x_d = 1 and prints the seed-averaged
mainchain rate, locating the threshold where delayed releases start to
orphan blocks (around slot time minus network latency).
"""

import argparse
import sys

import numpy as np

from timinggames.waitinggame import SimConfig, derive_cell_seed, run_simulation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=3.0)
    args = p.parse_args()

    print("t_d,mu_mean,mu_std,theta_mean")
    for t_index, t_d in enumerate(range(12)):
        mus, thetas = [], []
        for r in range(args.seeds):
            cfg = SimConfig(
                x_d=1.0,
                t_d=float(t_d),
                tau_block=args.tau,
                tau_attestation=args.tau,
                seed=derive_cell_seed(args.seed, 0, t_index, r),
            )
            m = run_simulation(cfg)
            mus.append(m.mu)
            thetas.append(m.theta_d)
        print(
            f"{t_d},{np.mean(mus):.4f},{np.std(mus, ddof=1):.4f},"
            f"{np.mean(thetas):.2f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
