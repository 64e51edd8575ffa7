from __future__ import annotations

import argparse
import time

import numpy as np

from lder.qp import solve_qp
from lder.selftest import random_known_qp


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--d", type=int, default=40)
    parser.add_argument("--k", type=int, default=120)
    parser.add_argument("--problems", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    problems = [random_known_qp(rng, args.d, args.k) for _ in range(args.problems)]

    worst = 0.0
    iterations = 0
    t0 = time.perf_counter()
    for prob, x_star in problems:
        sol = solve_qp(prob)
        worst = max(worst, float(np.max(np.abs(sol.x - x_star))))
        iterations += sol.iterations
    t1 = time.perf_counter()

    print(
        f"solved={args.problems} d={args.d} k={args.k} elapsed={(t1 - t0):.4f}s "
        f"per_qp={(t1 - t0) / args.problems * 1e3:.2f}ms mean_iter={iterations / args.problems:.1f} max_err={worst:.2e}"
    )


if __name__ == "__main__":
    main()
