from __future__ import annotations

import argparse

from lder.datasets import dataset_from_training_set, synth_pwl, write_csv
from lder.models import ModelDims


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--path", required=True)
    parser.add_argument("--n", type=int, default=2)
    parser.add_argument("--r1", type=int, default=2)
    parser.add_argument("--r2", type=int, default=2)
    parser.add_argument("--m", type=int, default=200)
    parser.add_argument("--noise-std", type=float, default=0.1)
    parser.add_argument("--offset", type=float, default=0.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    T, _ = synth_pwl(ModelDims(n=args.n, r1=args.r1, r2=args.r2), args.m, args.noise_std, args.seed, offset=args.offset)
    path = write_csv(dataset_from_training_set("synthetic", T), args.path)
    print(f"wrote={path} m={T.m} n={T.n}")


if __name__ == "__main__":
    main()
