"""Split the Step-3 error of a few evaluation samples into its four parts.

    total = u_h - p_l <= e1 + e2 + e3 + e4 (fine vs coarse, sample vs training field,
    coarse vs POD on the training field, POD transfer between fields)
"""

import argparse

import numpy as np

from msrom import pipeline as pl
from msrom.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config")
    ap.add_argument("--set", action="append", default=[], dest="overrides")
    ap.add_argument("--samples", type=int, default=5)
    args = ap.parse_args()

    cfg = parse_config(args.config, args.overrides)
    res = pl.run_method1(cfg)
    problem = pl.Problem.from_config(cfg)
    kle = pl.build_kle_model(cfg, problem.mesh)
    trains = [pl.sample_kappa(kle, cfg.samples.train_seed, i) for i in pl.training_indices(cfg, kle)]
    print(f"{'sample':>6} {'total':>10} {'e1':>10} {'e2':>10} {'e3':>10} {'e4':>10}")
    for j in range(args.samples):
        k = pl.sample_kappa(kle, cfg.samples.eval_seed, j)
        near = min(trains, key=lambda t: np.abs(np.log(t.values) - np.log(k.values)).max())
        parts = pl.error_split(problem, k, near, res.space, res.pod)
        print(f"{j:6d} " + " ".join(f"{parts[p][-1]:10.3e}" for p in ("total", "e1", "e2", "e3", "e4")))


if __name__ == "__main__":
    main()
