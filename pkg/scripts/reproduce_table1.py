"""Monte Carlo MSE table for the six synthetic scenarios.

    python scripts/reproduce_table1.py --n-iter 1000 --out results/table1.csv

Prints the aligned table and, for the WS gaussian row, the relative gap to
the reference values.
"""
from __future__ import annotations

import argparse
import os
import time
from dataclasses import dataclass

from switchkf.harness.config import ALL_METHODS, TABLE1_METHODS, load_config
from switchkf.harness.runner import benchmark

REFERENCE_WS_GAUSS = {
    "kf-adaptive": 1.802, "kf-q1": 5.091, "kf-q2": 5.523,
    "kf-qmean": 1.990, "kf-agg": 2.519, "kfmh": 1.916,
}


@dataclass
class Table1Args:
    config: str | None = None
    n_iter: int = 1000
    base_seed: int = 0
    T: int = 1000
    workers: int = 1
    out: str = "results/table1.csv"
    with_extras: bool = False


def parse_args(argv=None) -> Table1Args:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--n-iter", type=int, default=1000)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--T", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/table1.csv")
    ap.add_argument("--with-extras", action="store_true",
                    help="also run kfmh-randomized and vb (vb is slow)")
    return Table1Args(**vars(ap.parse_args(argv)))


def main(argv=None):
    args = parse_args(argv)
    methods = ALL_METHODS if args.with_extras else TABLE1_METHODS
    cfg = load_config(args.config).with_overrides(T=args.T, methods=methods)
    t0 = time.perf_counter()
    res = benchmark(n_iter=args.n_iter, base_seed=args.base_seed, cfg=cfg, workers=args.workers)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    res.to_csv(args.out)
    print(res.render())
    print(f"\n{args.n_iter} replications in {time.perf_counter() - t0:.1f}s -> {args.out}")
    if "ws-gauss" in res.scenarios:
        print("\nws-gauss vs reference:")
        for m, ref in REFERENCE_WS_GAUSS.items():
            c = res.cell("ws-gauss", m)
            print(f"  {m:<12} {c.mse:.3f} +- {c.se:.3f}   ref {ref:.3f}   {c.mse / ref - 1:+.1%}")


if __name__ == "__main__":
    main()
