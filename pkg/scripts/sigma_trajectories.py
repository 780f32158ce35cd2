"""Weight and sigma trajectories of KFMH on one WS episode from two starting sigmas.

    python scripts/sigma_trajectories.py --seed 0 --outdir results/trajectories

Writes ``sigma0_<s>_{weights,sigma,qhat}.csv`` per starting point and the
episode itself, then prints a coarse summary of each sigma path.
"""
from __future__ import annotations

import argparse
import os
from dataclasses import dataclass, field

import numpy as np

from switchkf.harness.config import load_config
from switchkf.harness.csvio import export_episode, write_diagnostics
from switchkf.harness.runner import MethodSpec, run_method
from switchkf.synthdata import generate, scenario


@dataclass
class TrajectoryArgs:
    config: str | None = None
    scenario: str = "ws-gauss"
    seed: int = 0
    T: int = 1000
    sigma0: list = field(default_factory=lambda: [0.5, 2.0])
    outdir: str = "results/trajectories"


def parse_args(argv=None) -> TrajectoryArgs:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--scenario", default="ws-gauss")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--T", type=int, default=1000)
    ap.add_argument("--sigma0", type=float, nargs="+", default=[0.5, 2.0])
    ap.add_argument("--outdir", default="results/trajectories")
    return TrajectoryArgs(**vars(ap.parse_args(argv)))


def main(argv=None):
    args = parse_args(argv)
    cfg = load_config(args.config)
    ep = generate(scenario(args.scenario, T=args.T), args.seed)
    os.makedirs(args.outdir, exist_ok=True)
    export_episode(ep, os.path.join(args.outdir, "episode.csv"))
    marks = np.unique(np.linspace(0, args.T - 1, 6).astype(int))
    for s0 in args.sigma0:
        tr = run_method(MethodSpec("kfmh", {"sigma0": s0}), ep, cfg)
        write_diagnostics(tr, args.outdir, prefix=f"sigma0_{s0:g}_")
        path = "  ".join(f"t={t + 1}:{tr.sigma[t]:.3f}" for t in marks)
        print(f"sigma0={s0:g}: {path}  final={float(tr.meta['final_sigma']):.3f}")
    print(f"wrote trajectories to {args.outdir}")


if __name__ == "__main__":
    main()
