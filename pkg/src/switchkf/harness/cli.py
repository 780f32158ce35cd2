"""Command line entry point: ``switchkf {simulate,run,benchmark,gridsearch}``.

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import time

from ..errors import ConfigError, DataError, DimensionError, NumericalError
from ..kfmh import grid_search
from ..synthdata import SCENARIOS, generate, scenario
from .config import ALL_METHODS, load_config
from .csvio import export_episode, export_trace, import_episode, write_diagnostics
from .runner import MethodSpec, benchmark, run_method

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _simulate(args):
    cfg = load_config(args.config)
    T = cfg.T if args.T is None else args.T
    if T < 0:
        raise ConfigError("--T must be non-negative")
    ep = generate(scenario(args.scenario, T=T), args.seed)
    export_episode(ep, args.out)
    print(f"wrote {args.scenario} episode (T={T}, seed={args.seed}) to {args.out}")


def _run(args):
    cfg = load_config(args.config)
    data = import_episode(args.data)
    trace = run_method(MethodSpec(args.method), data, cfg)
    export_trace(trace, args.out)
    mse = float(trace.mse(min(cfg.warmup_steps, max(trace.T - 1, 0)))) if trace.T else float("nan")
    print(f"{args.method}: T={trace.T} mse={mse:.6g} -> {args.out}")
    if args.diag:
        for path in write_diagnostics(trace, args.diag, prefix=f"{args.method}_"):
            print(f"  diagnostics: {path}")


def _benchmark(args):
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    res = benchmark(n_iter=args.n_iter, base_seed=args.base_seed, cfg=cfg, workers=args.workers)
    res.to_csv(args.out)
    print(res.render())
    print(f"wrote {args.out} in {time.perf_counter() - t0:.1f}s")


def _gridsearch(args):
    cfg = load_config(args.config)
    data = import_episode(args.data)
    eta, alpha, scores = grid_search(
        data, cfg.bank(), cfg.grid_eta, cfg.grid_alpha, criterion=cfg.grid_criterion,
        tau=cfg.tau, sigma0=cfg.sigma0, adam=cfg.adam(), init=cfg.init_state())
    for (e, a), loss in sorted(scores.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"eta={e:<8g} alpha={a:<8g} {cfg.grid_criterion}={loss:.6f}")
    print(f"best eta={eta:g} alpha={alpha:g}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="switchkf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate one synthetic episode as CSV")
    p.add_argument("--scenario", required=True, choices=list(SCENARIOS))
    p.add_argument("--T", type=int, default=None, help="episode length (default: config T)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_simulate)

    p = sub.add_parser("run", help="run one method on an episode CSV")
    p.add_argument("--method", required=True, choices=list(ALL_METHODS))
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diag", default=None, help="directory for weight/sigma/qhat trajectories")
    p.set_defaults(func=_run)

    p = sub.add_parser("benchmark", help="Monte Carlo MSE table over all scenarios")
    p.add_argument("--config", default=None)
    p.add_argument("--n-iter", type=int, default=None)
    p.add_argument("--base-seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_benchmark)

    p = sub.add_parser("gridsearch", help="select eta and alpha on an episode CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_gridsearch)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
