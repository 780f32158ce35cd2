"""Method dispatch and Monte Carlo benchmarking."""
from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..aggregation import kf_agg_run, make_m_alpha
from ..errors import ConfigError, DataError, NumericalError
from ..kfmh import kfmh_randomized_run, kfmh_run
from ..statespace import kf_run
from ..synthdata import EpisodeData, generate, scenario
from ..trace import PredictionTrace
from ..vb import RegimeBank, SoftAssignments, vb_run
from .config import ALL_METHODS, ExperimentConfig
from .csvio import fmt

#: Stream offset so the selection draws of the randomized variant never
#: share a seed with the episode generator.
RANDOMIZED_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class MethodSpec:
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(ALL_METHODS)}")


def _sigma2_for(data: EpisodeData, constant):
    """True per-step variance when the data carry it, else the configured constant."""
    return data.sigma2_true() if data.sigma_true is not None else constant


def _seeds(data: EpisodeData, default):
    seeds = data.meta.get("seeds")
    if seeds is not None and None not in seeds:
        return [s + RANDOMIZED_SEED_OFFSET for s in seeds]
    if data.seed is not None:
        return data.seed + RANDOMIZED_SEED_OFFSET
    return default


def _replications(data: EpisodeData):
    if not data.batch_shape:
        return [data]
    return [data.replication(b) for b in range(data.batch_shape[0])]


def _stack_traces(traces):
    first = traces[0]
    kw = {}
    for name in first._array_fields():
        vals = [getattr(t, name) for t in traces]
        kw[name] = None if any(v is None for v in vals) else np.stack(vals, axis=1)
    return type(first)(meta=dict(first.meta), **kw)


def run_method(spec: MethodSpec | str, data: EpisodeData,
               cfg: ExperimentConfig | None = None) -> PredictionTrace:
    """Run one method on a (possibly batched) episode.

    With ground truth available every baseline gets the true observation
    variance; only ``kfmh`` learns it. Without truth the constant experts use
    ``sigma2_1``/``sigma2_2`` from the config and ``kf-qmean`` their mean.
    """
    if isinstance(spec, str):
        spec = MethodSpec(spec)
    cfg = cfg or ExperimentConfig()
    if spec.params:
        try:
            cfg = cfg.with_overrides(**spec.params)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    bank = cfg.bank()
    if data.d != bank.dim:
        raise DataError(f"episode has d={data.d} but the configured bank is {bank.dim}x{bank.dim}")
    init = cfg.init_state()
    s2_mean = 0.5 * (cfg.sigma2_1 + cfg.sigma2_2)
    m = make_m_alpha(bank.K, cfg.alpha)
    method = spec.method

    if method == "kf-adaptive":
        if not data.has_truth:
            raise DataError("kf-adaptive needs the true state and observation variances")
        tr = kf_run(data.xs, data.ys, data.true_q(bank.qs), data.sigma2_true(), init=init)
    elif method in ("kf-q1", "kf-q2", "kf-qmean"):
        if method == "kf-qmean":
            q, s2 = bank.mean_q(), s2_mean
        else:
            k = int(method[-1]) - 1
            q, s2 = bank.qs[k], bank.sigma2s[k]
        tr = kf_run(data.xs, data.ys, q, _sigma2_for(data, s2), init=init)
    elif method == "kf-agg":
        s2 = data.sigma2_true() if data.sigma_true is not None else None
        tr = kf_agg_run(bank, data, eta=cfg.eta, m=m, sigma2=s2, loss=cfg.agg_loss, init=init)
    elif method == "kfmh":
        tr = kfmh_run(bank, data, eta=cfg.eta, m=m, tau=cfg.tau, sigma0=cfg.sigma0,
                      adam=cfg.adam(), init=init)
    elif method == "kfmh-randomized":
        tr = kfmh_randomized_run(bank, _sigma2_for(data, s2_mean), data, eta=cfg.eta, m=m,
                                 rng_seed=_seeds(data, cfg.base_seed + RANDOMIZED_SEED_OFFSET),
                                 init=init)
    elif method == "vb":
        rb = RegimeBank(bank.sigma2s, bank.qs, m)
        traces = []
        for ep in _replications(data):
            start = None
            if cfg.vb_init == "agg":
                w = kf_agg_run(bank, ep, eta=cfg.eta, m=m, sigma2=None, init=init).weights
                start = SoftAssignments(w)
            traces.append(vb_run(ep, rb, n_iter=cfg.vb_n_iter, init_assign=start, init=init).trace)
        tr = traces[0] if not data.batch_shape else _stack_traces(traces)
    else:  # pragma: no cover - MethodSpec validates
        raise ConfigError(method)
    tr.meta["method"] = method
    return tr


@dataclass
class BenchmarkCell:
    scenario: str
    method: str
    per_rep: np.ndarray
    seeds: list
    wall_clock: float

    @property
    def n_iter(self) -> int:
        return self.per_rep.size

    @property
    def mse(self) -> float:
        return float(self.per_rep.mean())

    @property
    def se(self) -> float:
        if self.n_iter < 2:
            return float("nan")
        return float(self.per_rep.std(ddof=1) / np.sqrt(self.n_iter))


@dataclass
class BenchmarkResult:
    scenarios: list
    methods: list
    cells: dict
    base_seed: int
    n_iter: int

    def cell(self, scenario, method) -> BenchmarkCell:
        return self.cells[(scenario, method)]

    def paired(self, scenario, a, b):
        """Mean and standard error of the per-replication MSE difference ``a - b``."""
        diff = self.cell(scenario, a).per_rep - self.cell(scenario, b).per_rep
        se = diff.std(ddof=1) / np.sqrt(diff.size) if diff.size > 1 else float("nan")
        return float(diff.mean()), float(se)

    def to_csv(self, path):
        """One row per scenario, ``<method>`` and ``<method>_se`` columns.

        Wall-clock times are left out so reruns are byte-identical.
        """
        header = ["scenario", "n_iter", "base_seed"]
        for m in self.methods:
            header += [m, f"{m}_se"]
        lines = [",".join(header)]
        for s in self.scenarios:
            row = [s, str(self.n_iter), str(self.base_seed)]
            for m in self.methods:
                c = self.cell(s, m)
                row += [fmt(c.mse), fmt(c.se)]
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    def render(self, digits=3) -> str:
        width = max(10, digits + 9)
        head = f"{'scenario':<12}" + "".join(f"{m:>{width}}" for m in self.methods)
        out = [head, "-" * len(head)]
        for s in self.scenarios:
            cells = [self.cell(s, m) for m in self.methods]
            best = min(c.mse for c in cells)
            row = f"{s:<12}"
            for c in cells:
                mark = "*" if c.mse == best else " "
                row += f"{c.mse:>{width - 1}.{digits}f}{mark}"
            out.append(row)
        out.append(f"n_iter={self.n_iter} base_seed={self.base_seed}; * marks the row minimum")
        return "\n".join(out)


def _episodes(scen, seeds, T):
    spec = scenario(scen, T=T)
    eps = []
    for s in seeds:
        ep = generate(spec, s)
        ep.seed, ep.scenario = s, scen
        eps.append(ep)
    return EpisodeData.stack(eps)


def _run_chunk(args):
    scen, seeds, methods, cfg = args
    data = _episodes(scen, seeds, cfg.T)
    out = {}
    for method in methods:
        t0 = time.perf_counter()
        try:
            tr = run_method(MethodSpec(method), data, cfg)
        except NumericalError as exc:
            raise NumericalError(f"{scen}/{method}, seeds {seeds[0]}..{seeds[-1]}: {exc}") from None
        out[method] = (tr.mse(cfg.warmup_steps), time.perf_counter() - t0)
    return out


def benchmark(scenarios=None, methods=None, n_iter=None, base_seed=None,
              cfg: ExperimentConfig | None = None, workers=None) -> BenchmarkResult:
    """Monte Carlo MSE of every method on every scenario.

    Replication i of every scenario uses seed ``base_seed + i`` and all
    methods see the same episode. Replications run in batched chunks; with
    ``workers > 1`` chunks go to a process pool and are merged in seed order.
    """
    cfg = cfg or ExperimentConfig()
    scenarios = list(scenarios or cfg.scenarios)
    methods = list(methods or cfg.methods)
    n_iter = cfg.n_iter if n_iter is None else n_iter
    base_seed = cfg.base_seed if base_seed is None else base_seed
    workers = cfg.workers if workers is None else workers
    if n_iter < 1:
        raise ConfigError("n_iter must be at least 1")
    for m in methods:
        MethodSpec(m)
    seeds = list(range(base_seed, base_seed + n_iter))
    jobs = []
    for scen in scenarios:
        for i in range(0, n_iter, cfg.chunk_size):
            jobs.append((scen, seeds[i:i + cfg.chunk_size], methods, cfg))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]

    cells = {}
    for (scen, _, _, _), res in zip(jobs, results):
        for method, (mses, secs) in res.items():
            key = (scen, method)
            if key in cells:
                prev = cells[key]
                cells[key] = BenchmarkCell(scen, method, np.concatenate([prev.per_rep, mses]),
                                           prev.seeds, prev.wall_clock + secs)
            else:
                cells[key] = BenchmarkCell(scen, method, np.asarray(mses), seeds, secs)
    return BenchmarkResult(scenarios, methods, cells, base_seed, n_iter)
