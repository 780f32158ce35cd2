"""CSV formats for episodes, traces, diagnostics and benchmark tables.

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly and makes repeated exports byte-identical.
"""
from __future__ import annotations

import csv
import os
import re

import numpy as np

from ..errors import DataError
from ..synthdata import EpisodeData


def fmt(v) -> str:
    return format(float(v), ".17g")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _single(ep: EpisodeData):
    if ep.xs.ndim != 2:
        raise DataError("only single (unbatched) episodes can be exported")


def episode_header(ep: EpisodeData) -> list[str]:
    cols = ["t", "y"] + [f"x{j + 1}" for j in range(ep.d)]
    if ep.regimes is not None:
        cols.append("z")
    if ep.sigma_true is not None:
        cols.append("sigma_true")
    if ep.thetas is not None:
        cols += [f"theta{j + 1}" for j in range(ep.d)]
    if ep.mix_coef is not None:
        cols.append("mix_coef")
    return cols


def export_episode(ep: EpisodeData, path):
    """Columns ``t,y,x1..xd[,z,sigma_true,theta1..thetad,mix_coef]``; ``z`` is 1-based."""
    _single(ep)
    rows = []
    for t in range(ep.T):
        row = [str(t + 1), fmt(ep.ys[t])] + [fmt(v) for v in ep.xs[t]]
        if ep.regimes is not None:
            row.append(str(int(ep.regimes[t]) + 1))
        if ep.sigma_true is not None:
            row.append(fmt(ep.sigma_true[t]))
        if ep.thetas is not None:
            row += [fmt(v) for v in ep.thetas[t]]
        if ep.mix_coef is not None:
            row.append(fmt(ep.mix_coef[t]))
        rows.append(row)
    _write_rows(path, episode_header(ep), rows)


def _parse_header(header, path):
    if header[:2] != ["t", "y"]:
        raise DataError(f"{path}: header must start with 't,y', got {','.join(header[:2])!r}")
    d = 0
    while 2 + d < len(header) and header[2 + d] == f"x{d + 1}":
        d += 1
    if d == 0:
        raise DataError(f"{path}: no design columns x1..xd in header")
    rest = header[2 + d:]
    layout = {}
    pos = 2 + d
    if rest[:1] == ["z"]:
        layout["z"] = pos
        rest, pos = rest[1:], pos + 1
    if rest[:1] == ["sigma_true"]:
        layout["sigma_true"] = pos
        rest, pos = rest[1:], pos + 1
    if rest[:1] == ["theta1"]:
        want = [f"theta{j + 1}" for j in range(d)]
        if rest[:d] != want:
            raise DataError(f"{path}: expected columns {','.join(want)}")
        layout["theta"] = pos
        rest, pos = rest[d:], pos + d
    if rest[:1] == ["mix_coef"]:
        layout["mix_coef"] = pos
        rest, pos = rest[1:], pos + 1
    if rest:
        raise DataError(f"{path}: unexpected column {rest[0]!r} at position {pos + 1}")
    return d, layout


def import_episode(path) -> EpisodeData:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty file, expected a header")
    header = [h.strip() for h in rows[0]]
    d, layout = _parse_header(header, path)
    ncol = len(header)
    body = rows[1:]
    values = np.empty((len(body), ncol))
    for i, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {ncol}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {i}, column {j + 1} ({header[j]}): non-numeric {cell!r}") from None
    if not np.isfinite(values).all():
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: row {i + 2}, column {j + 1} ({header[j]}): non-finite value")
    kw = {}
    if "z" in layout:
        z = values[:, layout["z"]]
        if np.any(z != np.round(z)) or np.any(z < 1):
            raise DataError(f"{path}: column z must hold regime ids 1..K")
        kw["regimes"] = z.astype(int) - 1
    if "sigma_true" in layout:
        kw["sigma_true"] = values[:, layout["sigma_true"]]
    if "theta" in layout:
        kw["thetas"] = values[:, layout["theta"]:layout["theta"] + d]
    if "mix_coef" in layout:
        kw["mix_coef"] = values[:, layout["mix_coef"]]
    return EpisodeData(xs=values[:, 2:2 + d], ys=values[:, 1], **kw)


def export_trace(trace, path):
    """Columns ``t,y,y_hat,sq_loss,nll_loss`` for a single-episode trace."""
    if trace.y.ndim != 1:
        raise DataError("only single-episode traces can be exported")
    rows = [[str(t + 1), fmt(trace.y[t]), fmt(trace.y_hat[t]), fmt(trace.sq_loss[t]),
             fmt(trace.nll_loss[t])] for t in range(trace.T)]
    _write_rows(path, ["t", "y", "y_hat", "sq_loss", "nll_loss"], rows)


def write_diagnostics(trace, outdir, prefix="") -> list[str]:
    """Write weights, sigma and mixed-covariance trajectories when the trace has them."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    steps = [str(t + 1) for t in range(trace.T)]
    if trace.weights is not None:
        K = trace.weights.shape[-1]
        path = os.path.join(outdir, f"{prefix}weights.csv")
        _write_rows(path, ["t"] + [f"p_{k + 1}" for k in range(K)],
                    [[s] + [fmt(v) for v in row] for s, row in zip(steps, trace.weights)])
        written.append(path)
    sigma = getattr(trace, "sigma", None)
    if sigma is not None:
        path = os.path.join(outdir, f"{prefix}sigma.csv")
        _write_rows(path, ["t", "sigma"], [[s, fmt(v)] for s, v in zip(steps, sigma)])
        written.append(path)
    qhat = getattr(trace, "qhat_diag", None)
    if qhat is not None:
        path = os.path.join(outdir, f"{prefix}qhat.csv")
        _write_rows(path, ["t"] + [f"qhat_diag_{j + 1}" for j in range(qhat.shape[-1])],
                    [[s] + [fmt(v) for v in row] for s, row in zip(steps, qhat)])
        written.append(path)
    return written


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by this module (header plus float rows)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(c) for c in r] for r in rows[1:]]).reshape(-1, len(rows[0]))


_SAFE = re.compile(r"[^A-Za-z0-9_.-]")


def safe_name(s: str) -> str:
    return _SAFE.sub("_", s)
