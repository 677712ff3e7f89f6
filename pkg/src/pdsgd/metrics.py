"""Run metrics, trace containers, aggregation, and rate fitting.

Per-step metrics are defined on the stacked iterate ``x`` (one row per
agent) with network average ``x_bar``:

* consensus error — ``(1/n) * sum_i ||x_i - x_bar||^2``
* stationarity — ``||grad f(x_bar)||^2`` with the exact analytic gradient
* optimality gap — ``f(x_bar) - f_star`` (tiny negative rounding clamps to 0)

Traces serialize to delimited text with 17-significant-digit decimal floats
so that values round-trip exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .problems import Problem

__all__ = [
    "Trace",
    "consensus_error",
    "stationarity",
    "optimality_gap",
    "trace_to_csv",
    "trace_from_csv",
    "aggregate",
    "aggregate_to_csv",
    "time_average",
    "fit_loglog_slope",
    "speedup_ratio",
]

CSV_COLUMNS = ("k", "consensus_err", "grad_norm_sq", "opt_gap", "eta_k", "beta_k")

#: negative optimality gaps beyond this tolerance indicate a broken f_star
GAP_NEGATIVE_TOL = -1e-10


def consensus_error(x: np.ndarray) -> float:
    """Mean squared deviation from the network average, ``(1/n) sum ||x_i - x_bar||^2``."""
    x = np.asarray(x, dtype=float)
    dev = x - x.mean(axis=0)
    return float(np.einsum("ij,ij->", dev, dev)) / x.shape[0]


def stationarity(prob: Problem, x_bar: np.ndarray) -> float:
    """Squared global gradient norm ``||grad f(x_bar)||^2`` (exact gradient)."""
    g = prob.grad_f(np.asarray(x_bar, dtype=float))
    return float(g @ g)


def optimality_gap(prob: Problem, x_bar: np.ndarray) -> float:
    """Gap ``f(x_bar) - f_star``, clamping rounding-level negatives to zero."""
    gap = prob.f(np.asarray(x_bar, dtype=float)) - prob.f_star
    if gap < 0:
        if gap < GAP_NEGATIVE_TOL:
            raise AssertionError(
                f"optimality gap {gap} is negative beyond rounding tolerance"
            )
        gap = 0.0
    return gap


@dataclass
class Trace:
    """Recorded trajectory of one run.

    One entry per recorded step; fields map one-to-one onto the delimited
    output columns ``k``, ``consensus_err``, ``grad_norm_sq``, ``opt_gap``,
    ``eta_k``, ``beta_k``. ``summary`` carries run-level scalars (wall time,
    divergence flags, observed minibatch variance, ...) which stay out of
    the delimited table.
    """

    ks: np.ndarray
    consensus_err: np.ndarray
    grad_norm_sq: np.ndarray
    opt_gap: np.ndarray
    eta: np.ndarray
    beta: np.ndarray
    summary: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return bool(self.summary.get("diverged", False))

    def column(self, name: str) -> np.ndarray:
        return {
            "k": self.ks,
            "consensus_err": self.consensus_err,
            "grad_norm_sq": self.grad_norm_sq,
            "opt_gap": self.opt_gap,
            "eta_k": self.eta,
            "beta_k": self.beta,
        }[name]


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def trace_to_csv(trace: Trace) -> str:
    """Render the trace as delimited text (header plus one row per record)."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for i in range(len(trace.ks)):
        row = (
            str(int(trace.ks[i])),
            _g17(trace.consensus_err[i]),
            _g17(trace.grad_norm_sq[i]),
            _g17(trace.opt_gap[i]),
            _g17(trace.eta[i]),
            _g17(trace.beta[i]),
        )
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def trace_from_csv(text: str) -> Trace:
    """Parse :func:`trace_to_csv` output; numeric values round-trip exactly."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ValueError("unrecognized trace header")
    data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]], dtype=float)
    if data.size == 0:
        data = data.reshape(0, len(CSV_COLUMNS))
    return Trace(
        ks=data[:, 0].astype(int),
        consensus_err=data[:, 1],
        grad_norm_sq=data[:, 2],
        opt_gap=data[:, 3],
        eta=data[:, 4],
        beta=data[:, 5],
    )


@dataclass
class AggregateTrace:
    """Across-seed mean and standard error on a shared record grid."""

    ks: np.ndarray
    means: dict[str, np.ndarray]
    stderrs: dict[str, np.ndarray]
    n_seeds: int
    summary: dict = field(default_factory=dict)


def aggregate(traces: list[Trace]) -> AggregateTrace:
    """Combine same-grid traces into per-step means and standard errors.

    All traces must share the record grid exactly. The standard error is
    the sample standard deviation (ddof 1) divided by ``sqrt(n_seeds)``;
    with one seed it is zero.
    """
    if not traces:
        raise ValueError("need at least one trace")
    ks = traces[0].ks
    for t in traces[1:]:
        if len(t.ks) != len(ks) or np.any(t.ks != ks):
            raise ValueError("traces have mismatched record grids")
    n_seeds = len(traces)
    means: dict[str, np.ndarray] = {}
    stderrs: dict[str, np.ndarray] = {}
    for name in ("consensus_err", "grad_norm_sq", "opt_gap", "eta_k", "beta_k"):
        stack = np.stack([t.column(name) for t in traces])
        means[name] = stack.mean(axis=0)
        if n_seeds > 1:
            stderrs[name] = stack.std(axis=0, ddof=1) / math.sqrt(n_seeds)
        else:
            stderrs[name] = np.zeros(stack.shape[1])
    agg = AggregateTrace(ks=ks.copy(), means=means, stderrs=stderrs, n_seeds=n_seeds)
    t_final = int(ks[-1]) if len(ks) else 0
    agg.summary = {
        "n_seeds": n_seeds,
        "final": {name: float(means[name][-1]) for name in means} if len(ks) else {},
        "time_avg": {
            name: time_average(ks, means[name], t_final)
            for name in ("consensus_err", "grad_norm_sq", "opt_gap")
        }
        if len(ks)
        else {},
    }
    return agg


def aggregate_to_csv(agg: AggregateTrace) -> str:
    """Render the aggregate as delimited text with mean/stderr column pairs."""
    names = ("consensus_err", "grad_norm_sq", "opt_gap", "eta_k", "beta_k")
    header = ["k"]
    for name in names:
        header += [f"{name}_mean", f"{name}_stderr"]
    header.append("n_seeds")
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for i in range(len(agg.ks)):
        row = [str(int(agg.ks[i]))]
        for name in names:
            row += [_g17(agg.means[name][i]), _g17(agg.stderrs[name][i])]
        row.append(str(agg.n_seeds))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def time_average(ks: np.ndarray, values: np.ndarray, t_final: int) -> float:
    """Average of recorded values at steps ``k < t_final`` (uniform over records).

    Matches the convention that a ``T``-step run is summarized over steps
    ``0 .. T-1``. With ``t_final = 0`` the single initial record is used.
    """
    ks = np.asarray(ks)
    mask = ks < t_final if t_final > 0 else ks == 0
    if not mask.any():
        raise ValueError("no records before the final step")
    return float(np.asarray(values)[mask].mean())


def fit_loglog_slope(ts: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log(values)`` against ``log(ts)``.

    Needs at least 3 strictly positive points. Returns ``(slope, stderr)``
    where ``stderr`` is the standard error of the fitted slope (zero when
    only 3 points fit a near-exact line would still produce the residual
    based estimate).
    """
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    if ts.shape != values.shape or ts.ndim != 1:
        raise ValueError("ts and values must be equal-length vectors")
    if ts.size < 3:
        raise ValueError("need at least 3 points to fit a rate")
    if np.any(ts <= 0) or np.any(values <= 0):
        raise ValueError("rate fitting requires strictly positive points")
    lx, ly = np.log(ts), np.log(values)
    n = lx.size
    x_c = lx - lx.mean()
    sxx = float(x_c @ x_c)
    if sxx == 0.0:
        raise ValueError("all abscissae coincide")
    slope = float(x_c @ ly) / sxx
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = n - 2
    var = float(resid @ resid) / dof / sxx if dof > 0 else 0.0
    return slope, math.sqrt(max(var, 0.0))


def speedup_ratio(
    summaries: list[dict],
    *,
    metric: str = "grad_norm_sq",
) -> list[dict]:
    """Network-size scaling table from per-size run summaries.

    Each entry needs ``n``, a time-averaged metric value under
    ``time_avg[metric]``, and a ``config`` dict; all entries must share the
    same config apart from ``n`` (mismatches raise). Returns one row per
    entry with the ratio of the smallest network's value to this entry's
    value (the smallest network is the baseline with ratio 1). When the run
    was noise-free the ratio does not measure variance-driven speedup; such
    rows carry ``noise_free = True``.
    """
    if not summaries:
        raise ValueError("need at least one summary")
    base_cfg = None
    rows = []
    for s in summaries:
        cfg = dict(s["config"])
        n = int(cfg.pop("n"))
        if base_cfg is None:
            base_cfg = cfg
        elif cfg != base_cfg:
            diff = {k for k in set(cfg) | set(base_cfg) if cfg.get(k) != base_cfg.get(k)}
            raise ValueError(f"summaries differ beyond the network size: {sorted(diff)}")
        rows.append((n, float(s["time_avg"][metric]), bool(s.get("noise_free", False))))
    rows.sort(key=lambda r: r[0])
    base_n, base_val, _ = rows[0]
    out = []
    for n, val, noise_free in rows:
        if val <= 0:
            raise ValueError(f"nonpositive time-averaged metric for n={n}")
        row = {
            "n": n,
            "value": val,
            "ratio_vs_smallest": base_val / val,
            "baseline_n": base_n,
            "noise_free": noise_free,
        }
        if noise_free:
            row["note"] = "noise-free: speedup claim not applicable"
        out.append(row)
    return out
