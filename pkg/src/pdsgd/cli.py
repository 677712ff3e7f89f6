"""Command-line entry point: run, sweep, validate, and plotdata.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 runtime divergence.

Per-run outputs (in the run's output directory): ``trace_seed<seed>.csv``
(one per seed), ``aggregate.csv`` (across seeds), ``summary.json``
(deterministic run summary), ``timing.json`` (wall-clock, kept separate so
everything else is byte-reproducible), and ``validation.jsonl`` when a
theorem gate is named. Sweeps add per-combination run directories plus
``sweep_summary.json``, ``rate_points.csv``/``rate_fit.csv`` (horizon
axis), and ``speedup.csv`` (network-size axis). ``plotdata`` converts
those tables into whitespace-delimited text files, each rendered to a
PNG alongside.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import glob
import json
import math
import os
import re
import sys

import numpy as np

from .algorithms import run
from .config import (
    ConfigError,
    RunPlan,
    SweepPlan,
    build_graph,
    build_problem,
    dump_resolved,
    expand_sweep,
    load_config,
)
from .metrics import (
    CSV_COLUMNS,
    aggregate,
    aggregate_to_csv,
    fit_loglog_slope,
    speedup_ratio,
    time_average,
    trace_from_csv,
    trace_to_csv,
)
from .tuner import MissingInputError, ValidationReport, report_to_json_lines, validate

__all__ = ["main", "cmd_run", "cmd_sweep", "cmd_validate", "cmd_plotdata"]

_METRICS = ("consensus_err", "grad_norm_sq", "opt_gap")

_RATE_METRICS = (
    ("time_avg_grad_norm_sq", "time_avg", "grad_norm_sq"),
    ("final_opt_gap", "final", "opt_gap"),
    ("final_consensus_err", "final", "consensus_err"),
)

_RATE_HEADER = "metric,group,T,mean,stderr"
_SPEEDUP_HEADER = "group,n,value,ratio_vs_smallest,baseline_n,noise_free"


def _g17(v: float) -> str:
    return format(float(v), ".17g")


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json_dump(path: str, obj) -> None:
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _report_dict(report: ValidationReport) -> dict:
    return {
        "theorem": report.theorem,
        "passed": report.passed,
        "checks": [
            {"condition": c.condition, "bound": c.bound, "value": c.value, "pass": c.passed}
            for c in report.checks
        ],
        "constants": dataclasses.asdict(report.constants),
        "extras": report.extras,
    }


def _print_report(report: ValidationReport) -> None:
    status = "PASS" if report.passed else "FAIL"
    print(f"validation [{report.theorem}]: {status}")
    for c in report.checks:
        mark = "ok " if c.passed else "VIOLATED"
        print(f"  {mark} {c.condition}: bound={c.bound:.6g} value={c.value:.6g}")


def _comparable_config(plan: RunPlan, n: int) -> dict:
    """The declared experiment knobs, for cross-size comparability checks."""
    g = plan.graph_spec
    topo = [g.topology]
    if g.topology == "random":
        topo += [g.graph_seed, g.extra_edge_prob]
    if g.topology == "file":
        topo += [g.file]
    ps = plan.problem_spec
    sched = plan.schedule
    if plan.schedule_source is not None:
        sched_desc = [plan.schedule_source]
    elif sched is not None:
        sched_desc = [
            sched.family, sched.kappa1, sched.kappa2, sched.beta, sched.theta,
            sched.kappa0, sched.t1, sched.beta0, sched.power,
        ]
    else:
        sched_desc = ["eta", plan.eta]
    return {
        "n": n,
        "topology": topo,
        "problem": [ps.kind, ps.p, ps.seed, ps.rank_deficit, ps.samples_per_agent,
                    ps.regularizer, list(ps.spectrum) if ps.spectrum else None,
                    ps.shared_design, ps.mu, ps.tau, ps.b_spread],
        "noise": [plan.noise.mode, plan.noise.sigma2, plan.noise.bias, plan.noise.batch_size],
        "method": plan.method,
        "schedule": sched_desc,
        "T": plan.t_steps,
        "record_every": plan.record_every,
        "seeds": list(plan.seeds),
        "dual_init": plan.dual_init,
    }


def _execute_plan(plan: RunPlan, force: bool) -> tuple[int, dict]:
    """Run one plan: validation gate, per-seed runs, outputs. Returns (code, summary)."""
    if plan.out_dir is None:
        raise ConfigError("output directory missing: set 'out' in [run] or pass --out")
    graph = build_graph(plan.graph_spec)
    prob = build_problem(plan.problem_spec, graph.n)
    os.makedirs(plan.out_dir, exist_ok=True)

    summary: dict = {
        "resolved_config": dump_resolved(plan),
        "n": graph.n,
        "noise_free": plan.noise.sigma2 == 0.0 and plan.noise.mode != "minibatch",
        "comparable": _comparable_config(plan, graph.n),
        "validation": None,
    }
    if plan.theorem is not None and plan.method == "pdsgd":
        report = validate(plan.schedule, graph, prob, plan.theorem, t_steps=plan.t_steps)
        _write(os.path.join(plan.out_dir, "validation.jsonl"), report_to_json_lines(report))
        summary["validation"] = _report_dict(report)
        if not report.passed and not force:
            _print_report(report)
            print(f"run refused: schedule violates {plan.theorem} (use --force to override)")
            summary["refused"] = True
            _json_dump(os.path.join(plan.out_dir, "summary.json"), summary)
            return 1, summary

    traces = []
    timing = {}
    per_seed = []
    for seed in plan.seeds:
        schedule_or_eta = plan.schedule if plan.method == "pdsgd" else plan.eta
        trace = run(
            prob, graph, plan.method, schedule_or_eta, plan.noise, plan.t_steps,
            seed, record_every=plan.record_every, dual_init=plan.dual_init,
        )
        _write(os.path.join(plan.out_dir, f"trace_seed{seed}.csv"), trace_to_csv(trace))
        timing[str(seed)] = trace.summary.get("wall_ns", 0)
        entry = {
            "seed": seed,
            "diverged": trace.diverged,
            "final": {m: float(trace.column(m)[-1]) for m in _METRICS},
            "time_avg": {
                m: time_average(trace.ks, trace.column(m), plan.t_steps) for m in _METRICS
            },
        }
        if trace.diverged:
            entry["diverged_at"] = trace.summary.get("diverged_at")
        if "minibatch_sigma2_observed" in trace.summary:
            entry["minibatch_sigma2_observed"] = trace.summary["minibatch_sigma2_observed"]
        per_seed.append(entry)
        traces.append(trace)
    summary["per_seed"] = per_seed

    any_diverged = any(t.diverged for t in traces)
    if not any_diverged:
        agg = aggregate(traces)
        if len(traces) > 1:
            _write(os.path.join(plan.out_dir, "aggregate.csv"), aggregate_to_csv(agg))
        finals = {}
        time_avgs = {}
        for m in _METRICS:
            vals_f = np.array([e["final"][m] for e in per_seed])
            vals_t = np.array([e["time_avg"][m] for e in per_seed])
            k = len(per_seed)
            finals[m] = {
                "mean": float(vals_f.mean()),
                "stderr": float(vals_f.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
            }
            time_avgs[m] = {
                "mean": float(vals_t.mean()),
                "stderr": float(vals_t.std(ddof=1) / math.sqrt(k)) if k > 1 else 0.0,
            }
        summary["aggregate"] = {"final": finals, "time_avg": time_avgs, "n_seeds": len(traces)}
    else:
        summary["aggregate"] = None
        summary["diverged_seeds"] = [e["seed"] for e in per_seed if e["diverged"]]

    _json_dump(os.path.join(plan.out_dir, "summary.json"), summary)
    _json_dump(
        os.path.join(plan.out_dir, "timing.json"),
        {"per_seed_wall_ns": timing, "total_wall_ns": sum(timing.values())},
    )
    return (3 if any_diverged else 0), summary


def cmd_run(args) -> int:
    plan = load_config(
        args.config, out_override=args.out, graph_file_override=args.graph_file
    )
    if isinstance(plan, SweepPlan):
        raise ConfigError("config contains a [sweep] section; use the sweep subcommand")
    if args.dump_resolved:
        print(dump_resolved(plan), end="")
        return 0
    code, _ = _execute_plan(plan, args.force)
    return code


def _fmt_axis_value(v) -> str:
    if isinstance(v, float):
        return format(v, "g")
    return str(v)


def _combo_tag(combo: dict, exclude: str | None = None) -> str:
    items = [
        f"{axis}{_fmt_axis_value(v)}"
        for axis, v in sorted(combo.items())
        if axis != exclude
    ]
    return "_".join(items) if items else "-"


def _sweep_worker(payload) -> dict:
    combo, plan, force = payload
    try:
        code, summary = _execute_plan(plan, force)
        return {"combo": combo, "out_dir": plan.out_dir, "code": code, "summary": summary}
    except (ConfigError, MissingInputError) as exc:
        return {"combo": combo, "out_dir": plan.out_dir, "code": 2, "error": str(exc)}
    except Exception as exc:  # record the failure; the sweep continues
        return {
            "combo": combo, "out_dir": plan.out_dir, "code": 2,
            "error": f"{type(exc).__name__}: {exc}",
        }


def _dump_sweep(sweep: SweepPlan) -> str:
    text = dump_resolved(sweep.template)
    lines = ["[sweep]"]
    for axis, values in sweep.axes.items():
        lines.append(f"{axis} = " + ",".join(_fmt_axis_value(v) for v in values))
    lines.append(f"max_runs = {sweep.max_runs}")
    return text + "\n".join(lines) + "\n"


def cmd_sweep(args) -> int:
    sweep = load_config(
        args.config, out_override=args.out, graph_file_override=args.graph_file
    )
    if isinstance(sweep, RunPlan):
        raise ConfigError("sweep command needs a [sweep] section in the config")
    if args.dump_resolved:
        print(_dump_sweep(sweep), end="")
        return 0
    root = sweep.template.out_dir
    if root is None:
        raise ConfigError("output directory missing: set 'out' in [run] or pass --out")
    pairs = expand_sweep(sweep)
    n_runs = len(pairs) * len(sweep.template.seeds)
    print(
        f"sweep: {len(pairs)} combinations x {len(sweep.template.seeds)} seeds "
        f"= {n_runs} runs (cap {sweep.max_runs})"
    )
    payloads = []
    for idx, (combo, plan) in enumerate(pairs):
        tag = _combo_tag(combo)
        out_dir = os.path.join(root, f"run_{idx:04d}_{tag}")
        payloads.append((combo, dataclasses.replace(plan, out_dir=out_dir), args.force))
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    else:
        results = [_sweep_worker(p) for p in payloads]

    os.makedirs(root, exist_ok=True)
    _write_sweep_tables(sweep, results, root)
    _json_dump(
        os.path.join(root, "sweep_summary.json"),
        {
            "n_combinations": len(pairs),
            "n_runs": n_runs,
            "axes": sweep.axes,
            "results": [
                {
                    "combo": r["combo"],
                    "out_dir": os.path.relpath(r["out_dir"], root),
                    "code": r["code"],
                    **({"error": r["error"]} if "error" in r else {}),
                }
                for r in results
            ],
        },
    )
    for r in results:
        if "error" in r:
            print(f"run {_combo_tag(r['combo'])} failed: {r['error']}", file=sys.stderr)
    return max((r["code"] for r in results), default=0)


def _write_sweep_tables(sweep: SweepPlan, results: list[dict], root: str) -> None:
    """Rate tables over the horizon axis and speedup tables over the size axis."""
    ok = [r for r in results if r.get("summary", {}).get("aggregate") if "error" not in r]

    if "T" in sweep.axes and len(sweep.axes["T"]) >= 2:
        points = []
        fits = []
        groups = sorted({_combo_tag(r["combo"], exclude="T") for r in ok})
        for group in groups:
            rows = sorted(
                (r for r in ok if _combo_tag(r["combo"], exclude="T") == group),
                key=lambda r: r["combo"]["T"],
            )
            for name, which, metric in _RATE_METRICS:
                ts, means, stderrs = [], [], []
                for r in rows:
                    cell = r["summary"]["aggregate"][which][metric]
                    ts.append(r["combo"]["T"])
                    means.append(cell["mean"])
                    stderrs.append(cell["stderr"])
                for t, mn, se in zip(ts, means, stderrs):
                    points.append(f"{name},{group},{t},{_g17(mn)},{_g17(se)}")
                positive = [(t, mn) for t, mn in zip(ts, means) if mn > 0]
                if len(positive) >= 3:
                    slope, stderr = fit_loglog_slope(
                        np.array([p[0] for p in positive], dtype=float),
                        np.array([p[1] for p in positive], dtype=float),
                    )
                    fits.append(f"{name},{group},{_g17(slope)},{_g17(stderr)},{len(positive)}")
        _write(os.path.join(root, "rate_points.csv"), _RATE_HEADER + "\n" + "\n".join(points) + "\n")
        if fits:
            _write(
                os.path.join(root, "rate_fit.csv"),
                "metric,group,slope,stderr,n_points\n" + "\n".join(fits) + "\n",
            )

    if "n" in sweep.axes and len(sweep.axes["n"]) >= 2:
        lines = []
        groups = sorted({_combo_tag(r["combo"], exclude="n") for r in ok})
        for group in groups:
            rows = [r for r in ok if _combo_tag(r["combo"], exclude="n") == group]
            entries = [
                {
                    "config": r["summary"]["comparable"],
                    "time_avg": {
                        "grad_norm_sq": r["summary"]["aggregate"]["time_avg"]["grad_norm_sq"]["mean"]
                    },
                    "noise_free": r["summary"]["noise_free"],
                }
                for r in rows
            ]
            if len(entries) < 2:
                continue
            for row in speedup_ratio(entries):
                lines.append(
                    f"{group},{row['n']},{_g17(row['value'])},{_g17(row['ratio_vs_smallest'])},"
                    f"{row['baseline_n']},{int(row['noise_free'])}"
                )
        if lines:
            _write(
                os.path.join(root, "speedup.csv"),
                _SPEEDUP_HEADER + "\n" + "\n".join(lines) + "\n",
            )


def cmd_validate(args) -> int:
    plan = load_config(
        args.config, out_override=args.out, graph_file_override=args.graph_file
    )
    if isinstance(plan, SweepPlan):
        plan = plan.template
        if plan.method == "pdsgd" and plan.schedule is None:
            from .config import resolve_suggested_schedule

            plan = resolve_suggested_schedule(plan, plan.schedule_source)
    if plan.theorem is None:
        raise ConfigError("missing required key 'theorem' in section [algorithm]")
    if plan.method != "pdsgd":
        raise ConfigError("theorem validation applies to the pdsgd method")
    graph = build_graph(plan.graph_spec)
    prob = build_problem(plan.problem_spec, graph.n)
    report = validate(plan.schedule, graph, prob, plan.theorem, t_steps=plan.t_steps)
    _print_report(report)
    print(report_to_json_lines(report), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write(os.path.join(args.out, "validation.jsonl"), report_to_json_lines(report))
    return 0 if report.passed else 1


def _sanitize(path: str) -> str:
    stem = os.path.splitext(path)[0]
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", stem).strip("_")


def _read_table(path: str, header: str) -> list[list[str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != header:
        raise ConfigError(
            f"schema mismatch in {path!r}: expected header {header!r}"
        )
    return [ln.split(",") for ln in lines[1:]]


def cmd_plotdata(args) -> int:
    from . import plotting

    files = sorted(glob.glob(args.traces, recursive=True))
    if not files:
        raise ConfigError(f"no files match {args.traces!r}")
    os.makedirs(args.out, exist_ok=True)

    if args.kind == "timeseries":
        column = args.column
        if column not in CSV_COLUMNS or column == "k":
            raise ConfigError(f"unknown trace column {column!r}")
        for path in files:
            with open(path, "r", encoding="utf-8") as fh:
                try:
                    trace = trace_from_csv(fh.read())
                except ValueError as exc:
                    raise ConfigError(f"schema mismatch in {path!r}: {exc}") from exc
            base = os.path.join(args.out, f"{_sanitize(path)}_timeseries_{column}")
            rows = [f"# k {column}"]
            vals = trace.column(column)
            rows += [f"{int(k)} {_g17(v)}" for k, v in zip(trace.ks, vals)]
            _write(base + ".txt", "\n".join(rows) + "\n")
            plotting.render_timeseries(trace.ks, vals, column, base + ".png")
        return 0

    if args.kind == "rate":
        for path in files:
            rows = _read_table(path, _RATE_HEADER)
            by_key: dict[tuple[str, str], list] = {}
            for metric, group, t, mean, stderr in rows:
                by_key.setdefault((metric, group), []).append(
                    (float(t), float(mean), float(stderr))
                )
            for (metric, group), pts in by_key.items():
                pts.sort()
                pos = [(t, m, s) for t, m, s in pts if m > 0 and t > 0]
                if not pos:
                    continue
                log_ts = np.log([p[0] for p in pos])
                log_vals = np.log([p[1] for p in pos])
                stderr_log = [p[2] / p[1] for p in pos]
                slope = intercept = None
                if len(pos) >= 3:
                    slope, _ = fit_loglog_slope(
                        np.array([p[0] for p in pos]), np.array([p[1] for p in pos])
                    )
                    intercept = float(np.mean(log_vals) - slope * np.mean(log_ts))
                tag = f"{_sanitize(path)}_rate_{metric}" + (
                    f"_{_sanitize(group)}" if group != "-" else ""
                )
                base = os.path.join(args.out, tag)
                out_rows = [f"# log_T log_{metric} stderr_log"]
                out_rows += [
                    f"{_g17(lt)} {_g17(lv)} {_g17(se)}"
                    for lt, lv, se in zip(log_ts, log_vals, stderr_log)
                ]
                if slope is not None:
                    out_rows.append(f"# fit slope {_g17(slope)}")
                _write(base + ".txt", "\n".join(out_rows) + "\n")
                plotting.render_rate(
                    log_ts, log_vals, stderr_log, slope, intercept, metric, base + ".png"
                )
        return 0

    # speedup
    for path in files:
        rows = _read_table(path, _SPEEDUP_HEADER)
        by_group: dict[str, list] = {}
        for group, n, value, ratio, baseline_n, noise_free in rows:
            by_group.setdefault(group, []).append((int(n), float(ratio)))
        for group, pts in by_group.items():
            pts.sort()
            tag = f"{_sanitize(path)}_speedup" + (
                f"_{_sanitize(group)}" if group != "-" else ""
            )
            base = os.path.join(args.out, tag)
            out_rows = ["# n ratio_vs_smallest"]
            out_rows += [f"{n} {_g17(r)}" for n, r in pts]
            _write(base + ".txt", "\n".join(out_rows) + "\n")
            plotting.render_speedup([p[0] for p in pts], [p[1] for p in pts], base + ".png")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdsgd",
        description="Distributed primal-dual SGD simulator and experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to the INI config")
        p.add_argument("--out", default=None, help="output directory (overrides [run] out)")
        p.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
        p.add_argument("--force", action="store_true",
                       help="run even when the named theorem validation fails")
        p.add_argument("--graph-file", default=None,
                       help="edge-list file (overrides [graph] file)")
        p.add_argument("--dump-resolved", action="store_true",
                       help="print the resolved config and exit")

    p_run = sub.add_parser("run", help="execute one configured run")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="execute a cross-product of runs")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_val = sub.add_parser("validate", help="check a schedule against a theorem")
    common(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready text files and PNGs")
    p_plot.add_argument("--kind", required=True, choices=("timeseries", "rate", "speedup"))
    p_plot.add_argument("--traces", required=True, help="glob of input files")
    p_plot.add_argument("--out", default="plots", help="output directory")
    p_plot.add_argument("--column", default="grad_norm_sq",
                        help="trace column for timeseries")
    p_plot.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingInputError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
