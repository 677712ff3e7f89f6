"""Experiment configuration: parsing, resolution, and round-tripping.

Configs are line-oriented INI text: ``[section]`` headers with ``key =
value`` pairs and comma-separated lists. Sections: ``[graph]``,
``[problem]``, ``[noise]`` (optional; defaults to noise-free),
``[algorithm]``, ``[run]``, and optionally ``[sweep]`` with axis lists.

Resolution produces a :class:`RunPlan` — a fully deterministic description
of what will execute. Unknown keys and unresolvable fields are errors.
The environment variable ``PDSGD_SEED_OFFSET`` shifts every seed at
resolution time; the applied offset is echoed into resolved configs (key
``seed_offset_applied``) so that re-parsing a dumped config yields the
identical plan instead of shifting twice.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, replace

from .algorithms import BASELINES, Schedule
from .graphs import Graph, build_named, random_connected, read_edge_list
from .problems import (
    NoiseModel,
    Problem,
    make_logistic,
    make_pl_composition,
    make_quadratic,
)
from .tuner import THEOREMS, suggest

__all__ = [
    "ConfigError",
    "GraphSpec",
    "ProblemSpec",
    "RunPlan",
    "SweepPlan",
    "load_config",
    "build_graph",
    "build_problem",
    "dump_resolved",
    "expand_sweep",
    "DEFAULT_SWEEP_CAP",
]

DEFAULT_SWEEP_CAP = 10_000

SWEEP_AXES = ("n", "T", "theta", "sigma2", "algorithm")

_GRAPH_KEYS = {"topology", "n", "file", "extra_edge_prob", "graph_seed"}
_PROBLEM_KEYS = {
    "kind", "p", "seed", "rank_deficit", "samples_per_agent", "regularizer",
    "spectrum", "shared_design", "mu", "tau", "b_spread",
}
_NOISE_KEYS = {"mode", "sigma2", "bias", "batch_size"}
_ALGO_KEYS = {
    "method", "schedule", "kappa1", "kappa2", "beta", "theta", "kappa0", "t1",
    "beta0", "power", "t_total", "eta", "theorem", "dual_init",
}
_RUN_KEYS = {"T", "seeds", "record_every", "out", "seed_offset_applied"}
_SWEEP_KEYS = set(SWEEP_AXES) | {"max_runs"}


class ConfigError(ValueError):
    """Configuration is unreadable or unresolvable; message names the key."""


@dataclass(frozen=True)
class GraphSpec:
    """Deterministic graph description (named topology, random, or file)."""

    topology: str
    n: int | None = None
    file: str | None = None
    extra_edge_prob: float = 0.15
    graph_seed: int = 0


@dataclass(frozen=True)
class ProblemSpec:
    """Deterministic problem description; ``n`` comes from the graph."""

    kind: str
    p: int
    seed: int
    rank_deficit: int = 0
    samples_per_agent: int | None = None
    regularizer: float = 0.0
    spectrum: tuple[float, ...] | None = None
    shared_design: bool = False
    mu: float = 0.5
    tau: float = 0.5
    b_spread: float = 1.0


@dataclass(frozen=True)
class RunPlan:
    """Fully resolved, deterministic description of one run command.

    ``schedule_source`` remembers a ``suggest:<theorem>`` origin so sweeps
    can re-derive the schedule per network size; it is advisory metadata
    and excluded from plan equality.
    """

    graph_spec: GraphSpec
    problem_spec: ProblemSpec
    noise: NoiseModel
    method: str
    schedule: Schedule | None
    eta: float | None
    theorem: str | None
    t_steps: int
    seeds: tuple[int, ...]
    record_every: int
    dual_init: str
    out_dir: str | None
    seed_offset_applied: int = 0
    schedule_source: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class SweepPlan:
    """A run template plus axis lists; expansion is their cross product."""

    template: RunPlan
    axes: dict
    max_runs: int


def _section(cp: configparser.ConfigParser, name: str, allowed: set[str], required: bool = True):
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing required section [{name}]")
        return None
    for key in cp.options(name):
        if key not in {k.lower() for k in allowed}:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
    return dict(cp.items(name))


def _get(sec: dict, key: str, conv, default=None, *, required: bool = False, section: str = ""):
    raw = sec.get(key.lower())
    if raw is None or raw == "":
        if required:
            raise ConfigError(f"missing required key {key!r} in section [{section}]")
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for key {key!r} in section [{section}]: {raw!r}") from exc


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _int_list(raw: str) -> tuple[int, ...]:
    items = [t.strip() for t in raw.split(",")]
    if any(t == "" for t in items):
        raise ValueError(raw)
    return tuple(int(t) for t in items)


def _float_list(raw: str) -> tuple[float, ...]:
    items = [t.strip() for t in raw.split(",")]
    if any(t == "" for t in items):
        raise ValueError(raw)
    return tuple(float(t) for t in items)


def _str_list(raw: str) -> tuple[str, ...]:
    items = [t.strip() for t in raw.split(",")]
    if any(t == "" for t in items):
        raise ValueError(raw)
    return tuple(items)


def build_graph(spec: GraphSpec) -> Graph:
    """Materialize the graph a spec describes."""
    if spec.topology == "file":
        if not spec.file:
            raise ConfigError("graph topology 'file' needs key 'file' or --graph-file")
        return read_edge_list(spec.file)
    if spec.topology == "random":
        if spec.n is None:
            raise ConfigError("random graphs need key 'n' in section [graph]")
        return random_connected(spec.n, spec.extra_edge_prob, spec.graph_seed)
    n = spec.n
    if spec.topology == "fig1":
        n = 10 if n is None else n
    if n is None:
        raise ConfigError(f"topology {spec.topology!r} needs key 'n' in section [graph]")
    return build_named(spec.topology, n)


def build_problem(spec: ProblemSpec, n: int) -> Problem:
    """Materialize the problem a spec describes on ``n`` agents."""
    if spec.kind == "quadratic":
        return make_quadratic(
            n, spec.p, spec.rank_deficit, spec.seed,
            samples_per_agent=spec.samples_per_agent,
            spectrum=spec.spectrum,
            shared_design=spec.shared_design,
            b_spread=spec.b_spread,
        )
    if spec.kind == "pl_composition":
        return make_pl_composition(n, spec.p, spec.seed, mu=spec.mu, tau=spec.tau)
    if spec.kind == "logistic":
        m = spec.samples_per_agent if spec.samples_per_agent is not None else 20
        return make_logistic(n, spec.p, m, spec.regularizer, spec.seed)
    raise ConfigError(f"unknown problem kind {spec.kind!r}")


_FAMILY_CANONICAL = {
    "constant": "constant",
    "corollary1": "corollary1",
    "polynomial_t": "polynomial_T",
    "linear_k": "linear_k",
    "custom_power": "custom_power",
}


def _parse_schedule(algo: dict, method: str) -> tuple[Schedule | None, float | None, str | None]:
    theorem = _get(algo, "theorem", str, section="algorithm")
    if theorem is not None:
        theorem = theorem.lower()
        if theorem not in THEOREMS:
            raise ConfigError(f"invalid value for key 'theorem' in section [algorithm]: {theorem!r}")
    eta = _get(algo, "eta", float, section="algorithm")
    if method in BASELINES:
        if eta is None:
            raise ConfigError("missing required key 'eta' in section [algorithm]")
        if not eta > 0:
            raise ConfigError("key 'eta' in section [algorithm] must be positive")
    elif method != "pdsgd":
        raise ConfigError(f"invalid value for key 'method' in section [algorithm]: {method!r}")
    family = _get(algo, "schedule", str, section="algorithm")
    if family is None:
        if method == "pdsgd":
            raise ConfigError("missing required key 'schedule' in section [algorithm]")
        return None, eta, theorem
    if family.startswith("suggest:"):
        return None, eta, theorem  # resolved later against graph + problem
    family = _FAMILY_CANONICAL.get(family.lower())
    if family is None:
        raise ConfigError(
            f"invalid value for key 'schedule' in section [algorithm]: {algo.get('schedule')!r}"
        )
    kappa1 = _get(algo, "kappa1", float, required=True, section="algorithm")
    kappa2 = _get(algo, "kappa2", float, required=True, section="algorithm")
    kw = dict(
        beta=_get(algo, "beta", float, section="algorithm"),
        theta=_get(algo, "theta", float, section="algorithm"),
        kappa0=_get(algo, "kappa0", float, section="algorithm"),
        t1=_get(algo, "t1", float, section="algorithm"),
        beta0=_get(algo, "beta0", float, section="algorithm"),
        power=_get(algo, "power", float, section="algorithm"),
        t_total=_get(algo, "t_total", int, section="algorithm"),
    )
    try:
        sched = Schedule(family=family, kappa1=kappa1, kappa2=kappa2, **kw)
    except ValueError as exc:
        raise ConfigError(f"invalid schedule in section [algorithm]: {exc}") from exc
    return sched, eta, theorem


def load_config(
    path_or_text: str,
    *,
    is_text: bool = False,
    out_override: str | None = None,
    graph_file_override: str | None = None,
    env: dict | None = None,
) -> RunPlan | SweepPlan:
    """Parse and resolve a config file (or literal text) into a plan.

    Returns a :class:`SweepPlan` when a ``[sweep]`` section is present,
    otherwise a :class:`RunPlan`. Raises :class:`ConfigError` on unknown
    keys, missing required keys, or malformed values.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if is_text:
            cp.read_string(path_or_text)
        else:
            with open(path_or_text, "r", encoding="utf-8") as fh:
                cp.read_file(fh)
        # spell out parse failures with the filename/key context configparser gives
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    g = _section(cp, "graph", _GRAPH_KEYS)
    pr = _section(cp, "problem", _PROBLEM_KEYS)
    nz = _section(cp, "noise", _NOISE_KEYS, required=False) or {}
    al = _section(cp, "algorithm", _ALGO_KEYS)
    rn = _section(cp, "run", _RUN_KEYS)
    sw = _section(cp, "sweep", _SWEEP_KEYS, required=False)

    graph_spec = GraphSpec(
        topology=_get(g, "topology", str, required=True, section="graph"),
        n=_get(g, "n", int, section="graph"),
        file=graph_file_override or _get(g, "file", str, section="graph"),
        extra_edge_prob=_get(g, "extra_edge_prob", float, default=0.15, section="graph"),
        graph_seed=_get(g, "graph_seed", int, default=0, section="graph"),
    )
    problem_spec = ProblemSpec(
        kind=_get(pr, "kind", str, required=True, section="problem"),
        p=_get(pr, "p", int, required=True, section="problem"),
        seed=_get(pr, "seed", int, required=True, section="problem"),
        rank_deficit=_get(pr, "rank_deficit", int, default=0, section="problem"),
        samples_per_agent=_get(pr, "samples_per_agent", int, section="problem"),
        regularizer=_get(pr, "regularizer", float, default=0.0, section="problem"),
        spectrum=_get(pr, "spectrum", _float_list, section="problem"),
        shared_design=_get(pr, "shared_design", _bool, default=False, section="problem"),
        mu=_get(pr, "mu", float, default=0.5, section="problem"),
        tau=_get(pr, "tau", float, default=0.5, section="problem"),
        b_spread=_get(pr, "b_spread", float, default=1.0, section="problem"),
    )
    try:
        noise = NoiseModel(
            sigma2=_get(nz, "sigma2", float, default=0.0, section="noise"),
            mode=_get(nz, "mode", str, default="additive_gaussian", section="noise"),
            bias=_get(nz, "bias", float, default=0.0, section="noise"),
            batch_size=_get(nz, "batch_size", int, default=1, section="noise"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [noise] section: {exc}") from exc

    method = _get(al, "method", str, required=True, section="algorithm")
    schedule, eta, theorem = _parse_schedule(al, method)
    schedule_raw = _get(al, "schedule", str, section="algorithm")
    dual_init = _get(al, "dual_init", str, default="zeros", section="algorithm")
    if dual_init not in ("zeros", "laplacian"):
        raise ConfigError(
            f"invalid value for key 'dual_init' in section [algorithm]: {dual_init!r}"
        )

    t_steps = _get(rn, "T", int, required=True, section="run")
    if t_steps < 0:
        raise ConfigError("key 'T' in section [run] must be nonnegative")
    seeds = _get(rn, "seeds", _int_list, required=True, section="run")
    record_every = _get(rn, "record_every", int, default=1, section="run")
    if record_every < 1:
        raise ConfigError("key 'record_every' in section [run] must be >= 1")
    out_dir = out_override or _get(rn, "out", str, section="run")

    offset_echo = _get(rn, "seed_offset_applied", int, section="run")
    if offset_echo is not None:
        offset = offset_echo  # seeds listed are final; do not shift again
    else:
        env = os.environ if env is None else env
        raw = env.get("PDSGD_SEED_OFFSET", "0")
        try:
            offset = int(raw)
        except ValueError as exc:
            raise ConfigError(f"invalid PDSGD_SEED_OFFSET value {raw!r}") from exc
        seeds = tuple(s + offset for s in seeds)

    is_suggest = schedule_raw is not None and schedule_raw.startswith("suggest:")
    plan = RunPlan(
        graph_spec=graph_spec,
        problem_spec=problem_spec,
        noise=noise,
        method=method,
        schedule=schedule,
        eta=eta,
        theorem=theorem,
        t_steps=t_steps,
        seeds=seeds,
        record_every=record_every,
        dual_init=dual_init,
        out_dir=out_dir,
        seed_offset_applied=offset,
        schedule_source=schedule_raw if is_suggest else None,
    )

    if sw is None:
        if plan.method == "pdsgd" and plan.schedule is None:
            plan = resolve_suggested_schedule(plan, schedule_raw)
        return plan
    axes: dict = {}
    for axis in SWEEP_AXES:
        if axis.lower() in sw:
            conv = {
                "n": _int_list, "T": _int_list, "theta": _float_list,
                "sigma2": _float_list, "algorithm": _str_list,
            }[axis]
            values = _get(sw, axis, conv, required=True, section="sweep")
            if len(values) == 0:
                raise ConfigError(f"empty axis {axis!r} in section [sweep]")
            axes[axis] = list(values)
    if not axes:
        raise ConfigError("section [sweep] needs at least one axis (n, T, theta, sigma2, algorithm)")
    max_runs = _get(sw, "max_runs", int, default=DEFAULT_SWEEP_CAP, section="sweep")
    return SweepPlan(template=plan, axes=axes, max_runs=max_runs)


def resolve_suggested_schedule(plan: RunPlan, schedule_raw: str | None = None) -> RunPlan:
    """Replace a ``suggest:<theorem>`` schedule with concrete parameters."""
    if schedule_raw is None or not schedule_raw.startswith("suggest:"):
        raise ConfigError("schedule resolution called without a suggest:<theorem> schedule")
    theorem = schedule_raw.split(":", 1)[1].lower()
    if theorem not in THEOREMS:
        raise ConfigError(
            f"invalid value for key 'schedule' in section [algorithm]: {schedule_raw!r}"
        )
    graph = build_graph(plan.graph_spec)
    prob = build_problem(plan.problem_spec, graph.n)
    sched = suggest(graph, prob, theorem, graph.n, plan.t_steps)
    return replace(plan, schedule=sched)


def _sweep_value_apply(plan: RunPlan, axis: str, value) -> RunPlan:
    """One axis assignment applied to a plan."""
    if axis == "n":
        return replace(plan, graph_spec=replace(plan.graph_spec, n=int(value)))
    if axis == "T":
        return replace(plan, t_steps=int(value))
    if axis == "theta":
        if plan.schedule is None:
            raise ConfigError("theta axis requires a pdsgd schedule")
        return replace(plan, schedule=replace(plan.schedule, theta=float(value)))
    if axis == "sigma2":
        return replace(plan, noise=replace(plan.noise, sigma2=float(value)))
    if axis == "algorithm":
        method = str(value)
        if method == "pdsgd":
            if plan.schedule is None and plan.schedule_source is None:
                raise ConfigError(
                    "algorithm axis includes pdsgd but no schedule is configured"
                )
            return replace(plan, method=method)
        if method in BASELINES:
            if plan.eta is None:
                raise ConfigError(
                    "algorithm axis includes a baseline but key 'eta' is missing in [algorithm]"
                )
            return replace(plan, method=method)
        raise ConfigError(f"invalid algorithm axis value {method!r}")
    raise ConfigError(f"unknown sweep axis {axis!r}")


def expand_sweep(sweep: SweepPlan) -> list[tuple[dict, RunPlan]]:
    """Cross-product expansion: list of (axis-assignment, plan) pairs.

    A run is one (axis combination, seed) pair; the cap counts runs.
    ``suggest:<theorem>`` schedules are re-derived per combination (the
    suggestion depends on the graph size and horizon). The ``theta`` axis
    applies after resolution so it composes with suggested schedules.
    """
    combos: list[dict] = [{}]
    for axis, values in sweep.axes.items():
        combos = [dict(c, **{axis: v}) for c in combos for v in values]
    total = len(combos) * len(sweep.template.seeds)
    if total > sweep.max_runs:
        raise ConfigError(
            f"sweep expansion of {total} runs exceeds the cap {sweep.max_runs}"
        )
    out = []
    for combo in combos:
        plan = sweep.template
        for axis, value in combo.items():
            if axis == "theta":
                continue
            plan = _sweep_value_apply(plan, axis, value)
        if plan.method == "pdsgd" and plan.schedule is None:
            plan = resolve_suggested_schedule(plan, plan.schedule_source)
        if "theta" in combo:
            plan = _sweep_value_apply(plan, "theta", combo["theta"])
        out.append((combo, plan))
    return out


def _fmt_float(v: float) -> str:
    return format(float(v), ".17g")


def dump_resolved(plan: RunPlan) -> str:
    """Resolved-config echo: INI text that re-parses to the identical plan."""
    cp = configparser.ConfigParser()
    g = plan.graph_spec
    cp["graph"] = {}
    cp["graph"]["topology"] = g.topology
    if g.n is not None:
        cp["graph"]["n"] = str(g.n)
    if g.file:
        cp["graph"]["file"] = g.file
    if g.topology == "random":
        cp["graph"]["extra_edge_prob"] = _fmt_float(g.extra_edge_prob)
        cp["graph"]["graph_seed"] = str(g.graph_seed)
    ps = plan.problem_spec
    cp["problem"] = {"kind": ps.kind, "p": str(ps.p), "seed": str(ps.seed)}
    if ps.rank_deficit:
        cp["problem"]["rank_deficit"] = str(ps.rank_deficit)
    if ps.samples_per_agent is not None:
        cp["problem"]["samples_per_agent"] = str(ps.samples_per_agent)
    if ps.regularizer:
        cp["problem"]["regularizer"] = _fmt_float(ps.regularizer)
    if ps.spectrum is not None:
        cp["problem"]["spectrum"] = ",".join(_fmt_float(v) for v in ps.spectrum)
    if ps.shared_design:
        cp["problem"]["shared_design"] = "true"
    if ps.kind == "pl_composition":
        cp["problem"]["mu"] = _fmt_float(ps.mu)
        cp["problem"]["tau"] = _fmt_float(ps.tau)
    if ps.b_spread != 1.0:
        cp["problem"]["b_spread"] = _fmt_float(ps.b_spread)
    cp["noise"] = {
        "mode": plan.noise.mode,
        "sigma2": _fmt_float(plan.noise.sigma2),
    }
    if plan.noise.bias:
        cp["noise"]["bias"] = _fmt_float(plan.noise.bias)
    if plan.noise.batch_size != 1:
        cp["noise"]["batch_size"] = str(plan.noise.batch_size)
    cp["algorithm"] = {"method": plan.method}
    if plan.schedule is not None:
        s = plan.schedule
        cp["algorithm"]["schedule"] = s.family
        cp["algorithm"]["kappa1"] = _fmt_float(s.kappa1)
        cp["algorithm"]["kappa2"] = _fmt_float(s.kappa2)
        for name in ("beta", "theta", "kappa0", "t1", "beta0", "power"):
            val = getattr(s, name)
            if val is not None:
                cp["algorithm"][name] = _fmt_float(val)
        if s.t_total is not None:
            cp["algorithm"]["t_total"] = str(int(s.t_total))
    if plan.eta is not None:
        cp["algorithm"]["eta"] = _fmt_float(plan.eta)
    if plan.theorem is not None:
        cp["algorithm"]["theorem"] = plan.theorem
    if plan.dual_init != "zeros":
        cp["algorithm"]["dual_init"] = plan.dual_init
    cp["run"] = {
        "T": str(plan.t_steps),
        "seeds": ",".join(str(s) for s in plan.seeds),
        "record_every": str(plan.record_every),
        "seed_offset_applied": str(plan.seed_offset_applied),
    }
    if plan.out_dir:
        cp["run"]["out"] = plan.out_dir
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
