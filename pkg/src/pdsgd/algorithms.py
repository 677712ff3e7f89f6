"""Distributed primal-dual SGD, baseline methods, and the run driver.

The primal-dual iteration maintains a primal stack ``x`` (one row per agent)
and a dual stack ``v`` and advances, with graph Laplacian ``L`` and a
per-step triple ``(alpha_k, beta_k, eta_k)``::

    x+ = x - eta_k * (alpha_k * L x + beta_k * v + g)
    v+ = v + eta_k * beta_k * L x

where ``g`` is the stacked stochastic gradient at the pre-update ``x``. Both
updates read the same pre-update state, and ``L x`` is computed once per
step. Baselines: centralized SGD, decentralized SGD with a mixing matrix,
and decentralized gradient tracking.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .graphs import Graph, MixingMatrix, laplacian, metropolis_weights
from .metrics import Trace, consensus_error, optimality_gap, stationarity
from .problems import (
    NoiseModel,
    Problem,
    agent_streams,
    init_stream,
    minibatch_variance,
    sample_stochastic_gradient,
)

__all__ = [
    "Schedule",
    "AlgState",
    "BaselineState",
    "Trace",
    "DivergenceError",
    "eval_schedule",
    "init_state",
    "pd_step",
    "init_baseline",
    "csgd_step",
    "dsgd_step",
    "dsgt_step",
    "run",
]

#: any iterate entry beyond this magnitude aborts the run as divergent
DIVERGENCE_LIMIT = 1e150

SCHEDULE_FAMILIES = ("constant", "corollary1", "polynomial_T", "linear_k", "custom_power")

BASELINES = ("csgd", "dsgd", "dsgt")


class DivergenceError(RuntimeError):
    """Raised internally when an iterate exceeds the divergence guard."""

    def __init__(self, k: int):
        super().__init__(f"iterate diverged at step {k}")
        self.k = k


@dataclass(frozen=True)
class Schedule:
    """Step-size schedule for the primal-dual method.

    Every family keeps the coupling ``alpha_k = kappa1 * beta_k`` and
    ``eta_k = kappa2 / beta_k`` with ``beta_k > 0``; families differ only in
    how ``beta_k`` evolves:

    * ``constant`` — ``beta_k = beta`` for all ``k``.
    * ``corollary1`` — constant ``beta = kappa2 * sqrt(T) / sqrt(n)``
      (horizon- and network-size-dependent; needs ``t_total``).
    * ``polynomial_T`` — constant ``beta_k = kappa2 * (T + 1)**theta``
      (needs ``t_total`` and ``theta`` in (0, 1)).
    * ``linear_k`` — ``beta_k = kappa0 * (k + t1)``, diminishing step sizes.
    * ``custom_power`` — ``beta_k = beta0 * (k + 1)**power``.

    ``notes`` carries advisory strings attached by the tuner (for example
    when a suggested horizon-dependent value was clipped).
    """

    family: str
    kappa1: float
    kappa2: float
    beta: float | None = None
    theta: float | None = None
    kappa0: float | None = None
    t1: float | None = None
    beta0: float | None = None
    power: float | None = None
    t_total: int | None = None
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.family not in SCHEDULE_FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}")
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise ValueError("kappa1 and kappa2 must be positive")
        need = {
            "constant": ("beta",),
            "corollary1": (),
            "polynomial_T": ("theta",),
            "linear_k": ("kappa0", "t1"),
            "custom_power": ("beta0", "power"),
        }[self.family]
        for name in need:
            if getattr(self, name) is None:
                raise ValueError(f"{self.family} schedule requires {name}")

    @classmethod
    def constant(cls, kappa1: float, kappa2: float, beta: float, **kw) -> "Schedule":
        return cls(family="constant", kappa1=kappa1, kappa2=kappa2, beta=beta, **kw)

    @classmethod
    def corollary1(cls, kappa1: float, kappa2: float, **kw) -> "Schedule":
        return cls(family="corollary1", kappa1=kappa1, kappa2=kappa2, **kw)

    @classmethod
    def polynomial_t(cls, kappa1: float, kappa2: float, theta: float, **kw) -> "Schedule":
        return cls(family="polynomial_T", kappa1=kappa1, kappa2=kappa2, theta=theta, **kw)

    @classmethod
    def linear_k(cls, kappa1: float, kappa2: float, kappa0: float, t1: float, **kw) -> "Schedule":
        return cls(family="linear_k", kappa1=kappa1, kappa2=kappa2, kappa0=kappa0, t1=t1, **kw)

    @classmethod
    def custom_power(cls, kappa1: float, kappa2: float, beta0: float, power: float, **kw) -> "Schedule":
        return cls(family="custom_power", kappa1=kappa1, kappa2=kappa2, beta0=beta0, power=power, **kw)


def eval_schedule(sched: Schedule, k: int, n: int) -> tuple[float, float, float]:
    """The triple ``(alpha_k, beta_k, eta_k)`` at step ``k`` on ``n`` agents.

    Horizon-dependent families (``corollary1``, ``polynomial_T``) require
    ``sched.t_total``; evaluating them without it is an error.
    """
    if k < 0:
        raise ValueError("step index must be nonnegative")
    fam = sched.family
    if fam == "constant":
        beta = sched.beta
    elif fam == "corollary1":
        if sched.t_total is None:
            raise ValueError("corollary1 schedule needs t_total before evaluation")
        beta = sched.kappa2 * math.sqrt(sched.t_total) / math.sqrt(n)
    elif fam == "polynomial_T":
        if sched.t_total is None:
            raise ValueError("polynomial_T schedule needs t_total before evaluation")
        beta = sched.kappa2 * (sched.t_total + 1) ** sched.theta
    elif fam == "linear_k":
        beta = sched.kappa0 * (k + sched.t1)
    else:  # custom_power
        beta = sched.beta0 * (k + 1) ** sched.power
    if not beta > 0:
        raise ValueError(f"schedule produced nonpositive beta_{k} = {beta}")
    return sched.kappa1 * beta, beta, sched.kappa2 / beta


@dataclass
class AlgState:
    """Mutable primal-dual iteration state (one row per agent)."""

    x: np.ndarray  # (n, p)
    v: np.ndarray  # (n, p)
    k: int
    lap: np.ndarray  # (n, n), cached Laplacian

    @property
    def dual_sum(self) -> np.ndarray:
        """Column sums of the dual stack (conserved by the iteration)."""
        return self.v.sum(axis=0)


def init_state(
    graph: Graph,
    x0: np.ndarray,
    dual_init: str | np.ndarray = "zeros",
) -> AlgState:
    """Initial state from a primal stack ``x0`` of shape ``(n, p)``.

    ``dual_init`` is ``"zeros"`` (``v = 0``), ``"laplacian"``
    (``v = L x0``), or an explicit ``(n, p)`` dual stack whose column
    sums must vanish (within 1e-12); the iteration then conserves the
    zero-sum property.
    """
    x0 = np.array(x0, dtype=float)
    if x0.ndim != 2 or x0.shape[0] != graph.n:
        raise ValueError(f"x0 must have shape ({graph.n}, p)")
    lap = laplacian(graph)
    if isinstance(dual_init, str):
        if dual_init == "zeros":
            v = np.zeros_like(x0)
        elif dual_init == "laplacian":
            v = lap @ x0
        else:
            raise ValueError(f"unknown dual_init {dual_init!r}")
    else:
        v = np.array(dual_init, dtype=float)
        if v.shape != x0.shape:
            raise ValueError("explicit dual stack must match the shape of x0")
    colsum = np.abs(v.sum(axis=0)).max() if v.size else 0.0
    if colsum > 1e-12:
        raise ValueError("dual initialization must have zero column sums")
    return AlgState(x=x0, v=v, k=0, lap=lap)


def _check_finite(x: np.ndarray, k: int) -> None:
    if not np.all(np.isfinite(x)) or np.abs(x).max() > DIVERGENCE_LIMIT:
        raise DivergenceError(k)


def pd_step(
    state: AlgState,
    grad_stack: np.ndarray,
    alpha: float,
    beta: float,
    eta: float,
) -> AlgState:
    """Advance one primal-dual step in place (returns the same object).

    Both updates read the pre-update primal stack; the Laplacian product is
    formed once and reused.
    """
    lx = state.lap @ state.x
    state.x = state.x - eta * (alpha * lx + beta * state.v + grad_stack)
    state.v = state.v + (eta * beta) * lx
    state.k += 1
    _check_finite(state.x, state.k)
    return state


@dataclass
class BaselineState:
    """Mutable baseline iteration state."""

    x: np.ndarray  # (n, p); identical rows for csgd
    k: int
    w: np.ndarray | None = None  # mixing matrix for dsgd/dsgt
    y: np.ndarray | None = None  # gradient tracker (dsgt)
    g_prev: np.ndarray | None = None  # last oracle draw (dsgt)


def init_baseline(name: str, x0: np.ndarray, mixing: MixingMatrix | None = None) -> BaselineState:
    """Initial baseline state; ``dsgd``/``dsgt`` need a mixing matrix.

    ``csgd`` starts every agent from the network average of ``x0`` (a single
    sequence replicated across rows). The ``dsgt`` tracker is seeded with the
    first oracle draw inside :func:`dsgt_step`.
    """
    x0 = np.array(x0, dtype=float)
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}")
    if name == "csgd":
        avg = x0.mean(axis=0)
        return BaselineState(x=np.tile(avg, (x0.shape[0], 1)), k=0)
    if mixing is None:
        raise ValueError(f"{name} requires a mixing matrix")
    if mixing.w.shape[0] != x0.shape[0]:
        raise ValueError("mixing matrix size must match the agent count")
    return BaselineState(x=x0, k=0, w=mixing.w)


def csgd_step(state: BaselineState, grad_stack: np.ndarray, eta: float) -> BaselineState:
    """Centralized SGD: every row moves by the network-averaged gradient."""
    mean_g = grad_stack.mean(axis=0)
    state.x = state.x - eta * mean_g
    state.k += 1
    _check_finite(state.x, state.k)
    return state


def dsgd_step(state: BaselineState, grad_stack: np.ndarray, eta: float) -> BaselineState:
    """Decentralized SGD: mix with ``W``, then take local gradient steps."""
    state.x = state.w @ state.x - eta * grad_stack
    state.k += 1
    _check_finite(state.x, state.k)
    return state


def dsgt_step(state: BaselineState, grad_stack: np.ndarray, eta: float) -> BaselineState:
    """Decentralized gradient tracking with one oracle draw per step.

    The tracker update ``y+ = W y + g_k - g_{k-1}`` uses the draw ``g_k``
    taken at the current iterate; on the first step the tracker is the first
    draw itself. Tracker column sums equal those of the latest draw.
    """
    if state.y is None:
        state.y = grad_stack.copy()
    else:
        state.y = state.w @ state.y + grad_stack - state.g_prev
    state.g_prev = grad_stack.copy()
    state.x = state.w @ state.x - eta * state.y
    state.k += 1
    _check_finite(state.x, state.k)
    return state


def _record_metrics(prob: Problem, x: np.ndarray) -> tuple[float, float, float]:
    x_bar = x.mean(axis=0)
    return consensus_error(x), stationarity(prob, x_bar), optimality_gap(prob, x_bar)


def run(
    prob: Problem,
    graph: Graph,
    algorithm: str,
    schedule_or_eta,
    noise: NoiseModel,
    t_steps: int,
    seed: int,
    *,
    record_every: int = 1,
    x0: np.ndarray | None = None,
    dual_init: str = "zeros",
    mixing: MixingMatrix | None = None,
) -> Trace:
    """Simulate ``t_steps`` oracle steps and record metrics along the way.

    ``algorithm`` is ``"pdsgd"`` (then ``schedule_or_eta`` is a
    :class:`Schedule`) or one of the baselines (then it is the scalar step
    size). Metrics are recorded at step 0, every ``record_every`` steps, and
    at the final step. ``t_steps = 0`` yields the initial record only. The
    default ``x0`` draws each coordinate i.i.d. standard normal from the
    dedicated initialization stream; per-agent oracle streams are seeded by
    ``(seed, agent_id)``.

    A divergence guard aborts when any entry is non-finite or exceeds
    ``1e150`` in magnitude; the partial trace is returned with
    ``summary["diverged"] = True`` and ``summary["diverged_at"]`` set.
    """
    if t_steps < 0:
        raise ValueError("t_steps must be nonnegative")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n, p = graph.n, prob.p
    if prob.n != n:
        raise ValueError("problem and graph disagree on the agent count")
    if x0 is None:
        x0 = init_stream(seed, n).standard_normal((n, p))
    streams = agent_streams(seed, n)

    is_pd = algorithm == "pdsgd"
    if is_pd:
        sched: Schedule = schedule_or_eta
        if sched.family in ("corollary1", "polynomial_T") and sched.t_total is None:
            sched = replace(sched, t_total=t_steps)
        state = init_state(graph, x0, dual_init=dual_init)
    elif algorithm in BASELINES:
        eta_fixed = float(schedule_or_eta)
        if algorithm in ("dsgd", "dsgt") and mixing is None:
            mixing = metropolis_weights(graph)
        state = init_baseline(algorithm, x0, mixing)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")

    rows: list[tuple[float, ...]] = []

    def record(k: int) -> None:
        if is_pd:
            _, beta_k, eta_k = eval_schedule(sched, k, n)
        else:
            beta_k, eta_k = 0.0, eta_fixed
        ce, gns, gap = _record_metrics(prob, state.x)
        rows.append((k, ce, gns, gap, eta_k, beta_k))

    t_start = time.perf_counter_ns()
    summary: dict = {}
    if noise.mode == "minibatch":
        summary["minibatch_sigma2_observed"] = max(
            minibatch_variance(prob, noise, i, x0[i]) for i in range(n)
        )
    record(0)
    try:
        for k in range(t_steps):
            g = sample_stochastic_gradient(prob, noise, state.x, streams)
            if is_pd:
                alpha, beta, eta = eval_schedule(sched, k, n)
                pd_step(state, g, alpha, beta, eta)
            elif algorithm == "csgd":
                csgd_step(state, g, eta_fixed)
            elif algorithm == "dsgd":
                dsgd_step(state, g, eta_fixed)
            else:
                dsgt_step(state, g, eta_fixed)
            if (k + 1) % record_every == 0 or k + 1 == t_steps:
                record(k + 1)
    except DivergenceError as exc:
        summary["diverged"] = True
        summary["diverged_at"] = exc.k
    summary.setdefault("diverged", False)
    summary["wall_ns"] = time.perf_counter_ns() - t_start
    summary["algorithm"] = algorithm
    summary["seed"] = seed
    summary["t_steps"] = t_steps
    arr = np.array(rows, dtype=float)
    return Trace(
        ks=arr[:, 0].astype(int),
        consensus_err=arr[:, 1],
        grad_norm_sq=arr[:, 2],
        opt_gap=arr[:, 3],
        eta=arr[:, 4],
        beta=arr[:, 5],
        summary=summary,
    )
