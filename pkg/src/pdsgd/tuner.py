"""Admissible-parameter calculator for the primal-dual method.

Evaluates the closed-form constants that define valid ``(kappa1, kappa2,
beta)`` / ``(kappa0, t1)`` ranges for each convergence regime, validates
user schedules against those ranges, and suggests compliant schedules.

Regime identifiers:

* ``theorem1`` — constant parameters, smooth (possibly nonconvex) costs.
* ``corollary1`` — constant parameters tied to the horizon,
  ``beta = kappa2 * sqrt(T/n)``, with horizon lower bounds.
* ``theorem2`` — horizon-polynomial constant parameters,
  ``beta = kappa2 * (T+1)**theta``.
* ``theorem3`` — diminishing steps ``beta_k = kappa0*(k + t1)`` under
  gradient domination with known constant ``nu``.
* ``theorem4``/``theorem5`` — constant parameters under gradient
  domination (same parameter ranges as ``theorem1``); the linear
  convergence factor ``epsilon`` is reported when ``nu`` is available.
* ``theorem6`` — constant parameters with a biased oracle
  (``beta >= c_breve0``).

All computations are pure functions of the graph spectrum and problem
constants.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import Schedule
from .graphs import Graph, LaplacianSpectrum, spectrum
from .problems import Problem, per_agent_minima

__all__ = [
    "TheoremConstants",
    "ConditionCheck",
    "ValidationReport",
    "MissingInputError",
    "THEOREMS",
    "DEFAULT_C_HAT0",
    "constants_thm1",
    "constants_thm3",
    "convergence_epsilon",
    "sigma_tilde2",
    "validate",
    "suggest",
    "report_to_json_lines",
]

THEOREMS = (
    "theorem1",
    "corollary1",
    "theorem2",
    "theorem3",
    "theorem4",
    "theorem5",
    "theorem6",
)

#: interval-position constant for the diminishing-step slope ``kappa0``
#: (admissible interval ``[c_hat0*nu*kappa2/4, nu*kappa2/4)``); the theory
#: only pins it to (0, 1)
DEFAULT_C_HAT0 = 0.5

#: sampled Lipschitz estimates are inflated by this factor before bounds
L_F_ESTIMATE_MARGIN = 1.05


class MissingInputError(ValueError):
    """A required input (e.g. ``nu`` or the horizon ``T``) is unavailable."""


@dataclass(frozen=True)
class TheoremConstants:
    """Closed-form constants evaluated at ``(kappa1, kappa2)`` on one graph.

    The base block (``eps1``–``eps6``, ``kappa3``–``kappa6``, ``c0``,
    ``c1``, ``c2``) and the biased-oracle block (``eps6_breve``,
    ``c_breve0``) are always present. The diminishing-step block
    (``eps8``–``eps16``, ``c_tilde0``, ``c_hat2``, ``c_hat3``, the
    ``kappa0`` interval) is populated by :func:`constants_thm3` and
    ``None`` otherwise; ``eps12``–``eps16`` additionally need the noise
    levels and are reported for completeness only.
    """

    # inputs
    rho: float
    rho2: float
    rho_l2: float
    l_f: float
    kappa1: float
    kappa2: float
    # base block
    eps1: float = 0.0
    eps2: float = 0.0
    eps3: float = 0.0
    eps4: float = 0.0
    eps5: float = 0.0
    eps6: float = 0.0
    kappa3: float = 0.0
    kappa4: float = 0.0
    kappa5: float = 0.0
    kappa6: float = 0.0
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    # biased-oracle block
    eps6_breve: float = 0.0
    c_breve0: float = 0.0
    # diminishing-step block
    nu: float | None = None
    kappa0: float | None = None
    t1: float | None = None
    eps8: float | None = None
    eps9: float | None = None
    eps10: float | None = None
    eps11: float | None = None
    eps12: float | None = None
    eps13: float | None = None
    eps14: float | None = None
    eps15: float | None = None
    eps16: float | None = None
    c_tilde0: float | None = None
    c_hat2: float | None = None
    c_hat3: float | None = None
    kappa0_lo: float | None = None
    kappa0_hi: float | None = None


def constants_thm1(
    spec: LaplacianSpectrum, l_f: float, kappa1: float, kappa2: float
) -> TheoremConstants:
    """Constant-parameter bounds at ``(kappa1, kappa2)``.

    Evaluates, exactly as written, the base constants: ``eps1 =
    (kappa1-1)*rho2 - 1``; ``eps2 = rho + (2*kappa1^2+1)*rho_l2 + 1``;
    ``eps3 = eps1*kappa2 - eps2*kappa2^2``; ``eps4 = (kappa2 -
    5*kappa2^2)/2``; ``kappa3 = 1/rho2 + kappa1 + 1``; ``kappa4 = 1/rho2 +
    kappa1 + 3/2``; ``kappa5 = (kappa1+1)/2 + 1/(2*rho2)``; ``kappa6 =
    min(1/(2*rho), (kappa1-1)/(2*kappa1))``; ``eps6 = max((2+3*l_f^2)/2,
    kappa3)``; ``eps5 = l_f + kappa3*l_f^2/(kappa2*eps6) +
    2*kappa4*l_f^2/eps6^2``; ``c0 = max(4*kappa2*eps5, eps6)``; ``c1 =
    1/rho2 + 1``; ``c2 = min(eps1/eps2, 1/5)``; and the biased-oracle pair
    ``eps6_breve = max(1+3*l_f^2, kappa3)``, ``c_breve0 =
    max(4*kappa2*eps5, eps6_breve)``.
    """
    if not (kappa1 > 0 and kappa2 > 0 and l_f > 0):
        raise ValueError("kappa1, kappa2, and l_f must be positive")
    rho = spec.rho
    rho2 = spec.require_rho2()
    rho_l2 = spec.rho_l2
    eps1 = (kappa1 - 1.0) * rho2 - 1.0
    eps2 = rho + (2.0 * kappa1**2 + 1.0) * rho_l2 + 1.0
    eps3 = eps1 * kappa2 - eps2 * kappa2**2
    eps4 = (kappa2 - 5.0 * kappa2**2) / 2.0
    kappa3 = 1.0 / rho2 + kappa1 + 1.0
    kappa4 = 1.0 / rho2 + kappa1 + 1.5
    kappa5 = (kappa1 + 1.0) / 2.0 + 1.0 / (2.0 * rho2)
    kappa6 = min(1.0 / (2.0 * rho), (kappa1 - 1.0) / (2.0 * kappa1))
    eps6 = max((2.0 + 3.0 * l_f**2) / 2.0, kappa3)
    eps5 = l_f + kappa3 * l_f**2 / (kappa2 * eps6) + 2.0 * kappa4 * l_f**2 / eps6**2
    c0 = max(4.0 * kappa2 * eps5, eps6)
    c1 = 1.0 / rho2 + 1.0
    c2 = min(eps1 / eps2, 0.2)
    eps6_breve = max(1.0 + 3.0 * l_f**2, kappa3)
    c_breve0 = max(4.0 * kappa2 * eps5, eps6_breve)
    return TheoremConstants(
        rho=rho, rho2=rho2, rho_l2=rho_l2, l_f=l_f, kappa1=kappa1, kappa2=kappa2,
        eps1=eps1, eps2=eps2, eps3=eps3, eps4=eps4, eps5=eps5, eps6=eps6,
        kappa3=kappa3, kappa4=kappa4, kappa5=kappa5, kappa6=kappa6,
        c0=c0, c1=c1, c2=c2, eps6_breve=eps6_breve, c_breve0=c_breve0,
    )


def constants_thm3(
    spec: LaplacianSpectrum,
    l_f: float,
    nu: float,
    kappa0: float,
    kappa1: float,
    kappa2: float,
    t1: float,
    *,
    sigma2: float | None = None,
    sigma_tilde2: float | None = None,
    c_hat0: float = DEFAULT_C_HAT0,
) -> TheoremConstants:
    """Diminishing-step bounds at ``(kappa0, kappa1, kappa2, t1)``.

    Adds to :func:`constants_thm1`: ``eps8 = kappa1*rho2 - 1``; ``eps9 =
    (3*kappa1+2)*kappa1*rho_l2/2 + rho + 1``; ``eps10 = kappa2*(kappa3-1)
    + kappa1*kappa2 + kappa3 - 1 + 3*kappa2^2``; ``eps11 = kappa2*l_f +
    (2*kappa3 - 1 + kappa2*(10*kappa3-4))*l_f^2``; ``c_tilde0 =
    max(4*eps11, eps6, eps10/eps4)``; ``c_hat2 = min(eps1/eps2,
    eps8/eps9, 1/5)``; ``c_hat3 = max(c_tilde0/kappa0,
    8*l_f*kappa3/(nu*kappa2), 16*l_f*(kappa3-1)/(nu*kappa0*kappa2))``; and
    the ``kappa0`` interval ``[c_hat0*nu*kappa2/4, nu*kappa2/4)``. The
    proof-bound constants ``eps12``–``eps16`` are reported when their
    inputs (``sigma2``, ``sigma_tilde2``) are supplied.
    """
    if nu is None or not (nu > 0):
        raise MissingInputError("the gradient-domination constant nu must be known and positive")
    if not (kappa0 > 0 and t1 > 0):
        raise ValueError("kappa0 and t1 must be positive")
    if not (0.0 < c_hat0 < 1.0):
        raise ValueError("c_hat0 must lie in (0, 1)")
    base = constants_thm1(spec, l_f, kappa1, kappa2)
    rho, rho2, rho_l2 = base.rho, base.rho2, base.rho_l2
    kappa3, kappa4, kappa5 = base.kappa3, base.kappa4, base.kappa5
    eps8 = kappa1 * rho2 - 1.0
    eps9 = 0.5 * (3.0 * kappa1 + 2.0) * kappa1 * rho_l2 + rho + 1.0
    eps10 = kappa2 * (kappa3 - 1.0) + kappa1 * kappa2 + kappa3 - 1.0 + 3.0 * kappa2**2
    eps11 = kappa2 * l_f + (2.0 * kappa3 - 1.0 + kappa2 * (10.0 * kappa3 - 4.0)) * l_f**2
    c_tilde0 = max(4.0 * eps11, base.eps6, eps10 / base.eps4)
    c_hat2 = min(base.eps1 / base.eps2, eps8 / eps9, 0.2)
    c_hat3 = max(
        c_tilde0 / kappa0,
        8.0 * l_f * kappa3 / (nu * kappa2),
        16.0 * l_f * (kappa3 - 1.0) / (nu * kappa0 * kappa2),
    )
    eps12 = (
        3.0
        + l_f
        + kappa3 * l_f**2 / (kappa0 * kappa2 * t1)
        + 2.0 * kappa4 * l_f**2 / (kappa0**2 * t1**2)
        + (2.0 + 2.0 * kappa3 * l_f**2) / (kappa0 * t1**2)
        + (kappa3 - 1.0) * l_f**2 / (kappa0**2 * kappa2 * t1**3)
        + ((kappa3 - 1.0) * l_f**2 / (kappa0**2 * t1**4)) * (2.0 / kappa0 + 2.0)
    )
    eps13 = kappa0 * kappa3 / kappa2**2 + (kappa3 - 1.0) / (kappa2**2 * t1**2)
    eps14 = None
    if sigma2 is not None and sigma_tilde2 is not None:
        eps14 = eps12 * sigma2 + eps13 * sigma_tilde2
    eps15 = (1.0 / kappa5) * min(
        base.eps3 * kappa0 * t1 / kappa2,
        base.eps4 * kappa0 * t1 / (2.0 * kappa2),
        nu / 8.0,
    )
    eps16 = None
    if sigma2 is not None:
        denom = kappa0**2 * (nu * kappa2 / (2.0 * kappa0) - 1.0)
        if denom > 0:
            eps16 = 4.0 * l_f * sigma2 * kappa2**2 / denom
    return replace(
        base,
        nu=nu, kappa0=kappa0, t1=t1,
        eps8=eps8, eps9=eps9, eps10=eps10, eps11=eps11,
        eps12=eps12, eps13=eps13, eps14=eps14, eps15=eps15, eps16=eps16,
        c_tilde0=c_tilde0, c_hat2=c_hat2, c_hat3=c_hat3,
        kappa0_lo=c_hat0 * nu * kappa2 / 4.0, kappa0_hi=nu * kappa2 / 4.0,
    )


def convergence_epsilon(consts: TheoremConstants, eta: float, nu: float) -> float:
    """Linear convergence factor ``epsilon`` for constant parameters under
    gradient domination: ``(1/kappa5) * min(eps3/eta, eps4/eta, nu/2)``."""
    if not (eta > 0 and nu > 0):
        raise ValueError("eta and nu must be positive")
    return (1.0 / consts.kappa5) * min(consts.eps3 / eta, consts.eps4 / eta, nu / 2.0)


def sigma_tilde2(prob: Problem) -> float:
    """Heterogeneity constant ``2*L_f*(f* - (1/n) sum_i f_i*)`` (nonnegative)."""
    minima = per_agent_minima(prob)
    return 2.0 * prob.l_f * (prob.f_star - float(np.mean(minima)))


@dataclass(frozen=True)
class ConditionCheck:
    """One hypothesis check: the inequality, its bound, the supplied value."""

    condition: str
    bound: float
    value: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating a schedule against one regime's hypotheses."""

    theorem: str
    checks: tuple[ConditionCheck, ...]
    constants: TheoremConstants
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> tuple[ConditionCheck, ...]:
        return tuple(c for c in self.checks if not c.passed)


def report_to_json_lines(report: ValidationReport) -> str:
    """One JSON object per condition: theorem, condition, bound, value, pass."""
    lines = []
    for c in report.checks:
        lines.append(
            json.dumps(
                {
                    "theorem": report.theorem,
                    "condition": c.condition,
                    "bound": c.bound,
                    "value": c.value,
                    "pass": c.passed,
                }
            )
        )
    return "\n".join(lines) + "\n"


def _effective_l_f(prob: Problem) -> float:
    l_f = prob.l_f
    if prob.l_f_is_estimate:
        l_f *= L_F_ESTIMATE_MARGIN
    return l_f


def _constant_beta(sched: Schedule, n: int, t_steps: int | None) -> float | None:
    """The k-independent ``beta`` of a schedule, or ``None`` if it varies."""
    if sched.family == "constant":
        return sched.beta
    if sched.family == "custom_power" and sched.power == 0.0:
        return sched.beta0
    if sched.family in ("corollary1", "polynomial_T"):
        t = sched.t_total if sched.t_total is not None else t_steps
        if t is None:
            raise MissingInputError(
                f"{sched.family} schedule needs the horizon T to evaluate beta"
            )
        if sched.family == "corollary1":
            return sched.kappa2 * math.sqrt(t) / math.sqrt(n)
        return sched.kappa2 * (t + 1) ** sched.theta
    return None


def _horizon(sched: Schedule, t_steps: int | None, theorem: str) -> int:
    t = sched.t_total if sched.t_total is not None else t_steps
    if t is None:
        raise MissingInputError(f"{theorem} validation needs the horizon T")
    return int(t)


def validate(
    sched: Schedule,
    graph: Graph,
    prob: Problem,
    theorem: str,
    *,
    t_steps: int | None = None,
    c_hat0: float = DEFAULT_C_HAT0,
    lap_spectrum: LaplacianSpectrum | None = None,
) -> ValidationReport:
    """Check every hypothesis of the named regime against a schedule.

    Violations are recorded in the report, not raised; only missing inputs
    (an unknown ``nu`` for ``theorem3``, or an absent horizon for
    horizon-dependent checks) raise :class:`MissingInputError`. Sampled
    Lipschitz estimates are inflated by 5% before computing the bounds.
    """
    theorem = theorem.lower()
    if theorem not in THEOREMS:
        raise ValueError(f"unknown theorem id {theorem!r}; expected one of {THEOREMS}")
    sp = lap_spectrum if lap_spectrum is not None else spectrum(graph)
    l_f = _effective_l_f(prob)
    k1, k2 = sched.kappa1, sched.kappa2
    n = graph.n
    checks: list[ConditionCheck] = []
    extras: dict = {"notes": list(sched.notes)}

    def add(condition: str, bound: float, value: float, passed: bool) -> None:
        checks.append(ConditionCheck(condition, float(bound), float(value), bool(passed)))

    if theorem == "theorem3":
        if prob.nu is None:
            raise MissingInputError(
                "theorem3 requires the gradient-domination constant nu; "
                "the problem does not certify one"
            )
        ok_family = sched.family == "linear_k"
        add("schedule family is linear_k", 1.0, 1.0 if ok_family else 0.0, ok_family)
        kappa0 = sched.kappa0 if ok_family else float("nan")
        t1 = sched.t1 if ok_family else float("nan")
        consts = constants_thm3(
            sp, l_f, prob.nu, kappa0 if ok_family else 1.0, k1, k2,
            t1 if ok_family else 1.0, c_hat0=c_hat0,
        )
        add("kappa1 > c1", consts.c1, k1, k1 > consts.c1)
        add("kappa2 > 0", 0.0, k2, k2 > 0.0)
        add("kappa2 < c_hat2(kappa1)", consts.c_hat2, k2, k2 < consts.c_hat2)
        if ok_family:
            add(
                "kappa0 >= c_hat0*nu*kappa2/4", consts.kappa0_lo, kappa0,
                kappa0 >= consts.kappa0_lo,
            )
            add("kappa0 < nu*kappa2/4", consts.kappa0_hi, kappa0, kappa0 < consts.kappa0_hi)
            add("t1 > c_hat3(kappa0, kappa1, kappa2)", consts.c_hat3, t1, t1 > consts.c_hat3)
        return ValidationReport(theorem=theorem, checks=tuple(checks), constants=consts, extras=extras)

    consts = constants_thm1(sp, l_f, k1, k2)
    add("kappa1 > c1", consts.c1, k1, k1 > consts.c1)
    add("kappa2 > 0", 0.0, k2, k2 > 0.0)
    add("kappa2 < c2(kappa1)", consts.c2, k2, k2 < consts.c2)

    if theorem in ("theorem1", "theorem4", "theorem5", "theorem6"):
        beta = _constant_beta(sched, n, t_steps)
        ok_const = beta is not None
        add("beta_k is constant in k", 1.0, 1.0 if ok_const else 0.0, ok_const)
        if ok_const:
            if theorem == "theorem6":
                add("beta >= c_breve0(kappa1, kappa2)", consts.c_breve0, beta, beta >= consts.c_breve0)
            else:
                add("beta >= c0(kappa1, kappa2)", consts.c0, beta, beta >= consts.c0)
        if theorem in ("theorem4", "theorem5"):
            ok_pl = prob.nu is not None and prob.nu > 0
            add(
                "problem certifies gradient domination (nu known)",
                1.0, 1.0 if ok_pl else 0.0, ok_pl,
            )
            if ok_pl and ok_const:
                eta = k2 / beta
                extras["epsilon"] = convergence_epsilon(consts, eta, prob.nu)
    elif theorem == "theorem2":
        ok_family = sched.family == "polynomial_T"
        add("schedule family is polynomial_T", 1.0, 1.0 if ok_family else 0.0, ok_family)
        if ok_family:
            theta = sched.theta
            add("theta > 0", 0.0, theta, theta > 0.0)
            add("theta < 1", 1.0, theta, theta < 1.0)
            t = _horizon(sched, t_steps, theorem)
            if 0.0 < theta:
                t_bound = (consts.c0 / k2) ** (1.0 / theta)
                add("T >= (c0/kappa2)^(1/theta)", t_bound, t, t >= t_bound)
    elif theorem == "corollary1":
        ok_family = sched.family == "corollary1"
        add("schedule family is corollary1", 1.0, 1.0 if ok_family else 0.0, ok_family)
        t = _horizon(sched, t_steps, theorem)
        t_bound1 = n * (consts.c0 / k2) ** 2
        add("T > n*(c0/kappa2)^2", t_bound1, t, t > t_bound1)
        add("T > n^3", float(n**3), t, t > n**3)
    return ValidationReport(theorem=theorem, checks=tuple(checks), constants=consts, extras=extras)


def suggest(
    graph: Graph,
    prob: Problem,
    theorem: str,
    n: int | None = None,
    t_steps: int | None = None,
    *,
    theta: float = 0.5,
    c_hat0: float = DEFAULT_C_HAT0,
    lap_spectrum: LaplacianSpectrum | None = None,
) -> Schedule:
    """A schedule satisfying the named regime's hypotheses.

    Pins ``kappa1 = 2*c1`` (which maximizes ``eps1/eps2`` up to a bounded
    factor) and ``kappa2`` to half its admissible ceiling, then sets the
    remaining knobs at their bounds: ``beta = c0`` (``c_breve0`` for the
    biased regime); for the horizon-tied family the natural ``beta =
    kappa2*sqrt(T/n)`` is kept unless it falls below ``c0``, in which case
    the suggestion falls back to a constant schedule at ``beta = c0`` and
    records the clip in ``notes``; diminishing steps use the midpoint of
    the ``kappa0`` interval and ``t1 = ceil(c_hat3) + 1``.
    """
    theorem = theorem.lower()
    if theorem not in THEOREMS:
        raise ValueError(f"unknown theorem id {theorem!r}; expected one of {THEOREMS}")
    sp = lap_spectrum if lap_spectrum is not None else spectrum(graph)
    if n is None:
        n = graph.n
    l_f = _effective_l_f(prob)
    c1 = 1.0 / sp.require_rho2() + 1.0
    kappa1 = 2.0 * c1
    probe = constants_thm1(sp, l_f, kappa1, 0.1)  # c2 does not depend on kappa2

    def finite(*vals: float) -> None:
        for v in vals:
            if not math.isfinite(v):
                raise ValueError(f"suggestion produced a non-finite parameter: {v}")

    if theorem == "theorem3":
        if prob.nu is None:
            raise MissingInputError(
                "theorem3 suggestions need the gradient-domination constant nu"
            )
        # kappa2 ceiling for this regime includes the eps8/eps9 ratio
        d_probe = constants_thm3(sp, l_f, prob.nu, 1.0, kappa1, 0.1, 1.0, c_hat0=c_hat0)
        kappa2 = d_probe.c_hat2 / 2.0
        kappa0 = (c_hat0 + 1.0) / 2.0 * prob.nu * kappa2 / 4.0
        d = constants_thm3(sp, l_f, prob.nu, kappa0, kappa1, kappa2, 1.0, c_hat0=c_hat0)
        t1 = float(math.ceil(d.c_hat3) + 1)
        finite(kappa1, kappa2, kappa0, t1)
        return Schedule.linear_k(kappa1=kappa1, kappa2=kappa2, kappa0=kappa0, t1=t1)

    kappa2 = probe.c2 / 2.0
    consts = constants_thm1(sp, l_f, kappa1, kappa2)
    finite(kappa1, kappa2, consts.c0, consts.c_breve0)
    if theorem in ("theorem1", "theorem4", "theorem5"):
        return Schedule.constant(kappa1=kappa1, kappa2=kappa2, beta=consts.c0)
    if theorem == "theorem6":
        return Schedule.constant(kappa1=kappa1, kappa2=kappa2, beta=consts.c_breve0)
    if theorem == "theorem2":
        return Schedule.polynomial_t(
            kappa1=kappa1, kappa2=kappa2, theta=theta, t_total=t_steps
        )
    # corollary1: keep the horizon-tied beta unless it falls below c0
    if t_steps is None:
        raise MissingInputError("corollary1 suggestions need the horizon T")
    beta_formula = kappa2 * math.sqrt(t_steps) / math.sqrt(n)
    if beta_formula < consts.c0:
        return Schedule.constant(
            kappa1=kappa1, kappa2=kappa2, beta=consts.c0,
            notes=(
                f"horizon-tied beta {beta_formula:.6g} fell below c0 "
                f"{consts.c0:.6g} and was clipped to a constant schedule",
            ),
        )
    return Schedule.corollary1(kappa1=kappa1, kappa2=kappa2, t_total=t_steps)
