"""Sum-structured test problems ``f = (1/n) sum_i f_i`` with stochastic oracles.

Three families are provided:

* ``quadratic`` — per-agent least squares ``f_i(x) = 0.5*||A_i x - b_i||^2``,
  optionally rank-deficient (gradient-dominated but not strongly convex).
* ``logistic`` — per-agent mean logistic loss on seeded synthetic data plus an
  optional ridge term.
* ``pl_composition`` — ``f_i(x) = g_i(A x)`` with strongly convex
  ``g_i`` (quadratic plus softplus) and a singular square ``A``.

Problems are immutable after construction; all arrays are write-protected.
Stochastic oracles draw from one independent RNG stream per agent, owned by
the caller (see :func:`agent_streams`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

__all__ = [
    "Problem",
    "NoiseModel",
    "agent_streams",
    "init_stream",
    "make_quadratic",
    "quadratic_from_data",
    "two_agent_fixture",
    "make_pl_composition",
    "make_logistic",
    "full_gradient",
    "stacked_full_gradient",
    "sample_stochastic_gradient",
    "single_point_gradient",
    "minibatch_variance",
    "per_agent_minima",
    "problem_to_text",
    "problem_from_text",
]

NOISE_MODES = ("additive_gaussian", "minibatch", "biased_additive")

#: eigenvalues of an averaged Gram matrix below this (times the largest one)
#: count as zero when extracting the gradient-domination constant
GRAM_ZERO_RTOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


def agent_streams(seed: int, n: int) -> list[np.random.Generator]:
    """One independent generator per agent, seeded by ``(seed, agent_id)``."""
    return [np.random.default_rng((seed, i)) for i in range(n)]


def init_stream(seed: int, n: int) -> np.random.Generator:
    """Generator for initial iterates; entropy index ``n`` is reserved for it."""
    return np.random.default_rng((seed, n))


def _softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


@dataclass(frozen=True)
class Problem:
    """Immutable problem instance.

    ``l_f`` is a valid gradient-Lipschitz constant of every local ``f_i``;
    ``f_star`` the global minimum of ``f``; ``nu`` the gradient-domination
    constant ``0.5*||grad f||^2 >= nu*(f - f_star)`` when the family
    certifies one (``None`` otherwise), with ``nu_is_sampled`` marking
    sampled lower bounds. ``x_ref`` is a minimizer (min-norm least-squares
    solution or reference solve).
    """

    kind: str
    n: int
    p: int
    l_f: float
    f_star: float
    nu: float | None
    nu_is_sampled: bool = False
    l_f_is_estimate: bool = False
    x_ref: np.ndarray | None = None
    # quadratic data
    a_mats: tuple[np.ndarray, ...] | None = None
    b_vecs: tuple[np.ndarray, ...] | None = None
    # logistic data
    z_mats: np.ndarray | None = None  # (n, m, p)
    labels: np.ndarray | None = None  # (n, m) in {0, 1}
    lam: float = 0.0
    # composition data
    a_mat: np.ndarray | None = None  # (p, p)
    q_diags: np.ndarray | None = None  # (n, p)
    c_vecs: np.ndarray | None = None  # (n, p)
    tau: float = 0.0
    # precomputed quadratic aggregates
    _grams: np.ndarray | None = field(default=None, repr=False)  # (n, p, p)
    _qvecs: np.ndarray | None = field(default=None, repr=False)  # (n, p)
    _consts: np.ndarray | None = field(default=None, repr=False)  # (n,)

    # ---- local and global evaluations -------------------------------------

    def f_agent(self, i: int, x: np.ndarray) -> float:
        """Local cost ``f_i(x)``."""
        if self.kind == "quadratic":
            r = self.a_mats[i] @ x - self.b_vecs[i]
            return 0.5 * float(r @ r)
        if self.kind == "logistic":
            t = self.z_mats[i] @ x
            loss = _softplus(t) - self.labels[i] * t
            return float(loss.mean()) + 0.5 * self.lam * float(x @ x)
        if self.kind == "pl_composition":
            y = self.a_mat @ x - self.c_vecs[i]
            quad = 0.5 * float(y * self.q_diags[i] @ y)
            return quad + self.tau * float(_softplus(self.a_mat @ x).sum())
        raise ValueError(f"unknown kind {self.kind!r}")

    def f(self, x: np.ndarray) -> float:
        """Global cost ``f(x) = (1/n) sum_i f_i(x)``."""
        if self.kind == "quadratic":
            h, q, r = self._mean_quadratic()
            return 0.5 * float(x @ h @ x) - float(q @ x) + r
        return sum(self.f_agent(i, x) for i in range(self.n)) / self.n

    def grad_agent(self, i: int, x: np.ndarray) -> np.ndarray:
        """Exact local gradient ``grad f_i(x)``."""
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to gradient evaluation")
        if self.kind == "quadratic":
            return self._grams[i] @ x - self._qvecs[i]
        if self.kind == "logistic":
            zi = self.z_mats[i]
            resid = expit(zi @ x) - self.labels[i]
            return zi.T @ resid / zi.shape[0] + self.lam * x
        if self.kind == "pl_composition":
            ax = self.a_mat @ x
            inner = self.q_diags[i] * (ax - self.c_vecs[i]) + self.tau * expit(ax)
            return self.a_mat.T @ inner
        raise ValueError(f"unknown kind {self.kind!r}")

    def grad_stack(self, x_stack: np.ndarray) -> np.ndarray:
        """Stacked exact gradients: row ``i`` is ``grad f_i(x_stack[i])``."""
        if not np.all(np.isfinite(x_stack)):
            raise ValueError("non-finite input to gradient evaluation")
        if self.kind == "quadratic":
            return np.einsum("ijk,ik->ij", self._grams, x_stack) - self._qvecs
        if self.kind == "logistic":
            t = np.einsum("imp,ip->im", self.z_mats, x_stack)
            resid = expit(t) - self.labels
            m = self.z_mats.shape[1]
            return np.einsum("imp,im->ip", self.z_mats, resid) / m + self.lam * x_stack
        if self.kind == "pl_composition":
            ax = x_stack @ self.a_mat.T
            inner = self.q_diags * (ax - self.c_vecs) + self.tau * expit(ax)
            return inner @ self.a_mat
        raise ValueError(f"unknown kind {self.kind!r}")

    def grad_f(self, x: np.ndarray) -> np.ndarray:
        """Exact global gradient ``grad f(x) = (1/n) sum_i grad f_i(x)``."""
        if self.kind == "quadratic":
            h, q, _ = self._mean_quadratic()
            return h @ x - q
        return self.grad_stack(np.broadcast_to(x, (self.n, self.p))).mean(axis=0)

    def samples_per_agent(self, i: int) -> int:
        """Number of data points defining ``f_i`` (minibatch oracle support)."""
        if self.kind == "quadratic":
            return self.a_mats[i].shape[0]
        if self.kind == "logistic":
            return self.z_mats.shape[1]
        raise ValueError(f"{self.kind} has no data-defined local costs")

    # ---- internals ---------------------------------------------------------

    def _mean_quadratic(self) -> tuple[np.ndarray, np.ndarray, float]:
        return self._mean_h, self._mean_q, self._mean_r

    def __post_init__(self) -> None:
        if self.kind == "quadratic":
            grams = np.stack([a.T @ a for a in self.a_mats])
            qvecs = np.stack([a.T @ b for a, b in zip(self.a_mats, self.b_vecs)])
            consts = np.array([0.5 * float(b @ b) for b in self.b_vecs])
            object.__setattr__(self, "_grams", _frozen(grams))
            object.__setattr__(self, "_qvecs", _frozen(qvecs))
            object.__setattr__(self, "_consts", _frozen(consts))
            object.__setattr__(self, "_mean_h", _frozen(grams.mean(axis=0)))
            object.__setattr__(self, "_mean_q", _frozen(qvecs.mean(axis=0)))
            object.__setattr__(self, "_mean_r", float(consts.mean()))


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic-gradient noise specification.

    ``sigma2`` is the per-agent variance bound ``E||g - grad f_i||^2``;
    ``mode`` selects the oracle; ``bias`` is the norm of the fixed mean
    offset (``biased_additive`` only); ``batch_size`` applies to
    ``minibatch``.
    """

    sigma2: float
    mode: str = "additive_gaussian"
    bias: float = 0.0
    batch_size: int = 1

    def __post_init__(self) -> None:
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.bias != 0.0 and self.mode != "biased_additive":
            raise ValueError("bias requires mode='biased_additive'")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def bias_vector(self, p: int) -> np.ndarray:
        """The fixed offset: norm ``bias``, equal components."""
        return np.full(p, self.bias / math.sqrt(p))


# ---- constructors ----------------------------------------------------------


def quadratic_from_data(a_list, b_list) -> Problem:
    """Quadratic problem from explicit per-agent ``(A_i, b_i)`` data."""
    a_mats = tuple(_frozen(np.atleast_2d(a)) for a in a_list)
    b_vecs = tuple(_frozen(np.atleast_1d(b)) for b in b_list)
    n = len(a_mats)
    p = a_mats[0].shape[1]
    if any(a.shape[1] != p for a in a_mats):
        raise ValueError("all design matrices must share the column dimension")
    if any(a.shape[0] != b.shape[0] for a, b in zip(a_mats, b_vecs)):
        raise ValueError("A_i row count must match b_i length")
    a_stacked = np.vstack(a_mats)
    b_stacked = np.concatenate(b_vecs)
    x_ls, *_ = np.linalg.lstsq(a_stacked, b_stacked, rcond=None)
    l_f = max(float(np.linalg.eigvalsh(a.T @ a)[-1]) for a in a_mats)
    h = sum(a.T @ a for a in a_mats) / n
    h_eigs = np.linalg.eigvalsh(h)
    tol = GRAM_ZERO_RTOL * max(h_eigs[-1], 1.0)
    positive = h_eigs[h_eigs > tol]
    nu = float(positive[0]) if positive.size else None
    prob = Problem(
        kind="quadratic", n=n, p=p, l_f=l_f, f_star=0.0, nu=nu,
        x_ref=_frozen(x_ls), a_mats=a_mats, b_vecs=b_vecs,
    )
    return replace(prob, f_star=prob.f(x_ls))


def two_agent_fixture() -> Problem:
    """The scalar two-agent fixture: A=(1),(1); b=(1),(-1); optimum 0."""
    return quadratic_from_data([[[1.0]], [[1.0]]], [[1.0], [-1.0]])


def make_quadratic(
    n: int,
    p: int,
    rank_deficit: int,
    seed: int,
    *,
    samples_per_agent: int | None = None,
    spectrum: np.ndarray | None = None,
    shared_design: bool = False,
    b_spread: float = 1.0,
) -> Problem:
    """Seeded random per-agent least squares with controlled stacked rank.

    Parameters
    ----------
    n, p : int
        Agent count and decision dimension.
    rank_deficit : int
        The stacked design has rank ``p - rank_deficit`` exactly
        (``0 <= rank_deficit < p``).
    seed : int
        Construction seed.
    samples_per_agent : int, optional
        Rows per local design (default ``p``).
    spectrum : array, optional
        Target positive eigenvalues (length ``p - rank_deficit``) of the
        averaged Gram matrix ``(1/n) sum_i A_i^T A_i``; defaults to the
        seeded draw's own spectrum.
    shared_design : bool
        All agents share one design matrix (then the targets need
        ``samples_per_agent >= p``); right-hand sides stay heterogeneous,
        drawn as ``A (x_ref + delta_i)`` with per-agent offsets of size
        ``b_spread``, so the global optimum has nonzero local gradients.
    """
    if not (0 <= rank_deficit < p):
        raise ValueError(f"rank_deficit must satisfy 0 <= d < p, got {rank_deficit}")
    m = samples_per_agent if samples_per_agent is not None else p
    if m < 1:
        raise ValueError("samples_per_agent must be >= 1")
    rank = p - rank_deficit
    rng = np.random.default_rng((seed, 0x51AD))
    for _ in range(10):
        if shared_design:
            if m < p:
                raise ValueError("shared_design requires samples_per_agent >= p")
            raw = rng.standard_normal((m, p))
            u, s, vt = np.linalg.svd(raw, full_matrices=False)
            if spectrum is not None:
                svals = np.sqrt(np.asarray(spectrum, dtype=float))
                if svals.size != rank:
                    raise ValueError("spectrum must list the positive Gram eigenvalues")
            else:
                svals = s[:rank]
            s_new = np.zeros(p)
            s_new[:rank] = svals
            a0 = u @ np.diag(s_new) @ vt
            a_mats = tuple(_frozen(a0) for _ in range(n))
            x_ref0 = rng.standard_normal(p)
            b_vecs = tuple(
                _frozen(a0 @ (x_ref0 + b_spread * rng.standard_normal(p))) for _ in range(n)
            )
            a_stacked = np.vstack(a_mats)
        else:
            raw = rng.standard_normal((n * m, p))
            u, s, vt = np.linalg.svd(raw, full_matrices=False)
            if spectrum is not None:
                svals = np.sqrt(n * np.asarray(spectrum, dtype=float))
                if svals.size != rank:
                    raise ValueError("spectrum must list the positive Gram eigenvalues")
            else:
                svals = s[:rank]
            s_new = np.zeros(s.shape[0])
            s_new[:rank] = svals
            a_stacked = u @ np.diag(s_new) @ vt
            a_mats = tuple(_frozen(a_stacked[i * m : (i + 1) * m]) for i in range(n))
            x_ref0 = rng.standard_normal(p)
            b_stacked = a_stacked @ x_ref0  # in range(A): f_star attained at x_ref0
            b_vecs = tuple(_frozen(b_stacked[i * m : (i + 1) * m]) for i in range(n))
        if np.linalg.matrix_rank(a_stacked) == rank:
            return quadratic_from_data(a_mats, b_vecs)
    raise RuntimeError("could not draw a design with the target rank in 10 attempts")


def make_pl_composition(
    n: int,
    p: int,
    seed: int,
    *,
    a_matrix: np.ndarray | None = None,
    mu: float = 0.5,
    tau: float = 0.5,
) -> Problem:
    """Composition ``f_i(x) = g_i(A x)`` with strongly convex ``g_i``.

    ``g_i(y) = 0.5*(y-c_i)^T Q_i (y-c_i) + tau * sum_j softplus(y_j)`` with
    diagonal ``Q_i >= mu*I``; ``A`` is square and singular by default, giving
    a convex, gradient-dominated, not strongly convex instance. ``nu`` is the
    minimum of the sampled ratio ``0.5*||grad f||^2 / (f - f_star)`` over
    10^4 seeded points (a lower-bound estimate, flagged as sampled).
    """
    rng = np.random.default_rng((seed, 0x9713))
    if a_matrix is None:
        qa, _ = np.linalg.qr(rng.standard_normal((p, p)))
        qb, _ = np.linalg.qr(rng.standard_normal((p, p)))
        svals = np.zeros(p)
        if p > 1:
            svals[: p - 1] = np.linspace(1.5, 0.6, p - 1)
        a_matrix = qa @ np.diag(svals) @ qb.T
    a_matrix = _frozen(np.asarray(a_matrix, dtype=float))
    q_diags = _frozen(rng.uniform(mu, mu + 1.0, size=(n, p)))
    c_vecs = _frozen(rng.standard_normal((n, p)))
    a_norm2 = float(np.linalg.eigvalsh(a_matrix.T @ a_matrix)[-1])
    l_f = a_norm2 * (float(q_diags.max()) + tau / 4.0)
    prob = Problem(
        kind="pl_composition", n=n, p=p, l_f=max(l_f, 1e-300), f_star=0.0, nu=None,
        a_mat=a_matrix, q_diags=q_diags, c_vecs=c_vecs, tau=tau,
    )
    if a_norm2 == 0.0:
        # A = 0: f is constant, every x optimal, no meaningful ratio
        return replace(prob, f_star=prob.f(np.zeros(p)), x_ref=_frozen(np.zeros(p)))
    x_hat = _reference_solve(prob, np.zeros(p), grad_tol=1e-11)
    f_star = prob.f(x_hat)
    prob = replace(prob, f_star=f_star, x_ref=_frozen(x_hat))
    nu = _sampled_pl_ratio(prob, x_hat, seed)
    return replace(prob, nu=nu, nu_is_sampled=nu is not None)


def _sampled_pl_ratio(prob: Problem, center: np.ndarray, seed: int, n_points: int = 10000):
    """Minimum sampled ratio ``0.5*||grad f||^2 / (f - f_star)``."""
    rng = np.random.default_rng((seed, 0x9714))
    radii = np.array([0.1, 0.3, 1.0, 3.0, 10.0])
    best = None
    for r in radii:
        pts = center + r * rng.standard_normal((n_points // radii.size + 1, prob.p))
        for x in pts:
            gap = prob.f(x) - prob.f_star
            if gap <= 1e-12:
                continue
            g = prob.grad_f(x)
            ratio = 0.5 * float(g @ g) / gap
            if best is None or ratio < best:
                best = ratio
    return best


def make_logistic(n: int, p: int, samples_per_agent: int, regularizer: float, seed: int) -> Problem:
    """Seeded synthetic logistic regression with ridge ``regularizer``.

    Labels are drawn from a planted linear model. When ``regularizer`` is 0,
    linearly separable datasets are rejected (exact LP test) and resampled up
    to 10 times so that the infimum is attained. ``f_star`` comes from a
    cached high-accuracy reference solve (gradient norm <= 1e-10).
    """
    if samples_per_agent < 1:
        raise ValueError("samples_per_agent must be >= 1")
    if regularizer < 0:
        raise ValueError("regularizer must be nonnegative")
    m = samples_per_agent
    for attempt in range(10):
        rng = np.random.default_rng((seed, 0x106, attempt))
        z = rng.standard_normal((n, m, p))
        w_true = rng.standard_normal(p) * (2.0 / math.sqrt(p))
        probs = expit(np.einsum("imp,p->im", z, w_true))
        labels = (rng.random((n, m)) < probs).astype(float)
        if regularizer == 0.0 and _is_separable(z.reshape(-1, p), labels.reshape(-1)):
            continue
        z = _frozen(z)
        labels = _frozen(labels)
        l_f = regularizer + max(
            float(np.linalg.eigvalsh(z[i].T @ z[i])[-1]) for i in range(n)
        ) / (4.0 * m)
        prob = Problem(
            kind="logistic", n=n, p=p, l_f=l_f, f_star=0.0,
            nu=regularizer if regularizer > 0 else None,
            z_mats=z, labels=labels, lam=regularizer,
        )
        x_hat = _reference_solve(prob, np.zeros(p), grad_tol=1e-10)
        return replace(prob, f_star=prob.f(x_hat), x_ref=_frozen(x_hat))
    raise RuntimeError("could not draw a non-separable dataset in 10 attempts")


def _is_separable(z: np.ndarray, labels: np.ndarray) -> bool:
    """Exact separability test: max-margin LP has a positive optimum."""
    signs = 2.0 * labels - 1.0
    sz = signs[:, None] * z
    n_samples, p = sz.shape
    # variables (w, eps): maximize eps s.t. eps - s_j z_j . w <= 0, |w| <= 1
    c = np.zeros(p + 1)
    c[-1] = -1.0
    a_ub = np.hstack([-sz, np.ones((n_samples, 1))])
    b_ub = np.zeros(n_samples)
    bounds = [(-1.0, 1.0)] * p + [(0.0, 1.0)]
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return bool(res.success and -res.fun > 1e-9)


def _reference_solve(prob: Problem, x0: np.ndarray, grad_tol: float) -> np.ndarray:
    """Deterministic high-accuracy minimizer of the global ``f``.

    Damped Newton on the analytic Hessian (all families here have one),
    falling back to gradient steps when the Newton direction fails to
    decrease ``f``. Deterministic and accurate to ``||grad f|| <= grad_tol``.
    """
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(500):
        g = prob.grad_f(x)
        g_norm = float(np.linalg.norm(g))
        if g_norm <= grad_tol:
            return x
        h = _hessian_f(prob, x)
        try:
            # min-norm solve: Hessians here may be singular (rank-deficient
            # designs), and a ridge would leak noise into the null space
            step, *_ = np.linalg.lstsq(h, -g, rcond=None)
        except np.linalg.LinAlgError:
            step = -g / prob.l_f
        f0 = prob.f(x)
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            if prob.f(x_new) <= f0 + 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        else:
            # near the floor, f-differences drop below double resolution and
            # the sufficient-decrease test is blind; accept the Newton step on
            # gradient-norm decrease instead (no cancellation in the gradient)
            x_new = x + step
            if float(np.linalg.norm(prob.grad_f(x_new))) >= g_norm:
                x_new = x - g / prob.l_f
        x = x_new
    g = prob.grad_f(x)
    if float(np.linalg.norm(g)) > grad_tol:
        raise RuntimeError(f"reference solve stalled at gradient norm {np.linalg.norm(g):.3e}")
    return x


def _hessian_f(prob: Problem, x: np.ndarray) -> np.ndarray:
    """Analytic Hessian of the global ``f`` at ``x``."""
    if prob.kind == "quadratic":
        return prob._mean_quadratic()[0].copy()
    if prob.kind == "logistic":
        t = np.einsum("imp,ip->im", prob.z_mats, np.broadcast_to(x, (prob.n, prob.p)))
        s = expit(t)
        w = s * (1.0 - s)
        m = prob.z_mats.shape[1]
        h = np.einsum("im,imp,imq->pq", w, prob.z_mats, prob.z_mats) / (prob.n * m)
        return h + prob.lam * np.eye(prob.p)
    if prob.kind == "pl_composition":
        ax = prob.a_mat @ x
        s = expit(ax)
        inner = prob.q_diags.mean(axis=0) + prob.tau * s * (1.0 - s)
        return prob.a_mat.T @ (inner[:, None] * prob.a_mat)
    raise ValueError(f"unknown kind {prob.kind!r}")


# ---- stochastic oracles ----------------------------------------------------


def full_gradient(prob: Problem, i: int, x: np.ndarray) -> np.ndarray:
    """Exact analytic local gradient (module-level alias)."""
    return prob.grad_agent(i, x)


def stacked_full_gradient(prob: Problem, x_stack: np.ndarray) -> np.ndarray:
    """Exact analytic gradients for all agents at their own iterates."""
    return prob.grad_stack(x_stack)


def single_point_gradient(prob: Problem, i: int, x: np.ndarray, j: int) -> np.ndarray:
    """Unbiased one-data-point gradient estimate of ``grad f_i`` at ``x``.

    For quadratics ``f_i`` is a sum over rows, so the single-row gradient is
    scaled by the row count; for logistic ``f_i`` is a mean, so the per-point
    loss gradient (plus the ridge term) is returned as-is.
    """
    if prob.kind == "quadratic":
        a = prob.a_mats[i]
        row = a[j]
        return a.shape[0] * row * (float(row @ x) - prob.b_vecs[i][j])
    if prob.kind == "logistic":
        z = prob.z_mats[i, j]
        return z * (float(expit(z @ x)) - prob.labels[i, j]) + prob.lam * x
    raise ValueError(f"minibatch oracle requires data-defined local costs, not {prob.kind}")


def sample_stochastic_gradient(
    prob: Problem,
    noise: NoiseModel,
    x_stack: np.ndarray,
    rng_streams: list[np.random.Generator],
) -> np.ndarray:
    """One stacked oracle draw: row ``i`` estimates ``grad f_i(x_stack[i])``.

    Rows use the caller-owned independent per-agent streams. Modes:
    ``additive_gaussian`` adds ``N(0, (sigma2/p) I)`` so the per-agent noise
    second moment is exactly ``sigma2``; ``minibatch`` averages
    ``batch_size`` uniformly drawn single-point gradients; ``biased_additive``
    adds the fixed offset of norm ``bias`` on top of the Gaussian noise.
    """
    n, p = x_stack.shape
    if len(rng_streams) != n:
        raise ValueError("need exactly one RNG stream per agent")
    if noise.mode == "minibatch":
        g = np.empty((n, p))
        for i in range(n):
            m = prob.samples_per_agent(i)
            idx = rng_streams[i].integers(0, m, size=noise.batch_size)
            acc = np.zeros(p)
            for j in idx:
                acc += single_point_gradient(prob, i, x_stack[i], int(j))
            g[i] = acc / noise.batch_size
        return g
    g = prob.grad_stack(x_stack)
    if noise.sigma2 > 0.0:
        scale = math.sqrt(noise.sigma2 / p)
        for i in range(n):
            g[i] = g[i] + scale * rng_streams[i].standard_normal(p)
    if noise.mode == "biased_additive":
        g = g + noise.bias_vector(p)
    return g


def minibatch_variance(prob: Problem, noise: NoiseModel, i: int, x: np.ndarray) -> float:
    """Exact ``E||g - grad f_i(x)||^2`` of the minibatch oracle by enumeration."""
    m = prob.samples_per_agent(i)
    mean = prob.grad_agent(i, x)
    second = 0.0
    for j in range(m):
        gj = single_point_gradient(prob, i, x, j)
        second += float(gj @ gj)
    var_single = second / m - float(mean @ mean)
    return max(var_single, 0.0) / noise.batch_size


def per_agent_minima(prob: Problem) -> np.ndarray:
    """Per-agent minima ``f_i* = min_x f_i(x)`` (finite for all families).

    Quadratics solve exactly by least squares; the other families run the
    deterministic reference solver on each local cost. For unregularized
    logistic agents with locally separable data the local infimum is
    approached rather than attained; the solver's stall value is returned.
    """
    out = np.empty(prob.n)
    for i in range(prob.n):
        if prob.kind == "quadratic":
            xi, *_ = np.linalg.lstsq(prob.a_mats[i], prob.b_vecs[i], rcond=None)
            out[i] = prob.f_agent(i, xi)
        else:
            local = _single_agent_view(prob, i)
            try:
                xi = _reference_solve(local, np.zeros(prob.p), grad_tol=1e-9)
                out[i] = local.f(xi)
            except RuntimeError:
                out[i] = _descend_to_stall(local, np.zeros(prob.p))
    return out


def _single_agent_view(prob: Problem, i: int) -> Problem:
    """A one-agent problem whose global ``f`` equals ``f_i``."""
    if prob.kind == "logistic":
        return replace(prob, n=1, z_mats=_frozen(prob.z_mats[i : i + 1]),
                       labels=_frozen(prob.labels[i : i + 1]), x_ref=None)
    if prob.kind == "pl_composition":
        return replace(prob, n=1, q_diags=_frozen(prob.q_diags[i : i + 1]),
                       c_vecs=_frozen(prob.c_vecs[i : i + 1]), x_ref=None)
    raise ValueError(prob.kind)


def _descend_to_stall(prob: Problem, x0: np.ndarray) -> float:
    """Gradient descent until the objective stops improving (inf estimate)."""
    x = x0.copy()
    f_prev = prob.f(x)
    for _ in range(200000):
        x = x - prob.grad_f(x) / prob.l_f
        f_cur = prob.f(x)
        if f_prev - f_cur < 1e-14:
            return f_cur
        f_prev = f_cur
    return f_prev


# ---- text serialization ----------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_vec(v: np.ndarray) -> str:
    return " ".join(_fmt(t) for t in np.asarray(v, dtype=float).ravel())


def problem_to_text(prob: Problem) -> str:
    """Serialize to a self-describing decimal text format (round-trips exactly)."""
    lines = ["pdsgd-problem v1", f"kind {prob.kind}", f"n {prob.n}", f"p {prob.p}"]
    lines.append(f"l_f {_fmt(prob.l_f)}")
    lines.append(f"f_star {_fmt(prob.f_star)}")
    lines.append(f"nu {_fmt(prob.nu) if prob.nu is not None else 'none'}")
    lines.append(f"nu_sampled {int(prob.nu_is_sampled)}")
    lines.append(f"l_f_estimate {int(prob.l_f_is_estimate)}")
    if prob.x_ref is None:
        lines.append("x_ref none")
    else:
        lines.append("x_ref " + _fmt_vec(prob.x_ref))
    if prob.kind == "quadratic":
        for i in range(prob.n):
            a, b = prob.a_mats[i], prob.b_vecs[i]
            lines.append(f"agent {i} rows {a.shape[0]}")
            for row in a:
                lines.append("A " + _fmt_vec(row))
            lines.append("b " + _fmt_vec(b))
    elif prob.kind == "logistic":
        lines.append(f"lam {_fmt(prob.lam)}")
        lines.append(f"rows {prob.z_mats.shape[1]}")
        for i in range(prob.n):
            lines.append(f"agent {i}")
            for row in prob.z_mats[i]:
                lines.append("Z " + _fmt_vec(row))
            lines.append("y " + _fmt_vec(prob.labels[i]))
    elif prob.kind == "pl_composition":
        lines.append(f"tau {_fmt(prob.tau)}")
        for row in prob.a_mat:
            lines.append("A " + _fmt_vec(row))
        for i in range(prob.n):
            lines.append(f"agent {i}")
            lines.append("q " + _fmt_vec(prob.q_diags[i]))
            lines.append("c " + _fmt_vec(prob.c_vecs[i]))
    return "\n".join(lines) + "\n"


def problem_from_text(text: str) -> Problem:
    """Parse the output of :func:`problem_to_text`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if lines[0] != "pdsgd-problem v1":
        raise ValueError("unrecognized problem text header")
    head: dict[str, str] = {}
    idx = 1
    while idx < len(lines):
        key, _, rest = lines[idx].partition(" ")
        if key in {"kind", "n", "p", "l_f", "f_star", "nu", "nu_sampled", "l_f_estimate", "x_ref"}:
            head[key] = rest
            idx += 1
        else:
            break
    kind = head["kind"]
    n, p = int(head["n"]), int(head["p"])
    nu = None if head["nu"] == "none" else float(head["nu"])
    x_ref = None if head["x_ref"] == "none" else _frozen([float(t) for t in head["x_ref"].split()])
    common = dict(
        kind=kind, n=n, p=p, l_f=float(head["l_f"]), f_star=float(head["f_star"]), nu=nu,
        nu_is_sampled=bool(int(head["nu_sampled"])), l_f_is_estimate=bool(int(head["l_f_estimate"])),
        x_ref=x_ref,
    )

    def floats(s: str) -> list[float]:
        return [float(t) for t in s.split()]

    if kind == "quadratic":
        a_mats, b_vecs = [], []
        while idx < len(lines):
            _, i_s, _, rows_s = lines[idx].split()
            idx += 1
            rows = int(rows_s)
            a = np.array([floats(lines[idx + r][2:]) for r in range(rows)])
            idx += rows
            b = np.array(floats(lines[idx][2:]))
            idx += 1
            a_mats.append(_frozen(a))
            b_vecs.append(_frozen(b))
        return Problem(**common, a_mats=tuple(a_mats), b_vecs=tuple(b_vecs))
    if kind == "logistic":
        lam = float(lines[idx].split()[1]); idx += 1
        rows = int(lines[idx].split()[1]); idx += 1
        z_all, y_all = [], []
        while idx < len(lines):
            idx += 1  # agent header
            z = np.array([floats(lines[idx + r][2:]) for r in range(rows)])
            idx += rows
            y_all.append(floats(lines[idx][2:]))
            idx += 1
            z_all.append(z)
        return Problem(**common, z_mats=_frozen(np.stack(z_all)), labels=_frozen(np.array(y_all)), lam=lam)
    if kind == "pl_composition":
        tau = float(lines[idx].split()[1]); idx += 1
        a = np.array([floats(lines[idx + r][2:]) for r in range(p)])
        idx += p
        q_all, c_all = [], []
        while idx < len(lines):
            idx += 1  # agent header
            q_all.append(floats(lines[idx][2:])); idx += 1
            c_all.append(floats(lines[idx][2:])); idx += 1
        return Problem(**common, a_mat=_frozen(a), q_diags=_frozen(np.array(q_all)),
                       c_vecs=_frozen(np.array(c_all)), tau=tau)
    raise ValueError(f"unknown kind {kind!r}")
