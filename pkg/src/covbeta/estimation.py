"""Restricted maximum likelihood by alternating fixed-point and Newton steps.

For fixed ``gamma`` the degree parameters solve the moment equations
``d_i = sum_k p_ik`` and ``b_j = sum_k p_kj``; these are solved by the
fixed-point sweeps of :func:`solve_theta_given_gamma`. The homophily vector
is then moved by a damped Newton step on the profile likelihood.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .fisher import PROB_FLOOR, blocks_from_probs, profile_information
from .model import (DirectedGraph, DyadCovariates, ModelParams, log_likelihood,
                    prob_matrix, score)

log = logging.getLogger(__name__)

EXACT_PROFILE_MAX_N = 2000
# theta is solved this much tighter inside the outer loop: the gamma score
# inherits the theta error, and Newton steps would chatter above tol_gamma
INNER_TOL_FACTOR = 1e-2
MAX_SWEEP_STEP = 4.0


class Status(enum.Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    MAX_ITER = "max_iter"


class Existence(enum.Enum):
    NONEXISTENT = "definitely-nonexistent"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class FitConfig:
    """Tolerances and caps for :func:`fit`.

    ``divergence_bound=None`` means ``30 + 2 log n``. ``gamma_box`` is the
    half-width of the box that stands in for the compact parameter set of
    ``gamma``; ``None`` disables it. ``exact_inverse=None`` picks the exact
    profile Hessian for ``n <= 2000`` and the closed-form one above.
    ``scaled_sweeps`` divides each fixed-point increment by the slope of
    ``log sum_k p_ik`` (see :func:`solve_theta_given_gamma`).
    """

    tol_theta: float = 1e-8
    tol_gamma: float = 1e-8
    max_outer: int = 200
    max_inner: int = 5000
    divergence_bound: float | None = None
    gamma_box: float | None = 20.0
    max_halvings: int = 30
    exact_inverse: bool | None = None
    scaled_sweeps: bool = True

    def __post_init__(self):
        if self.tol_theta <= 0 or self.tol_gamma <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.gamma_box is not None and self.gamma_box <= 0:
            raise ValueError("gamma_box must be positive")

    def bound(self, n: int) -> float:
        if self.divergence_bound is not None:
            return self.divergence_bound
        return 30.0 + 2.0 * math.log(n)

    def use_exact(self, n: int) -> bool:
        if self.exact_inverse is None:
            return n <= EXACT_PROFILE_MAX_N
        return self.exact_inverse


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit`.

    ``final_score_norm`` is the sup-norm of the full score (``gamma`` and
    ``theta`` parts). On convergence it is at most ``n * max(tol_theta,
    tol_gamma)`` for the ``theta`` part; the ``gamma`` part is driven to
    zero by Newton and is typically far smaller. When ``exists`` is false the
    parameters are the last iterate and must not be interpreted.
    """

    params: ModelParams
    converged: bool
    exists: bool
    outer_iters: int
    inner_iters: int
    final_score_norm: float
    loglik: float
    screen: Existence = Existence.UNKNOWN
    gamma_at_bound: bool = False
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)
    message: str = ""


def check_existence(graph: DirectedGraph) -> Existence:
    """Necessary screen for existence of the MLE.

    Any out- or in-degree equal to ``0`` or ``n - 1`` pushes the matching
    parameter to infinity. Passing the screen does not prove existence.
    :func:`solve_theta_given_gamma` reports such graphs as diverged without
    iterating.
    """
    n = graph.n
    for deg in (graph.out_degrees(), graph.in_degrees()):
        if ((deg == 0) | (deg == n - 1)).any():
            return Existence.NONEXISTENT
    return Existence.UNKNOWN


def degenerate_nodes(graph: DirectedGraph) -> dict[str, list[int]]:
    """Indices of nodes failing the degree screen, keyed by reason."""
    n = graph.n
    d, b = graph.out_degrees(), graph.in_degrees()
    return {
        "zero_out": np.flatnonzero(d == 0).tolist(),
        "full_out": np.flatnonzero(d == n - 1).tolist(),
        "zero_in": np.flatnonzero(b == 0).tolist(),
        "full_in": np.flatnonzero(b == n - 1).tolist(),
    }


def initial_params(graph: DirectedGraph, p: int) -> ModelParams:
    """Degree-based start: ``alpha_i = log(d_i + 1/2) - log(m)/2``, same for beta.

    ``m`` is the edge count, so ``exp(alpha_i + beta_j)`` reproduces the
    degrees in the sparse limit.
    """
    d, b = graph.out_degrees(), graph.in_degrees()
    half_scale = 0.5 * math.log(max(graph.n_edges, 1))
    alpha = np.log(d + 0.5) - half_scale
    beta = np.log(b + 0.5) - half_scale
    return ModelParams.anchored(alpha, beta, np.zeros(p))


def _increment(deg, P, axis, scaled, dense):
    """Per-node update from the degree equation along ``axis``.

    Rows flagged ``dense`` use the complementary equation
    ``n - 1 - d_i = sum_k (1 - p_ik)``, which stays well conditioned as the
    probabilities approach one.
    """
    expected = P.sum(axis=axis)
    step = np.log(deg) - np.log(expected)
    if not scaled:
        return step
    var = (P * (1.0 - P)).sum(axis=axis)
    step = step * expected / var
    if dense.any():
        m = P.shape[0] - 1
        comp = m - expected[dense]
        step[dense] = (np.log(comp) - np.log(m - deg[dense])) * comp / var[dense]
    return np.clip(step, -MAX_SWEEP_STEP, MAX_SWEEP_STEP)


def _saturated(p) -> bool:
    # an interior MLE never pushes a dyad this close to 0 or 1; reaching it
    # means the iterate is running off along a recession direction
    return bool(((p < PROB_FLOOR) | (p > 1.0 - PROB_FLOOR)).any())


def _theta_residual(d, b, P):
    return max(np.abs(d - P.sum(axis=1)).max(), np.abs(b[:-1] - P.sum(axis=0)[:-1]).max())


def solve_theta_given_gamma(graph: DirectedGraph, Z: DyadCovariates, gamma,
                            theta_init=None, cfg: FitConfig | None = None):
    """Solve the degree equations for ``theta`` at fixed ``gamma``.

    Alternates full sweeps

        alpha_i <- log d_i - log sum_{k != i} e^{beta_k + Z_ik' gamma}
                              / (1 + e^{alpha_i + beta_k + Z_ik' gamma})

    and the mirror update of ``beta_j`` from ``b_j``. In stable form this is
    ``alpha_i <- alpha_i + log d_i - log sum_k p_ik``. The plain update
    contracts at a rate close to the row's edge density, so dense rows crawl.
    With ``cfg.scaled_sweeps`` the increment is divided by the slope
    ``sum_k p_ik (1 - p_ik) / sum_k p_ik`` of ``log sum_k p_ik``, which makes
    it a Newton step for the node's own (decoupled, given beta) equation;
    increments are capped at ``MAX_SWEEP_STEP``.

    ``beta_n`` is swept with the others and the pair is re-anchored after
    each sweep, which keeps every probability unchanged but removes the
    slowly contracting shift direction.

    Returns
    -------
    theta : ndarray, shape (2n - 1,)
    status : Status
    iters : int
        Number of sweeps performed.
    """
    cfg = cfg or FitConfig()
    n = graph.n
    gamma = np.asarray(gamma, dtype=float)
    lin = Z.linear(gamma)
    np.fill_diagonal(lin, -np.inf)
    d = graph.out_degrees().astype(float)
    b = graph.in_degrees().astype(float)
    bound = cfg.bound(n)
    tol_score = cfg.tol_theta * n

    if theta_init is None:
        start = initial_params(graph, Z.p)
        alpha, beta = start.alpha.copy(), start.beta.copy()
    else:
        theta_init = np.asarray(theta_init, dtype=float)
        if theta_init.shape != (2 * n - 1,):
            raise ValueError(f"theta_init must have length {2 * n - 1}")
        alpha, beta = theta_init[:n].copy(), np.append(theta_init[n:], 0.0)

    if ((d == 0) | (d == n - 1) | (b == 0) | (b == n - 1)).any():
        return np.concatenate([alpha, beta[:-1]]), Status.DIVERGED, 0

    dense_d, dense_b = d > (n - 1) / 2, b > (n - 1) / 2
    off = ~np.eye(n, dtype=bool)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for it in range(1, cfg.max_inner + 1):
            alpha_old, beta_old = alpha, beta
            P = expit(lin + alpha[:, None] + beta[None, :])
            alpha = alpha + _increment(d, P, 1, cfg.scaled_sweeps, dense_d)
            P = expit(lin + alpha[:, None] + beta[None, :])
            beta = beta + _increment(b, P, 0, cfg.scaled_sweeps, dense_b)
            shift = beta[-1]
            alpha = alpha + shift
            beta = beta - shift

            if not (np.isfinite(alpha).all() and np.isfinite(beta).all()) or \
                    max(np.abs(alpha).max(), np.abs(beta).max()) > bound:
                return np.concatenate([alpha, beta[:-1]]), Status.DIVERGED, it
            change = max(np.abs(alpha - alpha_old).max(), np.abs(beta - beta_old).max())
            if change < cfg.tol_theta:
                P = expit(lin + alpha[:, None] + beta[None, :])
                if _saturated(P[off]):
                    return np.concatenate([alpha, beta[:-1]]), Status.DIVERGED, it
                if _theta_residual(d, b, P) <= tol_score:
                    return np.concatenate([alpha, beta[:-1]]), Status.CONVERGED, it
    return np.concatenate([alpha, beta[:-1]]), Status.MAX_ITER, cfg.max_inner


def _full_score_norm(graph, Z, params):
    sg, st = score(graph, Z, params)
    return float(max(np.abs(sg).max(initial=0.0), np.abs(st).max()))


def _project(gamma, box):
    if box is None:
        return gamma, False
    clipped = np.clip(gamma, -box, box)
    return clipped, bool((np.abs(clipped) >= box).any())


def fit(graph: DirectedGraph, Z: DyadCovariates | None = None,
        cfg: FitConfig | None = None, init: ModelParams | None = None) -> FitResult:
    """Two-step restricted MLE of ``(alpha, beta, gamma)``.

    Each outer iteration takes a Newton step for ``gamma`` using the profile
    information ``-H_gg - H_gt V^{-1} H_gt'`` (exact for ``n <= 2000``,
    closed-form beyond), halves it until the profile log-likelihood does not
    decrease, and re-solves ``theta`` at the accepted ``gamma``. Nonexistence
    is declared when the ``theta`` solve diverges or exhausts its cap at the
    start, or when the ``gamma`` search stalls because every longer step
    sends ``theta`` off to infinity.
    """
    cfg = cfg or FitConfig()
    n = graph.n
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if Z is None:
        Z = DyadCovariates.empty(n)
    if Z.n != n:
        raise ValueError(f"covariates are for {Z.n} nodes, graph has {n}")
    p = Z.p
    screen = check_existence(graph)
    exact = cfg.use_exact(n)

    if init is None:
        gamma = np.zeros(p)
        theta0 = None
    else:
        if init.n != n or init.p != p:
            raise ValueError("init parameters do not match the data dimensions")
        gamma = init.gamma.copy()
        theta0 = init.theta
    gamma, at_bound = _project(gamma, cfg.gamma_box)
    inner_cfg = cfg if p == 0 else replace(
        cfg, tol_theta=min(cfg.tol_theta, cfg.tol_gamma) * INNER_TOL_FACTOR)

    theta, status, inner = solve_theta_given_gamma(graph, Z, gamma, theta0, inner_cfg)
    if status is not Status.CONVERGED:
        params = _safe_params(theta, gamma, n)
        return FitResult(params, False, False, 0, inner, math.inf, -math.inf, screen,
                         at_bound, (), f"theta solve {status.value} at initial gamma")

    params = ModelParams.from_theta(theta, gamma)
    ll = log_likelihood(graph, Z, params)
    trace = [ll]
    outer = 0
    converged = p == 0
    message = ""

    while not converged and outer < cfg.max_outer:
        outer += 1
        P = prob_matrix(params, Z)
        sg = np.einsum("ij,ijk->k", graph.adj - P, Z.z)
        info = profile_information(blocks_from_probs(P, Z),
                                   "exact" if exact else "approx", normalize=False)
        try:
            step = np.linalg.solve(info, sg)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, sg, rcond=None)[0]

        t = 1.0
        accepted = False
        blocked = False  # a longer trial step lost the theta solution
        for _ in range(cfg.max_halvings + 1):
            g_try, hit = _project(gamma + t * step, cfg.gamma_box)
            th_try, st, it = solve_theta_given_gamma(graph, Z, g_try, theta, inner_cfg)
            inner += it
            if st is Status.CONVERGED:
                p_try = ModelParams.from_theta(th_try, g_try)
                ll_try = log_likelihood(graph, Z, p_try)
                if ll_try >= ll - 1e-12 * abs(ll):
                    accepted = True
                    break
            else:
                blocked = True
            t *= 0.5
        if not accepted:
            if blocked:
                return FitResult(params, False, False, outer, inner,
                                 _full_score_norm(graph, Z, params), ll, screen, at_bound,
                                 tuple(trace), "theta diverges along the gamma search direction")
            message = "line search failed to increase the profile likelihood"
            break

        d_gamma = np.abs(g_try - gamma).max(initial=0.0)
        d_theta = np.abs(th_try - theta).max()
        gamma, theta, params, at_bound = g_try, th_try, p_try, hit
        ll = max(ll_try, ll)
        trace.append(ll_try)
        if d_gamma < cfg.tol_gamma and d_theta < cfg.tol_theta:
            if blocked:
                # creeping toward a boundary where theta is unbounded
                return FitResult(params, False, False, outer, inner,
                                 _full_score_norm(graph, Z, params), ll, screen, at_bound,
                                 tuple(trace), "profile likelihood keeps increasing toward "
                                 "a boundary where theta diverges")
            converged = True

    if not converged and not message:
        message = f"no convergence in {cfg.max_outer} outer iterations"
    if at_bound:
        log.info("gamma constraint box of half-width %s is binding", cfg.gamma_box)
    return FitResult(params, converged, True, outer, inner,
                     _full_score_norm(graph, Z, params), log_likelihood(graph, Z, params),
                     screen, at_bound, tuple(trace), message)


def _safe_params(theta, gamma, n):
    theta = np.where(np.isfinite(theta), theta, np.sign(theta) * 1e300)
    theta = np.nan_to_num(theta)
    return ModelParams(theta[:n], np.append(theta[n:], 0.0), gamma)
