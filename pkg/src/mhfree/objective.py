"""Inner objective J(H; a), its infimum v(a), the decay rate a* and related quantities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .distortions import Distortion
from .distributions import LossDistribution, mean_and_second_moment
from .premium import (AssumptionError, DualDistribution, MarketParams, check_assumption,
                      dual_cdf, premium_rate)
from .retention import RetentionFunction
from .solver.qp import InnerProblem, QPResult, SolverError, default_grid, solve_retention_qp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveBreakdown:
    quad_term: float  # (a/2) int H^2 dF
    lin_term: float  # int H dF
    prem_term: float  # (1+theta) int H dF^

    @property
    def total(self) -> float:
        return self.quad_term + self.lin_term - self.prem_term


def objective_eval(H: RetentionFunction, a: float, F: LossDistribution,
                   dual: DualDistribution) -> ObjectiveBreakdown:
    """Exact Stieltjes evaluation of ``J(H; a)`` on the nodes of ``H``."""
    if not a > 0:
        raise ValueError("a must be positive")
    prob = InnerProblem.build(F, dual, H.grid)
    q, l, p = prob.objective_parts(H.slopes, a)
    if not all(np.isfinite([q, l, p])):
        raise ValueError("objective term is not finite")
    return ObjectiveBreakdown(q, l, p)


@dataclass(frozen=True)
class GridSpec:
    n_nodes: int = 2000
    p_eps: float = 1e-6
    extra: tuple = ()
    ode_nodes: int = 4000  # p-nodes for the quantile route

    def build(self, F: LossDistribution, dual: DualDistribution) -> np.ndarray:
        grid = default_grid(F, dual, self.n_nodes, self.p_eps)
        if self.extra:
            grid = np.union1d(grid, np.asarray(self.extra, dtype=float))
        return grid


@dataclass
class VResult:
    value: float
    retention: RetentionFunction
    qp: QPResult


def v_eval(a: float, F: LossDistribution, dual: DualDistribution, grid_spec: GridSpec = GridSpec(),
           problem: Optional[InnerProblem] = None, warm=None) -> VResult:
    """``v(a) = inf_H J(H; a)`` on the grid, with its minimiser."""
    if problem is None:
        problem = InnerProblem.build(F, dual, grid_spec.build(F, dual))
    res = solve_retention_qp(a, problem, warm=warm)
    return VResult(res.objective, res.retention, res)


@dataclass
class RateSolution:
    a_star: float
    v_at_a_star: float
    target: float
    bracket: tuple
    trace: list
    H_star: RetentionFunction
    qp: Optional[QPResult]
    dual: DualDistribution
    problem: InnerProblem = field(repr=False)
    route: str = "qp"
    psi: Optional[object] = field(default=None, repr=False)

    @property
    def theta(self) -> float:
        return self.dual.theta

    @property
    def residual(self) -> float:
        return self.v_at_a_star - self.target


def _resolve_route(route: str, F: LossDistribution) -> str:
    if route not in ("qp", "ode", "auto"):
        raise ValueError(f"unknown route {route!r}")
    if route == "auto":
        return "ode" if F.has_quantile_density else "qp"
    if route == "ode" and not F.has_quantile_density:
        raise AssumptionError("the quantile route needs an absolutely continuous quantile function")
    return route


def solve_rate(params: MarketParams, F: LossDistribution, g: Distortion,
               grid_spec: GridSpec = GridSpec(), tol: float = 1e-8,
               max_doublings: int = 60, route: str = "qp") -> RateSolution:
    """Root ``a*`` of ``v(a) = pi - (1+theta) int z dF^`` by bracketing and Brent's method.

    ``route="ode"`` computes each ``v(a)`` from the quantile-domain obstacle
    problem instead of the slope program; its minimiser is scored with the
    same exact cell moments.
    """
    report = check_assumption(params, F, g)
    if not report.ok:
        raise AssumptionError(report.message)
    route = _resolve_route(route, F)
    dual = dual_cdf(F, g, params.theta0)
    target = params.pi - dual.loading * dual.mean
    trace: list[tuple[float, float]] = []
    cache: dict[float, tuple] = {}
    warm = [None]

    if route == "qp":
        problem = InnerProblem.build(F, dual, grid_spec.build(F, dual))

        def inner(a):
            res = solve_retention_qp(a, problem, warm=warm[0])
            warm[0] = res.retention.slopes
            return res.objective, res.retention, res, None
    else:
        from .solver.quantile import quantile_grid, retention_from_psi, solve_quantile_ode

        qgrid = quantile_grid(F, grid_spec.ode_nodes, grid_spec.p_eps)
        problem = InnerProblem.build(F, dual, qgrid.z_grid)

        def inner(a):
            psi = solve_quantile_ode(a, F, g, params.theta0, grid=qgrid, warm=warm[0])
            warm[0] = psi.values
            H = retention_from_psi(psi)
            return problem.objective(H.slopes, a), H, None, psi

    def phi(a):
        out = inner(a)
        cache[a] = out
        val = out[0] - target
        trace.append((a, val))
        return val

    lo, hi = 2.0**-20, 1.0
    f_hi = phi(hi)
    k = 0
    while f_hi <= 0:
        lo, hi = hi, 2 * hi
        f_hi = phi(hi)
        k += 1
        if k > max_doublings:
            raise SolverError("no sign change found while doubling a; check the premium assumption")
    f_lo = phi(lo)
    k = 0
    while f_lo >= 0:
        hi, f_hi = lo, f_lo
        lo /= 2
        f_lo = phi(lo)
        k += 1
        if k > max_doublings:
            raise SolverError("no sign change found while halving a; check the premium assumption")
    bracket = (lo, hi)
    a_star = optimize.brentq(phi, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=200)
    if a_star not in cache:
        phi(a_star)
    value, H, qp, psi = cache[a_star]
    resid = value - target
    if abs(resid) > tol * (abs(target) + 1):
        raise SolverError(f"root residual {resid:.3e} above tolerance")
    return RateSolution(a_star, value, target, bracket, trace, H, qp, dual, problem, route, psi)


def value_function(a_star: float, x) -> float:
    """``V(x) = exp(-a* x)``."""
    if not a_star > 0:
        raise ValueError("a* must be positive")
    x = np.asarray(x, dtype=float)
    out = np.exp(-a_star * np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


def drift_volatility(H: RetentionFunction, params: MarketParams, F: LossDistribution, g: Distortion,
                     dual: Optional[DualDistribution] = None) -> tuple[float, float]:
    """Diffusion coefficients ``mu = pi - c(I) - E[H]`` and ``sigma^2 = E[H^2]``."""
    dual = dual or dual_cdf(F, g, params.theta0)
    m1, m2 = mean_and_second_moment(F, H)
    c = premium_rate(H, F, g, params.theta0, dual).value
    mu = params.pi - c - m1
    if not (np.isfinite(mu) and np.isfinite(m2)):
        raise ValueError("drift or variance is not finite")
    return mu, m2


def hjb_residual(H: RetentionFunction, a: float, params: MarketParams, F: LossDistribution,
                 g: Distortion, dual: Optional[DualDistribution] = None) -> float:
    """``(a/2) sigma^2(I) - mu(I)``; non-negative at ``a*`` with equality at the optimum."""
    mu, s2 = drift_volatility(H, params, F, g, dual)
    return 0.5 * a * s2 - mu
