"""Stop-loss and multi-layer closed forms used as oracles for the numerical routes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import quadrature
from .distortions import Distortion, identity, layer_example
from .distributions import LossDistribution, layer_example_loss
from .objective import GridSpec, RateSolution, solve_rate, value_function
from .premium import AssumptionError, MarketParams, check_assumption
from .retention import RetentionFunction
from .solver.verify import phi_eval

ROOT_TOL = 1e-10
MARGIN_TOL = 1e-8


class LayerRegression(AssertionError):
    """The layer reproduction drifted away from its known answer."""


def _sf_integral(F: LossDistribution, lo: float, hi: float, power: int = 0) -> float:
    """``int_lo^hi (z - lo)^power S(z) dz``."""
    if hi <= lo:
        return 0.0
    return quadrature.integrate_survival(F.sf, lo, hi, F.breakpoints, power)


def _g_sf_integral(F: LossDistribution, g: Distortion, lo: float) -> float:
    """``int_lo^inf g(S(z)) dz``."""
    from .premium import dual_breakpoints

    def gs(z):
        return np.asarray(g.fn(np.clip(np.asarray(F.sf(z), dtype=float), 0.0, 1.0)), dtype=float)

    bp = np.union1d(F.breakpoints, dual_breakpoints(F, g))
    return quadrature.integrate_survival(gs, lo, np.inf, bp[bp > lo])


def stoploss_rate(d: float, params: MarketParams, F: LossDistribution, g: Distortion) -> float:
    """Decay rate implied by retaining ``min(z, d)``: ``mu / (sigma^2 / 2)``.

    ``mu = pi - (1+theta0) int_d^inf g(S) - E[min(Z, d)]`` and ``sigma^2 = E[min(Z, d)^2]``.
    """
    if not d > 0:
        raise ValueError("deductible must be positive")
    first = _sf_integral(F, 0.0, d)
    second = 2.0 * _sf_integral(F, 0.0, d, 1)
    premium = (1.0 + params.theta0) * _g_sf_integral(F, g, d)
    return (params.pi - premium - first) / (0.5 * second)


@dataclass
class StopLossCertificate:
    d: float
    a_star: float
    lower_margin: float  # min over [0, d) of (1+theta0) g(S) - [...]; must be >= 0
    upper_margin: float  # min over [d, inf) of (a d + 1) S - (1+theta0) g(S); must be >= 0
    worst_lower_z: float
    worst_upper_z: float
    tol: float
    passed: bool
    z: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)  # Phi(z; min(., d)) on the check grid


def _check_grid(F: LossDistribution, g: Distortion, d: float, n: int) -> np.ndarray:
    from .premium import dual_breakpoints

    m0 = F.mass_at_zero
    p = np.linspace(m0, 1.0 - 1e-10, n)
    zq = np.asarray(F.quantile(p[p > 0]), dtype=float)
    top = float(F.quantile(1.0 - 1e-10))
    top = max(top, 2.0 * d) if np.isfinite(top) else 2.0 * d
    zu = np.linspace(0.0, top, n)
    bp = np.concatenate([F.breakpoints, dual_breakpoints(F, g), F.atoms[:, 0], [d]])
    # both sides of every kink
    around = np.concatenate([bp, np.maximum(bp * (1 - 1e-12) - 1e-12, 0.0)])
    z = np.unique(np.concatenate([[0.0], zq, zu, around]))
    return z[np.isfinite(z) & (z >= 0)]


def stoploss_check(d: float, params: MarketParams, F: LossDistribution, g: Distortion,
                   n_grid: int = 20_000, tol: float = MARGIN_TOL) -> StopLossCertificate:
    """Both deductible inequalities for ``I = (z - d)^+`` on a dense grid.

    With ``Phi`` right-continuous the two inequalities read ``Phi <= 0`` on
    ``[0, d)`` and ``Phi >= 0`` on ``[d, inf)``, where
    ``Phi(z) = -a int_z^d (F(x) - F(z)) dx + (a d + 1) S(z) - (1+theta0) g(S(z))``.
    """
    a = stoploss_rate(d, params, F, g)
    z = _check_grid(F, g, d, n_grid)
    S = np.clip(np.asarray(F.sf(z), dtype=float), 0.0, 1.0)
    gS = (1.0 + params.theta0) * np.asarray(g.fn(S), dtype=float)
    # int_z^d (F(x) - F(z)) dx = (d - z) S(z) - int_z^d S
    below = z < d
    edges = np.append(z[below], d)
    pieces = np.array([_sf_integral(F, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])
    tail_to_d = np.cumsum(pieces[::-1])[::-1]
    gap = np.zeros(z.size)
    gap[below] = (d - z[below]) * S[below] - tail_to_d
    phi = -a * gap + (a * d + 1.0) * S - gS
    lower = -phi[below]
    upper = phi[~below]
    lo_m = float(lower.min(initial=np.inf))
    up_m = float(upper.min(initial=np.inf))
    wl = float(z[below][np.argmin(lower)]) if lower.size else np.nan
    wu = float(z[~below][np.argmin(upper)]) if upper.size else np.nan
    ok = bool(a > 0 and lo_m >= -tol and up_m >= -tol)
    return StopLossCertificate(d, a, lo_m, up_m, wl, wu, tol, ok, z, phi)


def _psi_integral(F: LossDistribution, d: float) -> float:
    """``int psi(d, z) dF = 2 int_0^d (1 - z/d) S(z) dz``."""
    return 2.0 * (_sf_integral(F, 0.0, d) - _sf_integral(F, 0.0, d, 1) / d)


def no_distortion_deductible(F: LossDistribution, theta0: float, pi: float,
                             tol: float = ROOT_TOL) -> tuple[float, float]:
    """Deductible ``d*`` and rate ``a* = theta0 / d*`` when the reinsurer prices by expected value.

    ``d*`` solves ``(theta0 / 2) int psi(d, z) dF = (1+theta0) E[Z] - pi``; the
    left side increases from 0 to ``theta0 E[Z]``.
    """
    report = check_assumption(MarketParams(pi, theta0), F, identity())
    if not report.ok:
        raise AssumptionError(report.message)
    rhs = (1.0 + theta0) * F.mean - pi

    def f(d):
        return 0.5 * theta0 * _psi_integral(F, d) - rhs

    hi = max(F.mean, 1e-8)
    k = 0
    while f(hi) <= 0:
        hi *= 2
        k += 1
        if k > 200:
            raise AssumptionError("no deductible solves the stop-loss equation")
    lo = hi / 2
    while f(lo) >= 0:
        lo /= 2
        if lo < 1e-300:
            raise AssumptionError("no deductible solves the stop-loss equation")
    d = optimize.brentq(f, lo, hi, xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps, maxiter=500)
    return d, theta0 / d


def kappa_deductible(F: LossDistribution, kappa: float, tol: float = ROOT_TOL) -> float:
    """Root of ``int_0^d (2 - z/d) z dF + d (1 - F(d)) = 2 (1 - kappa)`` for a unit-mean loss.

    The left side is evaluated in its original Stieltjes form, one panel at a time.
    """
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    if abs(F.mean - 1.0) > 1e-9:
        raise ValueError("the kappa form assumes E[Z] = 1")

    def lhs(d):
        edges = np.union1d([0.0, d], F.breakpoints[F.breakpoints < d])
        mom = quadrature.survival_moments(F.sf, F.sf_left, edges, F.breakpoints, kmax=2)
        # cell k covers [e_k, e_{k+1}); z = e_k + (z - e_k)
        e = edges[:-1]
        m0, m1, m2 = mom[0, :-1], mom[1, :-1], mom[2, :-1]
        int_z = float(e @ m0 + m1.sum())
        int_z2 = float(e**2 @ m0 + 2 * e @ m1 + m2.sum())
        return 2 * int_z - int_z2 / d + d * float(F.sf_left(d))

    def f(d):
        return lhs(d) - 2.0 * (1.0 - kappa)

    hi = 1.0
    while f(hi) <= 0:
        hi *= 2
    lo = hi / 2
    while f(lo) >= 0:
        lo /= 2
    return optimize.brentq(f, lo, hi, xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps, maxiter=500)


# -- multi-layer example -------------------------------------------------------

LAYER_THETA0 = 3.0


def layer_indemnity(z):
    """``(z - 2)^+ / 2 + (z - 4)^+ / 2``."""
    z = np.asarray(z, dtype=float)
    return 0.5 * np.maximum(z - 2.0, 0.0) + 0.5 * np.maximum(z - 4.0, 0.0)


def layer_pi(g: Optional[Distortion] = None) -> float:
    """Premium rate that puts the decay rate of the layer example at one."""
    g = g or layer_example()

    def gq(u):
        return float(g.fn(np.array(u)))

    parts = [
        integrate.quad(lambda z: (z + 1) * np.exp(-z / 6), 0, 1, epsabs=0, epsrel=1e-13)[0],
        integrate.quad(lambda z: (z + 1) * np.exp(-z / 5), 1, 2, epsabs=0, epsrel=1e-13)[0],
        0.25 * integrate.quad(lambda z: (z + 4) * np.exp(-z / 5), 2, 4, epsabs=0, epsrel=1e-13)[0],
        2.0 * integrate.quad(lambda z: gq(np.exp(-z / 5)), 2, 4, epsabs=0, epsrel=1e-13)[0],
        4.0 * integrate.quad(lambda z: np.exp(-z / 5), 4, 6, epsabs=0, epsrel=1e-13)[0],
        4.0 * integrate.quad(lambda z: gq(np.exp(-z / 3)), 6, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0],
    ]
    return float(sum(parts))


@dataclass
class LayerBundle:
    a_star: float
    pi: float
    H_star: RetentionFunction
    z: np.ndarray
    indemnity: np.ndarray
    phi: np.ndarray
    V1: float
    checks: dict
    solution: RateSolution = field(repr=False)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


LAYER_POINTS = (0.5, 1.5, 2.0, 3.0, 4.0, 5.0, 8.0)


def _phi_pattern(z, phi, tol):
    neg = phi[z < 2.0]
    zero = phi[(z >= 2.0) & (z < 4.0)]
    pos = phi[z >= 4.0]
    return bool(np.all(neg <= tol) and np.all(np.abs(zero) <= tol) and np.all(pos >= -tol))


def multilayer_case(grid_spec: GridSpec = GridSpec(), route: str = "qp", strict: bool = True,
                    phi_tol: float = 1e-6) -> LayerBundle:
    """Solve the three-segment layer example end to end and compare with its known answer.

    The sign pattern of ``Phi`` is checked for the exact two-layer retention on
    the solver grid; the computed ``H*`` is compared pointwise.
    """
    F = layer_example_loss()
    g = layer_example()
    pi = layer_pi(g)
    params = MarketParams(pi, LAYER_THETA0)
    sol = solve_rate(params, F, g, grid_spec, route=route)
    H = sol.H_star
    z = sol.problem.grid
    exact = RetentionFunction(np.array([0.0, 2.0, 4.0]), np.array([1.0, 0.5, 0.0]))
    probe = np.union1d(z, np.linspace(0.0, 40.0, 4001))
    phi_exact = phi_eval(exact, 1.0, F, sol.dual, probe).values
    pts = np.array(LAYER_POINTS)
    ind_err = np.abs((pts - H(pts)) - layer_indemnity(pts))
    v1 = value_function(sol.a_star, 1.0)
    checks = {
        "a_star": abs(sol.a_star - 1.0) <= 1e-3,
        "indemnity": bool(ind_err.max() <= 0.02),
        "phi_pattern": _phi_pattern(probe, phi_exact, phi_tol),
        "V1": abs(v1 - np.exp(-1.0)) <= 1e-3,
    }
    phi_H = phi_eval(H, sol.a_star, F, sol.dual, z, check=False).values
    bundle = LayerBundle(sol.a_star, pi, H, z, z - H(z), phi_H, v1, checks, sol)
    if strict and not bundle.passed:
        failed = [k for k, ok in checks.items() if not ok]
        raise LayerRegression(f"layer reproduction failed: {', '.join(failed)}")
    return bundle
