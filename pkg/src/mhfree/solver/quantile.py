"""Quantile-domain route: the double-obstacle problem for ``Psi(p)``.

With ``p = F(z)`` and ``Psi(p) = -a int_[F^-1(p), inf) H dF``, the optimal
retention satisfies ``Psi' = a H(F^-1(p))`` and, for ``L(p) = 1 - p - (1+theta0) g(1 - p)``,

    min{ max{Psi'' - a h, L - Psi}, Psi'' } = 0,   Psi(1) = 0,  Psi'(m0) = 0,

where ``h`` is the quantile density.  ``L - Psi`` equals the tail functional Phi,
so the three branches are slope 0 (``Psi'' = 0``), free (``Psi = L``) and
slope 1 (``Psi'' = a h``).

Discretisation: uniform nodes ``p_0 = m0 < ... < p_N = 1 - eps``.  The
second-difference bound uses ``c_i = a (zeta_{i+1/2} - zeta_{i-1/2}) delta``,
``zeta = F^-1`` at midpoints, instead of ``a h(p_i) delta^2``; the recovered
slopes are then exactly ``2 (r_i - Psi_i) / c_i`` with ``r_i`` the neighbour mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from ..distortions import Distortion, concavity_defect
from ..distributions import LossDistribution
from ..retention import RetentionFunction
from .qp import InnerProblem, SolverError, solve_retention_qp

log = logging.getLogger(__name__)

LOWER, CONTACT, UPPER = 0, 1, 2  # Psi'' = 0, Psi = L, Psi'' = a h
UPDATE_TOL = 1e-10
MAX_SWEEPS = 1_000_000


class AssumptionViolation(ValueError):
    """The loss law has no positive quantile density, or g fails a required shape."""


@dataclass
class QuantileGrid:
    p: np.ndarray  # nodes p_0 = m0 .. p_N
    zeta_mid: np.ndarray  # F^-1 at the N midpoints
    delta: float
    eps: float

    @property
    def size(self) -> int:
        return self.p.size

    @property
    def z_grid(self) -> np.ndarray:
        """Loss-domain cell edges ``0, zeta_{1/2}, ..., zeta_{N-1/2}``."""
        return np.concatenate([[0.0], self.zeta_mid])

    def spread(self, a: float) -> np.ndarray:
        """``c_i``: the allowed range of ``2 (r_i - Psi_i)`` at node ``i``."""
        zm = self.zeta_mid
        c = np.empty(self.size)
        c[0] = 2.0 * a * zm[0] * self.delta  # mirror ghost node: zeta_{-1/2} = -zeta_{1/2}
        c[1:-1] = a * np.diff(zm) * self.delta
        c[-1] = 0.0
        return c

    @property
    def robin(self) -> float:
        """``Psi_N = kappa Psi_{N-1}``: linear decay to ``Psi(1) = 0``."""
        return self.eps / (self.delta + self.eps)


def quantile_grid(F: LossDistribution, n_nodes: int = 4000, p_eps: float = 1e-6) -> QuantileGrid:
    """Uniform ``p`` nodes on ``[m0, 1 - p_eps]``; refuses laws without a quantile density."""
    if not F.has_quantile_density:
        raise AssumptionViolation("loss law has no absolutely continuous quantile function; use the QP route")
    if n_nodes < 3:
        raise ValueError("need at least 3 nodes")
    m0 = F.mass_at_zero
    p = np.linspace(m0, 1.0 - p_eps, n_nodes)
    delta = float(p[1] - p[0])
    zm = np.asarray(F.quantile(0.5 * (p[:-1] + p[1:])), dtype=float)
    if not np.all(np.isfinite(zm)) or zm[0] <= 0 or np.any(np.diff(zm) <= 0):
        raise AssumptionViolation("quantile density vanishes on part of (m0, 1)")
    return QuantileGrid(p, zm, delta, p_eps)


def obstacle(g: Distortion, theta0: float, p) -> np.ndarray:
    """``L(p) = 1 - p - (1+theta0) g(1 - p)``."""
    p = np.asarray(p, dtype=float)
    return 1.0 - p - (1.0 + theta0) * np.asarray(g.fn(np.clip(1.0 - p, 0.0, 1.0)), dtype=float)


@dataclass
class PsiSolution:
    grid: QuantileGrid
    a: float
    values: np.ndarray  # Psi at the nodes
    obstacle: np.ndarray  # L at the nodes
    labels: np.ndarray  # LOWER / CONTACT / UPPER per node (last node: boundary row)
    iterations: int
    method: str

    @property
    def p(self) -> np.ndarray:
        return self.grid.p

    @property
    def derivative(self) -> np.ndarray:
        """``Psi'`` at the midpoints, i.e. ``a H(zeta_{i+1/2})``."""
        return np.diff(self.values) / self.grid.delta

    @property
    def phi(self) -> np.ndarray:
        """Tail functional at ``z = F^-1(p_i)``: ``L - Psi``."""
        return self.obstacle - self.values

    def slopes(self) -> np.ndarray:
        """Effective slope ``2 (r_i - Psi_i) / c_i`` at interior and left nodes."""
        return _slopes(self.values, self.grid.spread(self.a))


def _neighbour_mean(x: np.ndarray) -> np.ndarray:
    r = np.empty_like(x)
    r[0] = x[1]
    r[1:-1] = 0.5 * (x[:-2] + x[2:])
    r[-1] = np.nan
    return r


def _slopes(psi: np.ndarray, c: np.ndarray) -> np.ndarray:
    r = _neighbour_mean(psi)
    return 2.0 * (r[:-1] - psi[:-1]) / c[:-1]


def _project(target: np.ndarray, r: np.ndarray, lo_off: np.ndarray, hi_off: np.ndarray) -> np.ndarray:
    """``clip(target, r - lo_off, r - hi_off)`` with ``lo_off >= hi_off``."""
    return np.minimum(np.maximum(target, r - lo_off), r - hi_off)


def _banded_solve(link_off, contact, target, kappa):
    """Solve the tridiagonal system fixed by a policy.

    Row ``i < N``: ``x_i = target_i`` where ``contact``, else ``x_i - r_i = -link_off_i``;
    node 0 mirrors ``x_1`` and the last row is ``x_N = kappa x_{N-1}``.
    """
    n = target.size
    ab = np.zeros((3, n))
    ab[1] = 1.0
    w = np.where(contact, 0.0, 0.5)
    ab[0, 2:] = -w[1:]  # coefficient of x_{i+1} in row i >= 1
    ab[2, :n - 2] = -w[1:]  # coefficient of x_{i-1} in row i >= 1
    ab[0, 1] = 0.0 if contact[0] else -1.0
    ab[2, n - 2] = -kappa
    rhs = np.zeros(n)
    rhs[:-1] = np.where(contact, target[:-1], -link_off)
    return solve_banded((1, 1), ab, rhs)


def _psi_of_slopes(sigma, c, kappa):
    """Nodal ``Psi`` with ``Psi_i - r_i = -c_i sigma_i / 2`` and the boundary rows."""
    return _banded_solve(0.5 * c[:-1] * sigma, np.zeros(sigma.size, dtype=bool), np.zeros(c.size), kappa)


def _howard(target, lo_off, hi_off, kappa, x0, max_iter=200):
    """Semismooth Newton on the median map, labels re-chosen from each iterate.

    Fast from a good start but may cycle on the min-max structure; a repeated
    policy is reported as failure so the caller can switch methods.
    """
    x = x0.copy()
    tgt, lo, hi = target[:-1], lo_off[:-1], hi_off[:-1]
    seen = set()
    last = None
    for it in range(1, max_iter + 1):
        r = _neighbour_mean(x)[:-1]
        pinned = tgt >= r - hi
        contact = ~pinned & (tgt > r - lo)
        key = pinned.tobytes() + contact.tobytes()
        if key == last:
            return x, it, True  # x already solves the system of this policy
        if key in seen:
            return x, it, False
        seen.add(key)
        last = key
        x_new = _banded_solve(np.where(pinned, hi, lo), contact, target, kappa)
        if not np.all(np.isfinite(x_new)):
            return x, it, False
        step = float(np.abs(x_new - x).max())
        x = x_new
        if step < UPDATE_TOL:
            return x, it, True
    return x, max_iter, False


def _psor(target, lo_off, hi_off, kappa, x0, omega=1.5, max_sweeps=MAX_SWEEPS):
    """Red-black projected SOR; returns (x, sweeps, converged)."""
    n = target.size
    x = x0.copy()
    odd = np.arange(1, n - 1, 2)
    even = np.arange(2, n - 1, 2)
    last = np.inf
    rises = 0
    for sweep in range(1, max_sweeps + 1):
        start = x.copy()
        r0 = x[1]
        x[0] = _project(x[0] + omega * (_project(target[0], r0, lo_off[0], hi_off[0]) - x[0]),
                        r0, lo_off[0], hi_off[0])
        for idx in (odd, even):
            r = 0.5 * (x[idx - 1] + x[idx + 1])
            gs = _project(target[idx], r, lo_off[idx], hi_off[idx])
            x[idx] = _project(x[idx] + omega * (gs - x[idx]), r, lo_off[idx], hi_off[idx])
        x[-1] = kappa * x[-2]
        upd = float(np.abs(x - start).max())
        if upd < UPDATE_TOL:
            return x, sweep, True
        rises = rises + 1 if upd > last else 0
        last = upd
        if omega > 1.0 and rises > 50:
            log.info("PSOR oscillating at omega=%.2f; restarting with omega=1", omega)
            y, k, ok = _psor(target, lo_off, hi_off, kappa, x, 1.0, max_sweeps - sweep)
            return y, sweep + k, ok
    return x, max_sweeps, False


def _atomic_problem(grid: QuantileGrid, L: np.ndarray) -> InnerProblem:
    """The node system as a slope QP on ``0, zeta_{1/2}, ..., zeta_{N-1/2}``.

    ``F`` becomes atoms of mass ``delta`` at the cell edges (``m0`` at zero and
    ``delta + eps`` at the last edge); the pricing law puts
    ``(1+theta0) [g(1 - p_i) - g(1 - p_{i+1})]`` at edge ``i + 1``, read off
    ``L`` so that the tail functional at edge ``i + 1`` is ``L_i - Psi_i``.
    """
    p = grid.p
    n = p.size
    mass = np.full(n, grid.delta)
    mass[0] = p[0]  # the atom of F at zero
    mass[-1] = grid.delta + grid.eps
    priced = 1.0 - p - L  # (1+theta0) g(1 - p)
    dual = np.zeros(n)
    dual[1:] = priced[:-1] - np.append(priced[1:-1], 0.0)
    M = np.zeros((3, n))
    M[0] = mass
    N = np.zeros((2, n))
    N[0] = dual
    prob = InnerProblem(grid.z_grid, M, N, 1.0)
    prob.gap = np.ones(n, dtype=bool)
    return prob


def _double_obstacle(grid: QuantileGrid, a: float, L: np.ndarray, warm=None):
    """Solve ``Psi_i = clip(L_i, r_i - c_i/2, r_i)`` with the boundary rows.

    From a warm start policy iteration alone usually suffices.  Otherwise the
    equivalent slope QP is minimised and its point polished by policy
    iteration; projected SOR is the last resort.
    """
    c = grid.spread(a)
    half = 0.5 * c
    zero = np.zeros(c.size)
    kappa = grid.robin
    it = 0
    if warm is not None:
        x, it, ok = _howard(L, half, zero, kappa, np.asarray(warm, dtype=float))
        if ok:
            return x, it, "policy-iteration"
    res = solve_retention_qp(a, _atomic_problem(grid, L))
    s = res.retention.slopes[:-1]
    x, k, ok = _howard(L, half, zero, kappa, _psi_of_slopes(s, c, kappa))
    it += res.sweeps + res.active_set_iterations + k
    if ok:
        return x, it, "slope-qp"
    log.info("policy iteration did not settle after the QP start; switching to projected SOR")
    x, sweeps, ok = _psor(L, half, zero, kappa, x)
    if not ok:
        raise SolverError(f"projected SOR did not converge in {MAX_SWEEPS} sweeps")
    return x, it + sweeps, "psor"


def _upper_hull(y: np.ndarray) -> np.ndarray:
    """Least concave majorant over the node index, with ``y`` mirrored about node 0."""
    idx = np.arange(y.size)
    xs = np.concatenate([-idx[:0:-1], idx])
    ys = np.concatenate([y[:0:-1], y])
    hull = []
    for k in range(xs.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            if (ys[j] - ys[i]) * (xs[k] - xs[i]) <= (ys[k] - ys[i]) * (xs[j] - xs[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.interp(idx, xs[hull], ys[hull])


def _single_obstacle(target: np.ndarray, kappa: float):
    """``x_i = max(target_i, r_i)``, started from the concave majorant of ``target``.

    Only the Robin row separates that majorant from the answer, so policy
    iteration needs few steps; projected SOR is kept as a fallback.
    """
    n = target.size
    x0 = _upper_hull(target)
    x0[-1] = kappa * x0[-2]
    zero = np.zeros(n)
    up = np.full(n, -np.inf)
    x, it, ok = _howard(target, zero, up, kappa, x0)
    if ok:
        return x, it, "policy-iteration"
    x, sweeps, ok = _psor(target, zero, up, kappa, x)
    if not ok:
        raise SolverError(f"projected SOR did not converge in {MAX_SWEEPS} sweeps")
    return x, it + sweeps, "psor"


def _labels(psi: np.ndarray, L: np.ndarray, c: np.ndarray, tol: float) -> np.ndarray:
    s = np.append(_slopes(psi, c), np.nan)
    lab = np.full(psi.size, CONTACT)
    lab[(s <= tol) & (L >= psi - tol)] = LOWER
    lab[(s >= 1 - tol) & (L <= psi + tol)] = UPPER
    lab[-1] = LOWER
    return lab


def nodal_residual(psi: np.ndarray, L: np.ndarray, c: np.ndarray) -> float:
    """Max of ``|Psi_i - clip(L_i, r_i - c_i/2, r_i)|`` plus the boundary-row defect."""
    r = _neighbour_mean(psi)
    inner = np.abs(psi[:-1] - _project(L[:-1], r[:-1], 0.5 * c[:-1], np.zeros(c.size - 1)))
    return float(inner.max())


def solve_quantile_ode(a: float, F: LossDistribution, g: Distortion, theta0: float,
                       n_nodes: int = 4000, p_eps: float = 1e-6,
                       grid: Optional[QuantileGrid] = None,
                       warm: Optional[np.ndarray] = None) -> PsiSolution:
    """Discrete double-obstacle problem in ``Psi``; raises SolverError if the node rule is not met."""
    if not a > 0:
        raise ValueError("a must be positive")
    grid = grid or quantile_grid(F, n_nodes, p_eps)
    L = obstacle(g, theta0, grid.p)
    c = grid.spread(a)
    psi, it, method = _double_obstacle(grid, a, L, warm)
    res = nodal_residual(psi, L, c)
    if res > 1e-8 * (1.0 + float(np.abs(psi).max())):
        raise SolverError(f"double-obstacle residual {res:.3e} after convergence")
    return PsiSolution(grid, a, psi, L, _labels(psi, L, c, 1e-9), it, method)


def solve_nodes_by_qp(a: float, F: LossDistribution, g: Distortion, theta0: float,
                      n_nodes: int = 4000, p_eps: float = 1e-6,
                      grid: Optional[QuantileGrid] = None) -> PsiSolution:
    """The same node system minimised as a slope QP, without the policy-iteration polish."""
    if not a > 0:
        raise ValueError("a must be positive")
    grid = grid or quantile_grid(F, n_nodes, p_eps)
    L = obstacle(g, theta0, grid.p)
    c = grid.spread(a)
    res = solve_retention_qp(a, _atomic_problem(grid, L))
    psi = _psi_of_slopes(res.retention.slopes[:-1], c, grid.robin)
    return PsiSolution(grid, a, psi, L, _labels(psi, L, c, 1e-9), res.sweeps, "slope-qp-only")


def _tail_quantile_integral(grid: QuantileGrid) -> np.ndarray:
    """Discrete ``Q(p) = int_p^1 F^-1``: ``(Q_{i+1} - Q_i)/delta = -zeta_{i+1/2}``, ``Q_N = eps zeta_{N-1/2}``."""
    zm = grid.zeta_mid
    q_end = grid.eps * zm[-1]
    return q_end + np.append(np.cumsum((grid.delta * zm)[::-1])[::-1], 0.0)


def solve_single_obstacle_concave(a: float, F: LossDistribution, g: Distortion, theta0: float,
                                  n_nodes: int = 4000, p_eps: float = 1e-6,
                                  grid: Optional[QuantileGrid] = None,
                                  concavity_tol: float = 1e-9) -> PsiSolution:
    """Route for concave ``g``: ``Theta = Psi + a Q`` solves ``max{Theta'', L + aQ - Theta} = 0``.

    Concavity is required where ``g`` is evaluated, i.e. on ``[0, 1 - m0]``.
    The lower bound ``Psi'' >= 0`` then holds automatically and is checked on exit.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    grid = grid or quantile_grid(F, n_nodes, p_eps)
    defect = concavity_defect(g, 0.0, 1.0 - F.mass_at_zero)
    if defect > concavity_tol:
        raise AssumptionViolation(f"distortion is not concave on [0, 1 - m0] (defect {defect:.3e})")
    L = obstacle(g, theta0, grid.p)
    target = L + a * _tail_quantile_integral(grid)
    theta, it, method = _single_obstacle(target, grid.robin)
    psi = theta - a * _tail_quantile_integral(grid)
    c = grid.spread(a)
    res = nodal_residual(psi, L, c)
    if res > 1e-8 * (1.0 + float(np.abs(psi).max())):
        raise SolverError(f"single-obstacle solution violates the double-obstacle system ({res:.3e})")
    return PsiSolution(grid, a, psi, L, _labels(psi, L, c, 1e-9), it, method + "/concave")


def retention_from_psi(psi: PsiSolution, slope_tol: float = 1e-6) -> RetentionFunction:
    """``H`` with ``H(zeta_{i+1/2}) = Psi'(p_{i+1/2}) / a``; the tail keeps the last slope."""
    s = psi.slopes()
    if np.any(s < -slope_tol) or np.any(s > 1 + slope_tol):
        j = int(np.argmax(np.maximum(-s, s - 1)))
        raise SolverError(f"Psi' is not monotone within tolerance at p={psi.p[j]:.6g} (slope {s[j]:.3e})")
    s = np.clip(s, 0.0, 1.0)
    return RetentionFunction(psi.grid.z_grid, np.append(s, s[-1]))


def psi_from_retention(H: RetentionFunction, a: float, F: LossDistribution, g: Distortion,
                       theta0: float, grid: QuantileGrid) -> PsiSolution:
    """``Psi(p) = -a int_[F^-1(p), inf) H dF`` at the nodes, by exact cell moments."""
    from .. import quadrature

    z = np.asarray(F.quantile(grid.p[1:]), dtype=float)
    edges = np.unique(np.concatenate([H.grid, z, [0.0]]))
    Hr = H.refine(edges)
    M = quadrature.survival_moments(F.sf, F.sf_left, Hr.grid, F.breakpoints, kmax=1)
    cell = Hr.node_values * M[0] + Hr.slopes * M[1]
    tail = np.cumsum(cell[::-1])[::-1]
    idx = np.searchsorted(Hr.grid, np.concatenate([[0.0], z]))
    # the atom at zero carries H = 0, so starting at z = 0 is harmless
    values = -a * tail[idx]
    L = obstacle(g, theta0, grid.p)
    c = grid.spread(a)
    return PsiSolution(grid, a, values, L, _labels(values, L, c, 1e-9), 0, "from-retention")


def complementarity_residual(psi: PsiSolution) -> float:
    """``max_i |min{max{s_i - 1, Phi_i}, s_i}|`` with ``s`` the effective slope and ``Phi = L - Psi``."""
    s = psi.slopes()
    phi = psi.phi[:-1]
    return float(np.abs(np.minimum(np.maximum(s - 1.0, phi), s)).max())
