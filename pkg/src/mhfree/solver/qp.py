"""Box-constrained convex program over retention slopes.

The objective is ``J(H; a) = int (a/2 H^2 + H) dF - (1+theta) int H dF^`` with
``H`` piecewise linear on a fixed grid.  Writing ``Phi_j`` for the tail integral
``int_[z_j, inf) (aH + 1) dF - (1+theta) dF^``, the partial derivative in the
slope of cell ``j`` is ``int_{z_j}^{z_{j+1}} Phi(z) dz``, and the diagonal
curvature is ``a (M2_j + Delta_j^2 S(z_{j+1}-))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve
import warnings

from .. import quadrature
from ..distributions import LossDistribution
from ..premium import DualDistribution
from ..retention import RetentionFunction

log = logging.getLogger(__name__)

MAX_SWEEPS = 100_000


class SolverError(RuntimeError):
    """Inner solver failed to converge."""


@dataclass
class InnerProblem:
    """Cell moments of ``F`` and ``F^`` on a grid; independent of ``a``."""

    grid: np.ndarray
    M: np.ndarray  # (3, n+1): int_[cell] (z - z_j)^k dF
    N: np.ndarray  # (2, n+1): same for F^
    loading: float
    delta: np.ndarray = field(init=False)  # spacing, 0 for the tail cell
    T: np.ndarray = field(init=False)  # F-mass of [z_j, inf), T[n+1] = 0
    gap: np.ndarray = field(init=False)  # no F-mass strictly inside the cell

    def __post_init__(self):
        self.delta = np.append(np.diff(self.grid), 0.0)
        self.T = np.append(np.cumsum(self.M[0][::-1])[::-1], 0.0)
        self.gap = np.zeros(self.grid.size, dtype=bool)

    @classmethod
    def build(cls, F: LossDistribution, dual: DualDistribution, grid) -> "InnerProblem":
        grid = np.asarray(grid, dtype=float)
        bp = np.union1d(F.breakpoints, dual.breakpoints)
        M = quadrature.survival_moments(F.sf, F.sf_left, grid, bp, kmax=2)
        N = quadrature.survival_moments(dual.sf, dual.sf_left, grid, bp, kmax=1)
        prob = cls(grid, M, N, dual.loading)
        # mass strictly inside (z_j, z_{j+1}); the tail counts as occupied if S(z_n) > 0
        interior = np.append(np.asarray(F.sf(grid[:-1])) - np.asarray(F.sf_left(grid[1:])),
                             F.sf(grid[-1]))
        prob.gap = interior <= 0.0  # exact: a gap in the support has no mass at all
        return prob

    @property
    def size(self) -> int:
        return self.grid.size

    def node_values(self, s):
        return np.concatenate([[0.0], np.cumsum(s[:-1] * self.delta[:-1])])

    def phi_nodes(self, s, a, H=None):
        """``Phi_j`` for ``j = 0..n+1`` (the last entry is 0)."""
        H = self.node_values(s) if H is None else H
        M, N = self.M, self.N
        c = a * (H * M[0] + s * M[1]) + M[0] - self.loading * N[0]
        return np.append(np.cumsum(c[::-1])[::-1], 0.0)

    def gradient(self, s, a, H=None, phi=None):
        H = self.node_values(s) if H is None else H
        phi = self.phi_nodes(s, a, H) if phi is None else phi
        M, N = self.M, self.N
        return a * (H * M[1] + s * M[2]) + M[1] - self.loading * N[1] + self.delta * phi[1:]

    def curvature(self, a):
        return a * (self.M[2] + self.delta**2 * self.T[1:])

    def objective_parts(self, s, a, H=None):
        H = self.node_values(s) if H is None else H
        M, N = self.M, self.N
        quad = 0.5 * a * float(H * H @ M[0] + 2 * (H * s) @ M[1] + s * s @ M[2])
        lin = float(H @ M[0] + s @ M[1])
        prem = self.loading * float(H @ N[0] + s @ N[1])
        return quad, lin, prem

    def objective(self, s, a):
        q, l, p = self.objective_parts(s, a)
        return q + l - p


@dataclass
class QPResult:
    retention: RetentionFunction
    objective: float
    phi: np.ndarray  # node values Phi(z_j), j = 0..n, plus trailing 0
    grad: np.ndarray  # per-cell integral of Phi
    sweeps: int
    active_set_iterations: int
    free_cells: np.ndarray  # cells whose slope is not pinned by a sign condition
    nonunique: np.ndarray  # cells with free slope and no mass of F or F^


def _sweep(prob: InnerProblem, s: np.ndarray, a: float, Q: np.ndarray) -> None:
    """One backward projected coordinate-descent sweep, in place."""
    H = prob.node_values(s)
    phi = prob.phi_nodes(s, a, H)
    M1, M2 = prob.M[1], prob.M[2]
    N1 = prob.N[1]
    D, T = prob.delta, prob.T
    lo = prob.loading
    off = 0.0
    for j in range(s.size - 1, -1, -1):
        gj = a * (H[j] * M1[j] + s[j] * M2[j]) + M1[j] - lo * N1[j] + D[j] * (phi[j + 1] + off)
        q = Q[j]
        if q > 0:
            new = min(1.0, max(0.0, s[j] - gj / q))
        elif gj > 0:
            new = 0.0
        elif gj < 0:
            new = 1.0
        else:
            continue
        d = new - s[j]
        if d != 0.0:
            s[j] = new
            off += a * d * (D[j] * T[j + 1] + M1[j])


def _kkt_solve(prob: InnerProblem, a: float, fixed: np.ndarray, s_now: np.ndarray,
               ridge=0.0, shift=None):
    """Minimise over the slopes not in ``fixed``; the others stay at ``s_now``.

    Unknowns are ``(s_0..s_n, H_0..H_n, Phi_0..Phi_{n+1})``; stationarity of a
    free slope reads ``a (H_j M1_j + s_j M2_j) + M1_j - (1+theta) N1_j + Delta_j Phi_{j+1} = 0``.
    ``ridge`` (scalar or per cell) adds ``ridge_j (s_j - s_now_j)`` to the free rows,
    or ``ridge_j s_j + shift_j`` when ``shift`` is given (barrier Newton steps).
    """
    m = prob.size
    n = m - 1
    iS, iH, iP = 0, m, 2 * m
    M, N, D, lo = prob.M, prob.N, prob.delta, prob.loading
    j = np.arange(m)
    jn = np.arange(n)
    free = ~fixed
    jf = j[free]
    ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (m,))
    lin = -ridge * s_now if shift is None else np.asarray(shift, dtype=float)
    r_h = 1 + jn  # rows of H recursion
    r_p = 2 + n + j  # rows of Phi recursion
    r_s = 2 + n + m + j  # stationarity or pinning rows
    rows = np.concatenate([[0], r_h, r_h, r_h, [1 + n], r_p, r_p, r_p, r_p,
                           r_s[free], r_s[free], r_s[free & (D > 0)], r_s[fixed]])
    cols = np.concatenate([[iH], iH + jn + 1, iH + jn, iS + jn, [iP + n + 1], iP + j, iP + j + 1, iH + j,
                           iS + j, iH + jf, iS + jf, iP + j[free & (D > 0)] + 1, iS + j[fixed]])
    vals = np.concatenate([[1.0], np.ones(n), -np.ones(n), -D[:n], [1.0], np.ones(m), -np.ones(m),
                           -a * M[0], -a * M[1], a * M[1, free], a * M[2, free] + ridge[free],
                           D[free & (D > 0)], np.ones(fixed.sum())])
    rhs = np.zeros(3 * m + 1)
    rhs[r_p] = M[0] - lo * N[0]
    rhs[r_s] = np.where(free, -(M[1] - lo * N[1]) - lin, s_now)
    A = sparse.csc_matrix((vals, (rows, cols)), shape=(3 * m + 1, 3 * m + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            x = spsolve(A, rhs)
        except (MatrixRankWarning, RuntimeError):
            return None
    if not np.all(np.isfinite(x)):
        return None
    return x[iS:iS + m]


def _face_solution(prob: InnerProblem, a: float, s: np.ndarray, Q: np.ndarray, tol: float = 1e-6):
    """Exact minimiser on the face suggested by ``s``, if it satisfies the optimality signs.

    Slopes within ``tol`` of a bound with gradient pointing outward are pinned;
    the remaining ones are solved for.  Returns None when the resulting point is
    infeasible or violates a sign condition.
    """
    pinned = Q <= 0
    g = prob.gradient(s, a)
    lower = ~pinned & (s <= tol) & (g >= 0)
    upper = ~pinned & (s >= 1 - tol) & (g <= 0)
    anchor = np.where(lower, 0.0, np.where(upper, 1.0, s))
    x = _kkt_solve(prob, a, pinned | lower | upper, anchor)
    if x is None:
        return None
    x = np.where(pinned, s, x)
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        return None
    x = np.clip(x, 0.0, 1.0)
    g = prob.gradient(x, a)
    gtol = 1e-10 * (1.0 + float(np.abs(g).max(initial=0.0)) + abs(prob.objective(x, a)))
    if np.any(g[lower] < -gtol) or np.any(g[upper] > gtol):
        return None
    return x


def _barrier_newton(prob: InnerProblem, a: float, s: np.ndarray, Q: np.ndarray,
                    max_newton: int = 400):
    """Log-barrier interior-point iterations for ``0 <= s <= 1``.

    Each Newton step minimises the exact quadratic objective plus a second-order
    model of ``-mu sum(log s + log(1 - s))`` through the sparse KKT system.
    After every barrier stage the active sets are guessed from the iterate and
    the face is solved exactly; the first guess passing the sign test is returned.
    """
    m = prob.size
    pinned = Q <= 0
    free_idx = ~pinned
    s = np.where(pinned, s, np.clip(s, 0.05, 0.95))
    g = prob.gradient(s, a)
    mu = max(1e-3, float(np.abs(g).max(initial=0.0)))
    count = 0

    def merit(x, mu):
        xf = x[free_idx]
        with np.errstate(divide="ignore"):
            return prob.objective(x, a) - mu * float(np.sum(np.log(xf) + np.log1p(-xf)))

    while count < max_newton:
        for _ in range(30):
            count += 1
            sig = np.where(pinned, 0.0, mu * (1.0 / s**2 + 1.0 / (1.0 - s) ** 2))
            db = np.where(pinned, 0.0, -mu * (1.0 / s - 1.0 / (1.0 - s)))
            target = _kkt_solve(prob, a, pinned, s, ridge=sig, shift=db - sig * s)
            if target is None:
                return None, count
            d = np.where(pinned, 0.0, target - s)
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(d < 0, -s / d, np.where(d > 0, (1 - s) / d, np.inf))
            alpha = min(1.0, 0.995 * float(lim[free_idx].min(initial=np.inf)))
            f0 = merit(s, mu)
            while alpha > 1e-12 and merit(s + alpha * d, mu) > f0 + 1e-12 * (1 + abs(f0)):
                alpha *= 0.5
            s = s + alpha * d
            if alpha == 1.0 or float(np.abs(alpha * d).max(initial=0.0)) < 1e-12:
                break
        if mu < 1e-4:
            x = _face_solution(prob, a, s, Q, tol=max(10 * mu, 1e-9))
            if x is not None:
                return x, count
        J = prob.objective(s, a)
        if 2 * m * mu < 1e-14 * (1 + abs(J)):
            break
        mu *= 0.1
    return s, count


def solve_retention_qp(a: float, prob: InnerProblem, warm: Optional[np.ndarray] = None,
                       max_sweeps: int = MAX_SWEEPS, accelerate: bool = True) -> QPResult:
    """Minimise the discretised inner objective over slopes in ``[0, 1]``.

    An interior-point phase followed by an exact solve on the identified active
    sets provides a near-exact starting point; projected
    coordinate descent with exact line minimisation then runs until a full sweep
    lowers the objective by less than ``1e-12 (1 + |J|)``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    Q = prob.curvature(a)
    if not np.all(np.isfinite(Q)):
        raise SolverError("loss distribution lacks a finite second moment on the grid")
    s = np.full(prob.size, 0.5) if warm is None else np.clip(np.asarray(warm, float).copy(), 0, 1)
    iters = 0
    if accelerate:
        cand = None if warm is None else _face_solution(prob, a, s, Q)
        if cand is None:
            cand, iters = _barrier_newton(prob, a, s, Q)
        else:
            iters = 1
        if cand is not None and prob.objective(cand, a) <= prob.objective(s, a):
            s = cand
    J = prob.objective(s, a)
    sweeps = 0
    while True:
        if sweeps >= max_sweeps:
            raise SolverError(f"coordinate descent did not converge in {max_sweeps} sweeps")
        _sweep(prob, s, a, Q)
        sweeps += 1
        J_new = prob.objective(s, a)
        dec = J - J_new
        J = J_new
        if dec < 1e-12 * (1 + abs(J)):
            break
    H = prob.node_values(s)
    phi = prob.phi_nodes(s, a, H)
    grad = prob.gradient(s, a, H, phi)
    free = (s > 0) & (s < 1)
    # a slope is undetermined only where Phi vanishes on a cell carrying no mass
    width = np.where(prob.delta > 0, prob.delta, 1.0)
    nonunique = prob.gap & (np.abs(grad) / width <= 1e-9 * (1 + abs(J)))
    return QPResult(RetentionFunction(prob.grid, s), J, phi, grad, sweeps, iters, free, nonunique)


def default_grid(F: LossDistribution, dual: DualDistribution, n_nodes: int = 2000,
                 p_eps: float = 1e-6) -> np.ndarray:
    """Quantile nodes for ``p`` uniform on ``[m0, 1 - p_eps]`` plus atoms and kink points."""
    m0 = F.mass_at_zero
    p = np.linspace(m0, 1.0 - p_eps, n_nodes)
    p = p[p > 0]
    z = np.asarray(F.quantile(p), dtype=float)
    extra = [0.0] + [float(x) for x in F.atoms[:, 0]] + list(dual.breakpoints)
    z = np.unique(np.concatenate([z[np.isfinite(z)], extra]))
    z = z[z >= 0]
    # merge nodes closer than a relative 1e-12 to keep cells non-degenerate
    keep = np.append(True, np.diff(z) > 1e-12 * (1 + z[1:]))
    z = z[keep]
    if z[0] != 0.0:
        z = np.append(0.0, z)
    return z
