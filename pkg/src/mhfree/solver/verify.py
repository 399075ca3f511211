"""Optimality certificates: the tail functional Phi, directional test and slope pattern."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import quadrature
from ..distributions import LossDistribution
from ..premium import DualDistribution
from ..retention import RetentionFunction, random_retention, stop_loss
from .qp import InnerProblem


class PhiMismatch(RuntimeError):
    """The two evaluations of Phi disagree."""


@dataclass(frozen=True)
class PhiProfile:
    z: np.ndarray
    values: np.ndarray


def _phi_measure(H: RetentionFunction, a: float, F: LossDistribution, dual: DualDistribution, z):
    """``int_(z, inf) (aH + 1) dF - (1+theta) dF^`` via cell moments on a merged grid.

    Cell moments integrate over ``[z_j, inf)``; the atoms sitting exactly at each
    node are removed afterwards to obtain the right-continuous version.
    """
    Hr = H.refine(z)
    prob = InnerProblem.build(F, dual, Hr.grid)
    closed = prob.phi_nodes(Hr.slopes, a)[:-1]
    g = Hr.grid
    atom_f = np.asarray(F.sf_left(g)) - np.asarray(F.sf(g))
    atom_d = np.asarray(dual.sf_left(g)) - np.asarray(dual.sf(g))
    atom_d[0] = 0.0
    phi = closed - (a * Hr.node_values + 1.0) * atom_f + dual.loading * atom_d
    return phi[np.searchsorted(g, z)]


def _phi_reduced(H: RetentionFunction, a: float, F: LossDistribution, dual: DualDistribution, z):
    """``a int_z^inf S H' dx + S(z)(aH(z) + 1) - (1+theta0) g(S(z))``."""
    g, theta0 = dual.g, dual.theta0
    Hr = H.refine(z)
    grid, s = Hr.grid, Hr.slopes
    bp = np.union1d(F.breakpoints, dual.breakpoints)
    lo, hi, cell = quadrature.split_at(grid, bp)
    part = quadrature.integrate_panels(F.sf, lo, hi)[0]
    cells = np.zeros(grid.size)
    np.add.at(cells, cell, part)
    cells[-1] = quadrature.integrate_tail(F.sf, grid[-1]) if F.sf(grid[-1]) > 0 else 0.0
    tail = np.cumsum((s * cells)[::-1])[::-1]
    idx = np.searchsorted(grid, z)
    zf = np.asarray(z, dtype=float)
    sz = np.clip(np.asarray(F.sf(zf), dtype=float), 0.0, 1.0)
    return a * tail[idx] + sz * (a * Hr(zf) + 1.0) - (1 + theta0) * g.fn(sz)


def phi_eval(H: RetentionFunction, a: float, F: LossDistribution, dual: DualDistribution,
             z: Optional[Sequence[float]] = None, check: bool = True, tol: float = 1e-8) -> PhiProfile:
    """Right-continuous ``Phi(z; H)`` at ``z`` (default: the nodes of ``H``).

    The value is the tail mass of ``(aH + 1) dF - (1+theta) dF^`` over ``(z, inf)``;
    it differs from the closed-interval version only at atoms of ``F`` or ``F^``.
    A second evaluation through ``S`` and ``g`` directly guards the quadrature.
    """
    z = H.grid if z is None else np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("loss level must be non-negative")
    z = np.atleast_1d(z)
    order = np.argsort(z)
    zs = z[order]
    vals = _phi_measure(H, a, F, dual, zs)
    if check:
        other = _phi_reduced(H, a, F, dual, zs)
        scale = 1.0 + np.abs(vals)
        if np.any(np.abs(vals - other) > tol * scale):
            k = int(np.argmax(np.abs(vals - other) / scale))
            raise PhiMismatch(f"Phi evaluations disagree at z={zs[k]:g}: {vals[k]!r} vs {other[k]!r}")
    out = np.empty_like(vals)
    out[order] = vals
    return PhiProfile(z, out)


def directional_values(H_star: RetentionFunction, candidates: Sequence[RetentionFunction], a: float,
                       F: LossDistribution, dual: DualDistribution) -> np.ndarray:
    """``int (H - H*) [(aH* + 1) dF - (1+theta) dF^]`` for each candidate ``H``."""
    cache: dict = {}
    out = np.empty(len(candidates))
    for k, H in enumerate(candidates):
        grid = np.union1d(H.grid, H_star.grid)
        key = grid.tobytes()
        if key not in cache:
            cache[key] = InnerProblem.build(F, dual, grid)
        prob = cache[key]
        hs = H_star.refine(grid)
        hc = H.refine(grid)
        Hs, ss = hs.node_values, hs.slopes
        Dv, ds = hc.node_values - Hs, hc.slopes - ss
        M, N = prob.M, prob.N
        first = (a * (Dv * Hs @ M[0] + (Dv * ss + ds * Hs) @ M[1] + (ds * ss) @ M[2])
                 + Dv @ M[0] + ds @ M[1])
        out[k] = first - prob.loading * (Dv @ N[0] + ds @ N[1])
    return out


@dataclass
class ConditionIReport:
    min_value: float
    worst: str
    n_checked: int
    tol: float
    passed: bool
    probe_values: dict = field(default_factory=dict)


def verify_condition_I(H_star: RetentionFunction, a: float, F: LossDistribution, dual: DualDistribution,
                       n_directions: int = 1000, seed: int = 0, scale: float = 1.0,
                       deductibles: Optional[Sequence[float]] = None) -> ConditionIReport:
    """Minimum directional value over random admissible contracts and fixed probes."""
    tol = 1e-6 * scale
    rng = np.random.default_rng(seed)
    probes: dict[str, RetentionFunction] = {
        "H*": H_star,
        "full reinsurance": RetentionFunction(np.array([0.0]), np.array([0.0])),
        "no reinsurance": RetentionFunction(np.array([0.0]), np.array([1.0])),
        "H*/2": H_star.scaled(0.5),
    }
    if deductibles is None:
        q = np.linspace(0.05, 0.95, 19)
        q = q[q > F.mass_at_zero]
        deductibles = np.unique(np.asarray(F.quantile(q), dtype=float))
    for d in deductibles:
        if d > 0 and np.isfinite(d):
            probes[f"min(z, {d:.6g})"] = stop_loss(float(d))
    names = list(probes)
    vals = list(directional_values(H_star, list(probes.values()), a, F, dual))
    randoms = [random_retention(H_star.grid, rng) for _ in range(n_directions)]
    rvals = directional_values(H_star, randoms, a, F, dual) if randoms else np.array([])
    all_vals = np.concatenate([vals, rvals])
    labels = names + [f"random #{i}" for i in range(len(randoms))]
    k = int(np.argmin(all_vals))
    return ConditionIReport(float(all_vals[k]), labels[k], all_vals.size, tol,
                            bool(all_vals[k] >= -tol), dict(zip(names, map(float, vals))))


@dataclass
class OIDEReport:
    max_violation: float
    tol: float
    passed: bool
    cell_phi: np.ndarray  # cell-average Phi
    slopes: np.ndarray
    regime: np.ndarray  # -1 where Phi < 0, 0 where free, +1 where Phi > 0
    nonunique: np.ndarray
    violations: list

    @property
    def nonunique_flag(self) -> bool:
        return bool(np.any(self.nonunique))

    @property
    def note(self) -> str:
        if self.nonunique_flag:
            return ("Phi vanishes on cells carrying no mass of F or F^; any slope in [0, 1] "
                    "is optimal there and the reported slopes are one representative")
        return ""


def verify_oide(H_star: RetentionFunction, a: float, F: LossDistribution, dual: DualDistribution,
                tol: float = 1e-6, slope_tol: float = 1e-6) -> OIDEReport:
    """Check slope 1 where Phi < 0, slope 0 where Phi > 0, free where Phi = 0, cell by cell."""
    prob = InnerProblem.build(F, dual, H_star.grid)
    s = H_star.slopes
    grad = prob.gradient(s, a)
    width = prob.delta.copy()
    # the tail cell is averaged against its mean excess length
    tail_len = prob.M[1, -1] / prob.T[-2] if prob.T[-2] > 0 else 1.0
    width[-1] = tail_len if tail_len > 0 else 1.0
    avg = grad / width
    resid = np.minimum(np.maximum(s - 1.0, avg), s)
    regime = np.where(avg < -tol, -1, np.where(avg > tol, 1, 0))
    bad = []
    for j in np.flatnonzero(np.abs(resid) > tol + slope_tol):
        kind = "Phi < 0 but slope below 1" if avg[j] < 0 else "Phi > 0 but slope above 0"
        bad.append(f"[{prob.grid[j]:.6g}, {prob.grid[j + 1] if j + 1 < prob.size else np.inf:.6g}): "
                   f"{kind} (Phi={avg[j]:.3e}, slope={s[j]:.6g})")
    nonunique = prob.gap & (regime == 0) & (prob.N[0] <= 0.0)
    # cells with no mass beyond them never influence J; treat them as free as well
    nonunique |= prob.curvature(a) <= 0
    viol = float(np.abs(resid).max(initial=0.0))
    return OIDEReport(viol, tol, not bad, avg, s, regime, nonunique, bad)
