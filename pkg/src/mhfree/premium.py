"""Dual distribution, effective loading and the distortion premium of an indemnity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .distortions import Distortion
from .distributions import LossDistribution
from .retention import RetentionFunction

PREMIUM_RTOL = 1e-6


class AssumptionError(ValueError):
    """The market parameters make the control problem trivial or ill-posed."""


class PremiumMismatch(RuntimeError):
    """The two premium formulas disagree beyond tolerance."""


@dataclass(frozen=True)
class MarketParams:
    pi: float
    theta0: float

    def __post_init__(self):
        if not self.theta0 > -1:
            raise ValueError("theta0 must exceed -1")
        if not np.isfinite(self.pi):
            raise ValueError("premium rate must be finite")


@dataclass(frozen=True)
class DualDistribution:
    """Pricing law ``F^(z) = 1 - g(1 - F(z)) / g(1 - F(0))``."""

    loss: LossDistribution
    g: Distortion
    g0: float
    theta0: float
    theta: float
    mean: float
    breakpoints: np.ndarray = field(repr=False)

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(self.loss.sf(np.maximum(z, 0.0)), dtype=float)
        out = np.asarray(self.g.fn(np.clip(s, 0.0, 1.0)), dtype=float) / self.g0
        out = np.where(z < 0, 1.0, np.minimum(out, 1.0))
        return float(out) if out.ndim == 0 else out

    def sf_left(self, z):
        z = np.asarray(z, dtype=float)
        s = np.clip(np.asarray(self.loss.sf_left(np.maximum(z, 0.0)), dtype=float), 0.0, 1.0)
        flat = np.asarray(self.loss.flat_left(np.maximum(z, 0.0)), dtype=bool)
        val = np.where(flat, self.g.fn(s), self.g.right_fn(s)) / self.g0
        out = np.where(z <= 0, 1.0, np.minimum(val, 1.0))
        return float(out) if out.ndim == 0 else out

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0):
            raise ValueError("loss level must be non-negative")
        out = 1.0 - np.asarray(self.sf(z))
        return float(out) if out.ndim == 0 else out

    @property
    def loading(self) -> float:
        return 1.0 + self.theta


def dual_breakpoints(F: LossDistribution, g: Distortion) -> np.ndarray:
    """Loss levels where ``g(1 - F(z))`` may be non-smooth."""
    pts = list(F.breakpoints)
    for pb in g.special_points:
        q = 1.0 - pb
        if F.mass_at_zero < q < 1.0:
            pts.append(float(F.quantile(q)))
    pts = np.unique(np.array(pts, dtype=float))
    return pts[pts > 0]


def dual_cdf(F: LossDistribution, g: Distortion, theta0: float = 0.0) -> DualDistribution:
    g0 = float(g(1.0 - F.mass_at_zero))
    if g0 <= 0:
        raise AssumptionError("degenerate distortion: g(1 - F(0)) = 0 gives no pricing measure")
    bp = dual_breakpoints(F, g)
    tmp = DualDistribution(F, g, g0, theta0, (1 + theta0) * g0 - 1, np.nan, bp)
    mean = quadrature.integrate_survival(tmp.sf, 0.0, np.inf, bp)
    if not np.isfinite(mean):
        raise AssumptionError("the distorted mean loss is infinite")
    return DualDistribution(F, g, g0, theta0, (1 + theta0) * g0 - 1, mean, bp)


def effective_loading(F: LossDistribution, g: Distortion, theta0: float) -> float:
    return (1 + theta0) * float(g(1.0 - F.mass_at_zero)) - 1


def g_expectation(g: Distortion, theta0: float, xi, breakpoints=()) -> float:
    """``(1 + theta0) int_0^inf g(P(xi > t)) dt`` for a loss law or a survival callable."""
    sf = xi.sf if hasattr(xi, "sf") else xi
    bp = list(breakpoints)
    if isinstance(xi, LossDistribution):
        bp = list(dual_breakpoints(xi, g)) + bp
    value = (1 + theta0) * quadrature.integrate_survival(
        lambda t: g.fn(np.clip(np.asarray(sf(t), dtype=float), 0.0, 1.0)), 0.0, np.inf, np.unique(bp))
    if not np.isfinite(value):
        raise AssumptionError("distorted expectation diverges")
    return value


@dataclass(frozen=True)
class PremiumQuote:
    direct: float  # (1+theta0) int g(P(I(Z) > t)) dt
    dual: float  # (1+theta) int I dF^
    rel_gap: float

    @property
    def value(self) -> float:
        return self.direct


def _upper_inverse(H: RetentionFunction):
    """``t -> sup{z : I(z) <= t}`` for the indemnity ``I = z - H``."""
    z = H.grid
    r = 1.0 - H.slopes
    i_nodes = z - H.node_values

    def inv(t):
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(i_nodes, t, side="right") - 1
        j = np.clip(j, 0, z.size - 1)
        rj = r[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = z[j] + (t - i_nodes[j]) / rj
        return np.where(rj > 0, out, np.inf)

    return inv, i_nodes, r


def premium_direct(H: RetentionFunction, F: LossDistribution, g: Distortion, theta0: float) -> float:
    """Layer-cake premium of ``I(Z)`` using the upper generalized inverse of ``I``."""
    inv, i_nodes, r = _upper_inverse(H)
    bp = dual_breakpoints(F, g)
    t_bp = np.asarray(H.indemnity(bp)) if bp.size else np.array([])
    ends = np.unique(np.concatenate([i_nodes, t_bp]))
    last = i_nodes[-1]
    ends = ends[ends <= last]

    def integrand(t):
        zt = inv(t)
        s = np.where(np.isfinite(zt), F.sf(np.where(np.isfinite(zt), zt, 0.0)), 0.0)
        return g.fn(np.clip(s, 0.0, 1.0))

    total = 0.0
    if ends.size > 1:
        total += float(quadrature.integrate_panels(integrand, ends[:-1], ends[1:]).sum())
    if r[-1] > 0:
        # beyond the last node t = I_n + r_n (z - z_n), dt = r_n dz
        zn = H.grid[-1]
        tail_bp = bp[bp > zn]
        tail = 0.0
        start = zn
        for b in tail_bp:
            tail += float(quadrature.integrate_panels(lambda z: g.fn(np.clip(F.sf(z), 0, 1)),
                                                      [start], [b]).sum())
            start = b
        tail += quadrature.integrate_tail(lambda z: g.fn(np.clip(F.sf(z), 0, 1)), start)
        total += r[-1] * tail
    return (1 + theta0) * total


def premium_dual(H: RetentionFunction, dual: DualDistribution) -> float:
    """``(1 + theta) int I dF^`` from cell moments of the dual law."""
    n = quadrature.survival_moments(dual.sf, dual.sf_left, H.grid, dual.breakpoints, kmax=1)
    i_nodes = H.grid - H.node_values
    r = 1.0 - H.slopes
    return dual.loading * float(i_nodes @ n[0] + r @ n[1])


def premium_rate(H: RetentionFunction, F: LossDistribution, g: Distortion, theta0: float,
                 dual: DualDistribution | None = None, check: bool = True) -> PremiumQuote:
    """Premium of the indemnity ``I(z) = z - H(z)`` computed two independent ways."""
    dual = dual or dual_cdf(F, g, theta0)
    direct = premium_direct(H, F, g, theta0)
    via_dual = premium_dual(H, dual)
    gap = abs(direct - via_dual) / (1.0 + abs(via_dual))
    if check and gap > PREMIUM_RTOL:
        raise PremiumMismatch(f"premium formulas disagree: {direct!r} vs {via_dual!r}")
    return PremiumQuote(direct, via_dual, gap)


@dataclass
class AssumptionReport:
    ok: bool
    mean_loss: float
    pi: float
    distorted_mean: float
    margins: dict
    message: str


def check_assumption(params: MarketParams, F: LossDistribution, g: Distortion) -> AssumptionReport:
    """Test ``0 < E[Z] < pi < (1+theta) E^[Z] < inf``."""
    ez = F.mean
    try:
        dual = dual_cdf(F, g, params.theta0)
        eg = dual.loading * dual.mean
    except AssumptionError as exc:
        return AssumptionReport(False, ez, params.pi, np.nan, {}, str(exc))
    margins = {"mean_positive": ez, "premium_over_mean": params.pi - ez,
               "price_over_premium": eg - params.pi}
    if not ez > 0:
        msg = "expected loss must be positive"
    elif not np.isfinite(eg):
        msg = "reinsurance price of the full loss is infinite"
    elif params.pi <= ez:
        msg = "insurance premium below expected loss: ruin is certain for every contract"
    elif params.pi >= eg:
        msg = "insurance premium at or above the reinsurance price of the full loss: full cover is trivially optimal"
    else:
        msg = "ok"
    return AssumptionReport(msg == "ok", ez, params.pi, eg, margins, msg)
