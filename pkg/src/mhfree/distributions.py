"""Loss distributions: cdf, generalized quantile, atoms, moments and samplers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import quadrature


class LossDistribution:
    """Law of a non-negative loss ``Z``.

    Subclasses supply ``cdf``, ``sf_left``, ``quantile`` and ``flat_left``; all
    accept scalars or arrays.  Instances are immutable.
    """

    mass_at_zero: float
    mean: float
    support_upper: float
    atoms: np.ndarray  # shape (k, 2): location, mass
    breakpoints: np.ndarray  # locations where the survival function is not smooth

    def cdf(self, z):
        raise NotImplementedError

    def sf(self, z):
        return 1.0 - self.cdf(z)

    def sf_left(self, z):
        """``P(Z >= z)``."""
        raise NotImplementedError

    def quantile(self, p):
        raise NotImplementedError

    def flat_left(self, z):
        """True where the survival function is constant just to the left of ``z``."""
        raise NotImplementedError

    @property
    def quantile_density(self):
        """Derivative of the quantile function on ``(m0, 1)``, or None."""
        return None

    @property
    def has_quantile_density(self) -> bool:
        return self.quantile_density is not None

    def second_moment(self) -> float:
        return 2.0 * quadrature.integrate_survival(self.sf, 0.0, np.inf, self.breakpoints, power=1)

    def sample(self, seed: int, n: int) -> np.ndarray:
        """Inverse-transform draws, deterministic in ``seed``."""
        if n < 1:
            raise ValueError("n must be at least 1")
        rng = np.random.default_rng(seed)
        u = 1.0 - rng.random(n)  # (0, 1]
        return np.asarray(self.quantile(u), dtype=float)


def _check_z(z):
    arr = np.asarray(z, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("loss level must be non-negative")
    return arr


def _check_p(p):
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError("probability must lie in (0, 1]")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


@dataclass(frozen=True)
class PiecewiseExponentialSpec:
    """Segments ``[b_{k-1}, b_k)`` on which ``F(z) = m0 + (1-m0)(1 - exp(-z/scale_k))``."""

    breakpoints: Sequence[float]
    scales: Sequence[float]
    mass_at_zero: float = 0.0


class PiecewiseExponential(LossDistribution):
    """Exponential pieces glued at breakpoints; joins may jump up (atoms)."""

    def __init__(self, spec: PiecewiseExponentialSpec):
        b = np.asarray(spec.breakpoints, dtype=float)
        lam = np.asarray(spec.scales, dtype=float)
        m0 = float(spec.mass_at_zero)
        if lam.size != b.size + 1:
            raise ValueError("need exactly one more scale than breakpoints")
        if np.any(lam <= 0):
            raise ValueError("scales must be positive")
        if b.size and (np.any(b <= 0) or np.any(np.diff(b) <= 0)):
            raise ValueError("breakpoints must be positive and strictly increasing")
        if not 0.0 <= m0 < 1.0:
            raise ValueError("mass at zero must lie in [0, 1)")
        # F jumps at b_k by (1-m0)(exp(-b/lam_k) - exp(-b/lam_{k+1})); must be >= 0
        jumps = (1 - m0) * (np.exp(-b / lam[:-1]) - np.exp(-b / lam[1:]))
        if np.any(jumps < -1e-15):
            k = int(np.argmin(jumps))
            raise ValueError(f"cdf would decrease at z={b[k]:g}")
        self.spec = spec
        self._b = b
        self._lam = lam
        self.mass_at_zero = m0
        edges = np.concatenate([[0.0], b, [np.inf]])
        seg_mass = (1 - m0) * lam * (np.exp(-edges[:-1] / lam) - np.exp(-np.minimum(edges[1:], 1e300) / lam))
        self.mean = float(seg_mass.sum())
        self.support_upper = np.inf
        atoms = [(0.0, m0)] if m0 > 0 else []
        atoms += [(float(x), float(j)) for x, j in zip(b, jumps) if j > 0]
        self.atoms = np.array(atoms, dtype=float).reshape(-1, 2)
        self.breakpoints = b.copy()
        # p-range of each segment: [lo_k, hi_k)
        self._p_lo = m0 + (1 - m0) * (1 - np.exp(-edges[:-1] / lam))
        with np.errstate(over="ignore"):
            self._p_hi = m0 + (1 - m0) * (1 - np.exp(-edges[1:] / lam))
        self._edges = edges

    def _segment(self, z):
        return np.searchsorted(self._b, z, side="right")

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        k = self._segment(z)
        out = (1 - self.mass_at_zero) * np.exp(-np.maximum(z, 0.0) / self._lam[k])
        out = np.where(z < 0, 1.0, out)
        return _ret(out, z)

    def cdf(self, z):
        z = _check_z(z)
        return _ret(1.0 - np.asarray(self.sf(z)), z)

    def sf_left(self, z):
        z = np.asarray(z, dtype=float)
        k = np.searchsorted(self._b, z, side="left")
        out = (1 - self.mass_at_zero) * np.exp(-np.maximum(z, 0.0) / self._lam[k])
        out = np.where(z <= 0, 1.0, out)
        return _ret(out, z)

    def flat_left(self, z):
        z = np.asarray(z, dtype=float)
        return _ret(z <= 0, z)

    def quantile(self, p):
        p = _check_p(p)
        pf = np.atleast_1d(p)
        out = np.zeros_like(pf)
        m0 = self.mass_at_zero
        for i, q in enumerate(pf):
            if q <= m0:
                out[i] = 0.0
            elif q >= 1.0:
                out[i] = np.inf
            else:
                k = int(np.searchsorted(self._p_hi, q, side="left"))
                # q <= p_hi[k]; inside segment k unless it falls in the jump before it
                if q <= self._p_lo[k]:
                    out[i] = self._edges[k]
                else:
                    out[i] = -self._lam[k] * np.log1p(-(q - m0) / (1 - m0))
        return _ret(out.reshape(np.shape(p)), p)

    @property
    def quantile_density(self):
        if self._b.size:
            return None
        lam = self._lam[0]
        return lambda p: lam / (1.0 - np.asarray(p, dtype=float))

    def second_moment(self) -> float:
        e = self._edges
        total = 0.0
        for k, lam in enumerate(self._lam):
            a, b = e[k], e[k + 1]
            # int_a^b z^2 (1-m0)/lam e^{-z/lam} dz
            fa = (a * a + 2 * lam * a + 2 * lam * lam) * np.exp(-a / lam)
            fb = 0.0 if np.isinf(b) else (b * b + 2 * lam * b + 2 * lam * lam) * np.exp(-b / lam)
            total += (1 - self.mass_at_zero) * (fa - fb)
        for loc, mass in self.atoms:
            total += loc * loc * mass
        return float(total)

    def __repr__(self):
        return (f"PiecewiseExponential(breakpoints={list(self._b)}, scales={list(self._lam)}, "
                f"mass_at_zero={self.mass_at_zero})")


class DiscreteLoss(LossDistribution):
    """Finitely supported loss; step cdf, no quantile density."""

    def __init__(self, values: Sequence[float], probs: Sequence[float]):
        v = np.asarray(values, dtype=float)
        w = np.asarray(probs, dtype=float)
        if v.size == 0 or v.size != w.size:
            raise ValueError("values and probs must be non-empty and equally long")
        if np.any(v < 0):
            raise ValueError("losses must be non-negative")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        order = np.argsort(v, kind="stable")
        v, w = v[order], w[order]
        uniq, inv = np.unique(v, return_inverse=True)
        mass = np.bincount(inv, weights=w)
        keep = mass > 0
        self._v, self._w = uniq[keep], mass[keep] / mass[keep].sum()
        self._cum = np.cumsum(self._w)
        self._cum[-1] = 1.0
        # survival from tail sums: P(Z > v_k) reproduces the input masses without 1 - cdf rounding
        self._tail = np.append(np.cumsum(self._w[::-1])[::-1], 0.0)
        self._tail[0] = 1.0
        self.mass_at_zero = float(self._w[0]) if self._v[0] == 0 else 0.0
        if self.mass_at_zero >= 1.0:
            raise ValueError("loss is identically zero")
        self.mean = float(self._v @ self._w)
        self.support_upper = float(self._v[-1])
        self.atoms = np.column_stack([self._v, self._w])
        self.breakpoints = self._v[self._v > 0].copy()

    @classmethod
    def from_claims(cls, claims: Sequence[float]) -> "DiscreteLoss":
        c = np.asarray(claims, dtype=float)
        if c.size == 0:
            raise ValueError("no claims supplied")
        if np.any(c < 0):
            raise ValueError("negative claim amount")
        return cls(c, np.full(c.size, 1.0 / c.size))

    def cdf(self, z):
        z = _check_z(z)
        idx = np.searchsorted(self._v, z, side="right")
        out = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
        return _ret(out, z)

    def sf(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self._v, z, side="right")
        return _ret(np.where(z < 0, 1.0, self._tail[idx]), z)

    def sf_left(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.searchsorted(self._v, z, side="left")
        return _ret(self._tail[idx], z)

    def flat_left(self, z):
        z = np.asarray(z, dtype=float)
        return _ret(np.ones(z.shape, dtype=bool), z)

    def quantile(self, p):
        p = _check_p(p)
        idx = np.searchsorted(self._cum, np.asarray(p) - 1e-15, side="left")
        out = self._v[np.minimum(idx, self._v.size - 1)]
        return _ret(out, p)

    def second_moment(self) -> float:
        return float(self._v**2 @ self._w)

    def __repr__(self):
        return f"DiscreteLoss(values={list(self._v)}, probs={list(self._w)})"


def exponential(mean: float = 1.0, mass_at_zero: float = 0.0) -> PiecewiseExponential:
    return PiecewiseExponential(PiecewiseExponentialSpec((), (mean,), mass_at_zero))


def build_piecewise_exponential(spec: PiecewiseExponentialSpec) -> PiecewiseExponential:
    return PiecewiseExponential(spec)


def build_empirical(claims: Sequence[float]) -> DiscreteLoss:
    return DiscreteLoss.from_claims(claims)


def layer_example_loss() -> PiecewiseExponential:
    """Exponential scales 6, 5, 3 on [0,1), [1,6), [6,inf)."""
    return PiecewiseExponential(PiecewiseExponentialSpec((1.0, 6.0), (6.0, 5.0, 3.0)))


def cdf_eval(dist: LossDistribution, z):
    return dist.cdf(z)


def quantile_eval(dist: LossDistribution, p):
    return dist.quantile(p)


def sample(dist: LossDistribution, seed: int, n: int) -> np.ndarray:
    return dist.sample(seed, n)


def read_claims_csv(path) -> list[float]:
    """One-column CSV of claim amounts; a non-numeric first row is a header."""
    claims: list[float] = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                claims.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue
                raise ValueError(f"non-numeric claim on line {i + 1}: {row[0]!r}")
    return claims


def build_distribution(config: dict) -> LossDistribution:
    """Build from ``{"kind": ..., "params": {...}}``."""
    kind = config.get("kind")
    params = dict(config.get("params") or {})
    if kind == "exponential":
        return exponential(float(params.get("mean", 1.0)), float(params.get("mass_at_zero", 0.0)))
    if kind == "piecewise_exponential":
        return PiecewiseExponential(PiecewiseExponentialSpec(
            tuple(params.get("breakpoints", ())), tuple(params["scales"]),
            float(params.get("mass_at_zero", 0.0))))
    if kind == "layer_example":
        return layer_example_loss()
    if kind == "empirical":
        claims = params.get("claims")
        if claims is None:
            claims = read_claims_csv(params["csv"])
        return build_empirical(claims)
    if kind == "discrete":
        return DiscreteLoss(params["values"], params["probs"])
    raise ValueError(f"unknown distribution kind: {kind!r}")


def mean_and_second_moment(dist: LossDistribution, transform) -> tuple[float, float]:
    """``(int H dF, int H^2 dF)`` for a retention function ``H``."""
    from .retention import stieltjes_moments

    m = stieltjes_moments(dist.sf, dist.sf_left, transform.grid, dist.breakpoints, kmax=2)
    h, s = transform.node_values, transform.slopes
    first = float(h @ m[0] + s @ m[1])
    second = float(h * h @ m[0] + 2 * (h * s) @ m[1] + s * s @ m[2])
    if not (np.isfinite(first) and np.isfinite(second)):
        raise ValueError("moment integral is not finite")
    return first, second
