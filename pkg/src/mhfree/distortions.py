"""Distortion functions: left-continuous, non-decreasing maps of [0, 1] onto [0, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr, ndtri

E45 = np.exp(-0.8)
E25 = np.exp(-0.4)
LAYER_CAP = 1.75 * np.exp(-0.2) - 0.625 * E25 - 0.625 * E45


@dataclass(frozen=True)
class Distortion:
    """A distortion ``g`` with its jump list and kink locations.

    ``fn`` is evaluated with left-continuous semantics at jumps; ``right_fn``
    returns the right limit.  ``jumps`` holds ``(p, g(p), g(p+))`` triples.
    """

    kind: str
    params: dict
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    right_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    jumps: tuple = ()
    breakpoints: tuple = ()

    def __call__(self, p):
        return self.eval(p)

    def eval(self, p):
        arr = np.asarray(p, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < -1e-15) or np.any(arr > 1 + 1e-15):
            raise ValueError("probability must lie in [0, 1]")
        out = np.clip(self.fn(np.clip(arr, 0.0, 1.0)), 0.0, 1.0)
        return float(out) if np.ndim(p) == 0 else out

    def right_limit(self, p):
        arr = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        out = np.clip(self.right_fn(arr), 0.0, 1.0)
        return float(out) if np.ndim(p) == 0 else out

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"

    @property
    def special_points(self) -> np.ndarray:
        """Kinks and jump locations inside ``(0, 1)``."""
        pts = list(self.breakpoints) + [j[0] for j in self.jumps]
        pts = np.array(sorted(set(pts)), dtype=float)
        return pts[(pts > 0) & (pts < 1)]


def distort_eval(g: Distortion, p):
    return g.eval(p)


def _same(fn):
    return fn, fn


def identity() -> Distortion:
    f = lambda p: np.asarray(p, dtype=float) * 1.0
    return Distortion("identity", {}, *_same(f))


def proportional_hazard(rho: float) -> Distortion:
    if not rho >= 1:
        raise ValueError("proportional hazard index must be >= 1")
    inv = 1.0 / rho
    f = lambda p: np.power(np.asarray(p, dtype=float), inv)
    return Distortion("proportional_hazard", {"rho": rho}, *_same(f))


def inverse_s(gamma: float) -> Distortion:
    """Probability weighting ``p^g / (p^g + (1-p)^g)^(1/g)``; monotone for ``g > 0.28``."""
    if not 0.28 < gamma < 1:
        raise ValueError("inverse-S parameter must lie in (0.28, 1)")

    def f(p):
        p = np.asarray(p, dtype=float)
        num = np.power(p, gamma)
        return num / np.power(num + np.power(1.0 - p, gamma), 1.0 / gamma)

    return Distortion("inverse_s", {"gamma": gamma}, *_same(f))


def wang(shift: float) -> Distortion:
    """``N(N^-1(p) + shift)``."""
    shift = float(shift)
    f = lambda p: ndtr(ndtri(np.asarray(p, dtype=float)) + shift)
    return Distortion("wang", {"shift": shift}, *_same(f))


def tabular(knots) -> Distortion:
    """Piecewise-linear ``g`` through ``(p, value)`` knots.

    A repeated ``p`` expresses a jump: the first value is ``g(p)``, the second
    the right limit.
    """
    k = np.asarray(knots, dtype=float)
    if k.ndim != 2 or k.shape[1] != 2 or k.shape[0] < 2:
        raise ValueError("knots must be a list of at least two (p, value) pairs")
    p, v = k[:, 0], k[:, 1]
    if np.any(np.diff(p) < 0):
        raise ValueError("knot locations must be sorted")
    if np.any(np.diff(v) < 0):
        raise ValueError("knot values must be non-decreasing")
    if p[0] != 0 or v[0] != 0 or p[-1] != 1 or v[-1] != 1:
        raise ValueError("knots must start at (0, 0) and end at (1, 1)")
    dup = np.flatnonzero(np.diff(p) == 0)
    if np.any(np.bincount(np.searchsorted(p, p[dup])) > 1):
        raise ValueError("at most two knots may share a location")
    if dup.size and (p[dup[0]] == 0 or p[dup[-1]] == 1):
        raise ValueError("jumps at 0 or 1 break the endpoint conditions")
    jumps = tuple((float(p[i]), float(v[i]), float(v[i + 1])) for i in dup if v[i + 1] > v[i])

    def interp(x, side):
        x = np.asarray(x, dtype=float)
        if side == "left":
            j = np.clip(np.searchsorted(p, x, side="left"), 1, p.size - 1)
            lo, hi = j - 1, j
        else:
            j = np.clip(np.searchsorted(p, x, side="right"), 1, p.size - 1)
            lo, hi = j - 1, j
        span = p[hi] - p[lo]
        w = np.where(span > 0, (x - p[lo]) / np.where(span > 0, span, 1.0), 1.0)
        return v[lo] + w * (v[hi] - v[lo])

    kinks = tuple(float(x) for x in np.unique(p[1:-1]))
    return Distortion("tabular", {"knots": k.tolist()}, lambda x: interp(x, "left"),
                      lambda x: interp(x, "right"), jumps, kinks)


def custom(fn, right_fn=None, jumps=(), breakpoints=(), kind: str = "custom") -> Distortion:
    """Wrap an arbitrary vectorised callable; no validation is applied here."""
    return Distortion(kind, {}, fn, right_fn or fn, tuple(jumps), tuple(breakpoints))


def layer_example() -> Distortion:
    """Distortion used with the three-segment exponential layer loss.

    Identity up to ``e^{-4/5}``, the curve ``(u/8)(9 - 5 ln u) - (5/8)e^{-4/5}``
    up to ``e^{-2/5}``, then ``max(u, C)`` with an upward jump at ``e^{-2/5}``.
    """

    def middle(u):
        with np.errstate(divide="ignore"):
            return u / 8.0 * (9.0 - 5.0 * np.log(np.maximum(u, 1e-300))) - 0.625 * E45

    def left(u):
        u = np.asarray(u, dtype=float)
        return np.where(u <= E45, u, np.where(u <= E25, middle(u), np.maximum(u, LAYER_CAP)))

    def right(u):
        u = np.asarray(u, dtype=float)
        return np.where(u < E45, u, np.where(u < E25, middle(u), np.maximum(u, LAYER_CAP)))

    jump = (float(E25), float(middle(E25)), float(LAYER_CAP))
    return Distortion("layer_example", {}, left, right, (jump,),
                      (float(E45), float(E25), float(LAYER_CAP)))


_BUILDERS = {
    "identity": lambda prm: identity(),
    "proportional_hazard": lambda prm: proportional_hazard(float(prm["rho"])),
    "inverse_s": lambda prm: inverse_s(float(prm["gamma"])),
    "wang": lambda prm: wang(float(prm.get("shift", prm.get("lambda", 0.0)))),
    "layer_example": lambda prm: layer_example(),
}


def read_knots_csv(path) -> list[tuple[float, float]]:
    rows = []
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ValueError(f"bad knot on line {i + 1}: {row!r}")
    return rows


def build_distortion(kind: str, params: Optional[dict] = None) -> Distortion:
    params = dict(params or {})
    if kind == "tabular":
        knots = params.get("knots")
        if knots is None:
            knots = read_knots_csv(params["csv"])
        g = tabular(knots)
    elif kind in _BUILDERS:
        try:
            g = _BUILDERS[kind](params)
        except KeyError as exc:
            raise ValueError(f"missing parameter {exc} for distortion {kind!r}") from None
    else:
        raise ValueError(f"unknown distortion kind: {kind!r}")
    report = validate_distortion(g)
    if not report.ok:
        raise ValueError("distortion outside the admissible class: " + "; ".join(report.violations))
    return g


@dataclass
class ValidationReport:
    ok: bool
    violations: list
    jumps: list


def validate_distortion(g: Distortion, probe_count: int = 10_000) -> ValidationReport:
    """Probe monotonicity, range, endpoints and left-continuity of ``g``."""
    bad = []
    specials = g.special_points
    eps = 1e-12
    probe = np.unique(np.concatenate([
        np.linspace(0.0, 1.0, probe_count), np.geomspace(1e-12, 1e-2, 200),
        specials, np.clip(specials - eps, 0, 1), np.clip(specials + eps, 0, 1)]))
    vals = np.asarray(g.fn(probe), dtype=float)
    if np.any(~np.isfinite(vals)):
        bad.append("non-finite value")
    if np.any(vals < -1e-15) or np.any(vals > 1 + 1e-15):
        bad.append("value outside [0, 1]")
    dec = np.diff(vals)
    if np.any(dec < -1e-13):
        i = int(np.argmin(dec))
        bad.append(f"decreasing between p={probe[i]:.6g} and p={probe[i + 1]:.6g}")
    if abs(float(g.fn(np.array([0.0]))[0])) > 0:
        bad.append("g(0) != 0")
    if abs(float(g.right_fn(np.array([0.0]))[0])) > 1e-12:
        bad.append("g(0+) != 0")
    if abs(float(g.fn(np.array([1.0]))[0]) - 1.0) > 1e-12:
        bad.append("g(1) != 1")
    for loc, left, right in g.jumps:
        near = float(g.fn(np.array([loc - 1e-9]))[0])
        if abs(near - left) > 1e-6:
            bad.append(f"not left-continuous at p={loc:.6g}")
        if right < left:
            bad.append(f"downward jump at p={loc:.6g}")
    return ValidationReport(ok=not bad, violations=bad, jumps=[j[0] for j in g.jumps])


def concavity_defect(g: Distortion, lo: float, hi: float, n: int = 20_001) -> float:
    """Largest convexity excess ``max(mid-point value - g)`` over grid triples in ``[lo, hi]``."""
    x = np.linspace(lo, hi, n)
    y = np.asarray(g.fn(x), dtype=float)
    if np.any(np.diff(y) < -1e-14):
        return np.inf
    excess = 0.5 * (y[:-2] + y[2:]) - y[1:-1]
    for loc, left, right in g.jumps:
        if lo < loc < hi and right > left:
            return float(right - left)
    return float(max(excess.max(initial=0.0), 0.0))


def _upper_hull(x: np.ndarray, y: np.ndarray):
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    hx, hy = [], []
    for xi, yi in zip(x, y):
        while len(hx) >= 2:
            cross = (hx[-1] - hx[-2]) * (yi - hy[-2]) - (hy[-1] - hy[-2]) * (xi - hx[-2])
            if cross >= 0:
                hx.pop(); hy.pop()
            else:
                break
        if hx and hx[-1] == xi:
            hy[-1] = max(hy[-1], yi)
            continue
        hx.append(xi); hy.append(yi)
    return np.array(hx), np.array(hy)


def concave_envelope(g: Distortion, cutoff: float = 1.0, tol: float = 1e-9) -> Distortion:
    """Smallest concave majorant of ``g`` on ``[0, cutoff]``, linear to ``(1, 1)`` beyond."""
    if not 0 < cutoff <= 1:
        raise ValueError("cutoff must lie in (0, 1]")
    specials = g.special_points
    specials = specials[specials < cutoff]
    x = np.unique(np.concatenate([
        np.linspace(0.0, cutoff, 20_001), cutoff * np.geomspace(1e-12, 1e-3, 400),
        specials, np.clip(specials - 1e-12, 0, cutoff), np.clip(specials + 1e-12, 0, cutoff)]))
    extra_x = np.array([j[0] for j in g.jumps if 0 < j[0] < cutoff])
    extra_y = np.array([j[2] for j in g.jumps if 0 < j[0] < cutoff])
    for _ in range(30):
        y = np.asarray(g.fn(x), dtype=float)
        hx, hy = _upper_hull(np.concatenate([x, extra_x]), np.concatenate([y, extra_y]))
        mid = 0.5 * (x[:-1] + x[1:])
        gap = np.asarray(g.fn(mid), dtype=float) - np.interp(mid, hx, hy)
        worse = mid[gap > tol]
        if worse.size == 0:
            break
        x = np.unique(np.concatenate([x, worse, 0.5 * (worse + x[np.searchsorted(x, worse) - 1]),
                                      0.5 * (worse + x[np.searchsorted(x, worse)])]))
    # the hull value at cutoff is g(cutoff) unless a jump's right limit lies above it there
    knots = np.column_stack([hx, hy])
    if cutoff < 1:
        knots = np.vstack([knots, [1.0, 1.0]])
    else:
        knots[-1, 1] = 1.0
    env = tabular(knots)
    return Distortion("concave_envelope", {"cutoff": cutoff, "source": g.kind, "knots": knots.tolist()},
                      env.fn, env.right_fn, env.jumps, env.breakpoints)
