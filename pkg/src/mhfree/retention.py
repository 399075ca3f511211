"""Piecewise-linear retention functions ``H`` with slopes in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import quadrature

SLOPE_TOL = 1e-9


class InadmissibleContract(ValueError):
    """Raised when a contract breaks the no-sabotage slope condition or starts away from zero."""


@dataclass(frozen=True)
class RetentionFunction:
    """``H(z) = H(z_j) + s_j (z - z_j)`` on ``[z_j, z_{j+1})``.

    ``grid`` holds ``z_0 = 0 < z_1 < ... < z_n``; ``slopes`` has length ``n + 1``,
    the last entry being the slope on ``[z_n, inf)``.
    """

    grid: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        slopes = np.asarray(self.slopes, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
            raise InadmissibleContract("grid must start at z = 0")
        if np.any(np.diff(grid) <= 0):
            raise InadmissibleContract("grid must be strictly increasing")
        if slopes.shape != grid.shape:
            raise ValueError("need one slope per grid node (last one is the tail slope)")
        if np.any(~np.isfinite(slopes)):
            raise InadmissibleContract("non-finite slope")
        if np.any(slopes < -SLOPE_TOL) or np.any(slopes > 1 + SLOPE_TOL):
            j = int(np.argmax(np.maximum(-slopes, slopes - 1)))
            clause = "indemnity grows faster than the loss" if slopes[j] < 0 else "indemnity decreases"
            raise InadmissibleContract(f"{clause} on [{grid[j]:g}, ...): retention slope {slopes[j]:.6g}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "slopes", np.clip(slopes, 0.0, 1.0))

    @property
    def node_values(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.slopes[:-1] * np.diff(self.grid))])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.grid)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        j = np.clip(np.searchsorted(self.grid, z, side="right") - 1, 0, self.grid.size - 1)
        out = self.node_values[j] + self.slopes[j] * (z - self.grid[j])
        return float(out) if out.ndim == 0 else out

    def indemnity(self, z):
        z = np.asarray(z, dtype=float)
        out = z - np.asarray(self(z))
        return float(out) if out.ndim == 0 else out

    def refine(self, grid) -> "RetentionFunction":
        """Same function on ``grid`` merged with the current nodes."""
        merged = np.union1d(self.grid, np.asarray(grid, dtype=float))
        merged = merged[merged >= 0]
        j = np.clip(np.searchsorted(self.grid, merged, side="right") - 1, 0, self.grid.size - 1)
        return RetentionFunction(merged, self.slopes[j])

    def scaled(self, factor: float) -> "RetentionFunction":
        return RetentionFunction(self.grid, self.slopes * factor)


def stieltjes_moments(sf, sf_left, grid, breakpoints=(), kmax: int = 2) -> np.ndarray:
    """Cell moments of a law given by its survival function, see ``quadrature.survival_moments``."""
    return quadrature.survival_moments(sf, sf_left, grid, breakpoints, kmax=kmax)


def full_retention() -> RetentionFunction:
    """No reinsurance: ``H(z) = z``."""
    return RetentionFunction(np.array([0.0]), np.array([1.0]))


def zero_retention() -> RetentionFunction:
    """Full reinsurance: ``H = 0``."""
    return RetentionFunction(np.array([0.0]), np.array([0.0]))


def stop_loss(d: float) -> RetentionFunction:
    """``H(z) = min(z, d)``, i.e. indemnity ``(z - d)^+``."""
    if d <= 0:
        raise ValueError("deductible must be positive")
    return RetentionFunction(np.array([0.0, d]), np.array([1.0, 0.0]))


def from_values(z: Sequence[float], h: Sequence[float], tail_slope=None) -> RetentionFunction:
    """Interpolate node values of ``H``; the tail continues the last slope unless given."""
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    if z.size != h.size or z.size == 0:
        raise ValueError("z and H must be non-empty and equally long")
    if z[0] != 0.0 or abs(h[0]) > SLOPE_TOL:
        raise InadmissibleContract("retention must vanish at z = 0 (grid starting at 0)")
    if np.any(np.diff(z) <= 0):
        raise InadmissibleContract("z must be strictly increasing")
    s = np.diff(h) / np.diff(z)
    if tail_slope is None:
        tail_slope = s[-1] if s.size else 1.0
    return RetentionFunction(z, np.append(s, tail_slope))


def from_indemnity(z: Sequence[float], indemnity: Sequence[float], tail_slope=None) -> RetentionFunction:
    """Contract given as node values of ``I``; ``tail_slope`` refers to ``I``."""
    z = np.asarray(z, dtype=float)
    i = np.asarray(indemnity, dtype=float)
    if z.size and z[0] == 0.0 and abs(i[0]) > SLOPE_TOL:
        raise InadmissibleContract("indemnity must vanish at z = 0")
    return from_values(z, z - i, None if tail_slope is None else 1.0 - tail_slope)


def random_retention(grid, rng: np.random.Generator, kind: str = "mixed") -> RetentionFunction:
    """Random admissible retention on ``grid`` (used by verifiers and property tests)."""
    grid = np.asarray(grid, dtype=float)
    n = grid.size
    if kind == "uniform" or (kind == "mixed" and rng.random() < 0.4):
        s = rng.random(n)
    else:
        # piecewise-constant slopes with a few random switch points
        k = int(rng.integers(1, 6))
        cuts = np.sort(rng.choice(n, size=min(k, n), replace=False))
        levels = rng.choice([0.0, 1.0, rng.random()], size=cuts.size + 1)
        s = levels[np.searchsorted(cuts, np.arange(n), side="right")]
    return RetentionFunction(grid, s)
