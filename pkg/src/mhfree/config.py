"""JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .distortions import Distortion, build_distortion
from .distributions import LossDistribution, build_distribution
from .objective import GridSpec
from .premium import MarketParams
from .simulate import SimConfig

ROUTES = ("qp", "ode", "auto")


class ConfigError(ValueError):
    """The configuration file cannot be parsed or names an invalid object."""


@dataclass
class RunConfig:
    distribution: dict
    distortion: dict
    market: dict
    grid: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    def loss(self) -> LossDistribution:
        return _build(build_distribution, self._resolve(self.distribution), "distribution")

    def distortion_fn(self) -> Distortion:
        spec = self._resolve(self.distortion)
        return _build(lambda s: build_distortion(s.get("kind"), s.get("params")), spec, "distortion")

    def market_params(self) -> MarketParams:
        try:
            return MarketParams(float(self.market["pi"]), float(self.market["theta0"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"market needs numeric pi and theta0 ({exc})") from exc

    def grid_spec(self) -> GridSpec:
        try:
            return GridSpec(int(self.grid.get("n_nodes", 2000)), float(self.grid.get("p_eps", 1e-6)),
                            tuple(self.grid.get("extra", ())), int(self.grid.get("ode_nodes", 4000)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid section ({exc})") from exc

    @property
    def route(self) -> str:
        return self.solver.get("route", "auto")

    @property
    def tol(self) -> float:
        return float(self.solver.get("tol", 1e-8))

    def sim_config(self, seed: Optional[int] = None, keep_paths: bool = False) -> SimConfig:
        s = self.simulate
        try:
            return SimConfig(float(s.get("x", 1.0)), float(s.get("T", 200.0)), float(s.get("dt", 1e-3)),
                             int(s.get("n_paths", 100_000)), int(seed if seed is not None else s.get("seed", 0)),
                             bool(s.get("bridge", True)), float(s.get("retire_eps", 1e-7)),
                             keep_paths or bool(s.get("paths_csv", False)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad simulate section ({exc})") from exc

    @property
    def out_dir(self) -> Path:
        return Path(self.output.get("dir", "out"))

    def _resolve(self, spec: dict) -> dict:
        # csv paths are relative to the config file
        params = dict(spec.get("params") or {})
        if "csv" in params:
            params["csv"] = str((self.base_dir / params["csv"]).resolve())
        return {**spec, "params": params}


def _build(fn, spec: dict, what: str):
    try:
        return fn(spec)
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid {what} spec {spec!r}: {exc}") from exc


def parse_config(data: Any, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    missing = [k for k in ("distribution", "distortion", "market") if k not in data]
    if missing:
        raise ConfigError(f"missing section(s): {', '.join(missing)}")
    known = {"distribution", "distortion", "market", "grid", "solver", "simulate", "output"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    for k in known & set(data):
        if not isinstance(data[k], dict):
            raise ConfigError(f"section {k!r} must be an object")
    cfg = RunConfig(**{k: data[k] for k in known & set(data)}, base_dir=base_dir)
    if cfg.route not in ROUTES:
        raise ConfigError(f"solver.route must be one of {ROUTES}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(data, path.parent)
