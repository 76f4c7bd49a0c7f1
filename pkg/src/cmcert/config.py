"""Run configuration: TOML files, presets and validation."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .rtbp import SUN_EARTH_MU

CACHE_ENV = "CMCERT_CACHE_DIR"


class ConfigError(ValueError):
    """Invalid run configuration."""


def _action_radius(I):
    # radius of the central disc carrying actions up to I
    return math.sqrt(2.0 * I)


@dataclass
class RunConfig:
    """Every parameter of a verification run.

    ``fiber_subdiv`` and ``central_refine`` count pieces (perfect squares);
    ``cover_boxes`` and ``boundary_boxes`` are box counts for the central
    disc and for its boundary circle.
    """

    mu: float = SUN_EARTH_MU
    nf_order: int = 4
    R: float = _action_radius(155e-4)
    r: float = 5e-4
    v: float = _action_radius(155e-4) - _action_radius(150e-4)
    gamma: float = 1.0
    alpha_h: float = 2.0
    alpha_v: float = 1.0
    beta_h: float = 1.0
    beta_v: float = 2.0
    cover_boxes: int = 31000
    boundary_boxes: int = 500
    fiber_subdiv: int = 9
    central_refine: int = 9
    lambda_scale: float = 3.0
    newton_seed_radius: float = 25e-5
    frame: str = "linear"
    interior_grid: int = 24
    energy_tol: float = 1e-8
    energy_max_boxes: int = 40000
    chunk_size: int = 2000
    workers: int = 1
    cache_dir: str | None = None
    certificate_path: str | None = None
    preset: str | None = None

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    def validate(self):
        """Re-check every ordering and positivity constraint."""
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(0.0 < self.mu < 0.5, f"mu must lie in (0, 1/2), got {self.mu}")
        need(isinstance(self.nf_order, int) and 2 <= self.nf_order <= 16,
             f"nf_order must be an integer in [2, 16], got {self.nf_order}")
        need(self.R > 0 and self.r > 0, "R and r must be positive")
        need(0.0 <= self.v < self.R, f"v must satisfy 0 <= v < R (v={self.v}, R={self.R})")
        for name in ("gamma", "alpha_h", "alpha_v", "beta_h", "beta_v"):
            need(getattr(self, name) > 0, f"cone coefficient {name} must be positive")
        need(self.alpha_h > self.alpha_v, "cone coefficients need alpha_h > alpha_v")
        need(self.beta_v > self.beta_h, "cone coefficients need beta_v > beta_h")
        for name in ("cover_boxes", "boundary_boxes", "chunk_size", "workers", "interior_grid",
                     "energy_max_boxes"):
            need(isinstance(getattr(self, name), int) and getattr(self, name) >= 1,
                 f"{name} must be a positive integer")
        need(self.boundary_boxes >= 8, "boundary_boxes must be at least 8 to cover the circle")
        for name in ("fiber_subdiv", "central_refine"):
            k = getattr(self, name)
            need(isinstance(k, int) and k >= 1 and math.isqrt(k) ** 2 == k,
                 f"{name} counts pieces of a square split and must be a perfect square, got {k}")
        need(self.lambda_scale > 1.0, "lambda_scale must exceed 1")
        need(0.0 < self.newton_seed_radius < min(self.R, self.r),
             "newton_seed_radius must be positive and smaller than both R and r")
        need(self.frame in ("linear", "original"), f"frame must be 'linear' or 'original', got {self.frame!r}")
        need(self.energy_tol > 0, "energy_tol must be positive")

    # ------------------------------------------------------------------
    @property
    def fiber_split(self) -> int:
        return math.isqrt(self.fiber_subdiv)

    @property
    def central_split(self) -> int:
        return math.isqrt(self.central_refine)

    def cache_path(self) -> Path:
        root = self.cache_dir or os.environ.get(CACHE_ENV) or os.path.join(os.path.expanduser("~"), ".cache", "cmcert")
        return Path(root) / f"phi_mu{self.mu.hex()}_N{self.nf_order}.txt"

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_toml(self) -> str:
        # TOML has no null; unset optional keys are omitted
        return tomli_w.dumps({k: v for k, v in self.to_dict().items() if v is not None})

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown configuration key(s): {', '.join(sorted(unknown))}")
        base = {}
        if d.get("preset"):
            base = preset(d["preset"]).to_dict()
        base.update(d)
        kw = {}
        for k, v in base.items():
            if v is None:
                kw[k] = None
                continue
            typ = known[k].type
            if typ in ("float",) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            kw[k] = v
        return cls(**kw)

    @classmethod
    def from_toml(cls, text: str) -> "RunConfig":
        try:
            d = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_toml(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_toml())


PRESETS = {
    "paper": dict(),
    "desk": dict(R=_action_radius(50e-4), v=_action_radius(50e-4) - _action_radius(45e-4),
                 cover_boxes=2000, boundary_boxes=100),
}


def preset(name: str) -> RunConfig:
    """Named parameter sets: ``paper`` (full domain) and ``desk`` (smaller disc, fewer boxes)."""
    try:
        kw = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return RunConfig(preset=name, **kw)
