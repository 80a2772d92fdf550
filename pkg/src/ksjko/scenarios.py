"""Initial-data presets and the built-in scenario library."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import DensityField, GridSpec
from .jko import W2StepConfig
from .model import ModelParams
from .potentials import ReactionSpec
from .scheme import SchemeConfig

PRESETS = ("uniform", "bump", "two_bumps", "perturbed_uniform")


def _gauss(grid: GridSpec, center, width):
    r2 = sum((x - c) ** 2 for x, c in zip(grid.mesh(), center))
    return np.exp(-r2 / (2 * width**2))


def uniform(grid: GridSpec, value: float = 1.0) -> DensityField:
    return DensityField.constant(grid, value)


def bump(grid: GridSpec, center=None, width: float = 0.2, height: float = 1.0,
         floor: float = 0.1) -> DensityField:
    """``floor + height * exp(-|x - center|^2 / (2 width^2))``.

    ``center`` and ``width`` are fractions of the box lengths. The default
    centre sits off the midpoint so odd cosine modes are present.
    """
    center = (0.3,) + (0.5,) * (grid.dim - 1) if center is None else tuple(np.atleast_1d(center))
    center = tuple(c * L for c, L in zip(center, grid.lengths))
    w = width * grid.lengths[0]
    return DensityField(grid, floor + height * _gauss(grid, center, w))


def two_bumps(grid: GridSpec, width: float = 0.05, height: float = 1.0, floor: float = 0.1,
              separation: float = 0.4) -> DensityField:
    L = grid.lengths
    w = width * L[0]
    c1 = (0.5 * L[0] - 0.5 * separation * L[0],) + tuple(0.5 * l for l in L[1:])
    c2 = (0.5 * L[0] + 0.5 * separation * L[0],) + tuple(0.5 * l for l in L[1:])
    return DensityField(grid, floor + height * (_gauss(grid, c1, w) + _gauss(grid, c2, w)))


def perturbed_uniform(grid: GridSpec, base: float = 1.0, amplitude: float = 0.05,
                      mode: int = 1) -> DensityField:
    """``base * (1 + a * prod_i cos(k pi x_i / L_i))``, which satisfies the no-flux condition."""
    if not abs(amplitude) < 1:
        raise ValueError("amplitude must be below 1 in magnitude to keep the density positive")
    pat = np.ones(grid.shape)
    for x, L in zip(grid.mesh(), grid.lengths):
        pat = pat * np.cos(mode * np.pi * x / L)
    return DensityField(grid, base * (1 + amplitude * pat))


def make_initial(name: str, grid: GridSpec, reaction: ReactionSpec | None = None, **params) -> DensityField:
    """Build a preset. ``uniform`` and ``perturbed_uniform`` default to the carrying capacity."""
    s_star = reaction.s_star if reaction is not None and reaction.alpha > 0 else 1.0
    if name == "uniform":
        params.setdefault("value", s_star)
        return uniform(grid, **params)
    if name == "perturbed_uniform":
        params.setdefault("base", s_star)
        return perturbed_uniform(grid, **params)
    if name == "bump":
        return bump(grid, **params)
    if name == "two_bumps":
        return two_bumps(grid, **params)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


@dataclass(frozen=True)
class Scenario:
    name: str
    model: ModelParams
    preset: str
    tau: float
    T_final: float
    backend: str = "quantile_1d"
    params: dict = field(default_factory=dict)

    def initial(self) -> DensityField:
        return make_initial(self.preset, self.model.grid, self.model.reaction, **self.params)

    def config(self, **kw) -> SchemeConfig:
        return SchemeConfig(self.model, self.tau, self.T_final, W2StepConfig(self.backend, self.tau), **kw)


def library(cells: int = 64) -> dict[str, Scenario]:
    """Small shipped scenarios, cheap enough for the validation suites."""
    g = GridSpec.interval(1.0, cells)
    logistic = ReactionSpec(1.0, 1.0, 2.0)
    weak = ReactionSpec(0.0, 1e-3, 2.0)
    return {
        "steady": Scenario("steady", ModelParams(g, chi=0.5, reaction=logistic), "uniform", 0.01, 0.1),
        "logistic": Scenario("logistic", ModelParams(g, reaction=logistic), "uniform", 0.05, 1.0,
                             params={"value": 0.5}),
        "bump": Scenario("bump", ModelParams(g, reaction=weak), "bump", 0.005, 0.1),
        "two_bumps_chemo": Scenario("two_bumps_chemo", ModelParams(g, chi=0.25, reaction=logistic),
                                    "two_bumps", 0.005, 0.05),
        "perturbed": Scenario("perturbed", ModelParams(g, chi=0.5, reaction=logistic),
                              "perturbed_uniform", 0.01, 0.2, params={"amplitude": 0.1, "mode": 2}),
    }
