"""Model parameters and the two energies of the splitting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import elliptic
from .elliptic import EllipticConfig
from .fields import DensityField, GridSpec, ScalarField
from .potentials import EntropySpec, ReactionSpec


@dataclass(frozen=True)
class ModelParams:
    """Domain, chemotactic sensitivity chi, elliptic closure and the (U, F) pair."""

    grid: GridSpec
    chi: float = 0.0
    elliptic: EllipticConfig = field(default_factory=EllipticConfig)
    entropy: EntropySpec = field(default_factory=EntropySpec)
    reaction: ReactionSpec = field(default_factory=lambda: ReactionSpec(1.0, 1.0, 2.0))

    def __post_init__(self):
        if not self.chi >= 0:
            raise ValueError(f"chi must be nonnegative (got {self.chi})")

    @property
    def Lambda(self) -> float:
        return self.elliptic.Lambda

    def c_of(self, rho: DensityField | ScalarField) -> ScalarField:
        return elliptic.solve(rho, self.elliptic)

    def E1(self, rho: DensityField, c: ScalarField | None = None) -> float:
        """``int U(rho) - chi/2 int c[rho] rho``.

        For the screened Neumann problem ``int (Lambda c^2 + |grad c|^2) = int c rho``,
        so the field energy is written through the source pairing, which is also
        exact for the discrete operator.
        """
        w = self.grid.cell_measure
        val = float(np.sum(self.entropy.U(rho.values)) * w)
        if self.chi:
            c = self.c_of(rho) if c is None else c
            val -= 0.5 * self.chi * float(np.sum(c.values * rho.values)) * w
        return val

    def E2(self, rho: DensityField) -> float:
        return float(np.sum(self.reaction.F(rho.values)) * self.grid.cell_measure)
