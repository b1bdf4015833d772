"""Rectangular node lattices on the box ``[-extent, extent]^2``."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Interior nodes of a Dirichlet box.

    The box ``[-extent, extent]^2`` is split into ``nx + 1`` by ``ny + 1``
    intervals; the ``nx * ny`` interior nodes carry the unknowns and the
    boundary nodes are implicit zeros.
    """

    nx: int
    ny: int
    extent: float

    def __post_init__(self):
        if int(self.nx) < 2 or int(self.ny) < 2:
            raise ValueError(f"grid needs at least 2x2 interior nodes, got {self.nx}x{self.ny}")
        if not self.extent > 0:
            raise ValueError(f"grid extent must be positive, got {self.extent}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "extent", float(self.extent))

    @classmethod
    def parse(cls, text):
        """Build from the CLI form ``"nx,ny,extent"``."""
        try:
            nx, ny, ext = text.split(",")
            return cls(int(nx), int(ny), float(ext))
        except ValueError as exc:
            raise ValueError(f"grid must look like 'nx,ny,extent', got {text!r}") from exc

    @property
    def spacing(self):
        return 2 * self.extent / (self.nx + 1), 2 * self.extent / (self.ny + 1)

    @property
    def shape(self):
        return self.nx, self.ny

    @property
    def x(self):
        return -self.extent + self.spacing[0] * np.arange(1, self.nx + 1)

    @property
    def y(self):
        return -self.extent + self.spacing[1] * np.arange(1, self.ny + 1)

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def points(self):
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])

    def refined(self):
        """Grid with the spacing halved on the same box."""
        return Grid(2 * self.nx + 1, 2 * self.ny + 1, self.extent)
