import math

import numpy as np
import pytest

from pauli_lab.measure import DensityGrid, SignedMeasure


def tripled_oracle(atoms=(), box_density=None, scale=1, span=8.0):
    """Max |mu| over tripled squares of ``scale``, enumerated over ``[-span, span]^2``.

    ``box_density`` is ``(value, x0, x1, y0, y1)`` for a uniform rectangle,
    integrated exactly by overlap area.
    """
    s = 2.0 ** -scale
    k = np.arange(math.floor(-span / s) - 2, math.ceil(span / s) + 2)
    c = s * (k + 0.5)
    lo, hi = c - 1.5 * s, c + 1.5 * s
    best = 0.0
    atoms = np.asarray(atoms, dtype=float).reshape(-1, 3)
    ix = (lo[:, None] <= atoms[None, :, 0]) & (atoms[None, :, 0] < hi[:, None])
    iy = (lo[:, None] <= atoms[None, :, 1]) & (atoms[None, :, 1] < hi[:, None])
    w = 2 * math.pi * np.abs(atoms[:, 2])
    mass = np.einsum("an,bn,n->ab", ix.astype(float), iy.astype(float), w)
    if box_density is not None:
        v, x0, x1, y0, y1 = box_density
        ox = np.clip(np.minimum(hi, x1) - np.maximum(lo, x0), 0, None)
        oy = np.clip(np.minimum(hi, y1) - np.maximum(lo, y0), 0, None)
        mass = mass + abs(v) * np.outer(ox, oy)
    best = float(mass.max())
    return best


def oracle_scale(eps, **kw):
    for L in range(1, 25):
        if tripled_oracle(scale=L, **kw) < 2 * math.pi * (1 - eps):
            return L
    raise AssertionError("no light scale")


@pytest.fixture
def uniform_square():
    n = 64
    return SignedMeasure(density=DensityGrid((0.0, 0.0), (1 / n, 1 / n), np.full((n, n), 20 * math.pi)))


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)
