"""Shared model builders for the test suite."""

import numpy as np
import pytest

from rspde.coefficients import make_coefficients
from rspde.fields import Field, SpatialGrid
from rspde.geometry import Ball, ObliqueField


def interval_domain(radius: float) -> Ball:
    """Symmetric interval [-radius, radius] as a 1-d ball."""
    return Ball(center=[0.0], radius=radius)


def free_domain() -> Ball:
    """A domain so large the reflection penalty never activates."""
    return Ball(center=[0.0], radius=100.0)


def normal_gamma(domain) -> ObliqueField:
    return ObliqueField(domain, "normal")


def heat_coeffs(d: int = 1, m: int = 1):
    return make_coefficients(d, m, b={"name": "zero"}, sigma={"name": "zero"})


def forced_coeffs(d: int = 1, m: int = 1, s: float = 1.0, c: float = 0.0):
    """Constant drift c (first component) and constant diffusion s."""
    b = ({"name": "zero"} if c == 0.0
         else {"name": "constant", "value": [c] + [0.0] * (d - 1)})
    mat = np.zeros((d, m))
    mat[0, 0] = s
    return make_coefficients(d, m, b=b, sigma={"name": "constant", "matrix": mat.tolist()})


def sine_start(J: int, amplitude: float = 1.0, d: int = 1) -> Field:
    grid = SpatialGrid(J=J, d=d)
    vals = np.zeros((d, J))
    vals[0] = amplitude * np.sin(np.pi * grid.xs)
    return Field(grid, vals)


def zero_start(J: int, d: int = 1) -> Field:
    return Field.zeros(SpatialGrid(J=J, d=d))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20260823))
