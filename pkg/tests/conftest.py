"""Shared fixtures: one small velocity grid + assembled operators.

The n=9 grid is deliberately coarse so the whole module-test suite runs
in seconds; quantitative bars at production resolution live in
test_acceptance.py.
"""

import numpy as np
import pytest

from bfd.velocity import build_grid, build_sphere_quadrature
from bfd.equilibrium import moment_constants
from bfd.collision import CollisionKernelCache, assemble_L_matrix


@pytest.fixture(scope="session")
def grid9():
    return build_grid(8.0, 9)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_quadrature(3)


@pytest.fixture(scope="session")
def constants9(grid9):
    return moment_constants(grid9)


@pytest.fixture(scope="session")
def kernel9(grid9, sphere3):
    return CollisionKernelCache(grid9, sphere3, prune_tol=1e-6,
                                scheme="linear")


@pytest.fixture(scope="session")
def L9(grid9, sphere3):
    """Canonical (symmetrized, null-projected) linearized operator."""
    return assemble_L_matrix(grid9, sphere3, scheme="linear",
                             prune_tol=1e-6, keep_raw=True)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
