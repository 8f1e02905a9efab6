"""Shared fixtures and deterministic random-object helpers for the test suite.

Fixtures keep the expensive collision quadrature tables session-scoped so that
every test file reuses the same precomputed root data.  Helper functions build
reproducible random Hermitian/PSD matrices, special-unitary rotations, and
smooth positive matrix fields (band-limited Fourier series squared), which are
the standard probes for covariance, positivity, and dual-quadrature checks.
"""

import numpy as np
import pytest

from bosekin.collision import build_quadrature
from bosekin.grid import BrillouinGrid, Dispersion, PairPotential, WignerField


def random_hermitian(rng, d, scale=1.0):
    """A random Hermitian d x d matrix with entries of order ``scale``."""
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (g + g.conj().T)


def random_psd(rng, d, scale=1.0):
    """A random positive-semidefinite d x d matrix, O(scale) spectral norm."""
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (g @ g.conj().T) / d


def random_special_unitary(rng, d):
    """Haar-ish random U in SU(d) via QR of a complex Ginibre matrix."""
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(g)
    q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
    det = np.linalg.det(q)
    return q * det ** (-1.0 / d)


def random_smooth_field(grid, d=3, modes=3, seed=0, floor=0.05):
    """Smooth random PSD Wigner field: |band-limited Fourier series|^2 + floor.

    The construction W(k) = 0.25 M(k) M(k)^dag + floor * I with M a degree
    ``modes`` trigonometric polynomial guarantees positivity, smoothness, and
    exact reproducibility from the seed.
    """
    rng = np.random.default_rng(seed)
    k = grid.points
    m = np.zeros((grid.n_points, d, d), dtype=complex)
    for p in range(-modes, modes + 1):
        amp = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / (1.0 + abs(p)) ** 2
        m += np.exp(2j * np.pi * p * k)[:, None, None] * amp
    w = 0.25 * np.einsum("kab,kcb->kac", m, m.conj()) + floor * np.eye(d)
    return WignerField(grid, w, 0.0)


@pytest.fixture(scope="session")
def grid16():
    return BrillouinGrid(16)


@pytest.fixture(scope="session")
def grid32():
    return BrillouinGrid(32)


@pytest.fixture(scope="session")
def grid64():
    return BrillouinGrid(64)


@pytest.fixture(scope="session")
def disp0():
    return Dispersion(0.0)


@pytest.fixture(scope="session")
def disp_half():
    return Dispersion(0.5)


@pytest.fixture(scope="session")
def onsite():
    return PairPotential("onsite")


@pytest.fixture(scope="session")
def invcos():
    return PairPotential("inverse_cosine")


@pytest.fixture(scope="session")
def quad32_0(grid32, disp0):
    return build_quadrature(grid32, disp0)


@pytest.fixture(scope="session")
def quad32_half(grid32, disp_half):
    return build_quadrature(grid32, disp_half)


@pytest.fixture(scope="session")
def quad64_0(grid64, disp0):
    return build_quadrature(grid64, disp0)


@pytest.fixture(scope="session")
def quad64_half(grid64, disp_half):
    return build_quadrature(grid64, disp_half)
