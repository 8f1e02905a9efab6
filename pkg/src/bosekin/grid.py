"""Momentum grid, dispersion, interaction potentials and Hermitian matrix fields.

Everything in this package lives on the one-dimensional Brillouin zone, modelled as
the torus T = [-1/2, 1/2) with unit circumference.  The state of the chain is a
matrix-valued Wigner function W(k): for a chain with d = 2n+1 internal components,
W(k) is a d x d Hermitian positive semidefinite matrix attached to every momentum k.
W = 0 is the vacuum; eigenvalues of W(k) are occupation numbers of the momentum-k
modes in some k-dependent basis.

The uniform grid k_j = -1/2 + j/N supports three exact index symmetries that the
kinetic theory leans on heavily:

* negation        k -> -k
* half-shift      k -> k + 1/2     (maps the dispersion band bottom to the top)
* reflection      k -> 1/2 - k     (the symmetry axis of the nearest-neighbour band)

All three are permutations of the grid iff N is divisible by 4, which also puts the
quarter points +-1/4 (fixed points of the reflection) on the grid; the constructor
enforces this.

The single-particle dispersion is

    omega(k) = 1 - cos(2 pi k) - eta * cos(4 pi k),

a nearest-neighbour band (eta = 0) optionally perturbed by a next-nearest-neighbour
hop of relative strength eta.  Its mean over the zone is 1 for every eta.  The pair
interaction enters through the Fourier transform V(k) of the two-body potential;
supported shapes are the on-site (constant) potential, the inverse-cosine potential
1/(2 - cos 2 pi k), and an arbitrary tabulated strictly positive profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_torus(k):
    """Map momenta to the fundamental domain [-1/2, 1/2)."""
    return np.mod(np.asarray(k, dtype=float) + 0.5, 1.0) - 0.5


def hermitize(m):
    """Hermitian part (m + m^dagger)/2 along the last two axes."""
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


@dataclass(frozen=True)
class BrillouinGrid:
    """Uniform grid k_j = -1/2 + j/N on the torus, N divisible by 4.

    Attributes
    ----------
    n_points : int
        Number of grid points N.  Must be >= 8 and a multiple of 4 so that the
        negation, half-shift and reflection maps are exact grid permutations and
        the quarter points +-1/4 are grid points.
    """

    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 8 or n % 4 != 0:
            raise ValueError(
                f"grid size must be a multiple of 4 and >= 8, got {n}; "
                "the half-shift/reflection index maps are only exact then"
            )

    @property
    def dk(self):
        return 1.0 / self.n_points

    @property
    def points(self):
        """Grid momenta, shape (N,)."""
        return -0.5 + np.arange(self.n_points) / self.n_points

    # --- exact index maps -------------------------------------------------

    def negate_index(self, j):
        """Index permutation realizing k -> -k."""
        return (-np.asarray(j)) % self.n_points

    def shift_index(self, j):
        """Index permutation realizing k -> k + 1/2."""
        return (np.asarray(j) + self.n_points // 2) % self.n_points

    def reflect_index(self, j):
        """Index permutation realizing k -> 1/2 - k."""
        return (self.n_points // 2 - np.asarray(j)) % self.n_points

    def index_of(self, k, tol=1e-12):
        """Grid index of momentum k; raises if k is not a grid point."""
        j = np.rint((wrap_torus(k) + 0.5) * self.n_points).astype(int) % self.n_points
        if not np.allclose(wrap_torus(self.points[j] - k), 0.0, atol=tol):
            raise ValueError(f"momentum {k!r} is not on the grid")
        return j

    def interp_stencil(self, k):
        """Periodic linear-interpolation stencil for arbitrary momenta.

        Returns (j0, j1, t) with values interpolated as
        (1 - t) * f[j0] + t * f[j1], wrapping around the zone edge.
        """
        x = (np.asarray(k, dtype=float) + 0.5) * self.n_points
        j0 = np.floor(x).astype(int)
        t = x - j0
        j0 = j0 % self.n_points
        j1 = (j0 + 1) % self.n_points
        return j0, j1, t


@dataclass(frozen=True)
class Dispersion:
    """Band omega(k) = 1 - cos(2 pi k) - eta cos(4 pi k).

    The zone average is exactly 1 for every eta (both cosine harmonics integrate
    to zero).  For eta = 0 the band is [0, 2]; for eta = 1/2 it is [-1/2, 7/4]
    with the minimum at k = +-1/3; for small eta it is [-2 eta, 2 - 2 eta]
    ... in general the extrema move off the high-symmetry points once eta > 1/4.
    """

    eta: float = 0.0

    def omega(self, k):
        k = np.asarray(k, dtype=float)
        return 1.0 - np.cos(TWO_PI * k) - self.eta * np.cos(2.0 * TWO_PI * k)

    def omega_prime(self, k):
        k = np.asarray(k, dtype=float)
        return TWO_PI * np.sin(TWO_PI * k) + 2.0 * TWO_PI * self.eta * np.sin(2.0 * TWO_PI * k)

    def max_abs_slope(self, samples=4096):
        """max_k |omega'(k)| from a dense scan (used for default mollifier/PV widths)."""
        kk = -0.5 + np.arange(samples) / samples
        return float(np.max(np.abs(self.omega_prime(kk))))

    def band_range(self, samples=4096):
        """(min, max) of omega over a dense scan of the zone."""
        kk = -0.5 + np.arange(samples) / samples
        w = self.omega(kk)
        return float(w.min()), float(w.max())


class PairPotential:
    """Fourier transform V(k) of the pair interaction, strictly positive and even.

    Parameters
    ----------
    kind : str
        One of ``"onsite"`` (V = 1), ``"inverse_cosine"`` (V = 1/(2 - cos 2 pi k))
        or ``"table"`` (periodic linear interpolation through ``table`` sampled on
        a uniform grid over [-1/2, 1/2)).
    table : array_like, optional
        Samples for ``kind="table"``; must be strictly positive.  The profile is
        symmetrized (averaged with its negation image) because V is the transform
        of a real symmetric potential and the collision algebra uses V(-k) = V(k).
    """

    def __init__(self, kind="onsite", table=None):
        if kind not in ("onsite", "inverse_cosine", "table"):
            raise ValueError(f"unknown potential kind {kind!r}")
        self.kind = kind
        if kind == "table":
            if table is None:
                raise ValueError("tabulated potential needs sample values")
            v = np.asarray(table, dtype=float)
            if v.ndim != 1 or v.size < 4:
                raise ValueError("potential table must be a 1d array with >= 4 samples")
            if not np.all(v > 0.0):
                raise ValueError("potential table entries must be strictly positive")
            # enforce evenness: average with the k -> -k image on the sample grid
            self.table = 0.5 * (v + v[(-np.arange(v.size)) % v.size])
        else:
            if table is not None:
                raise ValueError(f"potential kind {kind!r} takes no table")
            self.table = None

    def __call__(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "onsite":
            return np.ones_like(k)
        if self.kind == "inverse_cosine":
            return 1.0 / (2.0 - np.cos(TWO_PI * k))
        v = self.table
        m = v.size
        x = (wrap_torus(k) + 0.5) * m
        j0 = np.floor(x).astype(int) % m
        t = x - np.floor(x)
        return (1.0 - t) * v[j0] + t * v[(j0 + 1) % m]


# --- matrix fields ---------------------------------------------------------


@dataclass
class WignerField:
    """Hermitian matrix field W(k_j) on a BrillouinGrid.

    values has shape (N, d, d) with d = 2n+1 odd; component index runs over the
    internal degree sigma = -n..n (array index a corresponds to sigma = a - n).
    """

    grid: BrillouinGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 3 or v.shape[0] != self.grid.n_points or v.shape[1] != v.shape[2]:
            raise ValueError(f"field values must have shape (N, d, d), got {v.shape}")
        if v.shape[1] % 2 == 0:
            raise ValueError(f"component dimension must be odd (d = 2n+1), got {v.shape[1]}")
        self.values = v

    @property
    def dim(self):
        return self.values.shape[1]

    def copy(self):
        return WignerField(self.grid, self.values.copy(), self.time)

    def hermitized(self):
        return WignerField(self.grid, hermitize(self.values), self.time)

    def min_eigenvalue(self):
        """Smallest eigenvalue over the whole grid (of the Hermitian part)."""
        return float(np.min(np.linalg.eigvalsh(hermitize(self.values))))

    def assert_valid(self, tol_herm=1e-10, tol_psd=1e-9):
        """Check Hermiticity and positive semidefiniteness within tolerances."""
        dev = np.max(np.abs(self.values - np.conj(np.swapaxes(self.values, 1, 2))))
        scale = max(1.0, float(np.max(np.abs(self.values))))
        if dev > tol_herm * scale:
            raise ValueError(f"field is not Hermitian: max deviation {dev:.3e}")
        lo = self.min_eigenvalue()
        if lo < -tol_psd:
            raise ValueError(f"field is not positive semidefinite: min eigenvalue {lo:.3e}")

    def interpolate(self, k):
        """Entrywise periodic linear interpolation; returns (..., d, d) Hermitian."""
        j0, j1, t = self.grid.interp_stencil(k)
        t = np.asarray(t)[..., None, None]
        return (1.0 - t) * self.values[j0] + t * self.values[j1]

    def shifted_half(self):
        """The field W(k + 1/2) (exact grid permutation)."""
        perm = self.grid.shift_index(np.arange(self.grid.n_points))
        return WignerField(self.grid, self.values[perm].copy(), self.time)

    def reflected(self):
        """The field W(1/2 - k) (exact grid permutation)."""
        perm = self.grid.reflect_index(np.arange(self.grid.n_points))
        return WignerField(self.grid, self.values[perm].copy(), self.time)


def hs_inner(a, b):
    """Hilbert-Schmidt inner product dk * sum_j Re tr[A(k_j)^dagger B(k_j)]."""
    if a.grid.n_points != b.grid.n_points:
        raise ValueError("fields live on different grids")
    return float(np.real(np.sum(np.conj(a.values) * b.values)) * a.grid.dk)


def hs_norm(a):
    return np.sqrt(max(hs_inner(a, a), 0.0))


def hs_distance(a, b):
    # formed on the difference (not by polarization, which loses half the
    # significant digits for nearby fields)
    if a.grid.n_points != b.grid.n_points:
        raise ValueError("fields live on different grids")
    return float(np.sqrt(np.sum(np.abs(a.values - b.values) ** 2) * a.grid.dk))


# --- spectral curves -------------------------------------------------------


@dataclass
class SpectralCurve:
    """Eigen-decomposition of a Wigner field along the grid.

    eigenvalues : (N, d), sorted descending at each k.
    eigenvectors : (N, d, d), columns matching the eigenvalue order, each column
        phase-fixed so its largest-magnitude entry is real positive.
    """

    grid: BrillouinGrid
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def eigendecompose(field):
    """Descending, phase-fixed eigen-decomposition of a WignerField.

    Ties inherit the deterministic LAPACK ordering before the descending flip,
    so repeated calls on identical input are bitwise reproducible.
    """
    w, v = np.linalg.eigh(hermitize(field.values))
    w = w[:, ::-1].copy()
    v = v[:, :, ::-1].copy()
    # phase fix: rotate each column so its largest-|.| entry is real positive
    idx = np.argmax(np.abs(v), axis=1)  # (N, d) entry index per column
    lead = np.take_along_axis(v, idx[:, None, :], axis=1)[:, 0, :]
    phase = np.where(np.abs(lead) > 0, lead / np.where(np.abs(lead) > 0, np.abs(lead), 1.0), 1.0)
    v = v / phase[:, None, :]
    return SpectralCurve(field.grid, w, v)


# --- initial data ----------------------------------------------------------

# default three-component profile: positive definite everywhere, one avoided
# crossing inside the coupled (sigma = -1, 0) block and one true crossing with
# the decoupled sigma = +1 component, and sum_s b_s cos phi_s > 0 so the
# half-shifted state sits above the band mean (negative-temperature regime).
DEFAULT_STATE = {
    "c": (0.8, 0.7, 0.6),
    "b": (0.5, 0.45, 0.35),
    "phi": (0.4, -0.9, 2.0),
    "rho": 0.25,
}


def build_initial_state(grid, n=1, c=None, b=None, phi=None, rho=None, tol_psd=1e-9):
    """Smooth positive-semidefinite matrix field used as the standard initial state.

    Diagonal occupations d_s(k) = c_s + b_s cos(2 pi k + phi_s) for each component
    s = -n..n, plus a coherence z(k) = rho * cos(2 pi k) * exp(2 pi i k) between
    the s = 0 and s = -1 components.  Requires c_s > |b_s| >= 0 pointwise
    positivity of the diagonal and checks full positive semidefiniteness of the
    result before returning.

    Parameters default to the frozen three-component profile in DEFAULT_STATE
    when n == 1; other n require explicit arrays of length 2n+1.
    """
    d = 2 * n + 1
    if c is None or b is None or phi is None:
        if n != 1:
            raise ValueError("no default profile for n != 1; pass c, b, phi explicitly")
        c = DEFAULT_STATE["c"] if c is None else c
        b = DEFAULT_STATE["b"] if b is None else b
        phi = DEFAULT_STATE["phi"] if phi is None else phi
    if rho is None:
        rho = DEFAULT_STATE["rho"] if n >= 1 else 0.0
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not (c.shape == b.shape == phi.shape == (d,)):
        raise ValueError(f"c, b, phi must each have length {d}")
    if np.any(c <= np.abs(b)):
        raise ValueError("need c_s > |b_s| for pointwise positive diagonals")

    k = grid.points
    w = np.zeros((grid.n_points, d, d), dtype=complex)
    for a in range(d):
        w[:, a, a] = c[a] + b[a] * np.cos(TWO_PI * k + phi[a])
    if d >= 2 and rho != 0.0:
        z = rho * np.cos(TWO_PI * k) * np.exp(1j * TWO_PI * k)
        w[:, n, n - 1] = z          # couples sigma = 0 to sigma = -1
        w[:, n - 1, n] = np.conj(z)
    out = WignerField(grid, w)
    lam = np.linalg.eigvalsh(out.values)
    j = int(np.argmin(lam[:, 0]))
    if lam[j, 0] < -tol_psd:
        raise ValueError(
            f"initial state is not positive semidefinite: "
            f"min eigenvalue {lam[j, 0]:.3e} at k = {k[j]:.6f}"
        )
    return out
