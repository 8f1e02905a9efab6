"""Conserved charges, entropy, entropy production and decay-rate fits.

The kinetic equation conserves, for every dispersion,

* the spin matrix        int_T W(k) dk                (a d x d Hermitian PSD matrix),
* the total energy       int_T omega(k) tr[W(k)] dk,

and, for pure nearest-neighbour hopping (eta = 0), additionally the profile

    h(k) = tr[W(k)] - tr[W(1/2 - k)]

pointwise in k.  The eigenvalues eps_sigma of the spin matrix and its eigenbasis
|sigma> are constants of motion; the basis is the one in which the state
eventually becomes diagonal, so the Hilbert-Schmidt norm of the off-diagonal
part of W in that fixed basis is the natural decay diagnostic.

The bosonic entropy is

    S[W] = int_T dk ( tr[(1+W) log(1+W)] - tr[W log W] ),

with entropy production sigma[W] = dS/dt = int_T dk tr[(log(1+W) - log W) C[W]];
the H-theorem guarantees sigma >= 0 for PSD states, which the test-suite checks
at the discrete level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import WignerField, hermitize


@dataclass
class ConservedCharges:
    """Charges of a Wigner field: spin matrix, its spectrum/basis, energy, h-profile.

    eps holds the eigenvalues of spin_matrix in descending order; basis columns are
    the matching eigenvectors (the conserved basis), phase-fixed like eigendecompose.
    h_profile is stored on the full grid although only |k| <= 1/4 is independent;
    the redundancy makes the antisymmetry h(1/2-k) = -h(k) a self-test.
    """

    spin_matrix: np.ndarray
    eps: np.ndarray
    basis: np.ndarray
    energy: float
    h_profile: np.ndarray


def charges(field, disp):
    """Conserved charges of a field under the given dispersion.

    Uniform-grid trapezoid quadrature (exact for trigonometric polynomials of
    degree < N) of the spin matrix, energy and h-profile; the conserved basis
    comes from the eigendecomposition of the spin matrix.
    """
    v = hermitize(field.values)
    dk = field.grid.dk
    spin = v.sum(axis=0) * dk
    spin = 0.5 * (spin + spin.conj().T)
    tr = np.real(np.trace(v, axis1=1, axis2=2))
    energy = float(np.sum(disp.omega(field.grid.points) * tr) * dk)
    refl = field.grid.reflect_index(np.arange(field.grid.n_points))
    h = tr - tr[refl]
    eps, basis = np.linalg.eigh(spin)
    eps = eps[::-1].copy()
    basis = basis[:, ::-1].copy()
    idx = np.argmax(np.abs(basis), axis=0)
    lead = basis[idx, np.arange(basis.shape[1])]
    phase = np.where(np.abs(lead) > 0, lead / np.where(np.abs(lead) > 0, np.abs(lead), 1.0), 1.0)
    basis = basis / phase[None, :]
    return ConservedCharges(spin, eps, basis, energy, h)


def entropy(field, tol_psd=1e-9):
    """Bosonic entropy S[W]; eigenvalues in [-tol_psd, 0) are clipped to 0.

    Raises if any eigenvalue sits below -tol_psd (the state left the cone).
    """
    lam = np.linalg.eigvalsh(hermitize(field.values))
    lo = float(lam.min())
    if lo < -tol_psd:
        raise ValueError(f"entropy of a non-PSD field: min eigenvalue {lo:.3e} < -{tol_psd:.1e}")
    lam = np.maximum(lam, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(lam > 0.0, lam * np.log(np.where(lam > 0.0, lam, 1.0)), 0.0)
    val = (1.0 + lam) * np.log1p(lam) - xlogx
    return float(val.sum() * field.grid.dk)


def entropy_production(field, collision, lam_floor=1e-12, tol_psd=1e-9, mollify=False):
    """Entropy production sigma = dk * sum_j tr[(log(1+W_j) - log W_j) C_j].

    Parameters
    ----------
    field : WignerField
        Current state; needs strictly positive eigenvalues (>= lam_floor) unless
        ``mollify`` is set, in which case eigenvalues are shifted by lam_floor.
    collision : WignerField or ndarray
        The collision operator evaluated at ``field`` (shape (N, d, d)).
    """
    c = collision.values if isinstance(collision, WignerField) else np.asarray(collision)
    lam, vec = np.linalg.eigh(hermitize(field.values))
    lo = float(lam.min())
    if lo < -tol_psd:
        raise ValueError(f"entropy production of a non-PSD field: min eigenvalue {lo:.3e}")
    if mollify:
        lam = np.maximum(lam, 0.0) + lam_floor
    elif lo < lam_floor:
        raise ValueError(
            f"eigenvalue {lo:.3e} below lam_floor={lam_floor:.1e}: log(W) diverges; "
            "call with mollify=True for the shifted-spectrum variant"
        )
    phi = np.log1p(lam) - np.log(lam)
    big_phi = np.einsum("jab,jb,jcb->jac", vec, phi, vec.conj())
    return float(np.real(np.einsum("jab,jba->", big_phi, c)) * field.grid.dk)


def offdiag_norm(field, basis):
    """HS norm of the off-diagonal part of W expressed in the conserved basis."""
    rotated = np.einsum("ab,jbc,cd->jad", basis.conj().T, field.values, basis)
    n = rotated.shape[1]
    mask = ~np.eye(n, dtype=bool)
    off = rotated[:, mask]
    return float(np.sqrt(np.sum(np.abs(off) ** 2) * field.grid.dk))


def fit_decay_rate(times, values, window=None, min_samples=10):
    """Exponential decay rate from a least-squares line through log(value) vs t.

    Returns (rate, r_squared) with rate = -slope.  A constant series gives
    (0.0, 0.0).  Raises on nonpositive values or fewer than ``min_samples``
    points inside the fit window.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, v = t[sel], v[sel]
    if t.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples in the fit window, got {t.size}")
    if np.any(v <= 0.0):
        raise ValueError("decay fit requires strictly positive values")
    y = np.log(v)
    t0 = t - t.mean()
    y0 = y - y.mean()
    var_t = float(np.dot(t0, t0))
    var_y = float(np.dot(y0, y0))
    if var_t == 0.0:
        raise ValueError("degenerate fit window: all times equal")
    slope = float(np.dot(t0, y0)) / var_t
    # constant series up to rounding of the mean subtraction -> no decay signal
    tiny = (np.finfo(float).eps * max(1.0, float(np.max(np.abs(y))))) ** 2 * y.size
    if var_y <= tiny:
        return 0.0, 0.0
    ss_res = float(np.sum((y0 - slope * t0) ** 2))
    r2 = 1.0 - ss_res / var_y
    return -slope, r2
