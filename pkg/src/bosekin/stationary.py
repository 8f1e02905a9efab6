"""Stationary states of the kinetic equation from its conserved charges.

For pure nearest-neighbour hopping (eta = 0) the long-time states are generally
NOT thermal: they form the Bose-Einstein-like family

    W_st(k) = sum_sigma lambda_sigma(k) |sigma><sigma|,
    lambda_sigma(k) = 1 / (exp(f(k) - a_sigma) - 1),

with a real 1-periodic profile f obeying f(k) = -f(1/2 - k) (hence f(+-1/4) = 0)
and constants a_sigma < 0.  The parameters are fixed by the conserved charges
(h(k), eps_sigma) through a strictly convex variational problem: minimize

    G(f, a) = H(f, a) - sum_sigma (eps_sigma + 1/2) a_sigma + int_I h f dk,
    H(f, a) = int_I sum_sigma -log(cosh a_sigma - cosh f(k)) dk,   I = [-1/4, 1/4].

Stationarity of G reproduces the defining integral equations

    h(k) = sum_sigma -sinh f / (cosh a_sigma - cosh f),
    eps_sigma = int_T (exp(f - a_sigma) - 1)^{-1} dk,

exactly (the +1/2 offset pairs with |I| = 1/2 through the identity
BE(f-a) + BE(-f-a) = -1 - sinh a/(cosh a - cosh f)).  The integrand of H is even
under k -> 1/2 - k once f is extended antisymmetrically, so every I-integral is
evaluated as half the full-grid periodic trapezoid sum -- spectrally accurate and,
more importantly, it makes the discrete optimality conditions literally equal to
"model charges = target charges" in the same quadrature used by the observables
module.  Feasibility (cosh a > cosh f, a < 0) is an intrinsic log-barrier of H,
so a damped Newton iteration converges globally.

For eta != 0 only spin and energy survive and the stationary state is thermal,

    lambda_sigma(k) = 1 / (exp(beta (omega(k) - mu_sigma)) - 1),

with either temperature sign: beta > 0 needs mu_sigma below the band, beta < 0
(negative absolute temperature, reachable by the half-shift trick) needs
mu_sigma above it.  That solve is a nested bracketed root find: for given beta
each mu_sigma is monotone in the occupation constraint, and the remaining scalar
energy equation is bracketed and solved in beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .grid import BrillouinGrid, WignerField

__all__ = [
    "NonthermalProfile",
    "ThermalParams",
    "bose_occupation",
    "free_energy",
    "free_energy_gradient",
    "free_energy_hessian_form",
    "solve_nonthermal",
    "solve_thermal",
    "nonthermal_forward",
    "thermal_forward",
    "build_be_state",
]


def bose_occupation(x):
    """Bose-Einstein occupation 1/(e^x - 1) for x > 0 (elementwise)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise ValueError(f"Bose occupation needs positive argument, min was {x.min():.3e}")
    with np.errstate(over="ignore"):
        return 1.0 / np.expm1(x)


@dataclass
class NonthermalProfile:
    """Stationary-state parameters (f, a) for the nearest-neighbour chain.

    f_values: profile samples on the full grid, antisymmetric under k -> 1/2-k.
    a: the d constants a_sigma < 0 with |a_sigma| > max|f| (feasibility).
    basis: conserved-basis columns (identity if the charges were already diagonal).
    """

    f_values: np.ndarray
    a: np.ndarray
    basis: np.ndarray

    def validate(self, grid, tol=1e-9):
        f = self.f_values
        refl = grid.reflect_index(np.arange(grid.n_points))
        if np.max(np.abs(f + f[refl])) > tol:
            raise ValueError("profile is not antisymmetric under k -> 1/2 - k")
        if np.any(self.a >= 0.0) or np.min(np.abs(self.a)) <= np.max(np.abs(f)):
            raise ValueError("infeasible (f, a): need a_sigma < 0 and |a_sigma| > |f(k)|")


@dataclass
class ThermalParams:
    """Thermal parameters (beta, mu_sigma); beta of either sign, nonzero."""

    beta: float
    mu: np.ndarray
    basis: np.ndarray

    def validate(self, grid, disp):
        w = disp.omega(grid.points)
        args = self.beta * (w[:, None] - np.asarray(self.mu)[None, :])
        if self.beta == 0.0 or np.any(args <= 0.0):
            raise ValueError(
                "infeasible thermal parameters: need beta*(omega - mu) > 0 on the grid"
            )


# --- free energy -----------------------------------------------------------


def _feasible_d(f, a):
    """cosh a_sigma - cosh f_j as an (N, d) array; raises if not positive."""
    f = np.asarray(f, dtype=float)
    a = np.asarray(a, dtype=float)
    d = np.cosh(a)[None, :] - np.cosh(f)[:, None]
    if np.any(d <= 0.0):
        raise ValueError("infeasible (f, a): cosh a - cosh f must stay positive")
    return d


def free_energy(grid, f, a):
    """Value of H(f, a) = int_I sum_sigma -log(cosh a_sigma - cosh f) dk.

    f holds full-grid samples; the I-integral is half the periodic trapezoid sum
    over the whole zone (exact once f is extended antisymmetrically, because the
    integrand is even under the reflection).
    """
    d = _feasible_d(f, a)
    return float(-0.5 * grid.dk * np.sum(np.log(d)))


def free_energy_gradient(grid, f, a):
    """Gradient of the discretized H with respect to (f samples, a).

    Returns (grad_f, grad_a): grad_f[j] = dH/df_j = (dk/2) sum_sigma sinh f_j / D,
    grad_a[s] = dH/da_s = (dk/2) sum_j -sinh a_s / D.  Matches centered finite
    differences of free_energy.
    """
    d = _feasible_d(f, a)
    grad_f = 0.5 * grid.dk * np.sinh(np.asarray(f, dtype=float)) * np.sum(1.0 / d, axis=1)
    grad_a = 0.5 * grid.dk * np.sum(-np.sinh(np.asarray(a, dtype=float))[None, :] / d, axis=0)
    return grad_f, grad_a


def free_energy_hessian_form(grid, f, a, df, da):
    """Quadratic form of the exact Hessian of discretized H in direction (df, da).

    Assembled from the per-(k, sigma) 2x2 blocks of -log(cosh a - cosh f); the
    block eigenvalues are (cosh(a +- f) - 1)/D^2 > 0, so the form is positive for
    every feasible point and nonzero direction -- strict convexity.
    """
    f = np.asarray(f, dtype=float)
    a = np.asarray(a, dtype=float)
    df = np.asarray(df, dtype=float)
    da = np.asarray(da, dtype=float)
    d = _feasible_d(f, a)
    sf, ca, cf = np.sinh(f), np.cosh(a), np.cosh(f)
    sa = np.sinh(a)
    hff = (cf[:, None] * d + sf[:, None] ** 2) / d**2          # (N, d)
    haa = (-ca[None, :] * d + sa[None, :] ** 2) / d**2         # (N, d)
    hfa = -(sf[:, None] * sa[None, :]) / d**2                  # (N, d)
    w = 0.5 * grid.dk
    return float(
        w
        * np.sum(
            hff * df[:, None] ** 2
            + 2.0 * hfa * df[:, None] * da[None, :]
            + haa * da[None, :] ** 2
        )
    )


# --- forward maps (parameters -> charges) ------------------------------------


def nonthermal_forward(grid, f, a):
    """Charges generated by (f, a): pointwise h-profile and the occupations eps.

    h_model(k) = sum_sigma -sinh f/(cosh a_sigma - cosh f);
    eps_model[s] = dk * sum_j 1/(exp(f_j - a_s) - 1)  (full periodic trapezoid).
    """
    d = _feasible_d(f, a)
    h_model = np.sum(-np.sinh(np.asarray(f, dtype=float))[:, None] / d, axis=1)
    occ = bose_occupation(np.asarray(f, dtype=float)[:, None] - np.asarray(a, dtype=float)[None, :])
    eps_model = grid.dk * occ.sum(axis=0)
    return h_model, eps_model


def thermal_forward(grid, disp, beta, mu):
    """Occupation integrals (eps_model, energy_model) of thermal parameters."""
    w = disp.omega(grid.points)
    occ = bose_occupation(beta * (w[:, None] - np.asarray(mu, dtype=float)[None, :]))
    eps_model = grid.dk * occ.sum(axis=0)
    energy_model = float(grid.dk * np.sum(w[:, None] * occ))
    return eps_model, float(energy_model)


# --- nonthermal solve --------------------------------------------------------


def _interior_indices(grid):
    """Grid indices with k strictly inside (-1/4, 1/4): the free f unknowns."""
    n = grid.n_points
    return np.arange(n // 4 + 1, 3 * n // 4)


def _expand_profile(grid, f_int):
    """Full-grid antisymmetric profile from interior unknowns (f(+-1/4) = 0)."""
    n = grid.n_points
    f = np.zeros(n)
    f[_interior_indices(grid)] = f_int
    refl = grid.reflect_index(np.arange(n))
    outside = np.ones(n, dtype=bool)
    outside[_interior_indices(grid)] = False
    f[outside] = -f[refl[outside]]
    return f


def solve_nonthermal(grid, h, eps, basis=None, grad_tol=1e-11, max_iter=100):
    """Invert the charges (h, eps) into a NonthermalProfile by damped Newton.

    Minimizes the strictly convex objective G(f, a); at the minimum the model
    charges equal the targets exactly in the discrete quadrature.  The target h
    must be antisymmetric under k -> 1/2 - k (it is symmetrized against
    floating-point dust before use); every eps_sigma must be positive.
    """
    h = np.asarray(h, dtype=float)
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    n, d = grid.n_points, eps.size
    if np.any(eps <= 0.0):
        raise ValueError(f"every eps_sigma must be positive, got {eps}")
    refl = grid.reflect_index(np.arange(n))
    asym = np.max(np.abs(h + h[refl]))
    if asym > 1e-8 * max(1.0, np.max(np.abs(h))):
        raise ValueError(f"h-profile not antisymmetric under reflection (deviation {asym:.3e})")
    h = 0.5 * (h - h[refl])
    if basis is None:
        basis = np.eye(d, dtype=complex)

    interior = _interior_indices(grid)
    m = interior.size
    dk = grid.dk

    def objective(f_int, a):
        f = _expand_profile(grid, f_int)
        # G = H - sum (eps+1/2) a + int_I h f  (linear term as half-grid sum)
        return (
            free_energy(grid, f, a)
            - float(np.dot(eps + 0.5, a))
            + 0.5 * dk * float(np.dot(h, f))
        )

    def grad_and_hess(f_int, a):
        f = _expand_profile(grid, f_int)
        dd = _feasible_d(f, a)  # (N, d)
        sf, sa = np.sinh(f), np.sinh(a)
        cf, ca = np.cosh(f), np.cosh(a)
        # gradient: dG/df_m = dk (sum_s sinh f_m / D + h_m) on interior points,
        #           dG/da_s = eps_model_s - eps_s
        g_f = dk * (sf[interior] * np.sum(1.0 / dd[interior], axis=1) + h[interior])
        g_a = 0.5 * dk * np.sum(-sa[None, :] / dd, axis=0) - (eps + 0.5)
        grad = np.concatenate([g_f, g_a])
        # Hessian: f-f block diagonal (interior points are independent),
        # f-a rectangular, a-a diagonal
        hff = dk * np.sum((cf[interior, None] * dd[interior] + sf[interior, None] ** 2)
                          / dd[interior] ** 2, axis=1)
        hfa = dk * (-(sf[interior, None] * sa[None, :]) / dd[interior] ** 2)
        haa = 0.5 * dk * np.sum((-ca[None, :] * dd + sa[None, :] ** 2) / dd**2, axis=0)
        hess = np.zeros((m + d, m + d))
        hess[np.arange(m), np.arange(m)] = hff
        hess[:m, m:] = hfa
        hess[m:, :m] = hfa.T
        hess[m + np.arange(d), m + np.arange(d)] = haa
        return grad, hess

    def feasible(f_int, a):
        if np.any(a >= 0.0):
            return False
        return np.min(np.cosh(a)) - np.max(np.cosh(_expand_profile(grid, f_int))) > 0.0

    f_int = np.zeros(m)
    a = -np.log(1.0 + 1.0 / eps)
    val = objective(f_int, a)
    for _ in range(max_iter):
        grad, hess = grad_and_hess(f_int, a)
        gnorm = np.max(np.abs(grad))
        if gnorm <= grad_tol:
            break
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = -grad  # fall back to steepest descent near degeneracy
        t = 1.0
        decrement = float(np.dot(grad, step))
        for _ in range(60):
            f_try, a_try = f_int + t * step[:m], a + t * step[m:]
            if feasible(f_try, a_try):
                v_try = objective(f_try, a_try)
                if v_try <= val + 1e-4 * t * decrement:
                    f_int, a, val = f_try, a_try, v_try
                    break
            t *= 0.5
        else:
            raise RuntimeError(
                f"nonthermal solve stalled: no feasible decrease, |grad|={gnorm:.3e}"
            )
    else:
        raise RuntimeError(
            f"nonthermal solve did not converge in {max_iter} iterations, |grad|={gnorm:.3e}"
        )

    profile = NonthermalProfile(_expand_profile(grid, f_int), a, np.asarray(basis))
    profile.validate(grid)
    h_model, eps_model = nonthermal_forward(grid, profile.f_values, profile.a)
    res_h = np.max(np.abs(h_model - h))
    res_e = np.max(np.abs(eps_model - eps))
    if max(res_h, res_e) > 1e-8:
        raise RuntimeError(f"nonthermal residuals too large: h {res_h:.3e}, eps {res_e:.3e}")
    return profile


# --- thermal solve -----------------------------------------------------------


def _solve_mu(beta, eps_target, w_grid, dk):
    """Chemical potential matching one occupation integral at fixed beta."""
    w_min, w_max = float(w_grid.min()), float(w_grid.max())

    def occ(mu):
        with np.errstate(over="ignore"):
            return dk * np.sum(1.0 / np.expm1(beta * (w_grid - mu)))

    scale = max(1.0, abs(w_min), abs(w_max))
    if beta > 0.0:
        hi = w_min - 1e-13 * scale
        while occ(hi) < eps_target:  # pathological eps ~ 1e12; tighten toward the band
            hi = w_min - (w_min - hi) * 1e-3
        lo = w_min - 1.0
        while occ(lo) > eps_target:
            lo = w_min - 2.0 * (w_min - lo)
    else:
        lo = w_max + 1e-13 * scale
        while occ(lo) < eps_target:
            lo = w_max + (lo - w_max) * 1e-3
        hi = w_max + 1.0
        while occ(hi) > eps_target:
            hi = w_max + 2.0 * (hi - w_max)
    return brentq(lambda mu: occ(mu) - eps_target, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=300)


def solve_thermal(grid, disp, eps, energy, basis=None):
    """Thermal parameters (beta, mu_sigma) matching occupations and energy.

    The temperature sign branch is fixed by comparing the energy with the
    infinite-temperature value mean(omega) * sum(eps): below it only beta > 0
    can match (mu below the band), above it only beta < 0 (mu above the band).
    Each branch reduces to a bracketed scalar solve in beta with nested
    monotone mu solves.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if np.any(eps <= 0.0):
        raise ValueError(f"every eps_sigma must be positive, got {eps}")
    if basis is None:
        basis = np.eye(eps.size, dtype=complex)
    w = disp.omega(grid.points)
    dk = grid.dk
    w_min, w_max, w_mean = float(w.min()), float(w.max()), float(w.mean())
    e_inf = w_mean * float(eps.sum())
    e_lo, e_hi = w_min * float(eps.sum()), w_max * float(eps.sum())
    if not e_lo < energy < e_hi:
        raise ValueError(
            f"energy {energy:.6g} outside the reachable band "
            f"({e_lo:.6g}, {e_hi:.6g}) for total occupation {eps.sum():.6g}"
        )
    if energy == e_inf:
        raise ValueError("energy sits exactly at the infinite-temperature point; beta = 0")

    def energy_residual(beta):
        mus = [_solve_mu(beta, e, w, dk) for e in eps]
        with np.errstate(over="ignore"):
            occ = 1.0 / np.expm1(beta * (w[:, None] - np.asarray(mus)[None, :]))
        return float(dk * np.sum(w[:, None] * occ)) - energy, np.asarray(mus)

    sign = 1.0 if energy < e_inf else -1.0
    # bracket |beta|: residual -> (e_inf - energy) as |beta| -> 0, which has sign
    # `sign`; march outward until the residual flips
    b_lo = 1e-8
    r_lo, _ = energy_residual(sign * b_lo)
    if r_lo * sign <= 0.0:
        raise ValueError("energy too close to the infinite-temperature point to resolve beta")
    b_hi = 1.0
    for _ in range(80):
        r_hi, _ = energy_residual(sign * b_hi)
        if r_hi * sign < 0.0:
            break
        b_lo = b_hi
        b_hi *= 2.0
    else:
        raise RuntimeError("could not bracket beta; energy residual never changed sign")
    beta = sign * brentq(
        lambda b: energy_residual(sign * b)[0], b_lo, b_hi, xtol=1e-14, rtol=8.9e-16, maxiter=300
    )
    res, mus = energy_residual(beta)
    eps_model, _ = thermal_forward(grid, disp, beta, mus)
    res_eps = np.max(np.abs(eps_model - eps))
    if max(abs(res), res_eps) > 1e-10 * max(1.0, abs(energy)):
        raise RuntimeError(f"thermal residuals too large: energy {res:.3e}, eps {res_eps:.3e}")
    params = ThermalParams(float(beta), mus, np.asarray(basis))
    params.validate(grid, disp)
    return params


# --- state construction ------------------------------------------------------


def build_be_state(grid, params, disp=None):
    """Bose-Einstein-form Wigner field from stationary parameters.

    params is a NonthermalProfile (occupations 1/(e^{f - a_s} - 1)) or a
    ThermalParams (occupations 1/(e^{beta (omega - mu_s)} - 1), needs disp).
    W(k) = basis diag(lambda_s(k)) basis^dagger; PSD by construction.
    """
    if isinstance(params, NonthermalProfile):
        params.validate(grid)
        args = params.f_values[:, None] - params.a[None, :]
    elif isinstance(params, ThermalParams):
        if disp is None:
            raise ValueError("thermal construction needs the dispersion")
        params.validate(grid, disp)
        args = params.beta * (disp.omega(grid.points)[:, None] - params.mu[None, :])
    else:
        raise TypeError(f"unsupported stationary parameters {type(params)!r}")
    lam = bose_occupation(args)  # (N, d)
    b = np.asarray(params.basis, dtype=complex)
    vals = np.einsum("ab,jb,cb->jac", b, lam, b.conj())
    return WignerField(grid, vals)
