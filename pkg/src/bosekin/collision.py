"""Collision operators of the kinetic equation: dissipative and Vlasov parts.

The right-hand side of the kinetic equation splits as C[W] = C_c[W] + C_d[W].
Both parts integrate a matrix-valued function of the quadruple
(W_1, W_2, W_3, W_4) = (W(k_1), ..., W(k_4)) over the momentum shell
k_bar = k_1 - k_2 + k_3 - k_4 = 0 (mod 1); the dissipative part additionally
carries the energy shell omega_bar = omega_1 - omega_2 + omega_3 - omega_4 = 0:

    C_d[W](k_1) = pi * int dk_2 dk_3  delta(omega_bar) (A + A^dagger)(k_1..k_4),
    C_c[W](k_1) = -i  * int dk_2 dk_3  P(1/omega_bar) (A - A^dagger)(k_1..k_4),

with k_4 = k_1 - k_2 + k_3 wrapped to the zone, W~ = 1 + W, and

    A        = V23 V34 W4 W~3 W2 + V34^2 W4 tr[W2 W~3]
               + W1 ( V23 V34 (W2 W~4 - W3 W~4 - W2 W~3)
                      + V34^2 (W~4 tr[W2 - W3] - tr[W2 W~3]) ),
    A_quad   = V23 V34 ( W~1 W2 W~3 W4 + W4 W~3 W2 W~1
                         - W1 W~2 W3 W~4 - W~4 W3 W~2 W1 ),
    A_tr     = V34^2 ( (W~1 W2 + W2 W~1) tr[W~3 W4]
                       - (W1 W~2 + W~2 W1) tr[W3 W~4] ).

V denotes the interaction potential transform; on the momentum shell
V34 = V(k_3 - k_4) = V(k_2 - k_1) exactly, which is how the potential is
evaluated at resolved off-grid momenta.

A_quad + A_tr is a rearrangement of A + A^dagger based on the swap
k_2 <-> k_4 (which exchanges V23 and V34 and leaves the shell measure
invariant).  It reproduces A + A^dagger only in restricted settings:
pointwise for commuting (scalar) fields with any potential, and summed over
swap-closed quadrature measures for CONSTANT potentials.  For momentum-
dependent potentials the two differ -- even after swap-averaging -- by a
matrix exactly proportional to V23^2 - V34^2 with nonzero trace, so they are
different operators there.  Both quadrature modes below therefore integrate
the defining combination A + A^dagger.  It is also the only form that works
at resolved roots: A + A^dagger vanishes identically on the forward-
scattering solutions k_3 = k_2 (hence k_4 = k_1), which solve both shell
constraints for every dispersion, whereas A_quad + A_tr stays finite on
them, and those solutions run tangent to genuine crossings (their |g'|
vanishes wherever omega'(k_2) = omega'(k_1)), so only A + A^dagger gives an
absolutely integrable co-area density.  The forward-scattering roots are
pruned from the deposit plan outright (their integrand, and all four of its
relabelings, vanish algebraically).  The rearranged pair is kept as public
evaluators for algebra cross-checks.

Energy-shell quadrature comes in two independent modes.

* Root-resolved (production): for every ordered grid pair (k_1, k_2) the roots
  k_3* of g(k_3) = omega_bar are located by sign-change bracketing on a fine
  scan (8N subintervals) plus bisection, and the delta collapses by the co-area
  formula to weights 1/|g'(k_3*)|.  For pure nearest-neighbour hopping the root
  set is analytic -- g factorizes as
  4 sin(pi(k1-k2)) cos(pi(k1+k3)) sin(pi(k2-k3)), giving the two branches
  k_3 = k_2 and k_3 = 1/2 - k_1 with equal slopes
  |g'| = 2 pi |sin 2 pi k_2 - sin 2 pi k_1| -- and located roots are snapped to
  it, which makes every node an exact grid quadruple.

* Mollified (cross-check): delta(omega_bar) -> exp(-x^2/eps^2)/(eps sqrt(pi))
  on the full (k_2, k_3) grid with eps = c_moll * dk * max|omega'|.  O(N^3)
  cost; kept as an independent check of the root-resolved mode.  At the
  resolution the default width affords, the dominant error is the Gaussian
  smearing of square-root cusps in the co-area density (band-edge folds),
  which decays only like sqrt(eps).  For quantitative cross-mode comparisons
  the k_3 lattice can be subdivided moll_refine-fold (interpolating W on the
  fine lattice; eps shrinks with the fine spacing, keeping the sum alias-free
  because the lattice sum's aliasing error is exponentially small in
  (eps / cell energy spread)^2), and moll_strip excludes the degenerate rows
  |k_2 - k_1| < strip * dk so that both modes cut the zero-momentum-transfer
  exchange channel at the same scale.

Conservative assembly.  The collision measure and the integrand share a
four-group relabeling symmetry: under t1 = (12)(34), t2 = (13)(24) and
t3 = t1 t2 the shell is invariant, and the relabeled integrands sum to zero
algebraically, F + F∘t1 + F∘t2 + F∘t3 = 0 for F = A + A^dagger -- an identity
of matrix products valid for ARBITRARY Hermitian arguments once the two
on-shell potential ties V14 = V23 and V12 = V34 are used.  A naive assembly
at k_1 only realizes the t1 pairing on the discrete node set -- t2 maps a node
(k_1, k_2, k_3*, k_4*) to a quadruple whose first leg k_3* is off-grid -- and
its traceless spin residual is then limited by non-convergent O(sqrt(dk))
boundary layers at shell tangencies.  Instead, each node deposits all four
relabeled integrand values at their own momentum slots (exact index for the
grid legs k_1, k_2; 4-point cubic-Lagrange spreading for the resolved legs
k_3*, k_4*), each with weight pi dk w / 4.  Summing the deposited field over
the grid then cancels node-by-node to rounding, so the spin matrix is
conserved exactly for every dispersion, and the energy residual is governed by
the cubic reproduction error of omega at the resolved legs, O(dk^4).  The four
variants share their gain/loss building blocks, costing 20 batched
matmuls/node instead of 24.  Table rows (k_1, k_2) and (k_2, k_1) are
t1-partners whose four-slot deposits coincide slot-by-slot (the partner pair
resolves the same orbit with k_3 and k_4 exchanged and equal |g'|), so the
plan keeps one row per orbit (i_1 < i_2) at twice the weight; the gain
diagnostic then deposits its first two relabeled values to serve both grid
legs.  For the nearest-neighbour model all surviving
legs are exact grid points and the scheme coincides with the naive assembly
while conserving the reflection profile pointwise to rounding.

The diagonal k_2 = k_1 forces k_4 = k_3, where omega_bar vanishes identically
(every dispersion), so no isolated k_3 roots exist.  The root scan skips that
line; the mollified sum includes it, where it carries the spin-exchange
collisions with zero momentum transfer (A + A^dagger does not vanish there,
though detailed balance still annihilates it on the stationary family).

Roots with |g'| below g_min are near-tangential (band-edge) crossings where the
co-area weight is non-integrable; they are dropped and tallied.  This also
silently removes the measure-zero branch-crossing line k_2 = 1/2 - k_1 of the
nearest-neighbour model, whose double root carries |g'| = 0.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .grid import WignerField, hermitize, wrap_torus

__all__ = [
    "CollisionConfig",
    "CollisionQuadrature",
    "DegenerateLineError",
    "resolve_energy_delta",
    "build_quadrature",
    "eval_A_quad",
    "eval_A_tr",
    "eval_gain_term",
    "eval_Cd",
    "eval_Cc",
    "eval_C",
    "quadrature_cache_key",
    "save_quadrature",
    "load_quadrature",
    "build_or_load_quadrature",
]


class DegenerateLineError(ValueError):
    """Raised for the k2 = k1 line where the energy mismatch vanishes identically."""


@dataclass
class CollisionConfig:
    """Numerical knobs of the collision evaluation.

    mode: "roots" (co-area weights) or "mollified" (Gaussian delta on the grid).
    tol_root: accepted |g| at a resolved root.
    g_min: minimum |g'|; roots below are dropped (weight would not be integrable).
    c_moll: mollifier width in units of dk * max|omega'|.
    moll_refine: k3-lattice subdivision factor for the mollified sum (the
        width is then measured against the fine spacing).
    moll_strip: mollified sum skips k2 rows with wrap distance < strip cells
        from k1 (strip=1 removes exactly the degenerate row k2 = k1).
    eps_pv: principal-value regularization width; None -> 4 dk max|omega'|.
    include_vlasov: add C_c to eval_C.
    threads: worker threads for the O(N^3) loops (k1-chunked, deterministic).
    """

    mode: str = "roots"
    tol_root: float = 1e-12
    g_min: float = 1e-6
    c_moll: float = 2.0
    moll_refine: int = 1
    moll_strip: int = 0
    eps_pv: float | None = None
    include_vlasov: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("roots", "mollified"):
            raise ValueError(f"unknown collision mode {self.mode!r}")
        if self.tol_root <= 0 or self.g_min <= 0 or self.c_moll <= 0:
            raise ValueError("tolerances must be positive")
        if self.eps_pv is not None and self.eps_pv <= 0:
            raise ValueError("eps_pv must be positive")
        if int(self.moll_refine) < 1:
            raise ValueError("moll_refine must be a positive integer")
        if int(self.moll_strip) < 0:
            raise ValueError("moll_strip must be a non-negative integer")


@dataclass
class CollisionQuadrature:
    """Resolved energy-shell roots for all ordered grid pairs (k1, k2), k2 != k1.

    Flat arrays sorted by (i1, i2, k3): pair indices, root momenta and signed
    slopes g'(k3*).  Weights 1/|g'| are formed at evaluation time after the
    g_min cut, so one table serves every g_min.  n_dropped_tol counts scan
    brackets whose bisection failed the |g| <= tol_root acceptance.
    """

    n_points: int
    eta: float
    tol_root: float
    i1: np.ndarray
    i2: np.ndarray
    k3: np.ndarray
    gprime: np.ndarray
    n_dropped_tol: int = 0
    _selection_cache: dict = field(default_factory=dict, repr=False)

    def select(self, g_min):
        """Boolean mask of the nodes passing the g_min cut (cached per value)."""
        key = ("mask", float(g_min))
        if key not in self._selection_cache:
            self._selection_cache[key] = np.abs(self.gprime) >= g_min
        return self._selection_cache[key]

    def node_count(self, g_min=0.0):
        return int(np.count_nonzero(np.abs(self.gprime) >= g_min))

    def deposit_plan(self, grid, g_min):
        """State-independent scatter/gather plan for the conservative assembly.

        Cached per g_min: node data after the cuts (g_min, forward roots,
        one row per (12)(34) orbit), cubic gather stencils for the two
        resolved legs, and sparse deposit operators mapping stacked relabeled
        integrand values (4M of them, relabeling-major) and gain values (2M)
        onto the grid, with pi dk w / 2 (resp. pi dk w) folded into the
        matrix entries.
        """
        if grid.n_points != self.n_points:
            raise ValueError("quadrature table was built for a different grid")
        key = ("plan", float(g_min))
        if key not in self._selection_cache:
            keep = self.select(g_min)
            i1 = self.i1[keep].astype(np.intp)
            i2 = self.i2[keep].astype(np.intp)
            k3 = self.k3[keep]
            wgt = 1.0 / np.abs(self.gprime[keep])
            # forward-scattering roots k3 = k2 contribute nothing: the
            # integrand and all four relabelings vanish algebraically there
            live = np.abs(wrap_torus(k3 - grid.points[i2])) > 1e-9
            # rows (i1, i2) and (i2, i1) are (12)(34)-partners carrying the
            # same orbit: the four-slot deposit below already realizes the
            # partner's contributions, so keep one row per orbit at double
            # weight (the gain diagnostic deposits its first two relabelings
            # to cover both k1 slots)
            live &= i1 < i2
            i1, i2, k3, wgt = i1[live], i2[live], k3[live], wgt[live]
            m = i1.size
            if m == 0:
                raise RuntimeError("empty quadrature: every root fell below g_min")
            pts = grid.points
            k4 = wrap_torus(pts[i1] - pts[i2] + k3)
            j3, phi3 = _cubic_stencil(grid, k3)
            j4, phi4 = _cubic_stencil(grid, k4)
            n = self.n_points
            coef = 0.5 * np.pi * grid.dk * wgt
            gain_data = np.pi * grid.dk * wgt
            # fixed node chunks (independent of thread count, so results are
            # bitwise identical for any --threads): each chunk carries its own
            # deposit operator and the partial outputs are summed in order
            n_chunks = max(1, min(8, m // 2048))
            edges = np.linspace(0, m, n_chunks + 1).astype(int)
            chunks = []
            for a, b in zip(edges[:-1], edges[1:]):
                mc = b - a
                loc = np.arange(mc)
                rows = np.concatenate(
                    [i1[a:b], i2[a:b], j3[:, a:b].ravel(), j4[:, a:b].ravel()]
                )
                cols = np.concatenate(
                    [
                        loc,
                        loc + mc,
                        np.broadcast_to(loc + 2 * mc, (4, mc)).ravel(),
                        np.broadcast_to(loc + 3 * mc, (4, mc)).ravel(),
                    ]
                )
                data = np.concatenate(
                    [
                        coef[a:b],
                        coef[a:b],
                        (coef[a:b] * phi3[:, a:b]).ravel(),
                        (coef[a:b] * phi4[:, a:b]).ravel(),
                    ]
                )
                dep = csr_matrix((data, (rows, cols)), shape=(n, 4 * mc))
                dep_gain = csr_matrix(
                    (
                        np.concatenate([gain_data[a:b], gain_data[a:b]]),
                        (
                            np.concatenate([i1[a:b], i2[a:b]]),
                            np.concatenate([loc, loc + mc]),
                        ),
                    ),
                    shape=(n, 2 * mc),
                )
                chunks.append((slice(a, b), dep, dep_gain))
            self._selection_cache[key] = _DepositPlan(
                i1=i1, i2=i2, k3=k3, k4=k4, weight=wgt,
                j3=j3, phi3=phi3, j4=j4, phi4=phi4, chunks=chunks,
            )
        return self._selection_cache[key]


@dataclass
class _DepositPlan:
    i1: np.ndarray
    i2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray
    weight: np.ndarray
    j3: np.ndarray
    phi3: np.ndarray
    j4: np.ndarray
    phi4: np.ndarray
    chunks: list  # (node slice, deposit CSR, gain CSR) per fixed chunk


def _cubic_stencil(grid, k):
    """Periodic 4-point cubic-Lagrange stencil: indices (4, M) and weights (4, M).

    Exact grid hits (within 1e-12 of a node) collapse to a pure gather so that
    analytically snapped roots are treated without smearing.
    """
    n = grid.n_points
    x = (np.asarray(k, dtype=float) + 0.5) * n
    j0 = np.floor(x).astype(np.intp)
    t = x - j0
    hit_hi = t > 1.0 - 1e-12
    j0 = np.where(hit_hi, j0 + 1, j0)
    t = np.where(hit_hi | (t < 1e-12), 0.0, t)
    idx = np.stack([(j0 + s) % n for s in (-1, 0, 1, 2)])
    phi = np.stack(
        [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t - 1.0) * (t + 1.0) * (t - 2.0) / 2.0,
            -t * (t + 1.0) * (t - 2.0) / 2.0,
            t * (t + 1.0) * (t - 1.0) / 6.0,
        ]
    )
    return idx, phi


def _scan_and_bisect(g_of, n_sub, lo_edges, keep_zeros=True, iters=62):
    """Roots of a 1-periodic scalar function from a uniform scan + bisection.

    g_of maps an array of k3 values to g values; n_sub subintervals on [-1/2,1/2).
    Returns root positions (unsorted, possibly with duplicates at subinterval
    edges resolved by the caller).
    """
    t = -0.5 + np.arange(n_sub + 1) / n_sub
    gv = g_of(t)
    exact = np.flatnonzero(gv[:-1] == 0.0)
    sign_change = np.flatnonzero(gv[:-1] * gv[1:] < 0.0)
    roots = [t[exact]] if keep_zeros else []
    if sign_change.size:
        lo = t[sign_change].copy()
        hi = t[sign_change + 1].copy()
        glo = gv[sign_change].copy()
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            gm = g_of(mid)
            take_lo = (glo * gm) > 0.0
            lo = np.where(take_lo, mid, lo)
            glo = np.where(take_lo, gm, glo)
            hi = np.where(take_lo, hi, mid)
        roots.append(0.5 * (lo + hi))
    if not roots:
        return np.empty(0)
    return np.concatenate(roots)


def _snap_eta0(disp, k1, k2, roots, gprime):
    """Snap nearest-neighbour roots onto the analytic branches {k2, 1/2 - k1}."""
    if disp.eta != 0.0 or roots.size == 0:
        return roots, gprime
    slope = 2.0 * np.pi * (np.sin(2 * np.pi * k2) - np.sin(2 * np.pi * k1))
    for target, sgn in ((k2, 1.0), (0.5 - k1, -1.0)):
        near = np.abs(wrap_torus(roots - target)) < 1e-9
        roots = np.where(near, wrap_torus(target), roots)
        gprime = np.where(near, sgn * slope, gprime)
    return roots, gprime


def resolve_energy_delta(disp, grid, k1, k2, tol_root=1e-12, g_min=1e-6):
    """Energy-shell roots k3* and co-area weights 1/|g'| for one momentum pair.

    Scans g(k3) = omega(k1) - omega(k2) + omega(k3) - omega(k4(k3)) on 8N
    subintervals, bisects every sign change, and returns [(k3*, weight), ...].
    Raises DegenerateLineError on the k2 = k1 line (g vanishes identically).
    Roots with |g'| < g_min are omitted.
    """
    k1 = float(wrap_torus(k1))
    k2 = float(wrap_torus(k2))
    s = k1 - k2
    if abs(wrap_torus(s)) < 1e-14:
        raise DegenerateLineError(
            "k2 = k1 forces k4 = k3: the energy mismatch vanishes identically "
            "(and the dissipative integrand with it); skip this line"
        )
    c = float(disp.omega(k1) - disp.omega(k2))

    def g_of(t):
        return c + disp.omega(t) - disp.omega(t + s)

    roots = _scan_and_bisect(g_of, 8 * grid.n_points, None)
    if roots.size == 0:
        return []
    roots = np.sort(wrap_torus(roots))
    # merge duplicates (wrap-aware)
    keep = np.ones(roots.size, dtype=bool)
    keep[1:] = np.abs(roots[1:] - roots[:-1]) > 1e-9
    if roots.size > 1 and abs(wrap_torus(roots[-1] - roots[0])) <= 1e-9:
        keep[-1] = False
    roots = roots[keep]
    gp = disp.omega_prime(roots) - disp.omega_prime(roots + s)
    roots, gp = _snap_eta0(disp, k1, k2, roots, gp)
    ok = np.abs(g_of(roots)) <= max(tol_root, 1e-13)
    out = []
    for r, p, o in zip(roots, gp, ok):
        if o and abs(p) >= g_min:
            out.append((float(r), float(1.0 / abs(p))))
    return out


def build_quadrature(grid, disp, tol_root=1e-12, fine_per_cell=8):
    """Root table for all ordered grid pairs, grouped by the separation k1 - k2.

    The scan values on the fine lattice are assembled from one shared
    dispersion evaluation (omega at 8N points), so the k3 = k2 root of the
    nearest-neighbour model shows up as an exact floating-point zero; bisection
    handles everything else.  Roots and slopes for eta = 0 are snapped to the
    analytic branch set, making the relabeling symmetries of the node multiset
    exact in floating point.
    """
    n = grid.n_points
    n_sub = fine_per_cell * n
    t_fine = -0.5 + np.arange(n_sub) / n_sub
    om_fine = disp.omega(t_fine)
    om_grid = om_fine[::fine_per_cell]
    points = grid.points

    all_i1, all_i2, all_k3, all_gp = [], [], [], []
    n_dropped = 0

    for s_idx in range(1, n):
        # all pairs with i1 - i2 = s_idx (mod N) share the scan profile
        s = s_idx * grid.dk
        phi = om_fine - np.roll(om_fine, -fine_per_cell * s_idx)  # omega(t) - omega(t+s)
        i1s = np.arange(n)
        i2s = (i1s - s_idx) % n
        const = om_grid[i1s] - om_grid[i2s]
        gv = const[:, None] + phi[None, :]  # (N, n_sub), periodic in the scan axis
        gv_next = np.roll(gv, -1, axis=1)

        rows_z, cols_z = np.nonzero(gv == 0.0)
        rows_b, cols_b = np.nonzero(gv * gv_next < 0.0)

        pair_rows = [rows_z]
        pair_roots = [t_fine[cols_z]]
        if rows_b.size:
            lo = t_fine[cols_b]
            hi = lo + 1.0 / n_sub
            glo = gv[rows_b, cols_b]
            cc = const[rows_b]
            for _ in range(62):
                mid = 0.5 * (lo + hi)
                gm = cc + disp.omega(mid) - disp.omega(mid + s)
                take_lo = (glo * gm) > 0.0
                lo = np.where(take_lo, mid, lo)
                glo = np.where(take_lo, gm, glo)
                hi = np.where(take_lo, hi, mid)
            pair_rows.append(rows_b)
            pair_roots.append(wrap_torus(0.5 * (lo + hi)))

        rows = np.concatenate(pair_rows)
        roots = np.concatenate(pair_roots)
        if rows.size == 0:
            continue
        gval = const[rows] + disp.omega(roots) - disp.omega(roots + s)
        ok = np.abs(gval) <= max(tol_root, 1e-13)
        n_dropped += int(np.count_nonzero(~ok))
        rows, roots = rows[ok], roots[ok]
        gp = disp.omega_prime(roots) - disp.omega_prime(roots + s)
        if disp.eta == 0.0:
            k1v = points[i1s[rows]]
            k2v = points[i2s[rows]]
            slope = 2.0 * np.pi * (np.sin(2 * np.pi * k2v) - np.sin(2 * np.pi * k1v))
            near1 = np.abs(wrap_torus(roots - k2v)) < 1e-9
            near2 = np.abs(wrap_torus(roots - (0.5 - k1v))) < 1e-9
            roots = np.where(near1, k2v, np.where(near2, wrap_torus(0.5 - k1v), roots))
            gp = np.where(near1, slope, np.where(near2, -slope, gp))

        # dedup within each pair (roots from adjacent brackets can coincide)
        order = np.lexsort((roots, rows))
        rows, roots, gp = rows[order], roots[order], gp[order]
        same_pair = np.empty(rows.size, dtype=bool)
        same_pair[0] = False
        same_pair[1:] = rows[1:] == rows[:-1]
        dup = same_pair & (np.abs(np.diff(roots, prepend=np.inf)) < 1e-9)
        # wrap-around duplicate: first and last root of one pair at +-1/2
        rows, roots, gp = rows[~dup], roots[~dup], gp[~dup]

        all_i1.append(i1s[rows])
        all_i2.append(i2s[rows])
        all_k3.append(roots)
        all_gp.append(gp)

    if not all_i1:
        raise RuntimeError("energy shell is empty: no roots resolved anywhere")
    i1 = np.concatenate(all_i1)
    i2 = np.concatenate(all_i2)
    k3 = np.concatenate(all_k3)
    gp = np.concatenate(all_gp)
    order = np.lexsort((k3, i2, i1))
    return CollisionQuadrature(
        n_points=n,
        eta=float(disp.eta),
        tol_root=float(tol_root),
        i1=i1[order].astype(np.uint32),
        i2=i2[order].astype(np.uint32),
        k3=k3[order],
        gprime=gp[order],
        n_dropped_tol=n_dropped,
    )


# --- integrand evaluators ----------------------------------------------------


def _eye_like(w):
    return np.broadcast_to(np.eye(w.shape[-1], dtype=w.dtype), w.shape)


def _adj(m):
    return np.conj(np.swapaxes(m, -1, -2))


def _scal(v):
    return np.asarray(v)[..., None, None]


def eval_A_quad(w1, w2, w3, w4, v23, v34):
    """Quartic integrand A_quad; Hermitian (each signed pair is M + M^dagger).

    Together with eval_A_tr this is the swap-rearranged integrand; see the
    module notes for when (and only when) the pair reproduces A + A^dagger.
    """
    wt1, wt2 = w1 + _eye_like(w1), w2 + _eye_like(w2)
    wt3, wt4 = w3 + _eye_like(w3), w4 + _eye_like(w4)
    gain = (wt1 @ w2) @ (wt3 @ w4)
    loss = (w1 @ wt2) @ (w3 @ wt4)
    return _scal(v23 * v34) * (gain + _adj(gain) - loss - _adj(loss))


def eval_A_tr(w1, w2, w3, w4, v34):
    """Trace-coupled integrand A_tr; Hermitian by construction."""
    wt1, wt2 = w1 + _eye_like(w1), w2 + _eye_like(w2)
    wt3, wt4 = w3 + _eye_like(w3), w4 + _eye_like(w4)
    t34 = np.trace(wt3 @ w4, axis1=-2, axis2=-1)[..., None, None]
    t34b = np.trace(w3 @ wt4, axis1=-2, axis2=-1)[..., None, None]
    return _scal(v34**2) * ((wt1 @ w2 + w2 @ wt1) * t34 - (w1 @ wt2 + wt2 @ w1) * t34b)


def eval_gain_term(w1, w2, w3, w4, v23, v34):
    """Positivity-restoring part of the collision integrand (diagnostic).

    V23 V34 W4 W~3 W2 + V34^2 W4 tr[W2 W~3], plus the conjugate transpose.  The
    k2 <-> k4 symmetrized combination of two such terms is PSD for PSD inputs
    (it matches the quadratic-form lemma with x = V34, y = -V23); the raw
    single-quadruple value returned here need not be.
    """
    wt3 = w3 + _eye_like(w3)
    m = _scal(v23 * v34) * (w4 @ wt3 @ w2)
    t = np.trace(w2 @ wt3, axis1=-2, axis2=-1)[..., None, None]
    m = m + _scal(v34**2) * (w4 * t)
    return m + _adj(m)


def _eval_A(w1, w2, w3, w4, v23, v34):
    """The unsymmetrized kernel A (drives the Vlasov part via -i(A - A^dagger))."""
    eye = _eye_like(w1)
    wt3, wt4 = w3 + eye, w4 + eye
    w2wt3 = w2 @ wt3
    tr23 = np.trace(w2wt3, axis1=-2, axis2=-1)[..., None, None]
    tr2m3 = (np.trace(w2, axis1=-2, axis2=-1) - np.trace(w3, axis1=-2, axis2=-1))[
        ..., None, None
    ]
    a = _scal(v23 * v34) * (w4 @ wt3 @ w2) + _scal(v34**2) * (w4 * tr23)
    inner = _scal(v23 * v34) * (w2 @ wt4 - w3 @ wt4 - w2wt3) + _scal(v34**2) * (
        wt4 * tr2m3 - eye * tr23
    )
    return a + w1 @ inner


# --- dissipative operator ----------------------------------------------------


def _gather_cubic(values, idx, phi):
    """Cubic-Lagrange gather of a matrix field at precomputed stencils."""
    return np.einsum("pm,pmab->mab", phi, values[idx])


def _klein_integrands(w1, w2, w3, w4, v23, v34, with_gain=False):
    """All four relabeled values of A + A^dagger per node, sharing products.

    Returns a (4, M, d, d) stack ordered (identity, (12)(34), (13)(24),
    (14)(23)).  The on-shell potential ties make every relabeling reuse the
    same pair (V23, V34), and all gain/loss factors are drawn from the 16
    ordered products W_i W~_j, evaluated as three batched matmul passes.  The
    stack sums to zero algebraically, which is what makes the deposit
    conservative.
    """
    eye = _eye_like(w1)
    w = np.stack([w1, w2, w3, w4])  # (4, M, d, d)
    wt = w + eye
    tr = lambda m: np.trace(m, axis1=-2, axis2=-1).real
    tw = tr(w)
    p = w[:, None] @ wt[None, :]  # p[i, j] = W_{i+1} @ W~_{j+1}
    tp = np.stack([tr(p[1, 2]), tr(p[0, 3]), tr(p[3, 0]), tr(p[2, 1])])  # t23 t14 t41 t32
    xy = _scal(np.asarray(v23) * np.asarray(v34))
    yy = np.asarray(v34) ** 2
    gain4 = np.stack([p[3, 2], p[2, 3], p[1, 0], p[0, 1]]) @ w[[1, 0, 3, 2]]
    gains = xy * gain4 + _scal(yy * tp) * w[::-1]
    inner = xy * np.stack(
        [
            p[1, 3] - p[2, 3] - p[1, 2],
            p[0, 2] - p[3, 2] - p[0, 3],
            p[3, 1] - p[0, 1] - p[3, 0],
            p[2, 0] - p[1, 0] - p[2, 1],
        ]
    ) + _scal(yy) * (
        wt[::-1] * _scal(np.stack([tw[1] - tw[2], tw[0] - tw[3], tw[3] - tw[0], tw[2] - tw[1]]))
        - eye * _scal(tp)
    )
    stack = gains + w @ inner
    stack += _adj(stack)
    if not with_gain:
        return stack, None
    g01 = gains[:2]
    return stack, g01 + _adj(g01)


def eval_Cd(field, disp, pot, quad, cfg, return_gain=False):
    """Dissipative collision operator C_d[W] on the grid.

    Root-resolved mode: pi * dk * sum over (k2, root) nodes of
    (A + A^dagger)/|g'|, with W interpolated at the off-grid momenta k3*, k4*
    and every value deposited on all four relabeled slots (see module notes).
    Mollified mode: pi * dk^2 * sum over the (k2, k3) grid against the
    normalized Gaussian delta of width cfg.c_moll * dk * max|omega'|, with
    the same A + A^dagger integrand; cfg.moll_refine and cfg.moll_strip
    sharpen it for cross-mode comparisons (see _eval_cd_mollified).

    With return_gain=True additionally accumulates the gain term through the
    same quadrature (PSD diagnostic; costs two extra matmuls).
    """
    if quad is not None and quad.n_points != field.grid.n_points:
        raise ValueError("quadrature table was built for a different grid")
    if cfg.mode == "mollified":
        out = _eval_cd_mollified(field, disp, pot, cfg, return_gain)
    else:
        out = _eval_cd_roots(field, disp, pot, quad, cfg, return_gain)
    result = out[0] if return_gain else out
    if np.isnan(result).any():
        bad = np.flatnonzero(np.isnan(result).any(axis=(1, 2)))
        raise FloatingPointError(f"collision integrand produced NaN at k indices {bad[:8]}")
    return out


def _eval_cd_roots(field, disp, pot, quad, cfg, with_gain):
    grid = field.grid
    n = grid.n_points
    d = field.dim
    plan = quad.deposit_plan(grid, cfg.g_min)
    vals = field.values
    pts = grid.points
    v34_all = pot(pts[plan.i1] - pts[plan.i2])  # = V(k3 - k4) on the shell
    v23_all = pot(pts[plan.i2] - plan.k3)

    def one_chunk(chunk):
        sl, dep, dep_gain = chunk
        w1 = vals[plan.i1[sl]]
        w2 = vals[plan.i2[sl]]
        w3 = _gather_cubic(vals, plan.j3[:, sl], plan.phi3[:, sl])
        w4 = _gather_cubic(vals, plan.j4[:, sl], plan.phi4[:, sl])
        stack, gain = _klein_integrands(w1, w2, w3, w4, v23_all[sl], v34_all[sl], with_gain)
        mc = w1.shape[0]
        out_c = dep @ stack.reshape(4 * mc, d * d)
        gout_c = dep_gain @ gain.reshape(2 * mc, d * d) if with_gain else None
        return out_c, gout_c

    if cfg.threads and cfg.threads > 1 and len(plan.chunks) > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.threads, len(plan.chunks))) as ex:
            parts = list(ex.map(one_chunk, plan.chunks))
    else:
        parts = [one_chunk(c) for c in plan.chunks]
    out = parts[0][0]
    for p, _ in parts[1:]:
        out = out + p
    out = hermitize(np.asarray(out).reshape(n, d, d))
    if not with_gain:
        return out
    gout = parts[0][1]
    for _, g in parts[1:]:
        gout = gout + g
    return out, hermitize(np.asarray(gout).reshape(n, d, d))


def _f_integrand(w1, w2, w3, w4, v23, v34, with_gain=False):
    """A + A^dagger for one batch of quadruples (6 batched matmuls).

    Same quantity as one row of the relabeled stack above, without building
    the other three rows; the mollified lattice sum does its own averaging
    over relabelings through the summation range, so only the plain value is
    needed per node.
    """
    eye = _eye_like(w1)
    wt3, wt4 = w3 + eye, w4 + eye
    tr = lambda m: np.trace(m, axis1=-2, axis2=-1).real
    xy = _scal(np.asarray(v23) * np.asarray(v34))
    yy = np.asarray(v34) ** 2
    p23 = w2 @ wt3
    g = xy * (w4 @ wt3 @ w2) + _scal(yy * tr(p23)) * w4
    loss = w1 @ (
        xy * (w2 @ wt4 - w3 @ wt4 - p23)
        + _scal(yy) * (wt4 * _scal(tr(w2) - tr(w3)) - eye * _scal(tr(p23)))
    )
    f = g + _adj(g) + loss + _adj(loss)
    if not with_gain:
        return f, None
    return f, g + _adj(g)


def _eval_cd_mollified(field, disp, pot, cfg, with_gain):
    """Gaussian-mollified lattice sum, optionally on a refined k3 lattice.

    cfg.moll_refine subdivides each k3 cell (the field is interpolated there
    once, cubically); momentum conservation keeps k4 on the same fine lattice
    because grid momenta are multiples of the fine spacing.  The Gaussian
    width eps = c_moll * dk * max|omega'| is measured against the fine
    spacing, so refining narrows the delta at fixed c_moll while keeping the
    sum alias-free.  cfg.moll_strip excludes k2 rows with wrap distance
    < strip cells from k1; strip=1 removes exactly the degenerate row k2=k1,
    which the root-resolved mode never integrates over either.
    """
    grid = field.grid
    n = grid.n_points
    d = field.dim
    r = int(cfg.moll_refine)
    nf = r * n
    eps = cfg.c_moll * (grid.dk / r) * disp.max_abs_slope()
    pts = grid.points
    om = disp.omega(pts)
    w = field.values
    if r == 1:
        k3f, wf, omf = pts, w, om
    else:
        k3f = -0.5 + np.arange(nf) / nf
        j3, phi3 = _cubic_stencil(grid, k3f)
        wf = _gather_cubic(w, j3, phi3)
        omf = disp.omega(k3f)
    v23 = pot(pts[:, None] - k3f[None, :])  # [i2, j3]
    rows = np.arange(n)
    dist_of = np.minimum(rows, n - rows)  # wrap distance lookup
    j4_base = (np.arange(nf)[None, :] - r * rows[:, None]) % nf  # j3 - r*i2

    def one_k1(i1):
        i2 = rows[dist_of[(rows - i1) % n] >= cfg.moll_strip]
        m = i2.size
        j4 = (j4_base[i2] + r * i1) % nf
        om_bar = om[i1] - om[i2, None] + omf[None, :] - omf[j4]
        delta = np.exp(-((om_bar / eps) ** 2)) / (eps * np.sqrt(np.pi))
        v34 = np.broadcast_to(pot(pts[i1] - pts[i2])[:, None], (m, nf))
        w1 = np.broadcast_to(w[i1], (m, nf, d, d))
        w2 = np.broadcast_to(w[i2, None], (m, nf, d, d))
        w3 = np.broadcast_to(wf[None, :], (m, nf, d, d))
        w4 = wf[j4]
        f, gain = _f_integrand(w1, w2, w3, w4, v23[i2], v34, with_gain)
        coeff = (np.pi * grid.dk * (grid.dk / r) * delta)[..., None, None]
        out1 = (coeff * f).sum(axis=(0, 1))
        gout1 = (coeff * gain).sum(axis=(0, 1)) if with_gain else None
        return out1, gout1

    results = _parallel_k1(one_k1, n, cfg.threads)
    out = hermitize(np.stack([r[0] for r in results]))
    if not with_gain:
        return out
    gout = hermitize(np.stack([r[1] for r in results]))
    return out, gout


def _parallel_k1(fn, n, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(n)))
    return [fn(i) for i in range(n)]


# --- Vlasov (conservative) operator -------------------------------------------


def eval_Cc(field, disp, pot, cfg):
    """Conservative (Vlasov) operator -i * int P(1/omega_bar) (A - A^dagger).

    The principal value is regularized as omega_bar/(omega_bar^2 + eps_pv^2)
    and the (k2, k3) integral taken as the full-grid double sum with k4 fixed
    by momentum conservation.  -i (A - A^dagger) is Hermitian pointwise, so the
    output is a Hermitian field; it is a commutator in disguise and conserves
    all pointwise spectra.
    """
    grid = field.grid
    n = grid.n_points
    eps_pv = cfg.eps_pv if cfg.eps_pv is not None else 4.0 * grid.dk * disp.max_abs_slope()
    pts = grid.points
    om = disp.omega(pts)
    idx = np.arange(n)
    i4 = (idx[:, None] - idx[None, :]) % n
    v23 = pot(pts[:, None] - pts[None, :])
    w = field.values

    def one_k1(i1):
        i4_loc = (i1 + i4) % n
        om_bar = om[i1] - om[:, None] + om[None, :] - om[i4_loc]
        pv = om_bar / (om_bar**2 + eps_pv**2)
        v34 = np.broadcast_to(pot(pts[i1] - pts)[:, None], (n, n))
        w1 = np.broadcast_to(w[i1], (n, n) + w.shape[1:])
        w2 = np.broadcast_to(w[:, None], (n, n) + w.shape[1:])
        w3 = np.broadcast_to(w[None, :], (n, n) + w.shape[1:])
        w4 = w[i4_loc]
        a = _eval_A(w1, w2, w3, w4, v23, v34)
        m = a - _adj(a)
        return (-1j * grid.dk**2) * np.einsum("xy,xyab->ab", pv, m), None

    results = _parallel_k1(one_k1, n, cfg.threads)
    return hermitize(np.stack([r[0] for r in results]))


def eval_C(field, disp, pot, quad, cfg, return_gain=False):
    """Full collision operator: C_d plus (when enabled) the Vlasov part."""
    out = eval_Cd(field, disp, pot, quad, cfg, return_gain=return_gain)
    cd, gain = out if return_gain else (out, None)
    if cfg.include_vlasov:
        cd = cd + eval_Cc(field, disp, pot, cfg)
    return (cd, gain) if return_gain else cd


# --- quadrature cache ----------------------------------------------------------

_CACHE_MAGIC = b"WBQT"
_CACHE_VERSION = 1


def quadrature_cache_key(n_points, eta, tol_root):
    """Content hash naming a cached root table."""
    text = f"N={n_points};eta={eta:.17g};tol={tol_root:.17g}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_quadrature(quad, path):
    """Write the root table: magic, version, sizes, eta/tol, then flat arrays."""
    header = struct.pack(
        "<4sIQQddQ",
        _CACHE_MAGIC,
        _CACHE_VERSION,
        quad.n_points,
        quad.i1.size,
        quad.eta,
        quad.tol_root,
        quad.n_dropped_tol,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quad.i1.astype("<u4").tobytes())
        fh.write(quad.i2.astype("<u4").tobytes())
        fh.write(quad.k3.astype("<f8").tobytes())
        fh.write(quad.gprime.astype("<f8").tobytes())


def load_quadrature(path):
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIQQddQ"))
        magic, version, n, count, eta, tol, dropped = struct.unpack("<4sIQQddQ", header)
        if magic != _CACHE_MAGIC or version != _CACHE_VERSION:
            raise ValueError(f"not a quadrature cache file (or wrong version): {path}")
        i1 = np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.uint32)
        i2 = np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.uint32)
        k3 = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)
        gp = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64)
    return CollisionQuadrature(
        n_points=int(n),
        eta=float(eta),
        tol_root=float(tol),
        i1=i1,
        i2=i2,
        k3=k3,
        gprime=gp,
        n_dropped_tol=int(dropped),
    )


def build_or_load_quadrature(grid, disp, tol_root=1e-12, cache_dir=None):
    """Load the root table from cache_dir when present, else build and store it."""
    if cache_dir is None:
        return build_quadrature(grid, disp, tol_root)
    key = quadrature_cache_key(grid.n_points, disp.eta, tol_root)
    path = os.path.join(cache_dir, f"quad_{key}.bin")
    if os.path.exists(path):
        quad = load_quadrature(path)
        if quad.n_points == grid.n_points and quad.eta == disp.eta:
            return quad
    quad = build_quadrature(grid, disp, tol_root)
    os.makedirs(cache_dir, exist_ok=True)
    save_quadrature(quad, path)
    return quad
