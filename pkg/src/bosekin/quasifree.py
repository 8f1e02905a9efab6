"""Exact moments of quasi-free (Gaussian) thermal states of bosonic modes.

For m modes with ladder operators a_i, a†_i and a strictly positive Hermitian
one-particle matrix M, the Gaussian state rho = e^{-dGamma(M)} / Z -- where
dGamma(M) = sum_ij M_ij a†_i a_j is the second quantization of M and
Z = tr e^{-dGamma(M)} -- has the two-point function

    <a†_m a_j> = ((e^M - 1)^{-1})_{j m},

and every balanced product of ladder operators reduces to a permanent (the
bosonic Wick rule).  Label the creation factors i_1, ..., i_p and the
annihilation factors j_1, ..., j_p in their order of appearance inside the
product; then

    <product> = perm K,
    K[k, l] = <a†_{i_k} a_{j_l}>              if the creation stands to the
                                              left of the annihilation,
    K[k, l] = <a_{j_l} a†_{i_k}>
            = delta_{i_k j_l} + <a†_{i_k} a_{j_l}>   otherwise,

which covers arbitrary mixed orderings (each inversion of a pair picks up the
commutator delta).  Products with unequal creation and annihilation counts
vanish by the U(1) gauge invariance of the state and are reported as exactly
zero.  Permanents are evaluated by Ryser's inclusion-exclusion formula with
Gray-code subset updates, O(2^n n), guarded to n <= 12.

Nothing here feeds the kinetic solver.  The module is the independently
checkable statistical foundation behind the collision integrand, and is
itself validated against TruncatedFockOracle: a plain brute force that builds
dGamma(M) from dense ladder matrices on the finite Fock space with total
occupation <= cutoff and diagonalizes it sector by sector (dGamma(M) commutes
with total number, so the truncated space splits into total-occupation
sectors; within a sector every operator is an explicit matrix).  No Gaussian
structure enters that computation.  The thermal weight of sector n is
rigorously bounded by dim_n * e^{-n lambda_0} with lambda_0 = min eig M
(because the one-particle density matrix of any sector-n state is PSD with
trace n), so high sectors below a requested relative tail are skipped with a
controlled error; pass tail_rtol=0 to disable skipping.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse import csr_matrix

__all__ = [
    "OneParticleHamiltonian",
    "MomentRequest",
    "TruncatedFockOracle",
    "two_point",
    "permanent",
    "wick_moment",
    "random_one_particle_hamiltonian",
]

MAX_PERMANENT_DIM = 12
MAX_PAIRS = 6


@dataclass
class OneParticleHamiltonian:
    """Hermitian one-particle matrix with strictly positive spectrum.

    Positivity makes e^{-dGamma(M)} trace class, i.e. the Gaussian state and
    all its moments exist.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"one-particle matrix must be square, got shape {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.conj().T)) > 1e-12 * scale:
            raise ValueError("one-particle matrix must be Hermitian")
        m = 0.5 * (m + m.conj().T)
        lo = float(np.linalg.eigvalsh(m).min())
        if lo <= 0.0:
            raise ValueError(f"one-particle spectrum must be positive, min eigenvalue {lo:.3e}")
        self.matrix = m

    @property
    def n_modes(self):
        return self.matrix.shape[0]


_KINDS = ("create", "annihilate")


@dataclass
class MomentRequest:
    """Ordered product of ladder-operator factors, leftmost first.

    factors is a sequence of (mode index, "create" | "annihilate").  The
    product is read the mathematical way: the rightmost factor acts first.
    """

    factors: tuple

    def __post_init__(self):
        norm = []
        for mode, kind in self.factors:
            mode = int(mode)
            if mode < 0:
                raise ValueError(f"mode index must be nonnegative, got {mode}")
            if kind not in _KINDS:
                raise ValueError(f"factor kind must be one of {_KINDS}, got {kind!r}")
            norm.append((mode, kind))
        self.factors = tuple(norm)

    @property
    def n_create(self):
        return sum(1 for _, kind in self.factors if kind == "create")

    @property
    def is_balanced(self):
        return 2 * self.n_create == len(self.factors)

    def max_mode(self):
        return max((mode for mode, _ in self.factors), default=-1)


def two_point(ham):
    """Occupation matrix (e^M - 1)^{-1} of the Gaussian state; entry [j, m]
    is <a†_m a_j>.  PSD because M's spectrum is positive."""
    lam, u = np.linalg.eigh(ham.matrix)
    occ = 1.0 / np.expm1(lam)
    return (u * occ[None, :]) @ u.conj().T


def permanent(mat):
    """Exact permanent by Ryser's formula with Gray-code subset updates.

    perm A = (-1)^n sum over nonempty column subsets S of (-1)^{|S|}
    prod_i sum_{j in S} A[i, j]; each Gray-code step updates the row sums by
    one column.  The empty matrix has permanent 1.  Guarded to n <= 12.
    """
    a = np.asarray(mat)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 1.0
    if n > MAX_PERMANENT_DIM:
        raise ValueError(f"permanent dimension {n} exceeds the guard {MAX_PERMANENT_DIM}")
    row_sum = np.zeros(n, dtype=np.result_type(a.dtype, float))
    total = np.zeros((), dtype=row_sum.dtype)
    gray = 0
    sign_n = -1.0 if n % 2 else 1.0
    for s in range(1, 1 << n):
        new_gray = s ^ (s >> 1)
        j = (new_gray ^ gray).bit_length() - 1
        if new_gray & (1 << j):
            row_sum += a[:, j]
        else:
            row_sum -= a[:, j]
        gray = new_gray
        subset_sign = -1.0 if new_gray.bit_count() % 2 else 1.0
        total += subset_sign * np.prod(row_sum)
    return (sign_n * total).item()


def wick_moment(ham, request):
    """Thermal expectation of a ladder-operator product via the Wick permanent.

    Unbalanced products return exactly 0 (gauge invariance); the empty
    product returns 1.  Guarded to MAX_PAIRS creation/annihilation pairs.
    """
    if request.max_mode() >= ham.n_modes:
        raise ValueError(
            f"request touches mode {request.max_mode()} but only {ham.n_modes} modes exist"
        )
    if not request.is_balanced:
        return 0.0 + 0.0j
    p = request.n_create
    if p == 0:
        return 1.0 + 0.0j
    if p > MAX_PAIRS:
        raise ValueError(f"{p} pairs exceed the guard {MAX_PAIRS}")
    creations = [(pos, mode) for pos, (mode, kind) in enumerate(request.factors)
                 if kind == "create"]
    annihilations = [(pos, mode) for pos, (mode, kind) in enumerate(request.factors)
                     if kind == "annihilate"]
    g = two_point(ham)
    kmat = np.zeros((p, p), dtype=complex)
    for k, (pos_c, i) in enumerate(creations):
        for l, (pos_a, j) in enumerate(annihilations):
            kmat[k, l] = g[j, i] + (1.0 if pos_a < pos_c and i == j else 0.0)
    return complex(permanent(kmat))


# --- truncated-Fock brute force ----------------------------------------------


def _sector_states(n_modes, total):
    """Occupation tuples of `n_modes` modes summing to `total`, lexicographic."""
    states = []
    for bars in combinations(range(total + n_modes - 1), n_modes - 1):
        edges = (-1,) + bars + (total + n_modes - 1,)
        states.append(tuple(edges[i + 1] - edges[i] - 1 for i in range(n_modes)))
    return sorted(states)


class TruncatedFockOracle:
    """Thermal expectations by explicit diagonalization of dGamma(M) on the
    Fock space truncated at total occupation <= cutoff.

    Every operator is built from dense/sparse ladder matrices; no Gaussian
    factorization is used anywhere, which is the point.  Sectors are skipped
    once the rigorous bound dim_n (n+MAX_PAIRS+1)^MAX_PAIRS e^{-n min_eig} on
    their contribution to any supported moment falls below tail_rtol relative
    to the partition sum (the exponential holds because the one-particle
    density matrix of a sector-n state is PSD with trace n, the polynomial
    bounds the operator norm of any <= MAX_PAIRS-pair ladder chain).  Set
    tail_rtol=0 to keep every sector.
    """

    def __init__(self, ham, cutoff, tail_rtol=1e-12):
        if cutoff < 1:
            raise ValueError("cutoff must be at least 1")
        self.ham = ham
        self.cutoff = int(cutoff)
        m = ham.n_modes
        lam0 = float(np.linalg.eigvalsh(ham.matrix).min())

        self._states = []
        self._index = []
        self._annihilate = []  # [mode][sector n]: matrix sector n -> n - 1
        self._kept = []
        self._eigs = []

        for n in range(self.cutoff + 1):
            states = _sector_states(m, n)
            self._states.append(states)
            self._index.append({s: i for i, s in enumerate(states)})

        for q in range(m):
            mats = [None]
            for n in range(1, self.cutoff + 1):
                lo, hi = self._index[n - 1], self._states[n]
                rows, cols, data = [], [], []
                for col, occ in enumerate(hi):
                    if occ[q] > 0:
                        target = occ[:q] + (occ[q] - 1,) + occ[q + 1:]
                        rows.append(lo[target])
                        cols.append(col)
                        data.append(np.sqrt(occ[q]))
                mats.append(csr_matrix((data, (rows, cols)),
                                       shape=(len(lo), len(hi))))
            self._annihilate.append(mats)

        z = 0.0
        for n in range(self.cutoff + 1):
            dim = len(self._states[n])
            bound = dim * (n + MAX_PAIRS + 1.0) ** MAX_PAIRS * np.exp(-n * lam0)
            if tail_rtol > 0.0 and bound < tail_rtol * max(z, 1.0):
                self._kept.append(False)
                self._eigs.append(None)
                continue
            h_n = np.zeros((dim, dim), dtype=complex)
            if n > 0:
                for p in range(m):
                    up = self._annihilate[p][n].T
                    for q in range(m):
                        h_n += ham.matrix[p, q] * (up @ self._annihilate[q][n]).toarray()
            lam, u = np.linalg.eigh(0.5 * (h_n + h_n.conj().T))
            self._kept.append(True)
            self._eigs.append((np.exp(-lam), u))
            z += float(np.exp(-lam).sum())
        self.partition = z

    def moment(self, request):
        """Thermal average of the requested ladder product (exact on the
        truncated space, up to skipped-sector tails)."""
        if request.max_mode() >= self.ham.n_modes:
            raise ValueError("request touches a mode outside the oracle")
        if not request.is_balanced:
            return 0.0 + 0.0j
        total = 0.0 + 0.0j
        for n in range(self.cutoff + 1):
            if not self._kept[n]:
                continue
            weights, u = self._eigs[n]
            y = u
            sector = n
            dead = False
            for mode, kind in reversed(request.factors):
                if kind == "annihilate":
                    if sector == 0:
                        dead = True
                        break
                    y = self._annihilate[mode][sector] @ y
                    sector -= 1
                else:
                    if sector == self.cutoff:
                        dead = True  # creation out of the truncated space
                        break
                    y = self._annihilate[mode][sector + 1].T @ y
                    sector += 1
            if dead:
                continue
            total += complex(np.einsum("ia,ia,a->", u.conj(), y, weights))
        return total / self.partition

    def two_point(self):
        """Matrix G with G[j, m] = <a†_m a_j> from per-pair brute force."""
        m = self.ham.n_modes
        g = np.zeros((m, m), dtype=complex)
        for mm in range(m):
            for j in range(m):
                req = MomentRequest(((mm, "create"), (j, "annihilate")))
                g[j, mm] = self.moment(req)
        return g


def random_one_particle_hamiltonian(n_modes, rng, lam_min=1.2, lam_max=2.5):
    """Random Hermitian matrix with spectrum drawn uniformly in [lam_min, lam_max].

    The floor keeps truncated-Fock tails negligible at desk-scale cutoffs:
    the weight of total-occupation sector n decays like e^{-n lam_min}.
    """
    if not 0.0 < lam_min < lam_max:
        raise ValueError("need 0 < lam_min < lam_max")
    a = rng.normal(size=(n_modes, n_modes)) + 1j * rng.normal(size=(n_modes, n_modes))
    q, _ = np.linalg.qr(a)
    lam = np.sort(rng.uniform(lam_min, lam_max, size=n_modes))
    return OneParticleHamiltonian((q * lam[None, :]) @ q.conj().T)
