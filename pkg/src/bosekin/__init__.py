"""Kinetic (Boltzmann) dynamics of matrix-valued Wigner functions for a weakly
interacting multi-component Bose gas on a chain.

The package provides

* momentum-space grids, dispersions, interaction potentials and Hermitian matrix
  fields (:mod:`bosekin.grid`),
* the dissipative and conservative (Vlasov) collision operators with
  root-resolved and mollified energy-shell quadratures (:mod:`bosekin.collision`),
* conserved charges, entropy and entropy production (:mod:`bosekin.observables`),
* thermal and non-thermal stationary states via convex free-energy minimization
  (:mod:`bosekin.stationary`),
* a Hermitian-projected RK4 time stepper (:mod:`bosekin.integrate`),
* an exact quasi-free (Wick) moment oracle with a truncated-Fock cross-check
  (:mod:`bosekin.quasifree`),
* a YAML-configured scenario runner and command line front end
  (:mod:`bosekin.config`, :mod:`bosekin.cli`).
"""

from .collision import (
    CollisionConfig,
    CollisionQuadrature,
    build_or_load_quadrature,
    build_quadrature,
    eval_C,
    eval_Cc,
    eval_Cd,
)
from .config import ScenarioConfig, load_config, parse_config
from .grid import (
    BrillouinGrid,
    Dispersion,
    PairPotential,
    SpectralCurve,
    WignerField,
    build_initial_state,
    eigendecompose,
    hs_distance,
    hs_inner,
    hs_norm,
    wrap_torus,
)
from .integrate import TrajectoryRecord, evolve, rk4_step
from .observables import (
    charges,
    entropy,
    entropy_production,
    fit_decay_rate,
    offdiag_norm,
)
from .quasifree import (
    MomentRequest,
    OneParticleHamiltonian,
    TruncatedFockOracle,
    permanent,
    two_point,
    wick_moment,
)
from .stationary import (
    NonthermalProfile,
    ThermalParams,
    build_be_state,
    solve_nonthermal,
    solve_thermal,
)

__all__ = [
    "BrillouinGrid",
    "CollisionConfig",
    "CollisionQuadrature",
    "Dispersion",
    "MomentRequest",
    "NonthermalProfile",
    "OneParticleHamiltonian",
    "PairPotential",
    "ScenarioConfig",
    "SpectralCurve",
    "ThermalParams",
    "TrajectoryRecord",
    "TruncatedFockOracle",
    "WignerField",
    "build_be_state",
    "build_initial_state",
    "build_or_load_quadrature",
    "build_quadrature",
    "charges",
    "eigendecompose",
    "entropy",
    "entropy_production",
    "eval_C",
    "eval_Cc",
    "eval_Cd",
    "evolve",
    "fit_decay_rate",
    "hs_distance",
    "hs_inner",
    "hs_norm",
    "load_config",
    "offdiag_norm",
    "parse_config",
    "permanent",
    "rk4_step",
    "solve_nonthermal",
    "solve_thermal",
    "two_point",
    "wick_moment",
    "wrap_torus",
]

__version__ = "0.1.0"
