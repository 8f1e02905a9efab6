"""Scenario configuration: a strict, diffable YAML schema for simulation runs.

A config file is a nested mapping with the sections below; every key is
optional unless marked, unknown keys are rejected (typos should fail loudly,
not silently fall back to defaults), and the fully resolved configuration is
echoed into each run's run_meta.json so an output directory is a complete
experiment record.

    scenario: relax            # relax | compare-potentials | negative-temperature
                               # | prethermalization | stationary-only | oracle-suite
    seed: 0                    # RNG seed (oracle-suite randomness; recorded always)
    threads: 1                 # collision-kernel worker threads
    output_dir: out            # overridden by --out
    quadrature_cache: null     # directory for binary root-table caches
    model:
      spin_n: 1                # matrix dimension is d = 2 n + 1
      grid_n: 64               # momentum points, multiple of 4
      eta: 0.0                 # next-nearest-neighbour hopping weight
      potential: {kind: onsite}        # onsite | inverse_cosine | table (+ table: [...])
    collision:
      mode: roots              # roots | mollified
      tol_root: 1.0e-12
      g_min: 1.0e-6
      c_moll: 2.0
      moll_refine: 1
      moll_strip: 0
      eps_pv: null             # null -> 4 dk max|omega'|
      include_vlasov: false
    initial:
      c: [0.8, 0.7, 0.6]       # cosine-profile occupations (defaults for n = 1)
      b: [0.5, 0.45, 0.35]
      phi: [0.4, -0.9, 2.0]
      rho: 0.25
      shift_half: false        # replace W(k) by W(k + 1/2)
    run:
      t_end: 1.0
      dt: 5.0e-4
      sample_every: 20
      snapshot_times: []       # times at which full states are written
      stop_tol: null           # end early when consecutive samples differ less
      psd_reject: 1.0e-6
      fit_window: null         # [t0, t1] for decay fits (compare-potentials)
    stationary:                # stationary-only targets; defaults derive from
      kind: auto               #   the initial state.  auto | nonthermal | thermal
      eps: null                # explicit spin-eigenvalue targets
      energy: null             # explicit energy target (thermal solves)
      h_amp: 0.0               # target profile amp * cos(2 pi harmonic k)
      h_harmonic: 1            #   (odd harmonic keeps the required antisymmetry)
    oracle:
      n_modes: 3
      cutoff_two_point: 60
      cutoff_moments: 40
      n_moment_trials: 20
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
import yaml

from .grid import DEFAULT_STATE

__all__ = ["ScenarioConfig", "load_config", "parse_config", "SCENARIOS"]

SCENARIOS = (
    "relax",
    "compare-potentials",
    "negative-temperature",
    "prethermalization",
    "stationary-only",
    "oracle-suite",
)

_POTENTIAL_KINDS = ("onsite", "inverse_cosine", "table")


def _check_keys(mapping, allowed, where):
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def _as_float_list(value, name):
    out = [float(v) for v in value]
    if not out:
        raise ValueError(f"{name} must be a nonempty list")
    return out


@dataclass
class ScenarioConfig:
    """Fully resolved scenario parameters (see the module docstring schema)."""

    scenario: str = "relax"
    seed: int = 0
    threads: int = 1
    output_dir: str = "out"
    quadrature_cache: str | None = None
    # model
    spin_n: int = 1
    grid_n: int = 64
    eta: float = 0.0
    potential_kind: str = "onsite"
    potential_table: list | None = None
    # collision
    mode: str = "roots"
    tol_root: float = 1e-12
    g_min: float = 1e-6
    c_moll: float = 2.0
    moll_refine: int = 1
    moll_strip: int = 0
    eps_pv: float | None = None
    include_vlasov: bool = False
    # initial state
    initial_c: list = dataclass_field(default_factory=lambda: list(DEFAULT_STATE["c"]))
    initial_b: list = dataclass_field(default_factory=lambda: list(DEFAULT_STATE["b"]))
    initial_phi: list = dataclass_field(default_factory=lambda: list(DEFAULT_STATE["phi"]))
    initial_rho: float = DEFAULT_STATE["rho"]
    shift_half: bool = False
    # run
    t_end: float = 1.0
    dt: float = 5e-4
    sample_every: int = 20
    snapshot_times: list = dataclass_field(default_factory=list)
    stop_tol: float | None = None
    psd_reject: float = 1e-6
    fit_window: list | None = None
    # stationary targets
    stationary_kind: str = "auto"
    stationary_eps: list | None = None
    stationary_energy: float | None = None
    stationary_h_amp: float = 0.0
    stationary_h_harmonic: int = 1
    # oracle suite
    oracle_n_modes: int = 3
    oracle_cutoff_two_point: int = 60
    oracle_cutoff_moments: int = 40
    oracle_n_moment_trials: int = 20

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; pick one of {SCENARIOS}")
        if self.spin_n < 0:
            raise ValueError("spin_n must be nonnegative")
        if self.grid_n <= 0 or self.grid_n % 2:
            raise ValueError(
                f"grid_n must be positive and even so the point set closes under "
                f"the reflection k -> 1/2 - k, got {self.grid_n}"
            )
        if self.potential_kind not in _POTENTIAL_KINDS:
            raise ValueError(
                f"unknown potential kind {self.potential_kind!r}; allowed {_POTENTIAL_KINDS}"
            )
        for name in ("tol_root", "g_min", "c_moll", "dt", "psd_reject"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.eps_pv is not None and self.eps_pv <= 0.0:
            raise ValueError("eps_pv must be positive")
        if self.stop_tol is not None and self.stop_tol <= 0.0:
            raise ValueError("stop_tol must be positive")
        if self.t_end < 0.0:
            raise ValueError("t_end must be nonnegative")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.stationary_kind not in ("auto", "nonthermal", "thermal"):
            raise ValueError(f"unknown stationary kind {self.stationary_kind!r}")
        if self.stationary_h_harmonic % 2 == 0:
            raise ValueError("h harmonic must be odd (antisymmetry under k -> 1/2 - k)")
        if self.fit_window is not None:
            t0, t1 = (float(v) for v in self.fit_window)
            if not t0 < t1:
                raise ValueError("fit_window must be an increasing pair [t0, t1]")
            self.fit_window = [t0, t1]

    @property
    def dim(self):
        return 2 * self.spin_n + 1

    def resolved(self):
        """Plain nested dict of every resolved parameter (for run_meta.json)."""
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "quadrature_cache": self.quadrature_cache,
            "model": {
                "spin_n": self.spin_n,
                "grid_n": self.grid_n,
                "eta": self.eta,
                "potential": {"kind": self.potential_kind, "table": self.potential_table},
            },
            "collision": {
                "mode": self.mode,
                "tol_root": self.tol_root,
                "g_min": self.g_min,
                "c_moll": self.c_moll,
                "moll_refine": self.moll_refine,
                "moll_strip": self.moll_strip,
                "eps_pv": self.eps_pv,
                "include_vlasov": self.include_vlasov,
            },
            "initial": {
                "c": list(self.initial_c),
                "b": list(self.initial_b),
                "phi": list(self.initial_phi),
                "rho": self.initial_rho,
                "shift_half": self.shift_half,
            },
            "run": {
                "t_end": self.t_end,
                "dt": self.dt,
                "sample_every": self.sample_every,
                "snapshot_times": list(self.snapshot_times),
                "stop_tol": self.stop_tol,
                "psd_reject": self.psd_reject,
                "fit_window": self.fit_window,
            },
            "stationary": {
                "kind": self.stationary_kind,
                "eps": self.stationary_eps,
                "energy": self.stationary_energy,
                "h_amp": self.stationary_h_amp,
                "h_harmonic": self.stationary_h_harmonic,
            },
            "oracle": {
                "n_modes": self.oracle_n_modes,
                "cutoff_two_point": self.oracle_cutoff_two_point,
                "cutoff_moments": self.oracle_cutoff_moments,
                "n_moment_trials": self.oracle_n_moment_trials,
            },
        }


def parse_config(data):
    """ScenarioConfig from a nested mapping; unknown keys raise ValueError."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
    _check_keys(
        data,
        ("scenario", "seed", "threads", "output_dir", "quadrature_cache",
         "model", "collision", "initial", "run", "stationary", "oracle"),
        "config root",
    )
    kw = {}
    for key in ("scenario", "output_dir", "quadrature_cache"):
        if data.get(key) is not None:
            kw[key] = str(data[key])
    if "seed" in data:
        kw["seed"] = int(data["seed"])
    if "threads" in data:
        kw["threads"] = int(data["threads"])

    model = data.get("model") or {}
    _check_keys(model, ("spin_n", "grid_n", "eta", "potential"), "model")
    if "spin_n" in model:
        kw["spin_n"] = int(model["spin_n"])
    if "grid_n" in model:
        kw["grid_n"] = int(model["grid_n"])
    if "eta" in model:
        kw["eta"] = float(model["eta"])
    pot = model.get("potential") or {}
    if isinstance(pot, str):
        pot = {"kind": pot}
    _check_keys(pot, ("kind", "table"), "model.potential")
    if "kind" in pot:
        kw["potential_kind"] = str(pot["kind"])
    if pot.get("table") is not None:
        kw["potential_table"] = _as_float_list(pot["table"], "model.potential.table")

    coll = data.get("collision") or {}
    _check_keys(coll, ("mode", "tol_root", "g_min", "c_moll", "moll_refine",
                       "moll_strip", "eps_pv", "include_vlasov"), "collision")
    if "mode" in coll:
        kw["mode"] = str(coll["mode"])
    for key in ("tol_root", "g_min", "c_moll"):
        if key in coll:
            kw[key] = float(coll[key])
    for key in ("moll_refine", "moll_strip"):
        if key in coll:
            kw[key] = int(coll[key])
    if coll.get("eps_pv") is not None:
        kw["eps_pv"] = float(coll["eps_pv"])
    if "include_vlasov" in coll:
        kw["include_vlasov"] = bool(coll["include_vlasov"])

    initial = data.get("initial") or {}
    _check_keys(initial, ("c", "b", "phi", "rho", "shift_half"), "initial")
    for key, target in (("c", "initial_c"), ("b", "initial_b"), ("phi", "initial_phi")):
        if initial.get(key) is not None:
            kw[target] = _as_float_list(initial[key], f"initial.{key}")
    if "rho" in initial:
        kw["initial_rho"] = float(initial["rho"])
    if "shift_half" in initial:
        kw["shift_half"] = bool(initial["shift_half"])

    run = data.get("run") or {}
    _check_keys(run, ("t_end", "dt", "sample_every", "snapshot_times",
                      "stop_tol", "psd_reject", "fit_window"), "run")
    for key in ("t_end", "dt", "psd_reject"):
        if key in run:
            kw[key] = float(run[key])
    if "sample_every" in run:
        kw["sample_every"] = int(run["sample_every"])
    if run.get("snapshot_times") is not None:
        kw["snapshot_times"] = [float(t) for t in run.get("snapshot_times", [])]
    if run.get("stop_tol") is not None:
        kw["stop_tol"] = float(run["stop_tol"])
    if run.get("fit_window") is not None:
        kw["fit_window"] = [float(v) for v in run["fit_window"]]

    stat = data.get("stationary") or {}
    _check_keys(stat, ("kind", "eps", "energy", "h_amp", "h_harmonic"), "stationary")
    if "kind" in stat:
        kw["stationary_kind"] = str(stat["kind"])
    if stat.get("eps") is not None:
        kw["stationary_eps"] = _as_float_list(stat["eps"], "stationary.eps")
    if stat.get("energy") is not None:
        kw["stationary_energy"] = float(stat["energy"])
    if "h_amp" in stat:
        kw["stationary_h_amp"] = float(stat["h_amp"])
    if "h_harmonic" in stat:
        kw["stationary_h_harmonic"] = int(stat["h_harmonic"])

    oracle = data.get("oracle") or {}
    _check_keys(oracle, ("n_modes", "cutoff_two_point", "cutoff_moments",
                         "n_moment_trials"), "oracle")
    for key, target in (("n_modes", "oracle_n_modes"),
                        ("cutoff_two_point", "oracle_cutoff_two_point"),
                        ("cutoff_moments", "oracle_cutoff_moments"),
                        ("n_moment_trials", "oracle_n_moment_trials")):
        if key in oracle:
            kw[target] = int(oracle[key])

    cfg = ScenarioConfig(**kw)
    d = cfg.dim
    for name, values in (("initial.c", cfg.initial_c), ("initial.b", cfg.initial_b),
                         ("initial.phi", cfg.initial_phi)):
        if len(values) != d:
            raise ValueError(f"{name} must have length 2*spin_n+1 = {d}, got {len(values)}")
    if cfg.stationary_eps is not None and len(cfg.stationary_eps) != d:
        raise ValueError(f"stationary.eps must have length {d}")
    if np.any(np.asarray(cfg.initial_c) <= np.abs(cfg.initial_b)):
        raise ValueError("initial profile needs c > |b| componentwise")
    return cfg


def load_config(path):
    """Parse a YAML config file into a ScenarioConfig."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return parse_config(data)
