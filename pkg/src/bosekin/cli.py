"""Command-line scenario runner: simulate, solve, validate, cross-check.

Subcommands
-----------
run         execute the scenario named in the config (relax, compare-potentials,
            negative-temperature, prethermalization, stationary-only,
            oracle-suite) and write its output files.
validate    dry-run report: grid symmetry, initial-state positivity, quadrature
            root diagnostics, stationary-solve feasibility.  No simulation.
stationary  shortcut: run the stationary-only scenario for the config's targets.
oracle      shortcut: run the oracle-suite scenario (Gaussian-state checks).

Flags: --config PATH (YAML, see config module; defaults apply when omitted),
--out DIR, --threads K, --seed S.

Every run writes run_meta.json (resolved config, library versions, timings,
and the scenario's headline numbers).  Time-series go to timeline.csv with
columns t, entropy, energy, eps_0..eps_{d-1}, h_max_drift,
hs_dist_to_stationary, offdiag_norm, min_eig, sigma; configured snapshot times
produce wigner_t{T}.csv (k plus Re/Im of every matrix entry) and
spectral_t{T}.csv (k plus descending eigenvalue curves); stationary solves
produce stationary.csv.  Numbers are serialized with 17 significant digits and
the CSV bytes are reproducible for a fixed config and seed regardless of
--threads (the collision kernel reduces its thread partials in a fixed order).
No plotting here: files are plain data, ready for any plotting front end.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from dataclasses import replace
from itertools import permutations

import numpy as np
import scipy

from .collision import CollisionConfig, build_or_load_quadrature
from .config import ScenarioConfig, load_config
from .grid import (
    BrillouinGrid,
    Dispersion,
    PairPotential,
    build_initial_state,
    eigendecompose,
    wrap_torus,
)
from .integrate import evolve
from .observables import charges, entropy, fit_decay_rate
from .quasifree import (
    MomentRequest,
    OneParticleHamiltonian,
    TruncatedFockOracle,
    permanent,
    random_one_particle_hamiltonian,
    two_point,
    wick_moment,
)
from .stationary import (
    NonthermalProfile,
    ThermalParams,
    bose_occupation,
    build_be_state,
    solve_nonthermal,
    solve_thermal,
)

__all__ = ["main"]


def _package_version():
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


# --- serialization helpers ---------------------------------------------------


def _fmt(x):
    """One number with 17 significant digits (shortest round-trip superset)."""
    return "%.17g" % x


def _time_tag(t):
    """Filename tag for a snapshot time (0.25 -> '0.25', 1.0 -> '1')."""
    return f"{float(t):g}"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        val = float(obj)
        return None if np.isnan(val) else val
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


class OutputDir:
    """Output directory handle that remembers which files were written."""

    def __init__(self, path):
        self.path = path
        self.written = []
        os.makedirs(path, exist_ok=True)

    def file(self, name):
        self.written.append(name)
        return os.path.join(self.path, name)


def _write_csv(path, header, rows):
    """Rows of floats with a header line; 17 significant digits, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_timeline(outdir, record):
    d = record.eps.shape[1]
    header = (
        ["t", "entropy", "energy"]
        + [f"eps_{s}" for s in range(d)]
        + ["h_max_drift", "hs_dist_to_stationary", "offdiag_norm", "min_eig", "sigma"]
    )
    cols = np.column_stack(
        [
            record.times,
            record.entropy,
            record.energy,
            record.eps,
            record.h_max_drift,
            record.hs_dist_stationary,
            record.offdiag,
            record.min_eig,
            record.sigma,
        ]
    )
    _write_csv(outdir.file("timeline.csv"), header, cols)


def write_wigner(outdir, field, tag):
    d = field.dim
    header = ["k"]
    for a in range(d):
        for b in range(d):
            header += [f"re_w{a}{b}", f"im_w{a}{b}"]
    vals = field.values
    rows = np.empty((field.grid.n_points, 1 + 2 * d * d))
    rows[:, 0] = field.grid.points
    flat = vals.reshape(field.grid.n_points, d * d)
    rows[:, 1::2] = flat.real
    rows[:, 2::2] = flat.imag
    _write_csv(outdir.file(f"wigner_t{tag}.csv"), header, rows)


def write_spectral(outdir, field, tag):
    curve = eigendecompose(field)
    d = field.dim
    header = ["k"] + [f"lambda_{s}" for s in range(d)]
    rows = np.column_stack([field.grid.points, curve.eigenvalues])
    _write_csv(outdir.file(f"spectral_t{tag}.csv"), header, rows)


def write_stationary(outdir, grid, params, disp=None):
    """Predicted stationary state: occupations plus its defining parameters."""
    k = grid.points
    if isinstance(params, NonthermalProfile):
        d = params.a.size
        occ = bose_occupation(params.f_values[:, None] - params.a[None, :])
        header = (["k", "f"] + [f"w_{s}" for s in range(d)] + [f"a_{s}" for s in range(d)])
        consts = np.broadcast_to(params.a, (grid.n_points, d))
        rows = np.column_stack([k, params.f_values, occ, consts])
    elif isinstance(params, ThermalParams):
        if disp is None:
            raise ValueError("thermal stationary output needs the dispersion")
        d = params.mu.size
        occ = bose_occupation(params.beta * (disp.omega(k)[:, None] - params.mu[None, :]))
        header = (["k"] + [f"w_{s}" for s in range(d)] + ["beta"] + [f"mu_{s}" for s in range(d)])
        rows = np.column_stack(
            [k, occ, np.full(grid.n_points, params.beta),
             np.broadcast_to(params.mu, (grid.n_points, d))]
        )
    else:
        raise TypeError(f"unsupported stationary parameters {type(params)!r}")
    _write_csv(outdir.file("stationary.csv"), header, rows)


def write_snapshots(outdir, record):
    for t, snap in zip(record.snapshot_times, record.snapshots):
        tag = _time_tag(t)
        write_wigner(outdir, snap, tag)
        write_spectral(outdir, snap, tag)


# --- model assembly ----------------------------------------------------------


def build_model(cfg):
    """(grid, dispersion, potential) from a ScenarioConfig."""
    grid = BrillouinGrid(cfg.grid_n)
    disp = Dispersion(cfg.eta)
    if cfg.potential_kind == "table":
        pot = PairPotential("table", table=cfg.potential_table)
    else:
        pot = PairPotential(cfg.potential_kind)
    return grid, disp, pot


def build_collision_config(cfg):
    return CollisionConfig(
        mode=cfg.mode,
        tol_root=cfg.tol_root,
        g_min=cfg.g_min,
        c_moll=cfg.c_moll,
        moll_refine=cfg.moll_refine,
        moll_strip=cfg.moll_strip,
        eps_pv=cfg.eps_pv,
        include_vlasov=cfg.include_vlasov,
        threads=cfg.threads,
    )


def build_initial(cfg, grid):
    w0 = build_initial_state(
        grid,
        n=cfg.spin_n,
        c=np.asarray(cfg.initial_c),
        b=np.asarray(cfg.initial_b),
        phi=np.asarray(cfg.initial_phi),
        rho=cfg.initial_rho,
    )
    return w0.shifted_half() if cfg.shift_half else w0


def predict_stationary(grid, disp, field):
    """Stationary parameters implied by a state's conserved charges.

    Nearest-neighbour dispersion conserves the whole h-profile, so the limit is
    the nonthermal family; any longer-range hopping leaves only the spin matrix
    and the energy, so the limit is thermal.
    """
    ch = charges(field, disp)
    if disp.eta == 0.0:
        params = solve_nonthermal(grid, ch.h_profile, ch.eps, basis=ch.basis)
        return params, build_be_state(grid, params)
    params = solve_thermal(grid, disp, ch.eps, ch.energy, basis=ch.basis)
    return params, build_be_state(grid, params, disp)


def _params_meta(params):
    if isinstance(params, NonthermalProfile):
        return {
            "stationary_kind": "nonthermal",
            "a_sigma": params.a.tolist(),
            "f_max": float(np.max(np.abs(params.f_values))),
        }
    return {
        "stationary_kind": "thermal",
        "beta": params.beta,
        "mu_sigma": params.mu.tolist(),
    }


# --- scenario runners ----------------------------------------------------------


def _evolve_scenario(cfg, outdir, meta):
    """Shared body of the time-evolution scenarios; fills meta in place and
    returns (record, stationary params, stationary state)."""
    t0 = time.perf_counter()
    grid, disp, pot = build_model(cfg)
    ccfg = build_collision_config(cfg)
    w0 = build_initial(cfg, grid)
    meta["timings_s"]["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    quad = build_or_load_quadrature(grid, disp, cfg.tol_root, cfg.quadrature_cache)
    meta["timings_s"]["quadrature"] = time.perf_counter() - t0

    params, w_stat = predict_stationary(grid, disp, w0)
    write_stationary(outdir, grid, params, disp)

    t0 = time.perf_counter()
    record = evolve(
        w0,
        cfg.t_end,
        cfg.dt,
        disp,
        pot,
        quad,
        ccfg,
        sample_every=cfg.sample_every,
        snapshot_times=cfg.snapshot_times,
        reference=w_stat,
        psd_reject=cfg.psd_reject,
        stop_tol=cfg.stop_tol,
    )
    meta["timings_s"]["evolve"] = time.perf_counter() - t0

    write_timeline(outdir, record)
    write_snapshots(outdir, record)
    results = dict(_params_meta(params))
    results.update(
        final_time=float(record.times[-1]),
        final_entropy=float(record.entropy[-1]),
        final_hs_dist_to_stationary=float(record.hs_dist_stationary[-1]),
        n_steps=record.n_steps,
        n_rejected=record.n_rejected,
        stopped_early=record.stopped_early,
    )
    meta["results"].update(results)
    return record, params, w_stat


def run_relax(cfg, outdir, meta):
    _evolve_scenario(cfg, outdir, meta)


def run_negative_temperature(cfg, outdir, meta):
    """Stationary parameters of the (typically half-shifted) initial state.

    With t_end > 0 the state is also evolved toward that prediction; with
    t_end = 0 only the solve and the stationary/spectral outputs are produced.
    """
    if cfg.t_end > 0.0:
        _evolve_scenario(cfg, outdir, meta)
        return
    grid, disp, pot = build_model(cfg)
    w0 = build_initial(cfg, grid)
    params, w_stat = predict_stationary(grid, disp, w0)
    write_stationary(outdir, grid, params, disp)
    write_wigner(outdir, w0, "0")
    write_spectral(outdir, w0, "0")
    meta["results"].update(_params_meta(params))
    meta["results"]["initial_entropy"] = entropy(w0)
    meta["results"]["stationary_entropy"] = entropy(w_stat)


def run_prethermalization(cfg, outdir, meta):
    """Two-stage relaxation: fast approach to the nearest-neighbour stationary
    family, slow drift to the thermal state once eta breaks h conservation.

    Records both reference entropies and the first sample times within 1% of
    each (timescale separation = their ratio).
    """
    grid, disp, pot = build_model(cfg)
    w0 = build_initial(cfg, grid)
    ch = charges(w0, disp)
    plateau_params = solve_nonthermal(grid, ch.h_profile, ch.eps, basis=ch.basis)
    s_plateau = entropy(build_be_state(grid, plateau_params))
    record, _, w_stat = _evolve_scenario(cfg, outdir, meta)
    s_thermal = entropy(w_stat)
    s0 = float(record.entropy[0])

    def first_within(target):
        # "within 1%" is measured against the total entropy rise toward the
        # target, so the thermal threshold sits strictly above the plateau
        thr = target - 0.01 * (target - s0)
        hit = np.nonzero(record.entropy >= thr)[0]
        return float(record.times[hit[0]]) if hit.size else None

    t_plateau = first_within(s_plateau)
    t_thermal = first_within(s_thermal)
    meta["results"].update(
        entropy_plateau=s_plateau,
        entropy_thermal=s_thermal,
        t_reach_plateau=t_plateau,
        t_reach_thermal=t_thermal,
        timescale_ratio=(t_thermal / t_plateau if t_plateau and t_thermal else None),
    )


def run_compare_potentials(cfg, outdir, meta):
    """Same relaxation run under both shipped potentials; fitted decay rates of
    the conserved-basis off-diagonal norm land in the top-level run_meta."""
    window = cfg.fit_window or [0.15 * cfg.t_end, 0.9 * cfg.t_end]
    rates = {}
    for kind in ("onsite", "inverse_cosine"):
        sub_cfg = replace(cfg, potential_kind=kind, potential_table=None)
        sub_out = OutputDir(os.path.join(outdir.path, kind))
        sub_meta = _new_meta(sub_cfg)
        record, _, _ = _evolve_scenario(sub_cfg, sub_out, sub_meta)
        rate, r2 = fit_decay_rate(record.times, record.offdiag, window=window)
        sub_meta["results"]["offdiag_decay_rate"] = rate
        sub_meta["results"]["offdiag_fit_r_squared"] = r2
        _finish_meta(sub_out, sub_meta)
        rates[kind] = {"rate": rate, "r_squared": r2}
        outdir.written += [os.path.join(kind, name) for name in sub_out.written]
    meta["results"]["fit_window"] = list(window)
    meta["results"]["rates"] = rates
    meta["results"]["rate_ratio_inverse_cosine_to_onsite"] = (
        rates["inverse_cosine"]["rate"] / rates["onsite"]["rate"]
    )


def _stationary_targets(cfg, grid, disp):
    """Resolve stationary-solve targets: explicit config values win, anything
    unspecified falls back to the charges of the configured initial state."""
    eps = h = energy = basis = None
    if cfg.stationary_eps is not None:
        eps = np.asarray(cfg.stationary_eps, dtype=float)
        h = cfg.stationary_h_amp * np.cos(
            2.0 * np.pi * cfg.stationary_h_harmonic * grid.points
        )
        energy = cfg.stationary_energy
    if eps is None or (cfg.stationary_kind == "thermal" and energy is None):
        ch = charges(build_initial(cfg, grid), disp)
        if eps is None:
            eps, h, basis = ch.eps, ch.h_profile, ch.basis
        if energy is None:
            energy = ch.energy
    return eps, h, energy, basis


def run_stationary_only(cfg, outdir, meta):
    grid, disp, _ = build_model(cfg)
    kind = cfg.stationary_kind
    if kind == "auto":
        kind = "nonthermal" if cfg.eta == 0.0 else "thermal"
    eps, h, energy, basis = _stationary_targets(cfg, grid, disp)
    if kind == "nonthermal":
        params = solve_nonthermal(grid, h, eps, basis=basis)
        w_stat = build_be_state(grid, params)
    else:
        params = solve_thermal(grid, disp, eps, energy, basis=basis)
        w_stat = build_be_state(grid, params, disp)
    write_stationary(outdir, grid, params, disp)
    write_spectral(outdir, w_stat, "inf")
    meta["results"].update(_params_meta(params))
    meta["results"]["eps_targets"] = np.asarray(eps).tolist()
    meta["results"]["stationary_entropy"] = entropy(w_stat)


def run_oracle_suite(cfg, outdir, meta):
    """Quasi-free-state cross-checks at desk scale; all tolerances recorded."""
    rng = np.random.default_rng(cfg.seed)
    checks = []

    def check(name, value, tol):
        checks.append({"name": name, "error": float(value), "tol": tol, "ok": bool(value <= tol)})

    check("permanent_1x1", abs(permanent(np.array([[1.0]])) - 1.0), 1e-15)
    check("permanent_2x2", abs(permanent(np.array([[1.0, 2.0], [3.0, 4.0]])) - 10.0), 1e-14)
    a5 = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    naive = sum(np.prod(a5[range(5), p]) for p in permutations(range(5)))
    check("permanent_5x5_vs_naive", abs(permanent(a5) - naive) / abs(naive), 1e-13)

    ham1 = OneParticleHamiltonian(np.array([[np.log(2.0)]]))
    check("two_point_single_mode", abs(two_point(ham1)[0, 0] - 1.0), 1e-14)
    w = two_point(ham1)[0, 0].real
    req = MomentRequest(((0, "create"), (0, "annihilate"), (0, "create"), (0, "annihilate")))
    check("occupation_second_moment", abs(wick_moment(ham1, req) - (2 * w * w + w)), 1e-13)

    ham = random_one_particle_hamiltonian(cfg.oracle_n_modes, rng)
    t0 = time.perf_counter()
    oracle2 = TruncatedFockOracle(ham, cutoff=cfg.oracle_cutoff_two_point)
    g_exact = two_point(ham)
    g_brute = oracle2.two_point()
    check(
        "two_point_vs_truncated_fock",
        np.max(np.abs(g_exact - g_brute)) / np.max(np.abs(g_exact)),
        1e-8,
    )
    meta["timings_s"]["two_point_oracle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    oracle3 = TruncatedFockOracle(ham, cutoff=cfg.oracle_cutoff_moments)
    worst = 0.0
    m = cfg.oracle_n_modes
    for _ in range(cfg.oracle_n_moment_trials):
        pairs = int(rng.integers(1, 4))
        modes_c = rng.integers(0, m, size=pairs)
        modes_a = rng.integers(0, m, size=pairs)
        factors = []
        for i in range(pairs):
            factors += [(int(modes_c[i]), "create"), (int(modes_a[i]), "annihilate")]
        order = rng.permutation(2 * pairs)
        req = MomentRequest(tuple(factors[j] for j in order))
        exact = wick_moment(ham, req)
        brute = oracle3.moment(req)
        scale = max(abs(exact), 1e-2)
        worst = max(worst, abs(exact - brute) / scale)
    check("moments_vs_truncated_fock", worst, 1e-6)
    meta["timings_s"]["moment_oracle"] = time.perf_counter() - t0

    worst = 0.0
    for _ in range(50):
        i, j = int(rng.integers(0, m)), int(rng.integers(0, m))
        prefix = ((int(rng.integers(0, m)), "create"),)
        suffix = ((int(rng.integers(0, m)), "annihilate"),)
        swapped = wick_moment(ham, MomentRequest(prefix + ((j, "annihilate"), (i, "create")) + suffix))
        normal = wick_moment(ham, MomentRequest(prefix + ((i, "create"), (j, "annihilate")) + suffix))
        removed = wick_moment(ham, MomentRequest(prefix + suffix)) if i == j else 0.0
        worst = max(worst, abs(swapped - (normal + removed)))
    check("commutation_recursion", worst, 1e-12)

    lam_min = float(np.linalg.eigvalsh(two_point(ham)).min())
    check("two_point_psd", max(0.0, -lam_min), 1e-12)

    with open(outdir.file("oracle.json"), "w", encoding="utf-8") as fh:
        json.dump(checks, fh, indent=2, default=_json_default)
        fh.write("\n")
    n_failed = sum(0 if c["ok"] else 1 for c in checks)
    meta["results"]["checks"] = checks
    meta["results"]["n_failed"] = n_failed
    if n_failed:
        raise RuntimeError(f"{n_failed} oracle check(s) failed; see oracle.json")


_SCENARIO_RUNNERS = {
    "relax": run_relax,
    "compare-potentials": run_compare_potentials,
    "negative-temperature": run_negative_temperature,
    "prethermalization": run_prethermalization,
    "stationary-only": run_stationary_only,
    "oracle-suite": run_oracle_suite,
}


# --- meta plumbing -------------------------------------------------------------


def _new_meta(cfg):
    return {
        "scenario": cfg.scenario,
        "status": "ok",
        "error": None,
        "partial_outputs": False,
        "config": cfg.resolved(),
        "versions": {
            "package": _package_version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "timings_s": {},
        "results": {},
        "outputs": [],
    }


def _finish_meta(outdir, meta, started=None):
    if started is not None:
        meta["timings_s"]["total"] = time.perf_counter() - started
    meta["outputs"] = list(outdir.written)
    path = os.path.join(outdir.path, "run_meta.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, default=_json_default)
        fh.write("\n")
    outdir.written.append("run_meta.json")


def execute_scenario(cfg, out_path):
    """Run cfg's scenario into out_path; returns process exit status."""
    outdir = OutputDir(out_path)
    meta = _new_meta(cfg)
    started = time.perf_counter()
    try:
        _SCENARIO_RUNNERS[cfg.scenario](cfg, outdir, meta)
    except Exception as exc:  # noqa: BLE001 - report any module error, exit nonzero
        meta["status"] = "error"
        meta["error"] = f"{type(exc).__name__}: {exc}"
        meta["partial_outputs"] = bool(outdir.written)
        _finish_meta(outdir, meta, started)
        print(f"error: {meta['error']}", file=sys.stderr)
        return 1
    _finish_meta(outdir, meta, started)
    return 0


# --- validate ------------------------------------------------------------------


def run_validation(cfg):
    """Dry-run checks; returns (report lines, all_ok).  Nothing is simulated."""
    checks = []

    def record(name, fn):
        try:
            detail = fn()
            checks.append((name, True, detail))
        except Exception as exc:  # noqa: BLE001 - failures belong in the report
            checks.append((name, False, f"{type(exc).__name__}: {exc}"))

    state = {}

    def check_grid():
        grid = BrillouinGrid(cfg.grid_n)
        state["grid"] = grid
        refl = grid.reflect_index(np.arange(grid.n_points))
        k = grid.points
        err = np.max(np.abs(wrap_torus(k[refl] - (0.5 - k))))
        if err > 1e-15:
            raise ValueError(f"reflection closure residual {err:.3e}")
        return f"N = {grid.n_points}, reflection k -> 1/2 - k closes exactly"

    def check_initial():
        grid = state.get("grid") or BrillouinGrid(cfg.grid_n)
        w0 = build_initial(cfg, grid)
        state["w0"] = w0
        lam = w0.min_eigenvalue()
        if lam < -1e-12:
            raise ValueError(f"initial state has negative eigenvalue {lam:.3e}")
        return f"min eigenvalue {lam:.3e} (positive semidefinite)"

    def check_quadrature():
        grid = state.get("grid") or BrillouinGrid(cfg.grid_n)
        disp = Dispersion(cfg.eta)
        quad = build_or_load_quadrature(grid, disp, cfg.tol_root, cfg.quadrature_cache)
        kept = quad.node_count(cfg.g_min)
        if kept == 0:
            raise ValueError("energy-shell quadrature is empty after the g_min cut")
        return (
            f"{kept} of {quad.i1.size} root nodes pass |g'| >= {cfg.g_min:g}; "
            f"{quad.n_dropped_tol} scan brackets failed bisection"
        )

    def check_stationary():
        grid = state.get("grid") or BrillouinGrid(cfg.grid_n)
        disp = Dispersion(cfg.eta)
        eps, h, energy, basis = _stationary_targets(cfg, grid, disp)
        if cfg.eta == 0.0 or cfg.stationary_kind == "nonthermal":
            params = solve_nonthermal(grid, h, eps, basis=basis)
            return f"nonthermal solve feasible, a in [{params.a.min():.4g}, {params.a.max():.4g}]"
        params = solve_thermal(grid, disp, eps, energy, basis=basis)
        return f"thermal solve feasible, beta = {params.beta:.6g}"

    record("grid-symmetry", check_grid)
    record("initial-state-psd", check_initial)
    record("quadrature-roots", check_quadrature)
    record("stationary-feasibility", check_stationary)
    lines = [
        f"{'ok  ' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in checks
    ]
    return lines, all(ok for _, ok, _ in checks)


# --- entry point -----------------------------------------------------------------


def _add_common_flags(p):
    p.add_argument("--config", metavar="PATH", help="YAML scenario config (defaults when omitted)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    p.add_argument("--threads", metavar="K", type=int, help="collision worker threads")
    p.add_argument("--seed", metavar="S", type=int, help="RNG seed (overrides config)")


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.out is not None:
        cfg.output_dir = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ValueError("threads must be >= 1")
        cfg.threads = args.threads
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bosekin",
        description="Kinetic simulator for weakly interacting lattice bosons",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "execute the configured scenario"),
        ("validate", "dry-run config/grid/quadrature/stationary checks"),
        ("stationary", "solve the stationary state only"),
        ("oracle", "run the quasi-free moment oracle suite"),
    ):
        _add_common_flags(sub.add_parser(name, help=text))
    args = parser.parse_args(argv)

    try:
        cfg = _load_cfg(args)
    except Exception as exc:  # noqa: BLE001 - config errors are user errors
        if args.command == "validate":
            print(f"FAIL config: {type(exc).__name__}: {exc}")
            return 2
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        lines, ok = run_validation(cfg)
        print(f"ok   config: scenario {cfg.scenario!r}, N = {cfg.grid_n}, "
              f"eta = {cfg.eta:g}, potential {cfg.potential_kind!r}")
        for line in lines:
            print(line)
        return 0 if ok else 2

    if args.command == "stationary":
        cfg.scenario = "stationary-only"
    elif args.command == "oracle":
        cfg.scenario = "oracle-suite"
    return execute_scenario(cfg, cfg.output_dir)


if __name__ == "__main__":
    sys.exit(main())
