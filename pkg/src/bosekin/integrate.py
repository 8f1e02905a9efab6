"""Fixed-step RK4 time integration of the kinetic equation with trajectory records.

The march advances dW/dt = C[W] with the classical four-stage Runge-Kutta
scheme; every stage output is re-Hermitized (the exact flow preserves
Hermiticity, so this only removes rounding skew).  Positivity is monitored,
never projected: after each nominal step the minimum eigenvalue over the grid
is checked, and a step that dips below -psd_reject is rejected and retried as
two half steps (recursively, up to max_halvings, after which the run aborts --
the state is approaching the cone boundary faster than the step can resolve,
which in practice means the collision kernel is being driven outside its
validity rather than a step-size problem).  The gain structure of the
collision operator should keep exact trajectories positive, so rejections are
rare and counted in the record.

Observables are sampled every sample_every steps (plus the initial and final
states): entropy, conserved charges, drift of the h-profile, Hilbert-Schmidt
distance to a caller-supplied reference state (normally the predicted
stationary state), the off-diagonal norm in the conserved basis frozen at
t = 0, the minimum eigenvalue, and the entropy production, whose collision
evaluation is shared with the first stage of the following step.  Optional
full-state snapshots are captured at the steps nearest the requested times.

A run can stop early once the state stops moving: with stop_tol set, the
march ends when the Hilbert-Schmidt distance between consecutive samples
falls below it (the practical t -> infinity criterion).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .collision import eval_C
from .grid import WignerField, hermitize, hs_distance
from .observables import charges, entropy, entropy_production, offdiag_norm

__all__ = ["TrajectoryRecord", "rk4_step", "evolve"]


@dataclass
class TrajectoryRecord:
    """Sampled observables of one simulation run plus the final state.

    Arrays are indexed by sample; eps has one column per component.  sigma is
    the entropy production at the sample state (spectrum floored at lam_floor
    for the logarithms).  hs_dist_stationary is NaN when no reference state
    was supplied.  snapshots hold deep copies of the state at the sample steps
    nearest the requested snapshot times.
    """

    times: np.ndarray
    entropy: np.ndarray
    energy: np.ndarray
    eps: np.ndarray
    h_max_drift: np.ndarray
    hs_dist_stationary: np.ndarray
    offdiag: np.ndarray
    min_eig: np.ndarray
    sigma: np.ndarray
    snapshot_times: list = dataclass_field(default_factory=list)
    snapshots: list = dataclass_field(default_factory=list)
    final_state: WignerField | None = None
    n_steps: int = 0
    n_rejected: int = 0
    stopped_early: bool = False

    def validate(self):
        if self.times.size == 0:
            raise ValueError("empty trajectory record")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("sample times are not strictly increasing")
        if not np.all(np.isfinite(self.entropy)):
            raise ValueError("non-finite entropy in the record")
        return self


def rk4_step(field, dt, disp, pot, quad, cfg, k1=None):
    """One classical Runge-Kutta step of dW/dt = C[W]; result re-Hermitized.

    k1 may carry a precomputed C[W(t)] (the evaluation at the step's starting
    state) so callers that just sampled observables there do not pay for it
    twice.  No positivity logic here; evolve() owns rejection.
    """
    if dt <= 0.0:
        raise ValueError(f"time step must be positive, got {dt}")
    grid = field.grid
    y = field.values
    if k1 is None:
        k1 = eval_C(field, disp, pot, quad, cfg)
    k2 = eval_C(WignerField(grid, y + (0.5 * dt) * k1), disp, pot, quad, cfg)
    k3 = eval_C(WignerField(grid, y + (0.5 * dt) * k2), disp, pot, quad, cfg)
    k4 = eval_C(WignerField(grid, y + dt * k3), disp, pot, quad, cfg)
    new = hermitize(y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4))
    return WignerField(grid, new, field.time + dt)


def _advance(field, dt, disp, pot, quad, cfg, psd_reject, max_halvings, k1=None, depth=0):
    """Advance by dt with rejection-halving; returns (state, n_rejections)."""
    candidate = rk4_step(field, dt, disp, pot, quad, cfg, k1=k1)
    if candidate.min_eigenvalue() >= -psd_reject:
        return candidate, 0
    if depth >= max_halvings:
        raise RuntimeError(
            f"time step underflow at t = {field.time:.6g}: minimum eigenvalue "
            f"{candidate.min_eigenvalue():.3e} still below -{psd_reject:.1e} after "
            f"{max_halvings} halvings (state near the cone boundary)"
        )
    half = 0.5 * dt
    first, r1 = _advance(field, half, disp, pot, quad, cfg,
                         psd_reject, max_halvings, k1=k1, depth=depth + 1)
    second, r2 = _advance(first, half, disp, pot, quad, cfg,
                          psd_reject, max_halvings, depth=depth + 1)
    return second, 1 + r1 + r2


def evolve(w0, t_end, dt, disp, pot, quad, cfg, *, sample_every=20,
           snapshot_times=(), reference=None, psd_reject=1e-6, max_halvings=6,
           stop_tol=None, lam_floor=1e-12, tol_psd=None):
    """March w0 to t_end and return a TrajectoryRecord (final state included).

    The number of steps is round(t_end / dt); sample times therefore sit
    exactly on the nominal step grid even when rejection-halving subdivides
    individual steps.  reference, when given, must live on the same grid and
    feeds the hs_dist_stationary column.  stop_tol ends the run early once
    consecutive samples differ by less than it in HS norm.
    """
    if dt <= 0.0:
        raise ValueError(f"time step must be positive, got {dt}")
    if t_end < 0.0:
        raise ValueError(f"t_end must be nonnegative, got {t_end}")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    if reference is not None and reference.grid.n_points != w0.grid.n_points:
        raise ValueError("reference state lives on a different grid")
    if tol_psd is None:
        tol_psd = max(psd_reject, 1e-9)

    n_steps = int(round(t_end / dt))
    field = w0.copy()
    field.time = 0.0
    ch0 = charges(field, disp)
    basis0, h0 = ch0.basis, ch0.h_profile

    snap_steps = {}
    for t_req in snapshot_times:
        idx = int(round(float(t_req) / dt))
        snap_steps.setdefault(min(max(idx, 0), n_steps), float(t_req))

    times, ents, energies, eps_rows = [], [], [], []
    h_drift, dist_ref, offd, min_eigs, sigmas = [], [], [], [], []
    snapshot_times_out, snapshots = [], []
    n_rejected = 0
    stopped_early = False
    prev_sample = None

    def take_sample(step_idx, rhs):
        t = step_idx * dt
        ch = charges(field, disp)
        times.append(t)
        ents.append(entropy(field, tol_psd=tol_psd))
        energies.append(ch.energy)
        eps_rows.append(ch.eps)
        h_drift.append(float(np.max(np.abs(ch.h_profile - h0))))
        dist_ref.append(hs_distance(field, reference) if reference is not None else np.nan)
        offd.append(offdiag_norm(field, basis0))
        min_eigs.append(field.min_eigenvalue())
        sigmas.append(entropy_production(field, rhs, lam_floor=lam_floor,
                                         tol_psd=tol_psd, mollify=True))

    step = 0
    while True:
        sampling = (step % sample_every == 0) or step == n_steps
        rhs = eval_C(field, disp, pot, quad, cfg) if sampling else None
        if sampling:
            take_sample(step, rhs)
            if step in snap_steps:
                snap = field.copy()
                snapshot_times_out.append(times[-1])
                snapshots.append(snap)
            if stop_tol is not None and prev_sample is not None:
                if hs_distance(field, prev_sample) < stop_tol:
                    stopped_early = True
                    break
            prev_sample = field.copy()
        elif step in snap_steps:
            snapshot_times_out.append(step * dt)
            snapshots.append(field.copy())
        if step >= n_steps:
            break
        field, rej = _advance(field, dt, disp, pot, quad, cfg,
                              psd_reject, max_halvings, k1=rhs)
        n_rejected += rej
        step += 1
        field.time = step * dt  # keep the clock on the exact nominal grid

    record = TrajectoryRecord(
        times=np.asarray(times),
        entropy=np.asarray(ents),
        energy=np.asarray(energies),
        eps=np.asarray(eps_rows),
        h_max_drift=np.asarray(h_drift),
        hs_dist_stationary=np.asarray(dist_ref),
        offdiag=np.asarray(offd),
        min_eig=np.asarray(min_eigs),
        sigma=np.asarray(sigmas),
        snapshot_times=snapshot_times_out,
        snapshots=snapshots,
        final_state=field,
        n_steps=step,
        n_rejected=n_rejected,
        stopped_early=stopped_early,
    )
    return record.validate()
