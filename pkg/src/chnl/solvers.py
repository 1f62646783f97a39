"""Conservative IMEX time stepping for the Cahn-Hilliard and adhesion systems.

Every system is written as ``du/dt = div(flux)`` with the flux on cell faces,
so the discrete mass changes only by roundoff.  One step is

    (1 + dt * Sigma(k)) delta^(k) = dt * rhs^(k),    u <- u + delta,

where ``rhs`` is the explicit divergence and ``Sigma`` a non-negative
stabilising symbol.  For Cahn-Hilliard

    Sigma = s_h(k) * (m_max * b(k) + S_F),

with ``s_h`` the symbol of minus the face-based Laplacian, ``b`` the symbol of
B_eps (or c_B |k|^2) and ``S_F = max(0, max m F'')``.  At high wavenumber this
is ``s_h * m_max * (J*1 + ...)``; at low wavenumber it follows the operator,
which keeps the first-order time error small.  The adhesion systems use
``Sigma = s_h(k) * (max u + |a| max u(1-u) C)`` with ``C`` bounding |K^(k)|/|k|.
"""
from __future__ import annotations

import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grid as tg
from .diagnostics import DiagnosticsRecord, ENTROPY_ANCHOR_NOTE, energy_eps, entropy_total
from .grid import TorusGrid
from .kernels import AdhesionKernel, KernelSpec
from .nonlocal_ops import LocalLimit, apply_B, apply_K
from .physics import (
    F_prime,
    MobilitySpec,
    PotentialSpec,
    mobility_times_Fpp,
    mobility_value,
    require_theta_constraint,
)
from .snapshots import write_snapshot

log = logging.getLogger(__name__)

SYSTEMS = ("ch_nonlocal", "ch_local", "adhesion_nonlocal", "adhesion_local")
FACE_RULES = ("arithmetic", "harmonic")


class SolverError(RuntimeError):
    pass


class SolverAbort(SolverError):
    def __init__(self, msg, dump_path=None):
        super().__init__(msg if dump_path is None else f"{msg} (state dumped to {dump_path})")
        self.dump_path = dump_path


class StabilityWarning(UserWarning):
    pass


@dataclass
class SolverConfig:
    system: str
    dt: float
    t_final: float
    face_average: str = "arithmetic"
    snapshot_every: int = 0
    allow_unstable: bool = False
    bound_tol: float = 1e-6

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise SolverError(f"unknown system {self.system!r}")
        if not self.dt > 0:
            raise SolverError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= 0:
            raise SolverError(f"t_final must be non-negative, got {self.t_final}")
        if self.face_average not in FACE_RULES:
            raise SolverError(f"face_average must be one of {FACE_RULES}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class Model:
    """Everything a step needs besides the state: operators and physics."""

    system: str
    grid: TorusGrid
    op: object = None  # KernelSpec or LocalLimit; CH regulariser / adhesion seminorm
    potential: PotentialSpec | None = None
    mobility: MobilitySpec = field(default_factory=MobilitySpec)
    adhesion: AdhesionKernel | None = None
    c_K: float | None = None
    a: float = 0.0

    @property
    def is_ch(self) -> bool:
        return self.system.startswith("ch")

    @property
    def monitors_bounds(self) -> bool:
        if self.is_ch:
            return self.potential.kind == "flory_huggins" and self.mobility.kind == "degenerate"
        return True

    def check_admissible(self):
        if self.system == "ch_nonlocal":
            if not isinstance(self.op, KernelSpec):
                raise SolverError("ch_nonlocal needs a kernel")
            require_theta_constraint(self.op, self.potential)
        elif self.system == "ch_local" and not isinstance(self.op, LocalLimit):
            raise SolverError("ch_local needs a calibrated LocalLimit")
        elif self.system == "adhesion_nonlocal" and self.adhesion is None:
            raise SolverError("adhesion_nonlocal needs an adhesion kernel")
        elif self.system == "adhesion_local" and self.c_K is None:
            raise SolverError("adhesion_local needs a calibrated c_K")


@dataclass
class SolverState:
    u: np.ndarray
    t: float = 0.0
    step: int = 0
    mu: np.ndarray | None = None
    events: list = field(default_factory=list)
    S_stab: float = 0.0


def _imex_update(u, rhs, sigma, dt, grid):
    R = tg.forward_transform(rhs, grid)
    return u + tg.inverse_transform(dt * R / (1.0 + dt * sigma), grid)


def ch_stabilizer(u, model: Model):
    """(Sigma(k), high-wavenumber coefficient, anti-diffusive rate bound G)."""
    g = model.grid
    m = mobility_value(u, model.mobility)
    mfpp = mobility_times_Fpp(u, model.mobility, model.potential)
    m_max = float(np.max(m))
    s_f = max(0.0, float(np.max(mfpp)))
    b = model.op.b_symbol
    sigma = g.stencil_symbol * (m_max * b + s_f)
    anti = max(0.0, -float(np.min(mfpp)))
    G = float(np.max(g.stencil_symbol * np.maximum(0.0, anti - m_max * b)))
    return sigma, m_max * float(np.max(b)) + s_f, G


def ch_rhs(u, model: Model, face_rule: str = "arithmetic"):
    g = model.grid
    mu = apply_B(u, model.op) + F_prime(u, model.potential)
    m_face = tg.face_average(mobility_value(u, model.mobility), g, face_rule)
    grads = tg.face_gradient(mu, g)
    flux = [mf * gr for mf, gr in zip(m_face, grads)]
    dissipation = sum(float(np.sum(mf * gr * gr)) for mf, gr in zip(m_face, grads)) * g.cell_volume
    return tg.divergence_flux(flux, g), mu, dissipation


def adhesion_velocity(u, model: Model):
    if model.system == "adhesion_nonlocal":
        return apply_K(u, model.adhesion)
    return [model.c_K * c for c in tg.spectral_gradient(u, model.grid)]


def adhesion_coefficient_bound(model: Model) -> float:
    if model.system == "adhesion_nonlocal":
        return model.adhesion.c_omega
    return abs(model.c_K)


def adhesion_rhs(u, model: Model, face_rule: str = "arithmetic"):
    g = model.grid
    u_face = tg.face_average(u, g, "arithmetic")
    grads = tg.face_gradient(u, g)
    m_face = tg.face_average(u * (1.0 - u), g, face_rule)
    K = adhesion_velocity(u, model)
    K_face = [tg.node_to_face(c, g)[a] for a, c in enumerate(K)]
    flux = [uf * gr - model.a * mf * kf for uf, gr, mf, kf in zip(u_face, grads, m_face, K_face)]
    dissipation = sum(float(np.sum(uf * gr * gr)) for uf, gr in zip(u_face, grads)) * g.cell_volume
    return tg.divergence_flux(flux, g), dissipation


def adhesion_stabilizer(u, model: Model):
    g = model.grid
    mob = float(np.max(np.abs(u * (1.0 - u))))
    coeff = float(np.max(u)) + abs(model.a) * mob * adhesion_coefficient_bound(model)
    anti = max(0.0, abs(model.a) * mob * adhesion_coefficient_bound(model) - float(np.min(u)))
    G = float(np.max(g.stencil_symbol)) * anti
    return g.stencil_symbol * max(coeff, 0.0), coeff, G


def stability_bound(u, model: Model) -> float:
    """Largest dt for which the explicit anti-diffusive part stays below one e-fold per step."""
    _, _, G = ch_stabilizer(u, model) if model.is_ch else adhesion_stabilizer(u, model)
    return math.inf if G <= 0 else 1.0 / G


def check_dt(u, model: Model, cfg: SolverConfig):
    bound = stability_bound(u, model)
    if cfg.dt > bound:
        msg = f"dt = {cfg.dt:g} exceeds the stability bound {bound:g} for {model.system}"
        if not cfg.allow_unstable:
            raise SolverError(msg + " (set solver.allow_unstable to proceed)")
        warnings.warn(msg, StabilityWarning)
        return False
    return True


def _finish(state, u_new, cfg, model, dump_dir):
    if not np.all(np.isfinite(u_new)):
        dump = None
        if dump_dir is not None:
            dump = Path(dump_dir) / f"abort_step{state.step:08d}.chnl"
            write_snapshot(dump, state.u, model.grid, state.t)
        raise SolverAbort(f"non-finite update at step {state.step + 1}, t = {state.t:g}", dump)
    new = SolverState(u_new, state.t + cfg.dt, state.step + 1, state.mu, state.events, state.S_stab)
    if model.monitors_bounds:
        lo, hi = float(np.min(u_new)), float(np.max(u_new))
        if lo < -cfg.bound_tol or hi > 1 + cfg.bound_tol:
            new.events.append({"step": new.step, "t": new.t, "event": "bound_violation",
                               "min_u": lo, "max_u": hi})
    return new


def step_ch(state: SolverState, cfg: SolverConfig, model: Model, dump_dir=None) -> SolverState:
    u = state.u
    rhs, mu, _ = ch_rhs(u, model, cfg.face_average)
    sigma, s_stab, _ = ch_stabilizer(u, model)
    state.mu, state.S_stab = mu, s_stab
    return _finish(state, _imex_update(u, rhs, sigma, cfg.dt, model.grid), cfg, model, dump_dir)


def step_adhesion(state: SolverState, cfg: SolverConfig, model: Model, dump_dir=None) -> SolverState:
    u = state.u
    rhs, _ = adhesion_rhs(u, model, cfg.face_average)
    sigma, s_stab, _ = adhesion_stabilizer(u, model)
    state.S_stab = s_stab
    return _finish(state, _imex_update(u, rhs, sigma, cfg.dt, model.grid), cfg, model, dump_dir)


def step(state, cfg, model, dump_dir=None):
    if model.is_ch:
        return step_ch(state, cfg, model, dump_dir)
    return step_adhesion(state, cfg, model, dump_dir)


def measure(u, model: Model) -> dict:
    g = model.grid
    vals = {"mass": tg.integrate(u, g), "min_u": float(np.min(u)), "max_u": float(np.max(u))}
    delta = model.potential.delta_cut if model.potential else 1e-8
    vals["entropy"] = entropy_total(u, g, model.mobility, delta)
    if model.is_ch:
        vals["energy"] = energy_eps(u, model.op, model.potential)
        vals["dissipation"] = ch_rhs(u, model)[2]
    else:
        vals["energy"] = 0.5 * tg.inner(u, u, g)
        vals["dissipation"] = adhesion_rhs(u, model)[1]
    vals["bbm_seminorm"] = 2.0 * tg.inner(apply_B(u, model.op), u, g) if model.op is not None else math.nan
    return vals


@dataclass
class Trajectory:
    grid: TorusGrid
    snapshots: list = field(default_factory=list)  # (step, t, u)
    paths: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1][2]

    def at_time(self, t, tol=1e-9):
        for _, ts, u in self.snapshots:
            if abs(ts - t) <= tol * max(1.0, abs(t)):
                return u
        raise KeyError(f"no snapshot at t = {t}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for s, t, u in self.snapshots:
            h.update(f"{s} {t!r}".encode())
            h.update(np.ascontiguousarray(u, dtype="<f8").tobytes())
        return h.hexdigest()


def run(model: Model, cfg: SolverConfig, u0, out_dir=None, diagnostics: bool = True,
        save_times=(), diag_every: int = 1):
    """Integrate from ``u0`` to ``cfg.t_final``.

    Snapshots are kept every ``cfg.snapshot_every`` steps (0: only the first
    and last), at the step nearest each entry of ``save_times``, and written
    in CHNL1 format under ``out_dir/snapshots`` when ``out_dir`` is given.
    Returns ``(trajectory, record, final_state)``.
    """
    g = model.grid
    u0 = g.check_field(u0).copy()
    model.check_admissible()
    check_dt(u0, model, cfg)
    snap_dir = None
    if out_dir is not None:
        snap_dir = Path(out_dir) / "snapshots"
        snap_dir.mkdir(parents=True, exist_ok=True)
    traj = Trajectory(g)
    rec = DiagnosticsRecord(header={"system": model.system, "dt": cfg.dt, "note": ENTROPY_ANCHOR_NOTE})
    save_steps = {int(round(t / cfg.dt)) for t in save_times}
    n = cfg.n_steps

    def keep(st):
        traj.snapshots.append((st.step, st.t, st.u.copy()))
        if snap_dir is not None:
            traj.paths.append(write_snapshot(snap_dir / f"snap_{st.step:08d}.chnl", st.u, g, st.t))

    state = SolverState(u0, 0.0, 0)
    keep(state)
    if diagnostics:
        rec.append(0, 0.0, **measure(u0, model))
    for i in range(n):
        state = step(state, cfg, model, out_dir)
        state.t = (i + 1) * cfg.dt  # no accumulated drift in t
        if diagnostics and (state.step % diag_every == 0 or state.step == n):
            rec.append(state.step, state.t, **measure(state.u, model))
        last = state.step == n
        cadence = cfg.snapshot_every and state.step % cfg.snapshot_every == 0
        if last or cadence or state.step in save_steps:
            keep(state)
    rec.events.extend(state.events)
    return traj, rec, state
