"""Nonlocal-to-local comparison sweeps.

A plan runs the local system once and the nonlocal system for every eps of
a ladder, all from the same initial field, and records L2/H1 distances at the
comparison times.  The comparison is between solutions on the same grid with
the same time step, so only the eps-error is measured.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import grid as tg
from .diagnostics import SweepResult, fit_orders, h1_distance, l2_distance
from .grid import TorusGrid
from .kernels import MollifierProfile, build_adhesion_kernel, build_kernel, _check_no_wrap
from .nonlocal_ops import LocalLimit, calibrate_limit_constant
from .physics import MobilitySpec, PotentialSpec, require_theta_constraint
from .solvers import Model, SolverAbort, SolverConfig, Trajectory, run

log = logging.getLogger(__name__)

FAMILIES = ("ch", "adhesion")
INITS = ("random_uniform", "cosine")
CALIBRATION_EPS = (0.2, 0.1, 0.05, 0.025)


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class InitialData:
    kind: str = "random_uniform"
    seed: int = 0
    low: float = 0.4
    high: float = 0.6
    mean: float = 0.5
    amplitude: float = 0.2
    mode: int = 1

    def __post_init__(self):
        if self.kind not in INITS:
            raise SweepError(f"unknown initial data {self.kind!r}; expected one of {INITS}")
        if self.kind == "random_uniform" and not self.low < self.high:
            raise SweepError("random_uniform needs low < high")

    def field(self, grid: TorusGrid) -> np.ndarray:
        if self.kind == "random_uniform":
            rng = np.random.default_rng(self.seed)
            return rng.uniform(self.low, self.high, grid.shape)
        return self.mean + self.amplitude * tg.cos_mode(grid, self.mode)


def field_hash(u) -> str:
    return hashlib.sha256(np.ascontiguousarray(u, dtype="<f8").tobytes()).hexdigest()


@lru_cache(maxsize=None)
def local_coefficient(op_kind: str, profile: MollifierProfile, alpha: float, d: int) -> float:
    """Calibrated c_B (op_kind 'B') or c_K (op_kind 'K') on a fine reference grid."""
    n = 16384 if d == 1 else 1024
    grid = TorusGrid(d, n, 2 * math.pi)
    eps = [e for e in CALIBRATION_EPS if e * profile.support_radius < grid.L / 2]
    rep = calibrate_limit_constant(op_kind, profile, alpha, eps, grid)
    return float(rep.c_eff)


@dataclass
class SweepPlan:
    name: str
    family: str
    grid: TorusGrid
    profile: MollifierProfile
    eps: tuple
    times: tuple
    dt: float
    alpha: float = 0.0
    potential: PotentialSpec | None = None
    mobility: MobilitySpec = field(default_factory=MobilitySpec)
    a: float = 0.0
    init: InitialData = field(default_factory=InitialData)
    face_average: str = "arithmetic"
    c_local: float | None = None
    snapshot_every: int = 0
    allow_unstable: bool = False

    def __post_init__(self):
        self.eps = tuple(float(e) for e in self.eps)
        self.times = tuple(float(t) for t in self.times)
        problems = []
        if self.family not in FAMILIES:
            problems.append(f"family must be one of {FAMILIES}, got {self.family!r}")
        if len(self.eps) < 1:
            problems.append("eps ladder is empty")
        if any(not b < a for a, b in zip(self.eps, self.eps[1:])):
            problems.append(f"eps ladder must be strictly decreasing, got {list(self.eps)}")
        if not self.times or any(t <= 0 for t in self.times):
            problems.append("comparison times must be positive")
        if self.family == "ch" and self.potential is None:
            problems.append("a Cahn-Hilliard sweep needs a potential")
        if not self.dt > 0:
            problems.append("dt must be positive")
        for t in self.times:
            if abs(round(t / self.dt) * self.dt - t) > 1e-9 * max(1.0, t):
                problems.append(f"comparison time {t} is not a multiple of dt = {self.dt}")
        for e in self.eps:
            try:
                _check_no_wrap(self.profile, e, self.grid)
            except ValueError as exc:
                problems.append(str(exc))
        if problems:
            raise SweepError("; ".join(problems))

    @property
    def t_final(self) -> float:
        return max(self.times)

    @property
    def systems(self) -> tuple[str, str]:
        return (f"{self.family}_nonlocal", f"{self.family}_local")

    def solver_config(self, system: str) -> SolverConfig:
        return SolverConfig(system, self.dt, self.t_final, face_average=self.face_average,
                            snapshot_every=self.snapshot_every, allow_unstable=self.allow_unstable)

    def local_constant(self) -> float:
        if self.c_local is not None:
            return float(self.c_local)
        kind = "B" if self.family == "ch" else "K"
        return local_coefficient(kind, self.profile, self.alpha, self.grid.d)

    def nonlocal_model(self, eps: float) -> Model:
        if self.family == "ch":
            k = build_kernel(self.profile, eps, self.alpha, self.grid)
            require_theta_constraint(k, self.potential)
            return Model("ch_nonlocal", self.grid, k, self.potential, self.mobility)
        ak = build_adhesion_kernel(self.profile, eps, self.grid)
        return Model("adhesion_nonlocal", self.grid, None, None, self.mobility, ak, None, self.a)

    def local_model(self) -> Model:
        c = self.local_constant()
        if self.family == "ch":
            return Model("ch_local", self.grid, LocalLimit(c, self.grid), self.potential, self.mobility)
        return Model("adhesion_local", self.grid, None, None, self.mobility, None, c, self.a)


def smooth_well_plan(**overrides) -> SweepPlan:
    """Smooth double well, unit mobility, truncated Gaussian, eps in {1, 0.7, 0.1}."""
    base = dict(
        name="smooth_well",
        family="ch",
        grid=TorusGrid(1, 1024, 32.0),
        profile=MollifierProfile("truncated_gaussian"),
        eps=(1.0, 0.7, 0.1),
        times=(1.0, 10.0, 100.0),
        dt=0.01,
        potential=PotentialSpec("smooth_double_well"),
        mobility=MobilitySpec("constant"),
        init=InitialData("random_uniform", seed=0),
        snapshot_every=50,
    )
    base.update(overrides)
    return SweepPlan(**base)


def degenerate_plan(**overrides) -> SweepPlan:
    """Flory-Huggins (theta = 2) with m = u(1-u) on the compact bump, eps in {0.4, 0.2, 0.1}."""
    base = dict(
        name="degenerate",
        family="ch",
        grid=TorusGrid(1, 512),
        profile=MollifierProfile("compact_bump"),
        eps=(0.4, 0.2, 0.1),
        times=(1.0,),
        dt=1e-3,
        potential=PotentialSpec("flory_huggins", theta=2.0),
        mobility=MobilitySpec("degenerate"),
        init=InitialData("cosine", mean=0.5, amplitude=0.1, mode=1),
    )
    base.update(overrides)
    return SweepPlan(**base)


PRESETS = {"smooth_well": smooth_well_plan, "degenerate": degenerate_plan}


def _thread_count() -> int:
    raw = os.environ.get("CHNL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise SweepError(f"CHNL_THREADS must be an integer, got {raw!r}") from None


@dataclass
class RunOutcome:
    label: str
    trajectory: Trajectory
    runtime_s: float
    events: list


def _run_one(label, model, cfg, u0, times, out_dir):
    sub = None if out_dir is None else Path(out_dir) / "runs" / label
    t0 = time.perf_counter()
    traj, rec, state = run(model, cfg, u0, out_dir=sub, diagnostics=sub is not None,
                           save_times=times, diag_every=max(1, cfg.n_steps // 200))
    elapsed = time.perf_counter() - t0
    if sub is not None:
        rec.to_csv(sub / "diagnostics.csv")
    return RunOutcome(label, traj, elapsed, list(state.events))


def eps_label(eps: float) -> str:
    return f"eps_{eps:g}"


def run_sweep(plan: SweepPlan, out_dir=None, figures: bool = True):
    """Run the plan; returns ``(SweepResult, {label: RunOutcome})``.

    Runs execute on up to ``CHNL_THREADS`` worker threads.  With ``out_dir``
    the result is written to ``sweep_result.csv`` together with per-run
    snapshots and diagnostics; if a run aborts, the rows of the completed
    runs are still written before the error propagates.
    """
    u0 = plan.init.field(plan.grid)
    h0 = field_hash(u0)
    nl_sys, loc_sys = plan.systems
    jobs = [("local", plan.local_model(), plan.solver_config(loc_sys))]
    jobs += [(eps_label(e), plan.nonlocal_model(e), plan.solver_config(nl_sys)) for e in plan.eps]
    outcomes: dict[str, RunOutcome] = {}
    failure = None
    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        futs = {lab: pool.submit(_run_one, lab, m, c, u0.copy(), plan.times, out_dir) for lab, m, c in jobs}
        for lab, fut in futs.items():
            try:
                outcomes[lab] = fut.result()
            except SolverAbort as exc:
                log.error("run %s aborted: %s", lab, exc)
                failure = failure or exc
    result = _collect(plan, outcomes, h0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.to_csv(out / "sweep_result.csv")
        if figures and failure is None:
            from . import plotting

            plotting.sweep_figures(plan, result, outcomes, out)
    if failure is not None:
        raise failure
    return result, outcomes


def _collect(plan: SweepPlan, outcomes, u0_hash: str) -> SweepResult:
    g = plan.grid
    done = [e for e in plan.eps if eps_label(e) in outcomes]
    res = SweepResult(eps=done, times=list(plan.times), err_l2={}, err_h1={}, runtime_s={}, u0_hash=u0_hash)
    res.meta = {
        "plan": plan.name, "d": g.d, "n": g.n, "L": repr(g.L), "dt": repr(plan.dt),
        "profile": plan.profile.kind, "alpha": plan.alpha, "seed": plan.init.seed,
        "init": plan.init.kind,
    }
    if "local" not in outcomes:
        res.eps = []
        return res
    loc = outcomes["local"].trajectory
    res.meta["c_local"] = repr(plan.local_constant())
    res.meta["local_runtime_s"] = f"{outcomes['local'].runtime_s:.3f}"
    for t in plan.times:
        res.local_norm_l2[t] = tg.l2_norm(loc.at_time(t), g)
    for e in done:
        tr = outcomes[eps_label(e)].trajectory
        res.runtime_s[e] = outcomes[eps_label(e)].runtime_s
        for t in plan.times:
            u, v = tr.at_time(t), loc.at_time(t)
            res.err_l2[(e, t)] = l2_distance(u, v, g)
            res.err_h1[(e, t)] = h1_distance(u, v, g)
    if len(done) >= 3:
        for t in plan.times:
            res.order_l2[t] = fit_orders(done, res.errors_at(t, "l2"))
            res.order_h1[t] = fit_orders(done, res.errors_at(t, "h1"))
    return res


# qualitative proxies


def total_variation(u, grid: TorusGrid) -> float:
    """Sum of |u_{j+1} - u_j| over all grid edges, weighted by the transverse cell size."""
    w = grid.h ** (grid.d - 1)
    return float(sum(np.sum(np.abs(np.roll(u, -1, axis=a) - u)) for a in range(grid.d)) * w)


def interface_width(u, grid: TorusGrid, lo: float = 0.1, hi: float = 0.9) -> float:
    """Distance over which the normalised profile goes from ``lo`` to ``hi`` around its steepest point.

    In 2D the line along axis 0 through the steepest point is used.  Returns
    nan when the field is constant (no interface).
    """
    u = np.asarray(u, dtype=np.float64)
    umin, umax = float(u.min()), float(u.max())
    if umax - umin <= 1e-12 * max(1.0, abs(umax)):
        return math.nan
    v = (u - umin) / (umax - umin)
    slope = np.roll(v, -1, axis=0) - v
    j = np.unravel_index(np.argmax(np.abs(slope)), v.shape)
    line = v[(slice(None),) + tuple(j[1:])]
    if slope[j] < 0:
        # reflect a decreasing front; the level pair is symmetric under v -> 1 - v
        line, lo, hi = 1.0 - line, 1.0 - hi, 1.0 - lo
    i0, n = int(j[0]), line.size
    x_hi = _crossing(line, i0, hi, +1)
    x_lo = _crossing(line, i0 + 1, lo, -1)
    if math.isnan(x_hi) or math.isnan(x_lo):
        return math.nan
    return (x_hi - x_lo) * grid.h


def _crossing(line, start, level, step):
    """Fractional index where ``line`` crosses ``level`` walking from ``start`` by ``step``."""
    n = line.size
    above = (lambda x: x >= level) if step > 0 else (lambda x: x <= level)
    if above(line[start % n]):
        return float(start)
    i = start
    for _ in range(n):
        nxt = i + step
        a, b = line[i % n], line[nxt % n]
        if above(b):
            return i + step * (level - a) / (b - a)
        i = nxt
    return math.nan


def smoothing_time(trajectory: Trajectory, threshold: float) -> float:
    """First snapshot time at which the total variation falls below ``threshold`` (inf if never)."""
    g = trajectory.grid
    for _, t, u in trajectory.snapshots:
        if total_variation(u, g) < threshold:
            return float(t)
    return math.inf


def qualitative_flags(nonlocal_traj: Trajectory, local_traj: Trajectory, t_eval=None,
                      tv_fraction: float = 0.25) -> dict:
    """Interface-width and smoothing-time proxies for a nonlocal/local pair.

    The smoothing threshold is ``tv_fraction`` times the total variation of
    the shared initial field.  A missing interface is reported as nan.
    """
    g = local_traj.grid
    t_eval = local_traj.snapshots[-1][1] if t_eval is None else t_eval
    u_nl, u_loc = nonlocal_traj.at_time(t_eval), local_traj.at_time(t_eval)
    thr = tv_fraction * total_variation(local_traj.snapshots[0][2], g)
    w_nl, w_loc = interface_width(u_nl, g), interface_width(u_loc, g)
    s_nl, s_loc = smoothing_time(nonlocal_traj, thr), smoothing_time(local_traj, thr)
    return {
        "t_eval": float(t_eval),
        "interface_width_nonlocal": w_nl,
        "interface_width_local": w_loc,
        "interface_detected": not (math.isnan(w_nl) or math.isnan(w_loc)),
        "sharper_nonlocal": bool(w_nl <= w_loc) if not (math.isnan(w_nl) or math.isnan(w_loc)) else None,
        "tv_threshold": thr,
        "smoothing_time_nonlocal": s_nl,
        "smoothing_time_local": s_loc,
        "slower_smoothing_nonlocal": bool(s_nl >= s_loc),
    }
