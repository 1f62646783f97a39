"""Energy, entropy, seminorm and Poincare-type monitors, plus error norms."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as tg
from .grid import TorusGrid
from .kernels import KernelSpec, MollifierProfile, build_kernel
from .nonlocal_ops import apply_B, bbm_seminorm, fit_rate
from .physics import (
    F_dprime,
    F_value,
    MobilitySpec,
    PotentialSpec,
    entropy_density,
)

ENTROPY_ANCHOR_NOTE = "entropy density anchored at s=1/2: phi(1/2)=phi'(1/2)=0"
CSV_COLUMNS = ("step", "t", "mass", "energy", "entropy", "min_u", "max_u", "dissipation")

__all__ = [
    "DiagnosticsRecord",
    "SweepResult",
    "energy_eps",
    "entropy_total",
    "entropy_dissipation_ledger",
    "poincare_checks",
    "l2_distance",
    "h1_distance",
    "fit_rate",
]


def mass(u, grid: TorusGrid) -> float:
    return tg.integrate(u, grid)


def energy_eps(u, op, pot: PotentialSpec) -> float:
    """int F(u) + (1/4) int int J (u(x)-u(y))^2, the double integral as (1/2) <B u, u>.

    ``op`` may be a LocalLimit, in which case the gradient term is (c/2) |grad u|^2.
    """
    g = op.grid
    return tg.integrate(F_value(u, pot), g) + 0.5 * tg.inner(apply_B(u, op), u, g)


def entropy_total(u, grid: TorusGrid, mob: MobilitySpec, delta_cut: float = 1e-8) -> float:
    return tg.integrate(entropy_density(u, mob, delta_cut), grid)


def gradient_bbm(u, kernel: KernelSpec) -> float:
    """int int J_eps(y) |grad u(x) - grad u(x-y)|^2, gradients taken spectrally."""
    return sum(bbm_seminorm(gc, kernel) for gc in tg.spectral_gradient(u, kernel.grid))


def grad_sq(u, grid: TorusGrid) -> float:
    return sum(tg.inner(c, c, grid) for c in tg.spectral_gradient(u, grid))


def l2_distance(u, v, grid: TorusGrid) -> float:
    return tg.l2_norm(np.asarray(u) - np.asarray(v), grid)


def h1_distance(u, v, grid: TorusGrid) -> float:
    w = np.asarray(u) - np.asarray(v)
    return math.sqrt(tg.inner(w, w, grid) + grad_sq(w, grid))


@dataclass
class DiagnosticsRecord:
    steps: list = field(default_factory=list)
    t: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    min_u: list = field(default_factory=list)
    max_u: list = field(default_factory=list)
    bbm_seminorm: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    events: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def append(self, step, t, **vals):
        if self.t and not t > self.t[-1]:
            raise ValueError(f"diagnostic times must increase ({t} after {self.t[-1]})")
        self.steps.append(step)
        self.t.append(t)
        for k in ("mass", "energy", "entropy", "min_u", "max_u", "bbm_seminorm", "dissipation"):
            getattr(self, k).append(float(vals[k]))

    @property
    def energy_increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.energy))

    def energy_violations(self, tol: float = 1e-10) -> int:
        e = np.asarray(self.energy)
        inc = np.diff(e)
        return int(np.sum(inc > tol * (1 + np.abs(e[:-1]))))

    def mass_drift(self) -> float:
        m = np.asarray(self.mass)
        return float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] != 0 else float(np.max(np.abs(m)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            for k, v in self.header.items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in zip(self.steps, self.t, self.mass, self.energy, self.entropy,
                           self.min_u, self.max_u, self.dissipation):
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


@dataclass
class SweepResult:
    eps: list
    times: list
    err_l2: dict  # (eps, t) -> error
    err_h1: dict
    runtime_s: dict  # eps -> seconds
    order_l2: dict = field(default_factory=dict)  # t -> fitted order (nan if not fittable)
    order_h1: dict = field(default_factory=dict)
    u0_hash: str = ""
    local_norm_l2: dict = field(default_factory=dict)  # t -> ||u_local(t)||
    meta: dict = field(default_factory=dict)

    def errors_at(self, t, norm="l2"):
        table = self.err_l2 if norm == "l2" else self.err_h1
        return [table[(e, t)] for e in self.eps]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# u0_sha256: {self.u0_hash}\n")
            for k, v in self.meta.items():
                fh.write(f"# {k}: {v}\n")
            w = csv.writer(fh)
            w.writerow(["eps", "t", "err_l2", "err_h1", "runtime_s"])
            for e in self.eps:
                for t in self.times:
                    w.writerow([repr(e), repr(t), repr(self.err_l2[(e, t)]),
                                repr(self.err_h1[(e, t)]), f"{self.runtime_s[e]:.3f}"])


def fit_orders(eps, errors) -> float:
    try:
        return fit_rate(eps, errors)[0]
    except ValueError:
        return math.nan


def h1_control_constant(fields, kernel: KernelSpec, gamma: float) -> float:
    """Smallest C with ||f||_{H1}^2 <= gamma * gradBBM(f) + C ||f||^2 over ``fields``."""
    g = kernel.grid
    best = 0.0
    for f in fields:
        l2 = tg.inner(f, f, g)
        if l2 == 0:
            continue
        need = (l2 + grad_sq(f, g) - gamma * gradient_bbm(f, kernel)) / l2
        best = max(best, need)
    return best


def entropy_dissipation_ledger(trajectory, kernel: KernelSpec, pot: PotentialSpec,
                               mob: MobilitySpec, battery=None) -> dict:
    """Per-step entropy bookkeeping along ``trajectory`` = [(t, u), ...].

    Each step records the increment of Phi, the gradient seminorm term
    (1/2) int int J |grad u(x) - grad u(x-y)|^2 and int F''(u) |grad u|^2 at the
    start of the step.  The negative-part control
    2 theta ||grad u||^2 <= (1/4) gradBBM + C(theta) ||u||^2 is checked at every
    state with C(theta) = 2 theta C(gamma), gamma = 1/(8 theta), and C(gamma)
    measured over ``battery`` plus the trajectory states themselves.
    """
    g = kernel.grid
    states = [np.asarray(u) for _, u in trajectory]
    times = [float(t) for t, _ in trajectory]
    theta = pot.theta if pot.kind == "flory_huggins" else 0.5
    gamma = 1.0 / (8.0 * theta)
    fields = list(states) + list((battery or {}).values())
    c_gamma = h1_control_constant(fields, kernel, gamma)
    c_theta = 2.0 * theta * c_gamma
    rows, violations, worst_margin = [], 0, math.inf
    for i, u in enumerate(states):
        grads = tg.spectral_gradient(u, g)
        gbbm = gradient_bbm(u, kernel)
        fpp_term = sum(tg.inner(F_dprime(u, pot), c * c, g) for c in grads)
        lhs = 2.0 * theta * grad_sq(u, g)
        rhs = 0.25 * gbbm + c_theta * tg.inner(u, u, g)
        margin = rhs - lhs
        worst_margin = min(worst_margin, margin)
        if margin < -1e-12 * max(1.0, abs(rhs)):
            violations += 1
        phi = entropy_total(u, g, mob, pot.delta_cut)
        rows.append({"t": times[i], "entropy": phi, "grad_bbm_term": 0.5 * gbbm,
                     "fpp_term": fpp_term, "control_lhs": lhs, "control_rhs": rhs})
    for i in range(len(rows)):
        rows[i]["entropy_increment"] = rows[i + 1]["entropy"] - rows[i]["entropy"] if i + 1 < len(rows) else 0.0
    return {
        "note": ENTROPY_ANCHOR_NOTE,
        "gamma": gamma,
        "C_gamma": c_gamma,
        "C_theta": c_theta,
        "violations": violations,
        "worst_margin": worst_margin,
        "rows": rows,
        "total_increment": rows[-1]["entropy"] - rows[0]["entropy"] if rows else 0.0,
    }


def poincare_checks(fields: dict, profile: MollifierProfile, eps_list, alpha: float,
                    grid: TorusGrid, gammas=(0.5, 0.25, 0.1)) -> dict:
    """Both sides of the three nonlocal Poincare-type inequalities over fields x eps.

    Reported per eps: max of ||f - mean f||^2 / seminorm (inverse of 4 C_p),
    max of seminorm / ||f||_{H1}^2, and C(gamma) for each gamma.  Constant
    fields have a zero seminorm and are skipped for the first ratio.
    """
    out = {"eps": list(eps_list), "c1_ratio": [], "c2_ratio": [], "c_gamma": {gm: [] for gm in gammas}}
    for eps in eps_list:
        k = build_kernel(profile, eps, alpha, grid)
        c1 = c2 = 0.0
        for f in fields.values():
            semi = bbm_seminorm(f, k)
            dev = f - np.mean(f)
            l2dev = tg.inner(dev, dev, grid)
            h1 = tg.inner(f, f, grid) + grad_sq(f, grid)
            if semi > 1e-14 * max(1.0, h1):
                c1 = max(c1, l2dev / semi)
            if h1 > 0:
                c2 = max(c2, semi / h1)
        out["c1_ratio"].append(c1)
        out["c2_ratio"].append(c2)
        for gm in gammas:
            out["c_gamma"][gm].append(h1_control_constant(fields.values(), k, gm))
    out["c1_max"] = max(out["c1_ratio"])
    out["c2_max"] = max(out["c2_ratio"])
    return out
