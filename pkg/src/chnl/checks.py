"""Exact-identity battery behind the ``check`` subcommand.

Hard checks are discrete identities that hold to roundoff; soft checks are
inequalities whose constants are measured and reported but never fatal.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import grid as tg
from .diagnostics import grad_sq, poincare_checks
from .grid import TorusGrid
from .kernels import MollifierProfile, build_adhesion_kernel, build_kernel, estimate_adhesion_constant
from .nonlocal_ops import apply_B, apply_K, bbm_direct, bbm_seminorm, check_S_identities

HARD_TOL = 1e-10
# (d, n, L, eps): the 1D and 2D desk-scale cases
DEFAULT_CASES = ((1, 64, 2 * math.pi, 0.5), (2, 32, 1.0, 0.15))
DEFAULT_ALPHAS = (0.0, 0.5)


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    hard: bool

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol) if self.hard else True

    def as_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _fields(grid: TorusGrid, rng):
    smooth = tg.random_smooth_field(grid, rng)
    rough = rng.uniform(0.0, 1.0, grid.shape)
    return {"smooth": smooth, "rough": rough}


def identity_checks(grid: TorusGrid, eps: float, alpha: float, seed: int = 0,
                    profile: MollifierProfile | None = None) -> list[CheckResult]:
    profile = profile or MollifierProfile()
    rng = np.random.default_rng(seed)
    k = build_kernel(profile, eps, alpha, grid)
    tag = f"d={grid.d} n={grid.n} eps={eps:g} alpha={alpha:g}"
    fields = _fields(grid, rng)
    out = []
    u, phi = fields["smooth"], fields["rough"]
    s = check_S_identities(u, phi, k)
    out.append(CheckResult(f"S adjointness (direct) [{tag}]", s["adjoint_rel_defect"], HARD_TOL, True))
    out.append(CheckResult(f"S adjointness (spectral) [{tag}]", s["adjoint_spectral_defect"], HARD_TOL, True))
    out.append(CheckResult(f"S product rule [{tag}]", s["product_rule_defect"], HARD_TOL, True))
    for name, f in fields.items():
        direct = bbm_direct(f, k)
        spec = bbm_seminorm(f, k)
        out.append(CheckResult(f"BBM = 2<Bu,u> ({name}) [{tag}]", abs(direct - spec) / max(1.0, abs(direct)),
                               HARD_TOL, True))
        Bu = apply_B(f, k)
        out.append(CheckResult(f"B zero mean ({name}) [{tag}]",
                               abs(tg.integrate(Bu, grid)) / max(1.0, tg.l2_norm(Bu, grid)), HARD_TOL, True))
    flux = [rng.standard_normal(grid.shape) for _ in range(grid.d)]
    div = tg.divergence_flux(flux, grid)
    out.append(CheckResult(f"divergence telescoping [{tag}]",
                           abs(tg.integrate(div, grid)) / max(1.0, tg.l2_norm(div, grid)), HARD_TOL, True))
    return out


def jensen_checks(grid: TorusGrid, eps: float, seed: int = 0, profile=None) -> list[CheckResult]:
    """||K_eps f||^2 <= C_est ||grad f||^2 over the field battery (soft: reports the worst ratio / C_est)."""
    profile = profile or MollifierProfile()
    est = estimate_adhesion_constant(profile, eps, grid, seed=seed)
    ak = build_adhesion_kernel(profile, eps, grid)
    worst = 0.0
    for f in tg.field_battery(grid, seed=seed).values():
        g2 = grad_sq(f, grid)
        if g2 > 0:
            k2 = sum(tg.inner(c, c, grid) for c in apply_K(f, ak))
            worst = max(worst, k2 / (est.C_est * g2))
    return [CheckResult(f"Jensen ||K f||^2 / (C_est ||grad f||^2) [d={grid.d} eps={eps:g}]", worst, 1.0, False)]


def run_battery(seed: int = 0, cases=DEFAULT_CASES, alphas=DEFAULT_ALPHAS) -> dict:
    t0 = time.perf_counter()
    results: list[CheckResult] = []
    soft = {}
    for d, n, L, eps in cases:
        grid = TorusGrid(d, n, L)
        for alpha in alphas:
            results.extend(identity_checks(grid, eps, alpha, seed))
        results.extend(jensen_checks(grid, eps, seed))
        pc = poincare_checks(tg.field_battery(grid, seed=seed), MollifierProfile(), [eps, eps / 2], 0.0, grid)
        soft[f"d={d}"] = {"c1_max": pc["c1_max"], "c2_max": pc["c2_max"]}
    hard_fail = [r.name for r in results if r.hard and not r.passed]
    return {
        "seed": seed,
        "checks": [r.as_dict() for r in results],
        "poincare": soft,
        "hard_failures": hard_fail,
        "ok": not hard_fail,
        "runtime_s": time.perf_counter() - t0,
    }
