"""Nonlocal operators B_eps, S_eps, K_eps and their local limits.

Production paths are spectral (one real FFT pair per call).  The ``*_direct``
functions sum over the kernel's support offsets with ``np.roll`` and exist to
check the spectral paths; they cost O(n^d * support).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize

from . import grid as tg
from .grid import TorusGrid
from .kernels import (
    AdhesionKernel,
    KernelSpec,
    MollifierProfile,
    build_adhesion_kernel,
    build_kernel,
    moments,
)

S_MAX_ENTRIES = 40_000_000


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class LocalLimit:
    """The local operator ``-c * Laplacian`` that B_eps approaches, evaluated spectrally."""

    c: float
    grid: TorusGrid

    @cached_property
    def b_symbol(self) -> np.ndarray:
        return self.c * self.grid.k_squared


def _same_grid(u, g: TorusGrid):
    try:
        return g.check_field(u)
    except tg.GridError as exc:
        raise OperatorError(str(exc)) from exc


def apply_B(u, kernel) -> np.ndarray:
    """(J*1) u - J*u as a spectral circular convolution (or -c Lap u for a LocalLimit)."""
    g = kernel.grid
    return tg.apply_symbol(_same_grid(u, g), kernel.b_symbol, g)


def _support_offsets(kernel: KernelSpec):
    g = kernel.grid
    idx = np.argwhere(kernel.support_mask)
    out = []
    for j in idx:
        shift = tuple(int(g.offsets[a][tuple(j)]) for a in range(g.d))
        out.append((shift, float(kernel.table[tuple(j)])))
    return out


def _shifted(u, shift):
    """u(x - y) for the integer offset ``shift``."""
    return np.roll(u, shift, axis=tuple(range(u.ndim)))


def apply_B_direct(u, kernel: KernelSpec) -> np.ndarray:
    u = _same_grid(u, kernel.grid)
    hd = kernel.grid.cell_volume
    out = np.zeros_like(u)
    for shift, w in _support_offsets(kernel):
        out += w * hd * (u - _shifted(u, shift))
    return out


def bbm_direct(u, kernel: KernelSpec) -> float:
    """int int J_eps(x-y) (u(x)-u(y))^2 dx dy by direct double summation."""
    u = _same_grid(u, kernel.grid)
    hd = kernel.grid.cell_volume
    total = 0.0
    for shift, w in _support_offsets(kernel):
        total += w * float(np.sum((u - _shifted(u, shift)) ** 2))
    return total * hd * hd


def bbm_seminorm(u, kernel) -> float:
    """Same quantity through the identity  int int J (u(x)-u(y))^2 = 2 <B u, u>."""
    g = kernel.grid
    return 2.0 * tg.inner(apply_B(u, kernel), u, g)


@dataclass
class TwoPointField:
    grid: TorusGrid
    shifts: list
    values: np.ndarray = field(repr=False)  # (n^d, n_shifts)

    def inner(self, other: "TwoPointField") -> float:
        hd = self.grid.cell_volume
        return float(np.sum(self.values * other.values)) * hd * hd


def _s_weights(kernel: KernelSpec):
    offs = _support_offsets(kernel)
    shifts = [s for s, _ in offs]
    # sqrt(omega_eps) / (sqrt 2 eps^(1-alpha/2) |y|^(alpha/2)) = sqrt(J_eps / 2)
    w = np.sqrt(np.array([j for _, j in offs]) / 2.0)
    return shifts, w


def _memory_guard(kernel: KernelSpec, n_shifts: int):
    g = kernel.grid
    limit = 512 if g.d == 1 else 128
    if g.n > limit or g.size * n_shifts > S_MAX_ENTRIES:
        raise OperatorError(
            f"S_eps storage of {g.size} x {n_shifts} exceeds the desk-scale guard (n <= {limit})"
        )


def apply_S(u, kernel: KernelSpec) -> TwoPointField:
    u = _same_grid(u, kernel.grid)
    shifts, w = _s_weights(kernel)
    _memory_guard(kernel, len(shifts))
    vals = np.empty((u.size, len(shifts)))
    for i, s in enumerate(shifts):
        vals[:, i] = w[i] * (_shifted(u, s) - u).ravel()
    return TwoPointField(kernel.grid, shifts, vals)


def check_S_identities(u, phi, kernel: KernelSpec) -> dict:
    """Max defects of the adjointness identity <B u, phi> = <S u, S phi> and the Leibniz rule."""
    g = kernel.grid
    u = _same_grid(u, g)
    phi = _same_grid(phi, g)
    Su, Sphi = apply_S(u, kernel), apply_S(phi, kernel)
    lhs = tg.inner(apply_B_direct(u, kernel), phi, g)
    rhs = Su.inner(Sphi)
    lhs_spectral = tg.inner(apply_B(u, kernel), phi, g)
    Sprod = apply_S(u * phi, kernel)
    shifts, w = _s_weights(kernel)
    expected = np.empty_like(Sprod.values)
    for i, s in enumerate(shifts):
        expected[:, i] = w[i] * ((_shifted(u, s) - u) * (_shifted(phi, s) - phi)).ravel()
    leibniz = Sprod.values - Su.values * phi.reshape(-1, 1) - Sphi.values * u.reshape(-1, 1)
    scale = max(1.0, abs(lhs))
    return {
        "adjoint_lhs": lhs,
        "adjoint_rhs": rhs,
        "adjoint_defect": abs(lhs - rhs),
        "adjoint_rel_defect": abs(lhs - rhs) / scale,
        "adjoint_spectral_defect": abs(lhs_spectral - rhs) / scale,
        "product_rule_defect": float(np.max(np.abs(leibniz - expected))) if expected.size else 0.0,
    }


def apply_K(u, kernel: AdhesionKernel) -> list[np.ndarray]:
    """K_eps[u] = (1/eps) int u(x-y) omega_eps(y) y/|y| dy, one array per component."""
    g = kernel.grid
    U = tg.forward_transform(_same_grid(u, g), g)
    return [tg.inverse_transform(U * h, g) for h in kernel.hats]


def apply_K_direct(u, kernel: AdhesionKernel) -> list[np.ndarray]:
    g = kernel.grid
    u = _same_grid(u, g)
    hd = g.cell_volume
    out = [np.zeros_like(u) for _ in range(g.d)]
    nz = np.argwhere(np.any([np.abs(t) > 0 for t in kernel.tables], axis=0))
    for j in nz:
        j = tuple(j)
        shift = tuple(int(g.offsets[a][j]) for a in range(g.d))
        us = _shifted(u, shift)
        for a in range(g.d):
            out[a] += kernel.tables[a][j] * hd * us
    return out


@dataclass
class CalibrationReport:
    op_kind: str
    eps: list
    errors: list
    ratios: list
    order: float
    c_eff: float
    c_reference: float
    reference_name: str
    ratio_to_reference: float
    fit_constant: float
    exact_errors: list = field(default_factory=list)
    taylor_bound: float = math.nan

    def rows(self):
        for e, err in zip(self.eps, self.errors):
            yield {"eps": e, "error": err, "c_eff": self.c_eff, "order": self.order}


def fit_rate(eps, errors) -> tuple[float, float]:
    """Least-squares slope and prefactor of log(error) against log(eps)."""
    eps = np.asarray(eps, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if eps.size < 3:
        raise ValueError("rate fitting needs at least 3 points")
    if np.any(errors <= 0) or np.any(eps <= 0):
        raise ValueError("rate fitting needs positive eps and errors")
    p, logc = np.polyfit(np.log(eps), np.log(errors), 1)
    return float(p), float(math.exp(logc))


def calibrate_limit_constant(
    op_kind: str,
    profile: MollifierProfile,
    alpha: float,
    eps_list,
    grid: TorusGrid,
    axis: int = 0,
) -> CalibrationReport:
    """Effective local coefficient and consistency order of B_eps or K_eps.

    On phi = sin of the lowest mode the operator is diagonal, so the best
    coefficient at each eps is ``q(eps) = <Op phi, L phi> / <L phi, L phi>``
    (L = -Laplacian for B, the gradient component for K).  ``c_eff`` is the
    eps -> 0 limit of ``q`` from the fit ``q = c + b eps^p``; the errors
    ``||Op phi - c_eff L phi||_inf`` then give the order by log-log regression.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise OperatorError("eps list must be strictly decreasing")
    phi = tg.sin_mode(grid, 1, axis)
    mom = moments(profile, alpha, grid.d)
    if op_kind == "B":
        target = -tg.laplacian(phi, grid)
        outs = [apply_B(phi, build_kernel(profile, e, alpha, grid)) for e in eps_list]
        ref, ref_name = mom.W / 2, "W/2"
        exact_c = mom.W / (2 * grid.d)
    elif op_kind == "K":
        if alpha != 0:
            raise OperatorError("K_eps has no singular exponent; use alpha = 0")
        target = tg.spectral_gradient(phi, grid)[axis]
        outs = [apply_K(phi, build_adhesion_kernel(profile, e, grid))[axis] for e in eps_list]
        ref, ref_name = mom.C_omega, "C_omega"
        exact_c = -mom.C_omega / grid.d
    else:
        raise OperatorError(f"unknown operator kind {op_kind!r}")
    tt = tg.inner(target, target, grid)
    q = np.array([tg.inner(o, target, grid) / tt for o in outs])
    c_eff = _extrapolate(np.array(eps_list), q)
    errs = [float(np.max(np.abs(o - c_eff * target))) for o in outs]
    resid = max(float(np.max(np.abs(o - qi * target))) for o, qi in zip(outs, q))
    if resid > 1e-6 * max(1.0, max(np.max(np.abs(o)) for o in outs)):
        raise OperatorError(f"test field is not an eigenfunction to tolerance (residual {resid:g})")
    exact = [float(np.max(np.abs(o - exact_c * target))) for o in outs]
    order, const = fit_rate(eps_list, errs)
    # Taylor remainder: |R| <= (eps/2) int omega |z|^2 * ||D^2 phi||_inf
    m2 = moments(profile, 0.0, grid.d).W
    d2 = (2 * np.pi / grid.L) ** 2
    return CalibrationReport(
        op_kind=op_kind,
        eps=eps_list,
        errors=errs,
        ratios=q.tolist(),
        order=order,
        c_eff=c_eff,
        c_reference=ref,
        reference_name=ref_name,
        ratio_to_reference=c_eff / ref,
        fit_constant=const,
        exact_errors=exact,
        taylor_bound=0.5 * m2 * d2 if op_kind == "K" else math.nan,
    )


def _extrapolate(eps, q) -> float:
    if len(eps) >= 4:
        def model(e, c, b, p):
            return c + b * e**p

        b0 = (q[0] - q[-1]) / (eps[0] ** 2 - eps[-1] ** 2)
        try:
            (c, _, _), _ = optimize.curve_fit(model, eps, q, p0=(q[-1], b0, 2.0), maxfev=20000)
            return float(c)
        except RuntimeError:
            pass
    # two-point Richardson with the leading even-order term
    e1, e2 = eps[-2], eps[-1]
    return float((q[-1] * e1**2 - q[-2] * e2**2) / (e1**2 - e2**2))


def difference_quotient_check(u, grid: TorusGrid, eps: float, y_offsets) -> dict:
    """max_y || (u(x - eps y) - u(x)) / (eps |y|) + grad u(x) . y/|y| ||_{L^2}."""
    u = grid.check_field(u)
    grads = tg.spectral_gradient(u, grid)
    worst, per = 0.0, []
    for y in y_offsets:
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        ny = float(np.linalg.norm(y))
        if ny == 0:
            continue
        shifted = tg.spectral_shift(u, grid, eps * y)
        dq = (shifted - u) / (eps * ny) + sum(g * (yi / ny) for g, yi in zip(grads, y))
        val = tg.l2_norm(dq, grid)
        per.append(val)
        worst = max(worst, val)
    return {"eps": eps, "defect": worst, "per_offset": per}
