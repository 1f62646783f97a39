"""Mollifier profiles, scaled interaction kernels and their moments.

The Cahn-Hilliard kernel is ``J_eps(x) = omega_eps(x) / (eps^(2-alpha) |x|^alpha)``
with ``omega_eps(x) = eps^-d omega(x / eps)``; the adhesion kernel is the
vector field ``omega_eps(y) y / (eps |y|)``.  Both are sampled on the
minimal-image offsets of a :class:`~chnl.grid.TorusGrid` and cached together
with their discrete transforms (scaled by the cell volume, so that the
transform at k = 0 is the discrete integral).
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import integrate

from . import grid as tg
from .grid import TorusGrid

log = logging.getLogger(__name__)

PROFILES = ("compact_bump", "truncated_gaussian")
QUAD_TOL = 1e-12


class KernelError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


def _bump(r):
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def _quad(f, a, b, **kw):
    val, err = integrate.quad(f, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400, **kw)
    if not math.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise QuadratureError(f"quadrature did not converge (value {val}, error estimate {err})")
    return val, err


@dataclass(frozen=True)
class MollifierProfile:
    """Radial unit-mass mollifier ``omega`` on R^d.

    ``compact_bump`` is ``C exp(-1/(1-|z|^2))`` on the unit ball; the truncated
    Gaussian ``C exp(-|z|^2)`` is cut at ``trunc_radius`` and renormalised.
    """

    kind: str = "compact_bump"
    trunc_radius: float = 6.0

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise KernelError(f"unknown profile {self.kind!r}; expected one of {PROFILES}")
        if self.trunc_radius <= 0:
            raise KernelError("trunc_radius must be positive")

    @property
    def support_radius(self) -> float:
        return 1.0 if self.kind == "compact_bump" else self.trunc_radius

    def shape(self, r):
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "compact_bump":
            return _bump(r)
        return np.where(r < self.trunc_radius, np.exp(-(r**2)), 0.0)

    def radial_integral(self, d: int, power: float) -> tuple[float, float]:
        """Unnormalised ``int shape(|z|) |z|^power dz`` over R^d, with error estimate."""
        R = self.support_radius
        p = power + (d - 1)
        surface = 2.0 if d == 1 else 2 * math.pi
        if p < 0:
            # algebraic endpoint weight r^p handled exactly by QUADPACK
            val, err = _quad(lambda r: float(self.shape(r)), 0.0, R, weight="alg", wvar=(p, 0.0))
        else:
            val, err = _quad(lambda r: float(self.shape(r)) * r**p, 0.0, R)
        return surface * val, surface * err

    def norm_const(self, d: int) -> float:
        return _norm_const(self, d)

    def value(self, r, d: int):
        """omega(|z| = r) including the normalisation."""
        return self.norm_const(d) * self.shape(r)

    def scaled(self, r, eps: float, d: int):
        """omega_eps(|x| = r) = eps^-d omega(r / eps)."""
        return self.value(np.asarray(r) / eps, d) / eps**d


@lru_cache(maxsize=None)
def _norm_const(profile: MollifierProfile, d: int) -> float:
    mass, _ = profile.radial_integral(d, 0.0)
    return 1.0 / mass


@dataclass(frozen=True)
class MomentTable:
    W: float
    C_omega: float
    J_conv_1: float
    diag_moment: float
    abs_error: float
    alpha: float
    d: int
    eps: float = 1.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["W", "C_omega", "J_conv_1", "diag_moment"])
            w.writerow([repr(self.W), repr(self.C_omega), repr(self.J_conv_1), repr(self.diag_moment)])


def moments(profile: MollifierProfile, alpha: float, d: int, eps: float = 1.0) -> MomentTable:
    """Moments of ``omega`` by adaptive quadrature.

    ``W = int omega |z|^(2-alpha)``, ``C_omega = int omega |z|``,
    ``J_conv_1 = eps^-2 int omega |z|^-alpha`` and the diagonal entry of the
    matrix ``int omega z_i z_j |z|^-alpha`` (computed separately from ``W``).
    """
    if not 0.0 <= alpha <= 2.0:
        raise KernelError(f"moments need alpha in [0, 2], got {alpha}")
    c = profile.norm_const(d)
    W, eW = profile.radial_integral(d, 2.0 - alpha)
    C, eC = profile.radial_integral(d, 1.0)
    if alpha < d:
        J, eJ = profile.radial_integral(d, -alpha)
    else:
        J, eJ = math.inf, 0.0
    if d == 1:
        diag, eD = profile.radial_integral(1, 2.0 - alpha)
    else:
        ang, _ = _quad(lambda phi: math.cos(phi) ** 2, 0.0, 2 * math.pi)
        rad, eD = _quad(lambda r: float(profile.shape(r)) * r ** (3.0 - alpha), 0.0, profile.support_radius)
        diag, eD = ang * rad, ang * eD
    err = c * max(eW, eC, eJ, eD)
    return MomentTable(
        W=c * W,
        C_omega=c * C,
        J_conv_1=c * J / eps**2,
        diag_moment=c * diag,
        abs_error=err,
        alpha=alpha,
        d=d,
        eps=eps,
    )


def max_alpha(d: int) -> float:
    # The W^{1,1}_loc range alpha < d - 1 is empty in 1D; integrability of
    # |x|^-alpha still holds for alpha < 1, which is what the numerics need.
    return max(d - 1.0, 1.0)


def _check_no_wrap(profile, eps, grid):
    if eps <= 0:
        raise KernelError(f"eps must be positive, got {eps}")
    reach = eps * profile.support_radius
    if reach >= grid.L / 2:
        raise KernelError(
            f"kernel support eps*R = {reach:g} wraps around the torus (L/2 = {grid.L / 2:g})"
        )


def cell_average_singular(alpha: float, h: float, d: int) -> float:
    """Average of |x|^-alpha over the grid cell centred at the origin."""
    a = h / 2
    if d == 1:
        return a ** (-alpha) / (1.0 - alpha)
    ang, _ = _quad(lambda phi: math.cos(phi) ** (alpha - 2.0), 0.0, math.pi / 4)
    quadrant = 2.0 / (2.0 - alpha) * a ** (2.0 - alpha) * ang
    return quadrant / a**2


@dataclass(eq=False)
class KernelSpec:
    profile: MollifierProfile
    eps: float
    alpha: float
    grid: TorusGrid
    table: np.ndarray = field(repr=False)
    hat: np.ndarray = field(repr=False)
    conv_one: float
    conv_one_quadrature: float
    origin_rule: str

    @cached_property
    def b_symbol(self) -> np.ndarray:
        """Multiplier of B_eps on the rfft layout: J^(0) - J^(k); exactly 0 at k = 0."""
        s = self.hat.flat[0] - self.hat
        s.flat[0] = 0.0
        return s

    @property
    def table_mass(self) -> float:
        return float(self.table.sum() * self.grid.cell_volume)

    @cached_property
    def support_mask(self) -> np.ndarray:
        return (self.grid.offset_radius > 0) & (self.table > 0)


def build_kernel(profile: MollifierProfile, eps: float, alpha: float, grid: TorusGrid) -> KernelSpec:
    """Periodised table of J_eps on ``grid``.

    For ``alpha > 0`` the origin cell carries the weight that makes the table
    integrate to the quadrature value of ``J_eps * 1``; if the grid is too
    coarse for that to be non-negative, the cell average of ``|x|^-alpha`` is
    used instead.  ``B_eps`` never sees the origin weight.
    """
    if not 0.0 <= alpha < max_alpha(grid.d):
        raise KernelError(f"alpha must lie in [0, {max_alpha(grid.d):g}) for d={grid.d}, got {alpha}")
    _check_no_wrap(profile, eps, grid)
    r = grid.offset_radius
    om = profile.scaled(r, eps, grid.d)
    table = np.zeros(grid.shape)
    nz = r > 0
    table[nz] = om[nz] / (eps ** (2.0 - alpha) * r[nz] ** alpha)
    mom = moments(profile, alpha, grid.d, eps)
    hd = grid.cell_volume
    origin = tuple([0] * grid.d)
    om0 = float(profile.scaled(0.0, eps, grid.d))
    if alpha == 0.0:
        table[origin] = om0 / eps**2
        rule = "sampled"
    else:
        residual = (mom.J_conv_1 - table.sum() * hd) / hd
        if residual >= 0:
            table[origin] = residual
            rule = "mass_matched"
        else:
            table[origin] = om0 / eps ** (2.0 - alpha) * cell_average_singular(alpha, grid.h, grid.d)
            rule = "cell_average"
            warnings.warn("grid too coarse for mass-matched origin weight; using the cell average")
    hat = np.real(np.fft.rfftn(table)) * hd
    return KernelSpec(
        profile=profile,
        eps=eps,
        alpha=alpha,
        grid=grid,
        table=table,
        hat=hat,
        conv_one=float(table.sum() * hd),
        conv_one_quadrature=mom.J_conv_1,
        origin_rule=rule,
    )


@dataclass(eq=False)
class AdhesionKernel:
    """Vector table ``omega_eps(y) y / (eps |y|)`` (times nothing else) and its transforms."""

    profile: MollifierProfile
    eps: float
    grid: TorusGrid
    tables: list = field(repr=False)
    hats: list = field(repr=False)
    mass: float

    @cached_property
    def c_omega(self) -> float:
        return moments(self.profile, 0.0, self.grid.d).C_omega


def build_adhesion_kernel(profile: MollifierProfile, eps: float, grid: TorusGrid) -> AdhesionKernel:
    _check_no_wrap(profile, eps, grid)
    r = grid.offset_radius
    om = profile.scaled(r, eps, grid.d)
    nz = r > 0
    hd = grid.cell_volume
    tables, hats = [], []
    om0 = float(profile.scaled(0.0, eps, grid.d))
    for m in grid.offsets:
        t = np.zeros(grid.shape)
        t[nz] = om[nz] * (m[nz] * grid.h) / (r[nz] * eps)
        if grid.d == 1:
            # Euler-Maclaurin endpoint term for the sign jump at the origin:
            # sum_{j>=1} h g(jh) = int_0^inf g - (h^2/12) g'(0) + O(h^4), g = omega_eps sin(k.)
            t[1] += om0 / (12.0 * eps)
            t[-1] -= om0 / (12.0 * eps)
        tables.append(t)
        # the table is odd, so its transform is purely imaginary
        hats.append(1j * np.imag(np.fft.rfftn(t)) * hd)
    return AdhesionKernel(profile, eps, grid, tables, hats, float(om.sum() * hd))


def check_theta_constraint(theta: float, spec: KernelSpec) -> bool:
    """2 theta < J_eps * 1 (continuum value from quadrature)."""
    return 2.0 * theta < spec.conv_one_quadrature


@dataclass
class AdhesionConstantEstimate:
    C_est: float
    C_raw: float
    C_h1: float
    safety: float
    eps_values: list
    argmax: tuple
    ratios: dict = field(repr=False)


def bbm_seminorm_alpha0(f: np.ndarray, spec: KernelSpec) -> float:
    """int int J_eps(x-y) (f(x)-f(y))^2 = 2 <B f, f> using the spectral B."""
    g = spec.grid
    return 2.0 * tg.inner(tg.apply_symbol(f, spec.b_symbol, g), f, g)


def default_eps_range(eps_max: float, grid: TorusGrid, eps_min: float | None = None, count: int = 4):
    if eps_min is None:
        eps_min = max(eps_max / 4, 4 * grid.h)
    eps_min = min(eps_min, eps_max)
    return sorted(set(np.geomspace(eps_min, eps_max, count).tolist()), reverse=True)


def estimate_adhesion_constant(
    profile: MollifierProfile,
    eps_max: float,
    grid: TorusGrid,
    eps_min: float | None = None,
    safety: float = 1.1,
    seed: int = 0,
) -> AdhesionConstantEstimate:
    """Empirical constant C in  int int |f(x)-f(y)|^2 omega_eps(x-y) / eps^2 <= C ||grad f||^2.

    The supremum runs over :func:`chnl.grid.field_battery` and a geometric
    ladder of eps values in [eps_min, eps_max]; the gradient-only denominator
    dominates the H^1 one, so the same constant also bounds ||K_eps u||^2.
    """
    battery = tg.field_battery(grid, seed=seed)
    eps_values = default_eps_range(eps_max, grid, eps_min)
    ratios, best, best_h1, arg = {}, 0.0, 0.0, None
    for eps in eps_values:
        spec = build_kernel(profile, eps, 0.0, grid)
        for name, f in battery.items():
            semi = bbm_seminorm_alpha0(f, spec)
            grad2 = sum(tg.inner(c, c, grid) for c in tg.spectral_gradient(f, grid))
            if grad2 <= 0:
                continue
            ratio = semi / grad2
            ratios[(eps, name)] = ratio
            best_h1 = max(best_h1, semi / (grad2 + tg.inner(f, f, grid)))
            if ratio > best:
                best, arg = ratio, (eps, name)
    return AdhesionConstantEstimate(safety * best, best, best_h1, safety, eps_values, arg, ratios)


def check_adhesion_constraint(a: float, eps_max: float, grid: TorusGrid, profile=None, **kw) -> bool:
    """|a| sqrt(C_est) < 1."""
    if a == 0:
        return True
    profile = profile or MollifierProfile()
    est = estimate_adhesion_constant(profile, eps_max, grid, **kw)
    return abs(a) * math.sqrt(est.C_est) < 1.0
