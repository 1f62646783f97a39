"""Potentials, mobilities and entropy densities.

All functions are vectorised over numpy arrays and accept scalars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, special

from .kernels import KernelSpec, check_theta_constraint
from .nonlocal_ops import apply_B

POTENTIALS = ("flory_huggins", "smooth_double_well")
MOBILITIES = ("degenerate", "constant")


class PhysicsError(ValueError):
    pass


class AdmissibilityError(PhysicsError):
    pass


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "flory_huggins"
    theta: float = 2.0
    delta_cut: float = 1e-8

    def __post_init__(self):
        if self.kind not in POTENTIALS:
            raise PhysicsError(f"unknown potential {self.kind!r}")
        if self.kind == "flory_huggins":
            if not self.theta > 1:
                raise PhysicsError(f"Flory-Huggins needs theta > 1, got {self.theta}")
            if not 0 < self.delta_cut <= 1e-4:
                raise PhysicsError(f"delta_cut must lie in (0, 1e-4], got {self.delta_cut}")

    @property
    def k_const(self) -> float:
        # min of s ln s + (1-s) ln(1-s) is -ln 2, min of -theta (s-1/2)^2 on (0,1) is -theta/4
        return math.log(2.0) + self.theta / 4.0


@dataclass(frozen=True)
class MobilitySpec:
    kind: str = "degenerate"
    k: int = 1
    l: int = 1
    value: float = 1.0

    def __post_init__(self):
        if self.kind not in MOBILITIES:
            raise PhysicsError(f"unknown mobility {self.kind!r}")
        if self.kind == "degenerate" and (self.k < 1 or self.l < 1):
            raise PhysicsError("mobility exponents must be >= 1")
        if self.kind == "constant" and not self.value > 0:
            raise PhysicsError("constant mobility must be positive")

    @property
    def max_value(self) -> float:
        if self.kind == "constant":
            return self.value
        k, l = self.k, self.l
        s = k / (k + l)
        return s**k * (1 - s) ** l


# Flory-Huggins with a C^2 quadratic continuation outside [delta, 1 - delta]


def _fh_core(s, theta):
    return s * np.log(s) + (1 - s) * np.log1p(-s) - theta * (s - 0.5) ** 2


def _fh_core_p(s, theta):
    return np.log(s) - np.log1p(-s) + theta * (1 - 2 * s)


def _fh_core_pp(s, theta):
    return 1.0 / (s * (1 - s)) - 2 * theta


def _fh_extend(s, spec, order):
    s = np.asarray(s, dtype=np.float64)
    d = spec.delta_cut
    th = spec.theta
    c = np.clip(s, d, 1 - d)
    ds = s - c
    f0, f1, f2 = _fh_core(c, th) + spec.k_const, _fh_core_p(c, th), _fh_core_pp(c, th)
    if order == 0:
        return f0 + f1 * ds + 0.5 * f2 * ds**2
    if order == 1:
        return f1 + f2 * ds
    return f2


def F_value(s, spec: PotentialSpec):
    if spec.kind == "flory_huggins":
        return _fh_extend(s, spec, 0)
    s = np.asarray(s, dtype=np.float64)
    return s**2 * (1 - s) ** 2


def F_prime(s, spec: PotentialSpec):
    if spec.kind == "flory_huggins":
        return _fh_extend(s, spec, 1)
    s = np.asarray(s, dtype=np.float64)
    return 2 * s * (1 - s) * (1 - 2 * s)


def F_dprime(s, spec: PotentialSpec):
    if spec.kind == "flory_huggins":
        return _fh_extend(s, spec, 2)
    s = np.asarray(s, dtype=np.float64)
    return 2 - 12 * s + 12 * s**2


def mobility_value(s, spec: MobilitySpec):
    s = np.asarray(s, dtype=np.float64)
    if spec.kind == "constant":
        return np.full_like(s, spec.value)
    c = np.clip(s, 0.0, 1.0)
    return c**spec.k * (1 - c) ** spec.l


def m_times_Fpp(s, theta: float):
    """m(s) F''(s) for m = s(1-s) and Flory-Huggins, written without cancellation."""
    c = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    return 1.0 - 2.0 * theta * c * (1 - c)


def mobility_times_Fpp(s, mob: MobilitySpec, pot: PotentialSpec):
    if mob.kind == "degenerate" and mob.k == 1 and mob.l == 1 and pot.kind == "flory_huggins":
        return m_times_Fpp(s, pot.theta)
    return mobility_value(s, mob) * F_dprime(s, pot)


class EntropyTable:
    """phi with phi'' = 1/m and phi(1/2) = phi'(1/2) = 0 for a general degenerate mobility.

    phi(s) = int_{1/2}^{s} (s - t) / m(t) dt, tabulated on nodes uniform in
    logit(s) over [delta, 1 - delta] and interpolated there with a cubic
    spline; in that variable the blow-up of 1/m at the ends is smooth.
    """

    def __init__(self, mob: MobilitySpec, delta: float = 1e-8, nodes: int = 801):
        self.mob = mob
        self.delta = delta
        nodes += 1 - nodes % 2  # odd count puts s = 1/2 on the centre node
        x = np.linspace(special.logit(delta), special.logit(1 - delta), nodes)
        s = special.expit(x)
        inv_m = lambda t: 1.0 / float(mobility_value(t, mob))
        # I0(s) = int_{1/2}^s 1/m and I1(s) = int_{1/2}^s t/m, accumulated interval by
        # interval outward from the centre node so each quad sees a mild integrand
        mid = nodes // 2
        I0, I1 = np.zeros(nodes), np.zeros(nodes)
        for lo, hi, step in ((mid, nodes - 1, 1), (mid, 0, -1)):
            for i in range(lo, hi, step):
                a, b = s[i], s[i + step]
                I0[i + step] = I0[i] + integrate.quad(inv_m, a, b)[0]
                I1[i + step] = I1[i] + integrate.quad(lambda t: t * inv_m(t), a, b)[0]
        self._spline = interpolate.CubicSpline(x, s * I0 - I1)

    def __call__(self, s):
        c = np.clip(np.asarray(s, dtype=np.float64), self.delta, 1 - self.delta)
        return self._spline(special.logit(c))


_ENTROPY_TABLES: dict = {}


def entropy_density(s, mob: MobilitySpec, delta_cut: float = 1e-8):
    """phi(s) anchored at 1/2, so that phi >= 0 with minimum 0 at s = 1/2."""
    s = np.asarray(s, dtype=np.float64)
    if mob.kind == "constant":
        return (s - 0.5) ** 2 / (2 * mob.value)
    c = np.clip(s, delta_cut, 1 - delta_cut)
    if mob.k == 1 and mob.l == 1:
        return c * np.log(c) + (1 - c) * np.log1p(-c) + math.log(2.0)
    key = (mob, delta_cut)
    if key not in _ENTROPY_TABLES:
        _ENTROPY_TABLES[key] = EntropyTable(mob, delta_cut)
    return _ENTROPY_TABLES[key](c)


def entropy_dprime(s, mob: MobilitySpec):
    return 1.0 / mobility_value(s, mob)


def require_theta_constraint(kernel, pot: PotentialSpec):
    if isinstance(kernel, KernelSpec) and pot.kind == "flory_huggins":
        if not check_theta_constraint(pot.theta, kernel):
            raise AdmissibilityError(
                f"theta-constraint violated: 2*theta = {2 * pot.theta:g} >= "
                f"J_eps*1 = {kernel.conv_one_quadrature:g} (eps = {kernel.eps:g}, alpha = {kernel.alpha:g})"
            )


def chemical_potential(u, op, pot: PotentialSpec):
    """mu = B_eps[u] + F'(u) for a KernelSpec, -c Lap u + F'(u) for a LocalLimit."""
    require_theta_constraint(op, pot)
    return apply_B(u, op) + F_prime(u, pot)
