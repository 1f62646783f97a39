"""Uniform periodic grids on [0, L)^d and the discrete operators built on them.

Fields are plain numpy arrays of shape ``grid.shape`` (axis 0 is x, axis 1 is
y).  Fluxes used by :func:`divergence_flux` live on cell faces: component
``i`` of a flux stores, at index ``j``, the value on the face between node
``j`` and node ``j + e_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    d: int
    n: int
    L: float = field(default=2 * math.pi)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 8 or self.n & (self.n - 1):
            raise GridError(f"n must be a power of two >= 8, got {self.n}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise GridError(f"period L must be positive, got {self.L}")

    @classmethod
    def default(cls, d: int, n: int) -> "TorusGrid":
        return cls(d, n, 2 * math.pi if d == 1 else 1.0)

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Node coordinates ``x_j = j h``, broadcast to ``shape`` (one array per axis)."""
        x = np.arange(self.n) * self.h
        if self.d == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))

    @cached_property
    def offsets(self) -> tuple[np.ndarray, ...]:
        """Minimal-image integer offsets m in [-n/2, n/2), laid out like the FFT."""
        m = np.fft.fftfreq(self.n, 1.0 / self.n).astype(np.int64)
        if self.d == 1:
            return (m,)
        return tuple(np.meshgrid(m, m, indexing="ij"))

    @cached_property
    def offset_radius(self) -> np.ndarray:
        """|x| for minimal-image displacements; exactly symmetric under x -> -x."""
        sq = sum(m.astype(np.float64) ** 2 for m in self.offsets)
        return np.sqrt(sq) * self.h

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular wavenumbers on the rfftn layout, broadcastable per axis."""
        full = 2 * np.pi * np.fft.fftfreq(self.n, self.h)
        half = 2 * np.pi * np.fft.rfftfreq(self.n, self.h)
        if self.d == 1:
            return (half,)
        return (full[:, None], half[None, :])

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers) * np.ones(self.spectral_shape)

    @cached_property
    def stencil_symbol(self) -> np.ndarray:
        """Symbol of minus the 3-point / 5-point Laplacian, (4/h^2) sum sin^2(k h / 2)."""
        h = self.h
        return sum((4.0 / h**2) * np.sin(k * h / 2) ** 2 for k in self.wavenumbers) * np.ones(
            self.spectral_shape
        )

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.shape[:-1] + (self.n // 2 + 1,)

    def check_field(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.shape:
            if f.size == self.size:
                f = f.reshape(self.shape)
            else:
                raise GridError(f"field of shape {f.shape} does not live on grid {self.shape}")
        if not np.all(np.isfinite(f)):
            raise GridError("field has non-finite values")
        return f


def forward_transform(f: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.fft.rfftn(f, s=grid.shape, axes=tuple(range(grid.d)))


def inverse_transform(F: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.fft.irfftn(F, s=grid.shape, axes=tuple(range(grid.d)))


def apply_symbol(f: np.ndarray, symbol: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return inverse_transform(forward_transform(f, grid) * symbol, grid)


def integrate(f: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(f) * grid.cell_volume)


def inner(f: np.ndarray, g: np.ndarray, grid: TorusGrid) -> float:
    return float(np.sum(f * g) * grid.cell_volume)


def l2_norm(f: np.ndarray, grid: TorusGrid) -> float:
    return math.sqrt(inner(f, f, grid))


def gradient(f: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    """Node-centred second-order central difference, one array per axis."""
    f = grid.check_field(f)
    return [(np.roll(f, -1, axis=a) - np.roll(f, 1, axis=a)) / (2 * grid.h) for a in range(grid.d)]


def face_gradient(f: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    """(f_{j+e} - f_j) / h on the face between node j and j + e."""
    return [(np.roll(f, -1, axis=a) - f) / grid.h for a in range(grid.d)]


def face_average(f: np.ndarray, grid: TorusGrid, rule: str = "arithmetic", reg: float = 1e-12):
    out = []
    for a in range(grid.d):
        nb = np.roll(f, -1, axis=a)
        if rule == "arithmetic":
            out.append(0.5 * (f + nb))
        elif rule == "harmonic":
            out.append(2.0 * f * nb / (f + nb + reg))
        else:
            raise ValueError(f"unknown face-average rule {rule!r}")
    return out


def node_to_face(f: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    return face_average(f, grid, "arithmetic")


def divergence_flux(flux, grid: TorusGrid) -> np.ndarray:
    """Conservative divergence of a face-centred flux; sums to zero by telescoping."""
    if len(flux) != grid.d:
        raise GridError(f"flux has {len(flux)} components, grid dimension is {grid.d}")
    out = np.zeros(grid.shape)
    for a, F in enumerate(flux):
        F = np.asarray(F, dtype=np.float64)
        if F.shape != grid.shape:
            raise GridError(f"flux component {a} has shape {F.shape}, expected {grid.shape}")
        out += (F - np.roll(F, 1, axis=a)) / grid.h
    return out


def laplacian(f: np.ndarray, grid: TorusGrid, kind: str = "spectral") -> np.ndarray:
    f = grid.check_field(f)
    if kind == "spectral":
        return apply_symbol(f, -grid.k_squared, grid)
    if kind == "stencil":
        return divergence_flux(face_gradient(f, grid), grid)
    raise ValueError(f"unknown laplacian kind {kind!r}")


def spectral_gradient(f: np.ndarray, grid: TorusGrid) -> list[np.ndarray]:
    F = forward_transform(f, grid)
    out = []
    for a, k in enumerate(grid.wavenumbers):
        kk = np.array(k, dtype=np.float64) * np.ones(grid.spectral_shape)
        if grid.n % 2 == 0:
            # the Nyquist derivative is not real-representable
            nyq = [slice(None)] * grid.d
            nyq[a] = grid.n // 2
            kk[tuple(nyq)] = 0.0
        out.append(inverse_transform(1j * kk * F, grid))
    return out


def spectral_shift(f: np.ndarray, grid: TorusGrid, shift) -> np.ndarray:
    """Trigonometric interpolant of ``f`` evaluated at ``x - shift``."""
    F = forward_transform(f, grid)
    phase = sum(k * s for k, s in zip(grid.wavenumbers, np.atleast_1d(shift)))
    return inverse_transform(F * np.exp(-1j * phase), grid)


def sin_mode(grid: TorusGrid, m: int = 1, axis: int = 0) -> np.ndarray:
    return np.sin(2 * np.pi * m * grid.coords[axis] / grid.L)


def cos_mode(grid: TorusGrid, m: int = 1, axis: int = 0) -> np.ndarray:
    return np.cos(2 * np.pi * m * grid.coords[axis] / grid.L)


def random_smooth_field(grid: TorusGrid, rng: np.random.Generator, decay: float = 4.0) -> np.ndarray:
    """Random trigonometric field with Gaussian spectral decay (|k| ~ decay * 2pi/L)."""
    k0 = decay * 2 * np.pi / grid.L
    coef = rng.standard_normal(grid.spectral_shape) + 1j * rng.standard_normal(grid.spectral_shape)
    coef *= np.exp(-grid.k_squared / (2 * k0**2))
    coef.flat[0] = 0.0
    f = inverse_transform(coef, grid)
    return f / np.max(np.abs(f))


def field_battery(grid: TorusGrid, seed: int = 0, n_random: int = 4, max_mode: int | None = None):
    """Named fields used to estimate embedding constants: Fourier modes 1..n/4 and random smooth fields."""
    max_mode = grid.n // 4 if max_mode is None else max_mode
    out = {}
    for m in range(1, max_mode + 1):
        out[f"sin{m}"] = sin_mode(grid, m)
        if grid.d == 2:
            out[f"sin{m}_y"] = sin_mode(grid, m, axis=1)
            out[f"sin{m}_diag"] = np.sin(2 * np.pi * m * (grid.coords[0] + grid.coords[1]) / grid.L)
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        out[f"random{i}"] = random_smooth_field(grid, rng)
    return out
