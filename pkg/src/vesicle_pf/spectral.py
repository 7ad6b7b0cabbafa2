"""Periodic uniform grids and Fourier-collocation operators.

Fields are stored as real arrays of shape ``(nx, ny, nz)`` indexed
``[ix, iy, iz]``.  Flattening with ``order="F"`` gives the x-fastest layout
used on disk.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

THREADS_ENV = "VESICLE_PF_THREADS"


class NonPositiveSymbol(ArithmeticError):
    """The Fourier symbol of an implicit operator is not positive on some mode."""


def fft_workers() -> int:
    value = os.environ.get(THREADS_ENV)
    if not value:
        return 1
    n = int(value)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {value!r}")
    return n


@dataclass(frozen=True)
class GridSpec:
    """Sample counts and box lengths of a periodic box ``[0,lx)x[0,ly)x[0,lz)``."""

    nx: int
    ny: int
    nz: int
    lx: float = 1.0
    ly: float = 1.0
    lz: float = 1.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"GridSpec.{name} must be an even integer >= 4, got {n!r}")
            object.__setattr__(self, name, int(n))
        for name in ("lx", "ly", "lz"):
            length = float(getattr(self, name))
            if not np.isfinite(length) or length <= 0:
                raise ValueError(f"GridSpec.{name} must be > 0, got {length!r}")
            object.__setattr__(self, name, length)

    @classmethod
    def cube(cls, n: int, length: float = 1.0) -> "GridSpec":
        return cls(n, n, n, length, length, length)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.lx, self.ly, self.lz)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.lx / self.nx, self.ly / self.ny, self.lz / self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def volume(self) -> float:
        return self.lx * self.ly * self.lz

    @property
    def cell_volume(self) -> float:
        return self.volume / self.size

    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of the sample points."""
        x = np.arange(self.nx) * (self.lx / self.nx)
        y = np.arange(self.ny) * (self.ly / self.ny)
        z = np.arange(self.nz) * (self.lz / self.nz)
        return x[:, None, None], y[None, :, None], z[None, None, :]

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.broadcast_arrays(*self.coordinates()))


@dataclass
class ScalarField3D:
    """Real samples of a scalar field on ``grid``."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            if values.size != self.grid.size:
                raise ValueError(f"expected {self.grid.size} values, got {values.size}")
            values = values.reshape(self.grid.shape, order="F")
        if values.shape != self.grid.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {self.grid.shape}")
        self.values = values

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> "ScalarField3D":
        return cls(grid, np.full(grid.shape, float(c)))

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.values.ravel(order="F")

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def copy(self) -> "ScalarField3D":
        return ScalarField3D(self.grid, self.values.copy())


def wavenumber_grids(grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angular wavenumbers per axis in FFT mode order.

    Mode ``m`` on an axis of ``n`` samples and length ``L`` maps to
    ``2*pi*m'/L`` with ``m' = m`` for ``m <= n/2`` and ``m - n`` otherwise, so
    the Nyquist mode appears once with a positive sign.
    """
    out = []
    for n, length in zip(grid.shape, grid.lengths):
        m = np.arange(n)
        m = np.where(m <= n // 2, m, m - n)
        out.append(2.0 * np.pi * m / length)
    return tuple(out)


@dataclass(eq=False)
class SpectralOperators:
    """Fourier-collocation operators bound to one grid.

    Works on bare ``(nx, ny, nz)`` arrays.  The last axis uses the
    half-spectrum of the real transform.
    """

    grid: GridSpec
    dealias: bool = False
    workers: int = field(default_factory=fft_workers)

    @cached_property
    def _k_full(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        kx, ky, kz = wavenumber_grids(self.grid)
        return kx[:, None, None], ky[None, :, None], kz[None, None, :]

    @cached_property
    def _k_half(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        kx, ky, _ = wavenumber_grids(self.grid)
        kz = 2.0 * np.pi * np.arange(self.grid.nz // 2 + 1) / self.grid.lz
        return kx[:, None, None], ky[None, :, None], kz[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 on the half spectrum."""
        kx, ky, kz = self._k_half
        return kx**2 + ky**2 + kz**2

    @cached_property
    def _parseval_weight(self) -> np.ndarray:
        # Multiplicity of each half-spectrum coefficient in the full spectrum.
        nz = self.grid.nz
        w = np.full(nz // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def _dealias_mask(self) -> np.ndarray:
        kx, ky, kz = self._k_half
        cut = [2.0 / 3.0 * np.pi * n / length for n, length in zip(self.grid.shape, self.grid.lengths)]
        return (np.abs(kx) <= cut[0]) & (np.abs(ky) <= cut[1]) & (np.abs(kz) <= cut[2])

    # transforms -----------------------------------------------------------
    def forward(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(f, workers=self.workers)

    def inverse(self, fh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(fh, s=self.grid.shape, workers=self.workers)

    def apply_symbol(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        return self.inverse(symbol * self.forward(f))

    # operators ------------------------------------------------------------
    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.inverse(-self.k2 * self.forward(f))

    def biharmonic(self, f: np.ndarray) -> np.ndarray:
        return self.inverse(self.k2**2 * self.forward(f))

    def gradient(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Complex spectral partial derivatives ``ifftn(i k_j fhat)``.

        These are real for band-limited input.  At Nyquist frequencies the
        ``ik`` multiplier is not Hermitian and the result picks up an
        imaginary part; keeping it makes ``sum |grad f|^2`` equal
        ``-sum f lap f`` exactly.
        """
        fh = sfft.fftn(f, workers=self.workers)
        return tuple(sfft.ifftn(1j * k * fh, workers=self.workers) for k in self._k_full)

    def grad_sq(self, f: np.ndarray) -> np.ndarray:
        return sum(d.real**2 + d.imag**2 for d in self.gradient(f))

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.grid.cell_volume)

    def integrate_grad_sq(self, f: np.ndarray, fh: np.ndarray | None = None) -> float:
        """``integrate(grad_sq(f))`` evaluated in Fourier space."""
        if fh is None:
            fh = self.forward(f)
        power = fh.real**2 + fh.imag**2
        total = float(np.sum(self._parseval_weight * self.k2 * power))
        return total * self.grid.cell_volume / self.grid.size

    def truncate(self, f: np.ndarray) -> np.ndarray:
        """Zero every mode outside the 2/3 band."""
        return self.inverse(self._dealias_mask * self.forward(f))

    def nonlinear(self, f: np.ndarray) -> np.ndarray:
        """Pass-through unless 2/3-rule dealiasing is switched on."""
        return self.truncate(f) if self.dealias else f

    def helmholtz_symbol(self, a: float, b: float, c: float) -> np.ndarray:
        """Symbol of ``a + b*lap + c*lap^2``."""
        k2 = self.k2
        return a - b * k2 + c * k2 * k2

    def implicit_solve(self, rhs: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
        """Solve ``(a + b*lap + c*lap^2) u = rhs`` mode by mode."""
        symbol = self.helmholtz_symbol(a, b, c)
        if not np.all(symbol > 0):
            worst = float(symbol.min())
            raise NonPositiveSymbol(
                f"implicit operator symbol reaches {worst:.3e} <= 0 (a={a}, b={b}, c={c})"
            )
        return self.inverse(self.forward(rhs) / symbol)


# Field-level wrappers ------------------------------------------------------

def operators(grid: GridSpec) -> SpectralOperators:
    return SpectralOperators(grid)


def laplacian(f: ScalarField3D) -> ScalarField3D:
    return ScalarField3D(f.grid, operators(f.grid).laplacian(f.values))


def biharmonic(f: ScalarField3D) -> ScalarField3D:
    return ScalarField3D(f.grid, operators(f.grid).biharmonic(f.values))


def grad_sq(f: ScalarField3D) -> ScalarField3D:
    return ScalarField3D(f.grid, operators(f.grid).grad_sq(f.values))


def integrate(f: ScalarField3D) -> float:
    return operators(f.grid).integrate(f.values)


def implicit_solve(rhs: ScalarField3D, a: float, b: float, c: float) -> ScalarField3D:
    return ScalarField3D(rhs.grid, operators(rhs.grid).implicit_solve(rhs.values, a, b, c))
