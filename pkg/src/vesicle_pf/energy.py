"""Diffuse-interface vesicle energy: bending, area-difference elasticity and
penalized volume/area constraints, with their variational derivatives."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .spectral import GridSpec, ScalarField3D, SpectralOperators

SQRT2 = math.sqrt(2.0)
# A = AREA_FROM_B * B for the equilibrium tanh profile.
AREA_FROM_B = 3.0 * SQRT2 / 4.0


@dataclass(frozen=True)
class ModelParams:
    """Physical and penalty constants.

    ``D`` defaults to ``2*epsilon/3`` and ``A0`` to ``beta`` when left as
    ``None``; use :attr:`leaflet_distance` and :attr:`area_scale` for the
    resolved values.
    """

    epsilon: float
    kappa: float = 1.0
    kappa_bar: float = 1.4
    C: float = 0.0
    D: float | None = None
    M1: float = 1.0e5
    M2: float = 1.0e4
    alpha: float = 0.0
    beta: float = 0.0
    dA0: float = 0.0
    A0: float | None = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            v = float(v)
            if not math.isfinite(v):
                raise ValueError(f"ModelParams.{f.name} must be finite, got {v!r}")
            object.__setattr__(self, f.name, v)
        if self.epsilon <= 0:
            raise ValueError(f"ModelParams.epsilon must be > 0, got {self.epsilon}")
        for name in ("kappa", "kappa_bar", "M1", "M2"):
            if getattr(self, name) < 0:
                raise ValueError(f"ModelParams.{name} must be >= 0, got {getattr(self, name)}")
        if self.D is not None and self.D <= 0:
            raise ValueError(f"ModelParams.D must be > 0, got {self.D}")
        if self.area_scale <= 0:
            raise ValueError(
                f"ModelParams.A0 must be > 0 (defaults to beta={self.beta}); got {self.area_scale}"
            )

    @property
    def leaflet_distance(self) -> float:
        return self.D if self.D is not None else 2.0 * self.epsilon / 3.0

    @property
    def area_scale(self) -> float:
        return self.A0 if self.A0 is not None else self.beta

    @property
    def ade_prefactor(self) -> float:
        """``kappa_bar * pi / (2 * A0 * D^2)``, the coefficient of (dA - dA0)^2."""
        d = self.leaflet_distance
        return 0.5 * self.kappa_bar * math.pi / (self.area_scale * d * d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyBreakdown:
    W: float
    G: float
    T1: float
    T2: float
    E_M: float
    V: float
    A: float
    dA: float

    @classmethod
    def from_terms(cls, W, G, T1, T2, V, A, dA) -> "EnergyBreakdown":
        E_M = W + G
        E_M = E_M + T1
        E_M = E_M + T2
        return cls(W=W, G=G, T1=T1, T2=T2, E_M=E_M, V=V, A=A, dA=dA)

    def as_dict(self) -> dict:
        return asdict(self)


def _values(phi) -> np.ndarray:
    return phi.values if isinstance(phi, ScalarField3D) else np.asarray(phi, dtype=np.float64)


class EnergyModel:
    """Energy functionals of one parameter set on one grid.

    Every method accepts a bare array of shape ``grid.shape`` or a
    :class:`ScalarField3D`; array-valued results are bare arrays.
    """

    def __init__(self, grid: GridSpec | SpectralOperators, params: ModelParams):
        self.ops = grid if isinstance(grid, SpectralOperators) else SpectralOperators(grid)
        self.grid = self.ops.grid
        self.params = params

    def with_params(self, params: ModelParams) -> "EnergyModel":
        return EnergyModel(self.ops, params)

    # pointwise building blocks ---------------------------------------------
    def f(self, phi, lap=None) -> np.ndarray:
        phi = _values(phi)
        eps = self.params.epsilon
        if lap is None:
            lap = self.ops.laplacian(phi)
        return eps * lap - (phi * phi - 1.0) * phi / eps

    def f_c(self, phi, lap=None) -> np.ndarray:
        phi = _values(phi)
        p = self.params
        eps = p.epsilon
        if lap is None:
            lap = self.ops.laplacian(phi)
        return eps * lap - (phi * phi - 1.0) * (phi + p.C * eps) / eps

    # functionals -------------------------------------------------------------
    def bending_energy(self, phi, lap=None) -> float:
        p = self.params
        fc = self.f_c(phi, lap)
        return p.kappa / (2.0 * p.epsilon) * self.ops.integrate(fc * fc)

    def volume(self, phi) -> float:
        phi = _values(phi)
        return self.ops.integrate(0.5 * (phi + 1.0))

    def gl_and_area(self, phi, phi_hat=None) -> tuple[float, float]:
        """Ginzburg-Landau functional B and the area A = (3*sqrt(2)/4) B."""
        phi = _values(phi)
        eps = self.params.epsilon
        w = phi * phi - 1.0
        B = 0.5 * eps * self.ops.integrate_grad_sq(phi, phi_hat)
        B = B + self.ops.integrate(w * w) / (4.0 * eps)
        return B, AREA_FROM_B * B

    def area(self, phi) -> float:
        return self.gl_and_area(phi)[1]

    def area_difference(self, phi, lap=None) -> float:
        phi = _values(phi)
        p = self.params
        eps = p.epsilon
        if lap is None:
            lap = self.ops.laplacian(phi)
        s = 1.0 - phi * phi
        integrand = s * lap + phi * s * s / (eps * eps)
        return -0.75 * p.leaflet_distance * self.ops.integrate(integrand)

    def ade_energy(self, phi, lap=None, dA=None) -> float:
        p = self.params
        if dA is None:
            dA = self.area_difference(phi, lap)
        return p.ade_prefactor * (dA - p.dA0) ** 2

    def penalties(self, phi, V=None, A=None) -> tuple[float, float]:
        p = self.params
        if V is None:
            V = self.volume(phi)
        if A is None:
            A = self.area(phi)
        return p.M1 * (V - p.alpha) ** 2, p.M2 * (A - p.beta) ** 2

    def total_energy(self, phi) -> EnergyBreakdown:
        phi = _values(phi)
        p = self.params
        phi_hat = self.ops.forward(phi)
        lap = self.ops.inverse(-self.ops.k2 * phi_hat)
        W = self.bending_energy(phi, lap)
        V = self.volume(phi)
        _, A = self.gl_and_area(phi, phi_hat)
        dA = self.area_difference(phi, lap)
        G = p.ade_prefactor * (dA - p.dA0) ** 2
        T1 = p.M1 * (V - p.alpha) ** 2
        T2 = p.M2 * (A - p.beta) ** 2
        return EnergyBreakdown.from_terms(W, G, T1, T2, V, A, dA)

    def energy(self, phi) -> float:
        return self.total_energy(phi).E_M

    # variational derivatives -------------------------------------------------
    def ade_shape_factor(self, phi, lap) -> np.ndarray:
        """``-2 phi lap(phi) - lap(phi^2) + (1 - 6 phi^2 + 5 phi^4)/eps^2``."""
        eps = self.params.epsilon
        p2 = phi * phi
        poly = (1.0 - 6.0 * p2 + 5.0 * p2 * p2) / (eps * eps)
        return -2.0 * phi * lap - self.ops.laplacian(p2) + poly

    def ade_coefficient(self, dA: float) -> float:
        """``-(3 kappa_bar pi / (4 A0 D)) (dA - dA0)``, the scalar in front of h."""
        p = self.params
        return -3.0 * p.kappa_bar * math.pi / (4.0 * p.area_scale * p.leaflet_distance) * (dA - p.dA0)

    def variational_derivative(self, phi, decompose: bool = False):
        """dE_M/dphi; with ``decompose`` a dict of the four terms."""
        phi = _values(phi)
        p = self.params
        ops = self.ops
        eps = p.epsilon
        phi_hat = ops.forward(phi)
        lap = ops.inverse(-ops.k2 * phi_hat)

        fc = self.f_c(phi, lap)
        dW = p.kappa * (
            ops.laplacian(fc)
            - ops.nonlinear((3.0 * phi * phi + 2.0 * p.C * eps * phi - 1.0) * fc) / (eps * eps)
        )

        dA = self.area_difference(phi, lap)
        coef = self.ade_coefficient(dA)
        if coef != 0.0:
            dG = coef * ops.nonlinear(self.ade_shape_factor(phi, lap))
        else:
            dG = np.zeros_like(phi)

        V = self.volume(phi)
        dT1 = np.full_like(phi, p.M1 * (V - p.alpha))

        _, A = self.gl_and_area(phi, phi_hat)
        dT2 = -1.5 * SQRT2 * p.M2 * (A - p.beta) * ops.nonlinear(self.f(phi, lap))

        if decompose:
            return {"W": dW, "G": dG, "T1": dT1, "T2": dT2}
        return dW + dG + dT1 + dT2


# Field-level conveniences mirroring the operation list -------------------

def f_of(phi: ScalarField3D, p: ModelParams) -> ScalarField3D:
    return ScalarField3D(phi.grid, EnergyModel(phi.grid, p).f(phi))


def f_c_of(phi: ScalarField3D, p: ModelParams) -> ScalarField3D:
    return ScalarField3D(phi.grid, EnergyModel(phi.grid, p).f_c(phi))


def bending_energy_W(phi: ScalarField3D, p: ModelParams) -> float:
    return EnergyModel(phi.grid, p).bending_energy(phi)


def volume_V(phi: ScalarField3D) -> float:
    return 0.5 * float(np.sum(phi.values + 1.0)) * phi.grid.cell_volume


def gl_B_and_area_A(phi: ScalarField3D, p: ModelParams) -> tuple[float, float]:
    return EnergyModel(phi.grid, p).gl_and_area(phi)


def area_difference_dA(phi: ScalarField3D, p: ModelParams) -> float:
    return EnergyModel(phi.grid, p).area_difference(phi)


def ade_energy_G(phi: ScalarField3D, p: ModelParams) -> float:
    return EnergyModel(phi.grid, p).ade_energy(phi)


def penalties_T1_T2(phi: ScalarField3D, p: ModelParams) -> tuple[float, float]:
    return EnergyModel(phi.grid, p).penalties(phi)


def total_energy(phi: ScalarField3D, p: ModelParams) -> EnergyBreakdown:
    return EnergyModel(phi.grid, p).total_energy(phi)


def variational_derivative(phi: ScalarField3D, p: ModelParams, decompose: bool = False):
    out = EnergyModel(phi.grid, p).variational_derivative(phi, decompose=decompose)
    if decompose:
        return {k: ScalarField3D(phi.grid, v) for k, v in out.items()}
    return ScalarField3D(phi.grid, out)
