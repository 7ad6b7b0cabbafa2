"""Initial conditions and the catalog of experiment presets."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .energy import EnergyModel, ModelParams
from .integrators import IntegratorConfig
from .spectral import GridSpec, ScalarField3D

SHAPES = (
    "discocyte", "torus", "biconcave", "early_gourd", "elongated_gourd", "gourd",
    "cylinder", "two_sphere", "chain", "three_armed", "four_armed", "six_armed", "nested",
)


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class EllipsoidSpec:
    """``tanh((R - sum_i (x_i - c_i)^2 / d_i) / (sqrt(2) eps))``.

    ``divisors`` divide the squared offsets as written (they are not
    semi-axes).  ``epsilon=None`` means "use the model's epsilon".
    """

    center: tuple[float, float, float]
    divisors: tuple[float, float, float]
    R: float
    epsilon: float | None = None

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        divisors = tuple(float(d) for d in self.divisors)
        if len(center) != 3 or len(divisors) != 3:
            raise ValueError("center and divisors need three components")
        if any(d <= 0 for d in divisors):
            raise ValueError(f"divisors must be > 0, got {divisors}")
        if not self.R > 0:
            raise ValueError(f"R must be > 0, got {self.R}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "divisors", divisors)
        object.__setattr__(self, "R", float(self.R))

    def check_inside(self, grid: GridSpec) -> None:
        for c, length in zip(self.center, grid.lengths):
            if not 0.0 <= c <= length:
                raise ValueError(f"ellipsoid center {self.center} lies outside the box {grid.lengths}")


def tanh_ellipsoid(spec: EllipsoidSpec, grid: GridSpec, epsilon: float | None = None) -> ScalarField3D:
    eps = epsilon if epsilon is not None else spec.epsilon
    if eps is None:
        raise ValueError("tanh_ellipsoid needs an epsilon (spec.epsilon is None)")
    spec.check_inside(grid)
    q = sum((x - c) ** 2 / d for x, c, d in zip(grid.coordinates(), spec.center, spec.divisors))
    u = np.tanh((spec.R - q) / (math.sqrt(2.0) * eps))
    # tanh saturates to exactly +-1 in double precision far from the interface
    return ScalarField3D(grid, np.clip(u, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0)))


def tanh_sphere(grid: GridSpec, radius: float, epsilon: float, center=None) -> ScalarField3D:
    """Equilibrium-profile sphere ``tanh((r - |x - c|) / (sqrt(2) eps))``."""
    if center is None:
        center = tuple(0.5 * length for length in grid.lengths)
    dist = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coordinates(), center)))
    return ScalarField3D(grid, np.tanh((radius - dist) / (math.sqrt(2.0) * epsilon)))


def derive_constraints(phi: ScalarField3D, p: ModelParams) -> tuple[float, float, float]:
    """(V, A, dA) of a configuration, used as (alpha, beta, dA0) targets."""
    model = EnergyModel(phi.grid, p)
    e = model.total_energy(phi)
    return e.V, e.A, e.dA


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    domain: GridSpec
    params: ModelParams
    init: EllipsoidSpec
    integrator: IntegratorConfig
    expected_shape: str
    figure: str = ""
    varied: bool = False
    notes: str = ""

    def __post_init__(self):
        if self.expected_shape not in SHAPES:
            raise ValueError(f"unknown shape label {self.expected_shape!r}")
        self.init.check_inside(self.domain)

    def initial_field(self, grid: GridSpec | None = None) -> ScalarField3D:
        return tanh_ellipsoid(self.init, grid or self.domain, self.params.epsilon)

    def with_grid(self, n: int) -> "ExperimentPreset":
        """Same scenario resampled on ``n`` points per axis."""
        d = self.domain
        return replace(self, domain=GridSpec(n, n, n, d.lx, d.ly, d.lz))

    def record(self) -> dict:
        """Flat numeric record for catalog listings (stable key order)."""
        p, d, i = self.params, self.domain, self.integrator
        return {
            "name": self.name,
            "figure": self.figure,
            "expected_shape": self.expected_shape,
            "varied": self.varied,
            "nx": d.nx, "ny": d.ny, "nz": d.nz,
            "lx": d.lx, "ly": d.ly, "lz": d.lz,
            "epsilon": p.epsilon,
            "kappa": p.kappa,
            "kappa_bar": p.kappa_bar,
            "C": p.C,
            "D": p.leaflet_distance,
            "M1": p.M1,
            "M2": p.M2,
            "alpha": p.alpha,
            "beta": p.beta,
            "dA0": p.dA0,
            "A0": p.area_scale,
            "scheme": i.scheme,
            "dt": i.dt,
            "init_center": list(self.init.center),
            "init_divisors": list(self.init.divisors),
            "init_R": self.init.R,
            "notes": self.notes,
        }


def _make(name, fig, shape, eps, dt, alpha, beta, dA0, init, *, n=64, length=1.0,
          M1=1.0e5, M2=1.0e4, varied=False, notes=""):
    params = ModelParams(epsilon=eps, kappa=1.0, kappa_bar=1.4, C=0.0, M1=M1, M2=M2,
                         alpha=alpha, beta=beta, dA0=dA0)
    return ExperimentPreset(
        name=name,
        domain=GridSpec.cube(n, length),
        params=params,
        init=init,
        integrator=IntegratorConfig("semi_implicit", dt),
        expected_shape=shape,
        figure=fig,
        varied=varied,
        notes=notes,
    )


_C = (0.5, 0.5, 0.5)
_OBLATE = EllipsoidSpec(_C, (0.5, 0.5, 0.1), 0.35)
_SPHERE_06 = EllipsoidSpec(_C, (0.35**2,) * 3, 0.6)
_PROLATE = EllipsoidSpec(_C, (0.2**2, 0.2**2, 0.35**2), 0.5)
_SPHERE_05 = EllipsoidSpec(_C, (0.35**2,) * 3, 0.5)
_FLAT = EllipsoidSpec(_C, (0.35**2, 0.35**2, 0.15**2), 0.5)
_NESTED = EllipsoidSpec((1.0, 1.0, 1.0), (0.16,) * 3, 1.0)

_TABLE_NOTE = "gallery row; dA0 deliberately varied away from the initial value"

_CATALOG: tuple[ExperimentPreset, ...] = (
    _make("discocyte", "1", "discocyte", 0.04, 5e-7, 0.0289, 0.4880, 0.1090, _OBLATE),
    _make("torus", "2", "torus", 0.03, 2e-7, 0.0652, 0.9092, 0.2839, _SPHERE_06),
    _make("biconcave", "3(a)", "biconcave", 0.05, 5e-7, 0.0077, 0.1992, 0.1614, _PROLATE,
          varied=True, notes=_TABLE_NOTE),
    _make("early_gourd", "3(b)", "early_gourd", 0.05, 5e-7, 0.0077, 0.2068, 0.1676, _PROLATE,
          varied=True, notes=_TABLE_NOTE),
    _make("elongated_gourd", "3(c)", "elongated_gourd", 0.05, 5e-7, 0.0077, 0.2390, 0.1906, _PROLATE,
          varied=True, notes=_TABLE_NOTE),
    _make("gourd", "3(d)", "gourd", 0.05, 5e-7, 0.0077, 0.2390, 0.2253, _PROLATE,
          varied=True, notes=_TABLE_NOTE),
    _make("cylinder", "3(e)", "cylinder", 0.05, 5e-7, 0.0077, 0.2390, 0.2426, _PROLATE,
          varied=True, notes=_TABLE_NOTE),
    _make("two_sphere", "4", "two_sphere", 0.02, 2e-7, 0.0074, 0.1969, 0.0711, _PROLATE,
          notes="initial condition taken as the flattened ellipsoid of experiment (3); "
                "the source only says other parameters follow (3)"),
    _make("chain", "5", "chain", 0.02, 5e-7, 0.0074, 0.2328, 0.0958, _PROLATE,
          notes="alpha printed identical to experiment (4)"),
    _make("three_armed", "6", "three_armed", 0.02, 1e-7, 0.0226, 0.4489, 0.1520, _SPHERE_05),
    _make("four_armed", "7", "four_armed", 0.02, 2e-7, 0.0097, 0.2550, 0.1146, _FLAT),
    _make("six_armed", "8", "six_armed", 0.02, 1e-7, 0.0529, 0.7911, 0.1766, _SPHERE_06,
          notes="same initial condition as experiment (2) but alpha differs (0.0529 vs 0.0652)"),
    _make("nested", "9", "nested", 0.03, 5e-7, 0.2693, 2.8347, 0.3939, _NESTED,
          n=100, length=2.0, M1=1.0e4, M2=1.0e4),
)


def preset_names() -> tuple[str, ...]:
    return tuple(p.name for p in _CATALOG)


def preset(name: str) -> ExperimentPreset:
    for p in _CATALOG:
        if p.name == name:
            return p
    raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(preset_names())}")


def all_presets() -> tuple[ExperimentPreset, ...]:
    return _CATALOG


def presets_list() -> list[dict]:
    return [p.record() for p in _CATALOG]
