"""Time stepping for the Allen-Cahn type gradient flow ``phi_t = -dE_M/dphi``.

All steppers take an :class:`~vesicle_pf.energy.EnergyModel` and a bare
field array and return a new array; inputs are never modified.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .energy import SQRT2, EnergyBreakdown, EnergyModel
from .spectral import NonPositiveSymbol

log = logging.getLogger(__name__)

SCHEMES = ("forward_euler", "semi_implicit", "fully_implicit", "backward_euler")

__all__ = [
    "SCHEMES",
    "IntegratorConfig",
    "StoppingCriterion",
    "NonFinite",
    "NonPositiveSymbol",
    "PicardDiverged",
    "EnergyInequalityViolated",
    "check_admissible",
    "step_forward_euler",
    "step_semi_implicit",
    "symmetric_nonlinearities",
    "step_fully_implicit",
    "step_backward_euler",
    "step",
    "DiagnosticsRow",
    "RunResult",
    "run_to_steady_state",
]


class NonFinite(FloatingPointError):
    """A time step produced NaN or Inf values."""


class PicardDiverged(RuntimeError):
    """Fixed-point iteration did not reach its tolerance."""


class EnergyInequalityViolated(RuntimeError):
    """A backward Euler step increased the modified energy beyond the slack."""


@dataclass(frozen=True)
class IntegratorConfig:
    scheme: str = "semi_implicit"
    dt: float = 5.0e-7
    picard_tol: float = 1.0e-10
    picard_max_iters: int = 200

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not self.picard_tol > 0:
            raise ValueError(f"picard_tol must be > 0, got {self.picard_tol}")
        if int(self.picard_max_iters) != self.picard_max_iters or self.picard_max_iters < 1:
            raise ValueError(f"picard_max_iters must be a positive integer, got {self.picard_max_iters}")
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "picard_tol", float(self.picard_tol))
        object.__setattr__(self, "picard_max_iters", int(self.picard_max_iters))


@dataclass(frozen=True)
class StoppingCriterion:
    max_steps: int = 100_000
    rate_tol: float = 1.0e-2
    energy_tol: float = 1.0e-4

    def __post_init__(self):
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ValueError(f"max_steps must be a positive integer, got {self.max_steps}")
        object.__setattr__(self, "max_steps", int(self.max_steps))
        for name in ("rate_tol", "energy_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
            object.__setattr__(self, name, float(getattr(self, name)))


def check_admissible(model: EnergyModel, dt: float) -> None:
    """Enforce ``dt * kappa < epsilon^3`` for the semi-implicit scheme.

    This is the grid-independent sufficient condition for a positive
    implicit symbol; runs check it before stepping.
    """
    p = model.params
    if not dt * p.kappa < p.epsilon**3:
        raise NonPositiveSymbol(
            f"dt*kappa = {dt * p.kappa:.3e} must be < epsilon^3 = {p.epsilon ** 3:.3e}"
        )


def _finite(phi: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(phi).all():
        raise NonFinite(f"{what} produced non-finite values; reduce dt")
    return phi


# explicit pieces -----------------------------------------------------------

def step_forward_euler(model: EnergyModel, phi: np.ndarray, dt: float) -> np.ndarray:
    return _finite(phi - dt * model.variational_derivative(phi), "forward Euler step")


def _stiff_coefficients(model: EnergyModel, dt: float, weight: float = 1.0) -> tuple[float, float, float]:
    """(a, b, c) of ``1 + weight*dt*kappa*(eps lap^2 + (2/eps) lap)``."""
    p = model.params
    s = weight * dt * p.kappa
    return 1.0, 2.0 * s / p.epsilon, s * p.epsilon


def _stiff_linear(model: EnergyModel, phi_hat: np.ndarray) -> np.ndarray:
    """``eps lap^2 phi + (2/eps) lap phi`` from the transform of phi."""
    eps = model.params.epsilon
    k2 = model.ops.k2
    return model.ops.inverse((eps * k2 * k2 - 2.0 / eps * k2) * phi_hat)


def _semi_implicit_explicit_part(model: EnergyModel, phi: np.ndarray) -> np.ndarray:
    """Everything in dE_M/dphi except ``kappa*(eps lap^2 + (2/eps) lap) phi``."""
    p = model.params
    ops = model.ops
    eps, C = p.epsilon, p.C
    phi_hat = ops.forward(phi)
    lap = ops.inverse(-ops.k2 * phi_hat)
    p2 = phi * phi

    dA = model.area_difference(phi, lap)
    coef = model.ade_coefficient(dA)

    # Laplacians of pointwise products share one transform pair.
    lap_arg = p.kappa * (-(p2 * phi) / eps - C * p2) - coef * p2
    lap_terms = ops.laplacian(lap_arg)

    local = p.kappa * (
        -3.0 / eps * p2 * lap
        - 2.0 * C * phi * lap
        + (3.0 * p2 + 2.0 * C * eps * phi - 1.0) * (p2 - 1.0) * (phi + C * eps) / eps**3
    )
    if coef != 0.0:
        local = local + coef * (-2.0 * phi * lap + (1.0 - 6.0 * p2 + 5.0 * p2 * p2) / (eps * eps))

    V = model.volume(phi)
    _, A = model.gl_and_area(phi, phi_hat)
    local = local - 1.5 * SQRT2 * p.M2 * (A - p.beta) * model.f(phi, lap)
    local = local + p.M1 * (V - p.alpha)
    return lap_terms + ops.nonlinear(local)


def step_semi_implicit(model: EnergyModel, phi: np.ndarray, dt: float) -> np.ndarray:
    """Stiff linear bending terms implicit, the rest explicit."""
    rhs = phi - dt * _semi_implicit_explicit_part(model, phi)
    out = model.ops.implicit_solve(rhs, *_stiff_coefficients(model, dt))
    return _finite(out, "semi-implicit step")


# implicit schemes ------------------------------------------------------------

def symmetric_nonlinearities(
    model: EnergyModel,
    phi: np.ndarray,
    eta: np.ndarray,
    form: str = "printed",
    lap_phi: np.ndarray | None = None,
    dA_phi: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-argument versions ``f(phi, eta)``, ``g(phi, eta)``, ``h(phi, eta)``.

    All three are symmetric in their arguments and reduce to ``f``,
    ``dW/dphi / kappa`` and ``dG/dphi`` on the diagonal.  ``form="printed"``
    uses the endpoint-averaged ADE factor; ``form="exact"`` uses the
    difference quotient of the area-difference functional, which makes
    ``G(phi) - G(eta) = integrate((phi - eta) * h)`` hold exactly.  ``f`` and
    ``g`` are exact difference quotients in both forms.
    """
    if form not in ("printed", "exact"):
        raise ValueError(f"form must be 'printed' or 'exact', got {form!r}")
    p = model.params
    ops = model.ops
    eps, C = p.epsilon, p.C
    if lap_phi is None:
        lap_phi = ops.laplacian(phi)
    lap_eta = ops.laplacian(eta)

    s = phi + eta
    f_sym = 0.5 * eps * (lap_phi + lap_eta) - (phi * phi + eta * eta - 2.0) * s / (4.0 * eps)

    fc_sum = model.f_c(phi, lap_phi) + model.f_c(eta, lap_eta)
    q = phi * phi + phi * eta + eta * eta + C * eps * s - 1.0
    g_sym = 0.5 * ops.laplacian(fc_sum) - q * fc_sum / (2.0 * eps * eps)

    if dA_phi is None:
        dA_phi = model.area_difference(phi, lap_phi)
    dA_eta = model.area_difference(eta, lap_eta)
    coef = -3.0 * p.kappa_bar * math.pi / (8.0 * p.area_scale * p.leaflet_distance)
    coef *= dA_phi + dA_eta - 2.0 * p.dA0
    p2, e2 = phi * phi, eta * eta
    if form == "printed":
        shape = (
            -phi * lap_phi
            - eta * lap_eta
            - 0.5 * ops.laplacian(p2 + e2)
            + (1.0 - 2.0 * p2 - 2.0 * e2 - 2.0 * phi * eta + 2.0 * p2 * p2 + 2.0 * e2 * e2 + p2 * e2)
            / (eps * eps)
        )
    else:
        pe = phi * eta
        shape = (
            -(2.0 * phi * lap_phi + 2.0 * eta * lap_eta + phi * lap_eta + eta * lap_phi) / 3.0
            - ops.laplacian(p2 + pe + e2) / 3.0
            + (1.0 - 2.0 * (p2 + pe + e2) + (p2 * p2 + p2 * pe + p2 * e2 + pe * e2 + e2 * e2))
            / (eps * eps)
        )
    h_sym = coef * shape
    return f_sym, g_sym, h_sym


def _anderson_update(xs: list[np.ndarray], gs: list[np.ndarray]) -> np.ndarray:
    """Anderson-mixed iterate from past iterates ``xs`` and map values ``gs``."""
    fs = [g - x for g, x in zip(gs, xs)]
    if len(fs) == 1:
        return gs[-1]
    dF = np.stack([(fs[i + 1] - fs[i]).ravel() for i in range(len(fs) - 1)], axis=1)
    dG = np.stack([(gs[i + 1] - gs[i]).ravel() for i in range(len(gs) - 1)], axis=1)
    gamma, *_ = np.linalg.lstsq(dF, fs[-1].ravel(), rcond=None)
    return gs[-1] - (dG @ gamma).reshape(gs[-1].shape)


def _picard(
    model: EnergyModel,
    phi: np.ndarray,
    dt: float,
    cfg,
    residual: Callable[[np.ndarray], np.ndarray],
    weight: float,
    what: str,
    diffusion: float = 0.0,
    depth: int = 5,
) -> tuple[np.ndarray, int]:
    """Solve ``eta = phi - dt * residual(eta)`` by preconditioned Picard sweeps.

    The stiff part ``weight*kappa*(eps lap^2 + (2/eps) lap) - diffusion*lap``
    is moved to the left and inverted spectrally every sweep; the sweeps
    are Anderson-mixed over the last ``depth`` iterates.
    """
    ops = model.ops
    a, b, c = _stiff_coefficients(model, dt, weight)
    b -= dt * max(diffusion, 0.0)
    symbol = ops.helmholtz_symbol(a, b, c)
    if not np.all(symbol > 0):
        raise NonPositiveSymbol(f"{what}: preconditioner symbol reaches {float(symbol.min()):.3e}")
    stiff = (symbol - 1.0) / dt

    def sweep(eta):
        eta_hat = ops.forward(eta)
        rhs = ops.forward(phi - dt * residual(eta)) + dt * stiff * eta_hat
        return ops.inverse(rhs / symbol)

    eta = phi.copy()
    xs: list[np.ndarray] = []
    gs: list[np.ndarray] = []
    change = math.inf
    for it in range(1, cfg.picard_max_iters + 1):
        g = sweep(eta)
        if not np.isfinite(g).all():
            raise NonFinite(f"{what}: Picard iterate became non-finite; reduce dt")
        change = float(np.max(np.abs(g - eta)))
        if change <= cfg.picard_tol:
            return g, it
        xs.append(eta)
        gs.append(g)
        if depth:
            del xs[:-depth - 1], gs[:-depth - 1]
            eta = _anderson_update(xs, gs)
        else:
            eta = g
    raise PicardDiverged(
        f"{what}: Picard update {change:.3e} > tol {cfg.picard_tol:.1e} after "
        f"{cfg.picard_max_iters} iterations; reduce dt"
    )


def _area_diffusion(model: EnergyModel, phi: np.ndarray) -> float:
    """Diffusivity of the area penalty's linear part, frozen at ``phi``."""
    p = model.params
    return 1.5 * SQRT2 * p.M2 * (model.area(phi) - p.beta) * p.epsilon


def step_fully_implicit(model: EnergyModel, phi: np.ndarray, dt: float, cfg, form: str = "exact",
                        return_iterations: bool = False):
    """Symmetric fully implicit step satisfying a discrete energy equality."""
    p = model.params
    lap_phi = model.ops.laplacian(phi)
    dA_phi = model.area_difference(phi, lap_phi)
    V_phi = model.volume(phi)
    A_phi = model.area(phi)

    def residual(eta):
        f_sym, g_sym, h_sym = symmetric_nonlinearities(model, phi, eta, form, lap_phi, dA_phi)
        out = p.kappa * g_sym + h_sym
        out = out + 0.5 * p.M1 * (model.volume(eta) + V_phi - 2.0 * p.alpha)
        out = out - 0.75 * SQRT2 * p.M2 * (model.area(eta) + A_phi - 2.0 * p.beta) * f_sym
        return out

    eta, iters = _picard(model, phi, dt, cfg, residual, 0.5, "fully implicit step",
                         diffusion=0.5 * _area_diffusion(model, phi))
    return (eta, iters) if return_iterations else eta


def step_backward_euler(model: EnergyModel, phi: np.ndarray, dt: float, cfg,
                        slack: float | None = None, return_iterations: bool = False):
    """Backward Euler step; rejects roots that raise the modified energy."""
    eta, iters = _picard(model, phi, dt, cfg, model.variational_derivative, 1.0, "backward Euler step",
                         diffusion=_area_diffusion(model, phi))
    e0 = model.energy(phi)
    e1 = model.energy(eta)
    d = eta - phi
    excess = e1 - e0 + model.ops.integrate(d * d) / (2.0 * dt)
    if slack is None:
        slack = 1.0e-8 * max(1.0, e0)
    if excess > slack:
        raise EnergyInequalityViolated(
            f"backward Euler step raised E_M + |dphi|^2/(2dt) by {excess:.3e} > {slack:.1e}; reduce dt"
        )
    return (eta, iters) if return_iterations else eta


def step(model: EnergyModel, phi: np.ndarray, cfg: IntegratorConfig) -> np.ndarray:
    if cfg.scheme == "forward_euler":
        return step_forward_euler(model, phi, cfg.dt)
    if cfg.scheme == "semi_implicit":
        return step_semi_implicit(model, phi, cfg.dt)
    if cfg.scheme == "fully_implicit":
        return step_fully_implicit(model, phi, cfg.dt, cfg)
    return step_backward_euler(model, phi, cfg.dt, cfg)


# run loop ------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsRow:
    step: int
    time: float
    E_M: float
    W: float
    G: float
    T1: float
    T2: float
    V: float
    A: float
    dA: float
    rate: float

    COLUMNS = ("step", "time", "E_M", "W", "G", "T1", "T2", "V", "A", "dA", "rate")

    @classmethod
    def from_energy(cls, step: int, dt: float, e: EnergyBreakdown, rate: float) -> "DiagnosticsRow":
        return cls(step, step * dt, e.E_M, e.W, e.G, e.T1, e.T2, e.V, e.A, e.dA, rate)

    @property
    def energy(self) -> EnergyBreakdown:
        return EnergyBreakdown(self.W, self.G, self.T1, self.T2, self.E_M, self.V, self.A, self.dA)

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in self.COLUMNS)


@dataclass
class RunResult:
    phi: np.ndarray
    history: list[DiagnosticsRow] = field(default_factory=list)
    steps: int = 0
    converged: bool = False
    reason: str = ""


def run_to_steady_state(
    phi0: np.ndarray,
    model: EnergyModel,
    integrator: IntegratorConfig,
    stopping: StoppingCriterion,
    hooks: Iterable[Callable[[DiagnosticsRow, np.ndarray], None]] = (),
    cadence: int = 100,
    start_step: int = 0,
    record_initial: bool = True,
    on_step: Callable[[int, np.ndarray], None] | None = None,
) -> RunResult:
    """Step until the displacement rate and the energy rate are both small.

    A diagnostics row is recorded (and every hook called with it) at
    ``start_step``, at multiples of ``cadence`` and at the final step.
    ``on_step(n, phi)`` runs after every step with the new state.
    Reaching ``stopping.max_steps`` ends the run with ``converged=False``.
    """
    if cadence < 1:
        raise ValueError(f"cadence must be >= 1, got {cadence}")
    hooks = list(hooks)
    dt = integrator.dt
    if integrator.scheme in ("semi_implicit", "fully_implicit", "backward_euler"):
        check_admissible(model, dt)

    result = RunResult(phi=np.array(phi0, dtype=np.float64, copy=True), steps=start_step)

    def record(n, phi, energy, rate):
        row = DiagnosticsRow.from_energy(n, dt, energy if energy is not None else model.total_energy(phi), rate)
        result.history.append(row)
        for hook in hooks:
            hook(row, phi)

    phi = result.phi
    n = start_step
    cached: tuple[int, EnergyBreakdown] | None = None
    if record_initial:
        e0 = model.total_energy(phi)
        cached = (n, e0)
        record(n, phi, e0, math.nan)

    while n < stopping.max_steps:
        new = step(model, phi, integrator)
        rate = float(np.max(np.abs(new - phi))) / dt
        converged = False
        e_new = None
        if rate <= stopping.rate_tol:
            e_old = cached[1] if cached is not None and cached[0] == n else model.total_energy(phi)
            e_new = model.total_energy(new)
            scale = dt * max(e_new.E_M, 1.0)
            converged = abs(e_new.E_M - e_old.E_M) / scale <= stopping.energy_tol
            cached = (n + 1, e_new)
        phi = new
        n += 1
        if on_step is not None:
            on_step(n, phi)
        last = converged or n >= stopping.max_steps
        if n % cadence == 0 or last:
            record(n, phi, e_new, rate)
        if converged:
            result.converged = True
            result.reason = "converged"
            break
    else:
        result.reason = "max_steps"
    result.phi = phi
    result.steps = n
    log.info("run finished after %d steps (%s)", n, result.reason)
    return result
