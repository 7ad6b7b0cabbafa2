"""Independent checks: finite differences, radial quadrature, energy laws,
penalty sweeps and topological shape probes.

Nothing here reuses the code path it is meant to check: gradients are
checked against energy evaluations, spectral functionals against 1-D
quadrature of the exact profile, and shapes are read off voxel topology.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import integrate as quad_integrate
from scipy import ndimage

from .energy import EnergyModel, ModelParams
from .integrators import IntegratorConfig, StoppingCriterion, run_to_steady_state
from .spectral import GridSpec, ScalarField3D

TERMS = ("W", "G", "T1", "T2", "E_M")


def _arr(phi) -> np.ndarray:
    return phi.values if isinstance(phi, ScalarField3D) else np.asarray(phi, dtype=np.float64)


# gradients --------------------------------------------------------------------

def fd_directional_derivative(model: EnergyModel, phi, psi, delta: float = 1.0e-5, term: str = "E_M") -> float:
    """Central difference ``(E(phi + d psi) - E(phi - d psi)) / (2 d)`` of one energy term."""
    if term not in TERMS:
        raise ValueError(f"term must be one of {TERMS}, got {term!r}")
    if not delta > 0:
        raise ValueError("delta must be > 0")
    phi, psi = _arr(phi), _arr(psi)
    plus = getattr(model.total_energy(phi + delta * psi), term)
    minus = getattr(model.total_energy(phi - delta * psi), term)
    return (plus - minus) / (2.0 * delta)


def gradient_mismatch(model: EnergyModel, phi, psi, delta: float = 1.0e-5) -> dict[str, tuple[float, float, float]]:
    """Per-term (fd, analytic, relative error) of the directional derivative."""
    phi, psi = _arr(phi), _arr(psi)
    parts = model.variational_derivative(phi, decompose=True)
    parts["E_M"] = parts["W"] + parts["G"] + parts["T1"] + parts["T2"]
    out = {}
    for term in TERMS:
        fd = fd_directional_derivative(model, phi, psi, delta, term)
        an = model.ops.integrate(parts[term] * psi)
        scale = max(abs(fd), abs(an))
        rel = abs(fd - an) / scale if scale > 0 else 0.0
        out[term] = (fd, an, rel)
    return out


def smooth_random_field(grid: GridSpec, rng: np.random.Generator, modes: int = 6, kmax: int = 2,
                        amplitude: float = 0.9, offset: float = 0.0) -> np.ndarray:
    """Band-limited random field: a few low Fourier modes scaled to ``amplitude``."""
    coords = grid.coordinates()
    f = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.integers(-kmax, kmax + 1, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        arg = sum(2.0 * np.pi * kk * x / length for kk, x, length in zip(k, coords, grid.lengths))
        f = f + rng.normal() * np.cos(arg + phase)
    peak = np.abs(f).max()
    if peak > 0:
        f = f * (amplitude / peak)
    return f + offset


# sharp-interface references -------------------------------------------------------

def sphere_reference(r: float, p: ModelParams) -> tuple[float, float, float]:
    """Sharp sphere volume, area and area difference ``2 D * integral of H dA``."""
    if not r > 0:
        raise ValueError("radius must be > 0")
    D = p.leaflet_distance
    return 4.0 / 3.0 * math.pi * r**3, 4.0 * math.pi * r**2, 8.0 * math.pi * D * r


def tanh_sphere_quadrature(r: float, p: ModelParams) -> tuple[float, float, float]:
    """(V, A, dA) of ``tanh((r - rho)/(sqrt(2) eps))`` by radial quadrature in R^3."""
    eps = p.epsilon
    D = p.leaflet_distance
    s = math.sqrt(2.0) * eps

    def phi(rho):
        return math.tanh((r - rho) / s)

    def dphi(rho):
        return -(1.0 - phi(rho) ** 2) / s

    def d2phi(rho):
        u = phi(rho)
        return -2.0 * u * (1.0 - u * u) / (s * s)

    def shell(fun):
        upper = r + 40.0 * eps
        val, _ = quad_integrate.quad(lambda rho: 4.0 * math.pi * rho * rho * fun(rho), 0.0, upper,
                                     points=[max(r - 5 * eps, 0.0), r, r + 5 * eps], limit=400,
                                     epsabs=1e-14, epsrel=1e-12)
        return val

    V = shell(lambda rho: 0.5 * (phi(rho) + 1.0))
    B = shell(lambda rho: 0.5 * eps * dphi(rho) ** 2 + (phi(rho) ** 2 - 1.0) ** 2 / (4.0 * eps))
    A = 3.0 * math.sqrt(2.0) / 4.0 * B

    def ade_integrand(rho):
        u = phi(rho)
        lap = d2phi(rho) + (2.0 / rho * dphi(rho) if rho > 0 else 3.0 * d2phi(rho))
        w = 1.0 - u * u
        return w * lap + u * w * w / (eps * eps)

    dA = -0.75 * D * shell(ade_integrand)
    return V, A, dA


# energy laws -------------------------------------------------------------------------

def energy_law_residual(model: EnergyModel, phi_n, phi_np1, dt: float, factor: float = 1.0) -> float:
    """``E(phi_{n+1}) - E(phi_n) + factor/dt * integral((phi_{n+1} - phi_n)^2)``.

    ``factor=1`` is the fully implicit equality, ``factor=0.5`` the backward
    Euler inequality (which should be <= 0).
    """
    a, b = _arr(phi_n), _arr(phi_np1)
    d = b - a
    e0 = model.total_energy(a).E_M
    e1 = model.total_energy(b).E_M
    return e1 - e0 + factor / dt * float(np.sum(d * d)) * model.grid.cell_volume


# penalty limit --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    M: float
    V: float
    A: float
    volume_violation: float
    area_violation: float
    converged: bool
    steps: int


def penalty_sweep(phi0, model: EnergyModel, M_list, integrator: IntegratorConfig,
                  stopping: StoppingCriterion, continuation: bool = False) -> list[SweepRow]:
    """Run to steady state with ``M1 = M2 = M`` for each M; record constraint violations.

    With ``continuation`` each M starts from the previous steady state instead
    of ``phi0``.  Large explicit penalties are much better behaved that way.
    """
    M_list = [float(m) for m in M_list]
    if any(m <= 0 for m in M_list) or any(b <= a for a, b in zip(M_list, M_list[1:])):
        raise ValueError("M_list must be positive and strictly increasing")
    rows = []
    start = _arr(phi0)
    for M in M_list:
        m = model.with_params(replace(model.params, M1=M, M2=M))
        res = run_to_steady_state(start, m, integrator, stopping, cadence=stopping.max_steps)
        if continuation:
            start = res.phi
        e = m.total_energy(res.phi)
        rows.append(SweepRow(M, e.V, e.A, abs(e.V - m.params.alpha), abs(e.A - m.params.beta),
                             res.converged, res.steps))
    return rows


# shape probes ------------------------------------------------------------------------

def _periodic_labels(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """6-connected component labels with periodic wrap-around."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return labels, 0
    parent = list(range(n + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for axis in range(3):
        first = np.take(labels, 0, axis=axis)
        last = np.take(labels, -1, axis=axis)
        both = (first > 0) & (last > 0)
        for a, b in zip(first[both], last[both]):
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n + 1)])
    uniq, relabel = np.unique(roots, return_inverse=True)
    # root 0 is background
    return relabel[labels], len(uniq) - 1


def euler_characteristic(mask: np.ndarray) -> int:
    """Euler characteristic of the union of closed unit cubes at ``True`` voxels."""
    q = np.pad(np.asarray(mask, dtype=bool), 1)
    chi = 0
    for span in np.ndindex(2, 2, 2):
        sel = q
        for axis, spanning in enumerate(span):
            n = sel.shape[axis]
            if spanning:
                continue
            lo = np.take(sel, np.arange(0, n - 1), axis=axis)
            hi = np.take(sel, np.arange(1, n), axis=axis)
            sel = lo | hi
        chi += (-1) ** sum(span) * int(sel.sum())
    return chi


@dataclass
class ShapeEvidence:
    probes: dict[str, int]
    positive_components: int
    negative_components: int
    euler_characteristic: int
    genus: int
    extents: tuple[float, float, float]
    thin_axis: int
    center_thickness: float
    mid_thickness: float
    label: str = ""
    details: dict = field(default_factory=dict)

    @property
    def aspect_z(self) -> float:
        """Positive-phase extent along z over the mean extent along x and y."""
        ex, ey, ez = self.extents
        mean_xy = 0.5 * (ex + ey)
        return ez / mean_xy if mean_xy > 0 else math.inf

    def as_dict(self) -> dict:
        d = asdict(self)
        d["aspect_z"] = self.aspect_z
        return d


def default_probes(grid: GridSpec) -> dict[str, tuple[int, int, int]]:
    cx, cy, cz = (n // 2 for n in grid.shape)
    qx, qy, qz = (n // 4 for n in grid.shape)
    return {
        "center": (cx, cy, cz),
        "x_plus": (cx + qx, cy, cz),
        "x_minus": (cx - qx, cy, cz),
        "y_plus": (cx, cy + qy, cz),
        "y_minus": (cx, cy - qy, cz),
        "z_plus": (cx, cy, cz + qz),
        "z_minus": (cx, cy, cz - qz),
    }


def _column_thickness(mask: np.ndarray, axis: int, index: tuple[int, int, int], h: float) -> float:
    sl = list(index)
    sl[axis] = slice(None)
    return float(mask[tuple(sl)].sum()) * h


def shape_probe(field: ScalarField3D, probes: dict[str, tuple[int, int, int]] | None = None) -> ShapeEvidence:
    """Sign pattern and voxel topology of ``{phi > 0}``, with a coarse shape label."""
    phi = field.values
    grid = field.grid
    if probes is None:
        probes = default_probes(grid)
    signs = {name: int(np.sign(phi[idx])) for name, idx in probes.items()}

    pos = phi > 0
    neg = phi < 0
    _, n_pos = _periodic_labels(pos)
    _, n_neg = _periodic_labels(neg)
    chi = euler_characteristic(pos) if n_pos else 0

    spacing = grid.spacing
    extents = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        occupied = pos.any(axis=other)
        extents.append(float(occupied.sum()) * spacing[axis])
    extents = tuple(extents)
    thin = int(np.argmin(extents)) if n_pos else 2

    center = tuple(n // 2 for n in grid.shape)
    center_thickness = _column_thickness(pos, thin, center, spacing[thin])
    # mid-radius column: half the in-plane extent away from the center
    in_plane = [a for a in range(3) if a != thin][0]
    mid = list(center)
    mid[in_plane] = center[in_plane] + int(round(0.25 * extents[in_plane] / spacing[in_plane]))
    mid = tuple(m % n for m, n in zip(mid, grid.shape))
    mid_thickness = _column_thickness(pos, thin, mid, spacing[thin])

    # Solids without cavities: chi = sum over components of (1 - genus).
    genus = max(n_pos - chi, 0) if n_pos else 0
    ev = ShapeEvidence(
        probes=signs,
        positive_components=n_pos,
        negative_components=n_neg,
        euler_characteristic=chi,
        genus=genus,
        extents=extents,
        thin_axis=thin,
        center_thickness=center_thickness,
        mid_thickness=mid_thickness,
        details={"mid_index": mid, "mid_sign": int(np.sign(phi[mid]))},
    )
    ev.label = classify(ev)
    return ev


def classify(ev: ShapeEvidence) -> str:
    """Coarse label from probe evidence.

    ``torus``: one positive component of genus 1 with an outside center.
    ``discocyte``: one genus-0 component whose thickness along its thin axis
    is smaller at the center than at mid-radius, material present at
    mid-radius.  Otherwise ``oblate``, ``prolate`` or ``spherical`` by
    extents, or ``multiple`` / ``empty`` / ``filled``.
    """
    if ev.positive_components == 0:
        return "empty"
    if ev.negative_components == 0:
        return "filled"
    if ev.positive_components > 1:
        return "multiple"
    if ev.genus == 1 and ev.probes.get("center", 0) < 0:
        return "torus"
    if ev.genus == 0 and ev.details.get("mid_sign", 0) > 0 and ev.center_thickness < ev.mid_thickness:
        return "discocyte"
    ext = sorted(ev.extents)
    if ext[0] < 0.8 * ext[1]:
        return "oblate"
    if ext[2] > 1.25 * ext[1]:
        return "prolate"
    return "spherical"


# spectral exactness ------------------------------------------------------------------

def plane_wave_errors(grid: GridSpec, mode: tuple[int, int, int], phase: float = 0.3) -> dict[str, float]:
    """Relative max errors of Laplacian, bilaplacian and |grad|^2 on one plane wave.

    The wave ``cos(k.x + phase)`` has closed-form images under all three
    operators; ``mode`` holds integer wave numbers below Nyquist.
    """
    from .spectral import SpectralOperators

    for m, n in zip(mode, grid.shape):
        if abs(m) >= n // 2:
            raise ValueError(f"mode {mode} is not below Nyquist for {grid.shape}")
    k = [2.0 * np.pi * m / length for m, length in zip(mode, grid.lengths)]
    arg = sum(kk * x for kk, x in zip(k, grid.coordinates())) + phase
    arg = np.broadcast_to(arg, grid.shape)
    k2 = sum(kk * kk for kk in k)
    f = np.cos(arg)
    exact = {"laplacian": -k2 * f, "biharmonic": k2 * k2 * f, "grad_sq": k2 * np.sin(arg) ** 2}
    ops = SpectralOperators(grid)
    got = {"laplacian": ops.laplacian(f), "biharmonic": ops.biharmonic(f), "grad_sq": ops.grad_sq(f)}
    return {name: float(np.abs(got[name] - exact[name]).max() / max(np.abs(exact[name]).max(), 1e-300))
            for name in exact}


# verify suite --------------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<40s} {self.value:11.3e}  (tol {self.tolerance:.1e})  {self.detail}"


def verify_suite(seed: int = 0, steps: int = 5) -> list[CheckResult]:
    """Quick oracle checks (seconds): spectral exactness, gradients, sphere
    references and per-step energy laws on a coarse grid."""
    from .integrators import IntegratorConfig, step_backward_euler, step_fully_implicit
    from .scenarios import preset, tanh_sphere

    results = []

    worst = 0.0
    for n in (16, 32):
        g = GridSpec.cube(n)
        for mode in ((1, 0, 0), (1, 2, 3), (n // 2 - 1, 1, -2)):
            worst = max(worst, *plane_wave_errors(g, mode).values())
    results.append(CheckResult("spectral plane waves", worst, 1e-11, worst <= 1e-11))

    rng = np.random.default_rng(seed)
    g16 = GridSpec.cube(16)
    p = ModelParams(epsilon=0.1, kappa=1.0, kappa_bar=1.4, M1=10.0, M2=10.0,
                    alpha=0.3, beta=0.5, dA0=0.05)
    model = EnergyModel(g16, p)
    worst = 0.0
    for _ in range(2):
        phi = smooth_random_field(g16, rng, offset=0.05)
        psi = smooth_random_field(g16, rng, amplitude=1.0, offset=0.2)
        worst = max(worst, max(rel for _, _, rel in gradient_mismatch(model, phi, psi).values()))
    results.append(CheckResult("variational derivative vs FD", worst, 1e-6, worst <= 1e-6))

    sp = ModelParams(epsilon=0.02, beta=1.0)
    phi = tanh_sphere(GridSpec.cube(64), 0.25, 0.02)
    e = EnergyModel(phi.grid, sp).total_energy(phi)
    ref = sphere_reference(0.25, sp)
    errs = [abs(e.V - ref[0]) / ref[0], abs(e.A - ref[1]) / ref[1], abs(e.dA - ref[2]) / ref[2]]
    ok = errs[0] <= 0.02 and errs[1] <= 0.02 and errs[2] <= 0.05
    results.append(CheckResult("tanh sphere vs sharp sphere", max(errs), 0.05, ok,
                               "V %.2e A %.2e dA %.2e" % tuple(errs)))
    quad = tanh_sphere_quadrature(0.25, sp)
    qerr = max(abs(a - b) / abs(b) for a, b in zip((e.V, e.A, e.dA), quad))
    results.append(CheckResult("tanh sphere vs radial quadrature", qerr, 1e-3, qerr <= 1e-3))

    d = preset("discocyte")
    g = GridSpec.cube(16)
    model = EnergyModel(g, d.params)
    cfg = IntegratorConfig("fully_implicit", d.integrator.dt, picard_tol=1e-12, picard_max_iters=500)
    phi = d.initial_field(g).values
    worst = 0.0
    for _ in range(steps):
        new = step_fully_implicit(model, phi, cfg.dt, cfg)
        r = energy_law_residual(model, phi, new, cfg.dt)
        worst = max(worst, abs(r) / max(1.0, model.total_energy(new).E_M))
        phi = new
    results.append(CheckResult("fully implicit energy law", worst, 1e-8, worst <= 1e-8))

    cfg = IntegratorConfig("backward_euler", d.integrator.dt, picard_tol=1e-12, picard_max_iters=500)
    phi = d.initial_field(g).values
    worst = -math.inf
    for _ in range(steps):
        new = step_backward_euler(model, phi, cfg.dt, cfg)
        r = energy_law_residual(model, phi, new, cfg.dt, factor=0.5)
        worst = max(worst, r / max(1.0, model.total_energy(phi).E_M))
        phi = new
    results.append(CheckResult("backward Euler energy inequality", worst, 1e-10, worst <= 1e-10))
    return results
