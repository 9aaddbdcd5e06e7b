"""Initial conditions and explicit solvers for the benchmark PDE families.

Scalar families (diffusion, advection, advection-diffusion, ADR, Allen-Cahn)
use centred second-order Laplacians, first-order upwind advection and
forward-Euler time stepping.  Burgers uses local-velocity upwinding.  2D
incompressible Navier-Stokes is solved pseudo-spectrally in
vorticity-streamfunction form with an integrating-factor RK4 stepper.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .fields import Field, Grid2D

SCALAR_FAMILIES = ("diffusion", "advection", "advection_diffusion", "adr", "allen_cahn")
VECTOR_FAMILIES = ("burgers", "navier_stokes")

# which ScalarPDEParams fields each family reads
_RELEVANT = {
    "diffusion": {"nu"},
    "advection": {"ax", "ay"},
    "advection_diffusion": {"nu", "ax", "ay"},
    "adr": {"nu", "ax", "ay", "k"},
    "allen_cahn": {"eps2"},
}

FAMILY_BC = {
    "diffusion": "neumann",
    "advection": "neumann",
    "advection_diffusion": "neumann",
    "adr": "neumann",
    "allen_cahn": "dirichlet",
    "burgers": "dirichlet",
    "navier_stokes": "periodic",
}

DEFAULT_T = {
    "diffusion": 0.04,
    "advection": 0.05,
    "advection_diffusion": 0.04,
    "adr": 0.04,
    "allen_cahn": 0.005,
    "burgers": 0.5,
    "navier_stokes": 1.0,
}

BLOWUP = 1e8
SPEED_EPS = 1e-8


@dataclass(frozen=True)
class ScalarPDEParams:
    family: str
    nu: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    k: float = 0.0
    eps2: float = 0.0

    def __post_init__(self):
        if self.family not in SCALAR_FAMILIES:
            raise InvalidArgument(f"unknown scalar family {self.family!r}")
        used = _RELEVANT[self.family]
        for name in ("nu", "ax", "ay", "k", "eps2"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidArgument(f"{name} must be finite")
            if name not in used and value != 0.0:
                raise InvalidArgument(f"{name} is not used by {self.family} and must be zero")
        if self.nu < 0 or self.k < 0:
            raise InvalidArgument("nu and k must be non-negative")
        if self.family == "diffusion" and self.nu <= 0:
            raise InvalidArgument("diffusion requires nu > 0")
        if self.family == "allen_cahn" and self.eps2 <= 0:
            raise InvalidArgument("Allen-Cahn requires eps2 > 0")


@dataclass(frozen=True)
class VectorPDEParams:
    family: str
    nu: float
    L: float = 1.0

    def __post_init__(self):
        if self.family not in VECTOR_FAMILIES:
            raise InvalidArgument(f"unknown vector family {self.family!r}")
        if not self.nu > 0:
            raise InvalidArgument("viscosity must be positive")
        if not self.L > 0:
            raise InvalidArgument("domain length must be positive")


@dataclass(frozen=True)
class SolverConfig:
    T: float
    cfl: float = 0.5
    max_steps: int = 1_000_000
    record_trajectory: bool = False

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument("terminal time must be positive")
        if not 0 < self.cfl <= 1:
            raise InvalidArgument("cfl must lie in (0, 1]")
        if self.max_steps < 1:
            raise InvalidArgument("max_steps must be >= 1")


def default_config(family: str, **overrides) -> SolverConfig:
    return SolverConfig(T=overrides.pop("T", DEFAULT_T[family]), **overrides)


# --------------------------------------------------------------------------
# initial conditions


def _bump(X, Y, xc, yc, w):
    return np.exp(-((X - xc) ** 2 + (Y - yc) ** 2) / w) * np.sin(np.pi * X) * np.sin(np.pi * Y)


def gaussian_bump_ic(grid: Grid2D, xc: float, yc: float, w0: float) -> Field:
    """Gaussian bump tapered by ``sin(pi x) sin(pi y)``."""
    if not w0 > 0:
        raise InvalidArgument("bump width must be positive")
    X, Y = grid.mesh()
    return Field(grid, _bump(X, Y, xc, yc, w0))


def burgers_ic(grid: Grid2D, c1, w1: float, c2, w2: float) -> Field:
    """Two tapered Gaussian velocity components (the taper vanishes on (-1,1)^2 edges)."""
    if not (w1 > 0 and w2 > 0):
        raise InvalidArgument("component widths must be positive")
    X, Y = grid.mesh()
    u1 = _bump(X, Y, c1[0], c1[1], w1)
    u2 = _bump(X, Y, c2[0], c2[1], w2)
    return Field(grid, np.stack([u1, u2]))


def ns_ic(grid: Grid2D, a: float, phi_choice: str = "sin", psi_choice: str = "sin",
          L: float | None = None) -> Field:
    """Solenoidal shear initial velocity ``(-a phi(2 pi y/L), a psi(4 pi x/L))``."""
    if not grid.periodic:
        raise InvalidArgument("Navier-Stokes initial condition needs a periodic grid")
    if not a > 0:
        raise InvalidArgument("amplitude must be positive")
    funcs = {"sin": np.sin, "cos": np.cos}
    if phi_choice not in funcs or psi_choice not in funcs:
        raise InvalidArgument("basis choices must be 'sin' or 'cos'")
    L = grid.x1 - grid.x0 if L is None else L
    X, Y = grid.mesh()
    u1 = -a * funcs[phi_choice](2 * np.pi * Y / L)
    u2 = a * funcs[psi_choice](4 * np.pi * X / L)
    return Field(grid, np.stack([u1, u2]))


# --------------------------------------------------------------------------
# stability


def stable_dt(family: str, params, grid: Grid2D, cfl: float = 0.5,
              speed: float | None = None) -> float:
    """Largest stable explicit step times ``cfl``; ``inf`` when nothing constrains it.

    ``speed`` is the current maximum of ``|u1| + |u2|`` (Burgers and
    Navier-Stokes only).
    """
    h = grid.h
    limits = []
    if family in ("diffusion", "advection_diffusion", "adr"):
        if family == "diffusion" and not params.nu > 0:
            raise InvalidArgument("diffusion requires nu > 0")
        if params.nu > 0:
            limits.append(h * h / (4 * params.nu))
    if family in ("advection", "advection_diffusion", "adr"):
        a = abs(params.ax) + abs(params.ay)
        if a > 0:
            limits.append(h / a)
    if family == "allen_cahn":
        if not params.eps2 > 0:
            raise InvalidArgument("Allen-Cahn requires eps2 > 0")
        # harmonic combination keeps the discrete maximum principle for cfl <= 1
        limits.append(1.0 / (4 * params.eps2 / (h * h) + 2.0 / params.eps2))
    if family == "burgers":
        s = 0.0 if speed is None else speed
        limits.append(h / (s + SPEED_EPS))
        limits.append(h * h / (4 * params.nu))
    if family == "navier_stokes":
        s = 0.0 if speed is None else speed
        limits.append(h / (s + SPEED_EPS))
    if not limits:
        return math.inf
    return cfl * min(limits)


def _n_steps(T, dt, cfg):
    n = 1 if math.isinf(dt) else max(1, math.ceil(T / dt - 1e-12))
    if n > cfg.max_steps:
        raise InvalidArgument(f"{n} steps needed, exceeds max_steps={cfg.max_steps}")
    return n


def _check(u, step):
    m = np.max(np.abs(u))
    if not np.isfinite(m) or m > BLOWUP:
        raise DivergenceError("solution diverged", step)


# --------------------------------------------------------------------------
# finite-difference operators on arrays (..., ny, nx)


def _pad(u, bc):
    width = [(0, 0)] * (u.ndim - 2) + [(1, 1), (1, 1)]
    mode = {"neumann": "reflect", "periodic": "wrap", "dirichlet": "edge"}[bc]
    return np.pad(u, width, mode=mode)


def laplacian(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Five-point Laplacian; Neumann by mirrored ghosts, Dirichlet rows give zero."""
    P = _pad(u, grid.bc)
    c = P[..., 1:-1, 1:-1]
    lap = ((P[..., 1:-1, 2:] - 2 * c + P[..., 1:-1, :-2]) / grid.hx ** 2
           + (P[..., 2:, 1:-1] - 2 * c + P[..., :-2, 1:-1]) / grid.hy ** 2)
    if grid.bc == "dirichlet":
        _zero_boundary(lap)
    return lap


def upwind_advection(u: np.ndarray, ax, ay, grid: Grid2D) -> np.ndarray:
    """First-order upwind ``ax du/dx + ay du/dy``; velocities scalar or node arrays."""
    P = _pad(u, grid.bc)
    c = P[..., 1:-1, 1:-1]
    dxm = (c - P[..., 1:-1, :-2]) / grid.hx
    dxp = (P[..., 1:-1, 2:] - c) / grid.hx
    dym = (c - P[..., :-2, 1:-1]) / grid.hy
    dyp = (P[..., 2:, 1:-1] - c) / grid.hy
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    out = (np.maximum(ax, 0) * dxm + np.minimum(ax, 0) * dxp
           + np.maximum(ay, 0) * dym + np.minimum(ay, 0) * dyp)
    if grid.bc == "dirichlet":
        _zero_boundary(out)
    return out


def _zero_boundary(a):
    a[..., 0, :] = 0.0
    a[..., -1, :] = 0.0
    a[..., :, 0] = 0.0
    a[..., :, -1] = 0.0


# --------------------------------------------------------------------------
# solvers


def _scalar_rhs(u, p: ScalarPDEParams, grid):
    f = p.family
    if f == "allen_cahn":
        return p.eps2 * laplacian(u, grid) - (u ** 3 - u) / p.eps2
    rhs = np.zeros_like(u)
    if p.nu > 0:
        rhs += p.nu * laplacian(u, grid)
    if p.ax != 0 or p.ay != 0:
        rhs -= upwind_advection(u, p.ax, p.ay, grid)
    return rhs


def solve_scalar(params: ScalarPDEParams, ic: Field, cfg: SolverConfig,
                 frames: list | None = None) -> Field:
    """Integrate a scalar family to ``cfg.T`` and return the terminal state.

    When ``cfg.record_trajectory`` is set and ``frames`` is a list, every
    intermediate ``(t, Field)`` pair is appended to it.
    """
    grid = ic.grid
    if grid.bc != FAMILY_BC[params.family]:
        raise InvalidArgument(
            f"{params.family} needs a {FAMILY_BC[params.family]} grid, got {grid.bc}")
    dt = stable_dt(params.family, params, grid, cfg.cfl)
    n = _n_steps(cfg.T, dt, cfg)
    dt = cfg.T / n
    u = np.array(ic.data, dtype=np.float64)
    record = cfg.record_trajectory and frames is not None
    if record:
        frames.append((0.0, Field(grid, u)))
    # linear reaction is applied as the exact factor exp(k dt) after each step
    growth = math.exp(params.k * dt) if params.k else 1.0
    for step in range(n):
        u = u + dt * _scalar_rhs(u, params, grid)
        if params.k:
            u *= growth
        if grid.bc == "dirichlet":
            _zero_boundary(u)
        _check(u, step)
        if record:
            frames.append(((step + 1) * dt, Field(grid, u)))
    return Field(grid, u)


def _burgers_rhs(u, nu, grid):
    adv = upwind_advection(u, u[0], u[1], grid)
    return nu * laplacian(u, grid) - adv


def solve_burgers(params: VectorPDEParams, ic: Field, cfg: SolverConfig,
                  frames: list | None = None) -> Field:
    """Explicit Burgers solve with the step re-evaluated from the current speed."""
    grid = ic.grid
    if params.family != "burgers":
        raise InvalidArgument("expected Burgers parameters")
    if grid.bc != "dirichlet" or ic.n_channels != 2:
        raise InvalidArgument("Burgers needs a 2-channel field on a Dirichlet grid")
    u = np.array(ic.data, dtype=np.float64)
    _zero_boundary(u)
    t = 0.0
    step = 0
    record = cfg.record_trajectory and frames is not None
    if record:
        frames.append((0.0, Field(grid, u)))
    while t < cfg.T * (1 - 1e-14):
        speed = float(np.max(np.abs(u[0]) + np.abs(u[1])))
        dt = min(stable_dt("burgers", params, grid, cfg.cfl, speed), cfg.T - t)
        u = u + dt * _burgers_rhs(u, params.nu, grid)
        _zero_boundary(u)
        _check(u, step)
        t += dt
        step += 1
        if step > cfg.max_steps:
            raise InvalidArgument(f"Burgers solve exceeded max_steps={cfg.max_steps}")
        if record:
            frames.append((t, Field(grid, u)))
    return Field(grid, u)


def _wavenumbers(grid: Grid2D):
    n_x, n_y = grid.nx, grid.ny
    kx = 2 * np.pi * np.fft.fftfreq(n_x, d=grid.hx)
    ky = 2 * np.pi * np.fft.fftfreq(n_y, d=grid.hy)
    KX, KY = np.meshgrid(kx, ky, indexing="xy")
    mx = np.abs(np.fft.fftfreq(n_x) * n_x)
    my = np.abs(np.fft.fftfreq(n_y) * n_y)
    MX, MY = np.meshgrid(mx, my, indexing="xy")
    dealias = (MX < n_x / 3) & (MY < n_y / 3)
    return KX, KY, dealias


def spectral_divergence(f: Field) -> np.ndarray:
    """Pointwise divergence of a two-component periodic field via FFT."""
    if not f.grid.periodic:
        raise InvalidArgument("spectral divergence needs a periodic grid")
    KX, KY, _ = _wavenumbers(f.grid)
    div_hat = 1j * KX * np.fft.fft2(f.data[0]) + 1j * KY * np.fft.fft2(f.data[1])
    return np.real(np.fft.ifft2(div_hat))


def kinetic_energy(f: Field) -> float:
    """``0.5 * integral |u|^2`` by the rectangle rule."""
    return 0.5 * float(np.sum(f.data ** 2)) * f.grid.hx * f.grid.hy


def solve_navier_stokes(params: VectorPDEParams, ic: Field, cfg: SolverConfig,
                        frames: list | None = None) -> Field:
    """Pseudo-spectral vorticity-streamfunction solve with 2/3 dealiasing."""
    grid = ic.grid
    if params.family != "navier_stokes":
        raise InvalidArgument("expected Navier-Stokes parameters")
    if not grid.periodic or ic.n_channels != 2:
        raise InvalidArgument("Navier-Stokes needs a 2-channel field on a periodic grid")
    KX, KY, dealias = _wavenumbers(grid)
    K2 = KX ** 2 + KY ** 2
    K2_inv = np.where(K2 > 0, 1.0 / np.where(K2 > 0, K2, 1.0), 0.0)
    u_hat = np.fft.fft2(ic.data[0])
    v_hat = np.fft.fft2(ic.data[1])
    npts = grid.size
    mean_u = u_hat[0, 0].real / npts
    mean_v = v_hat[0, 0].real / npts
    w_hat = (1j * KX * v_hat - 1j * KY * u_hat) * dealias

    def velocity(wh):
        psi = wh * K2_inv
        u = mean_u + np.real(np.fft.ifft2(1j * KY * psi))
        v = mean_v - np.real(np.fft.ifft2(1j * KX * psi))
        return u, v

    def nonlinear(wh):
        u, v = velocity(wh)
        wx = np.real(np.fft.ifft2(1j * KX * wh))
        wy = np.real(np.fft.ifft2(1j * KY * wh))
        return -np.fft.fft2(u * wx + v * wy) * dealias

    speed = float(np.max(np.abs(ic.data[0]) + np.abs(ic.data[1])))
    dt = stable_dt("navier_stokes", params, grid, cfg.cfl, speed)
    n = _n_steps(cfg.T, dt, cfg)
    dt = cfg.T / n
    E = np.exp(-params.nu * K2 * dt / 2)
    E2 = E * E
    record = cfg.record_trajectory and frames is not None
    if record:
        frames.append((0.0, Field(grid, np.stack(velocity(w_hat)))))
    for step in range(n):
        a = dt * nonlinear(w_hat)
        b = dt * nonlinear(E * (w_hat + a / 2))
        c = dt * nonlinear(E * w_hat + b / 2)
        d = dt * nonlinear(E2 * w_hat + E * c)
        w_hat = E2 * w_hat + (E2 * a + 2 * E * (b + c) + d) / 6
        if not np.all(np.isfinite(w_hat)) or np.max(np.abs(w_hat)) / npts > BLOWUP:
            raise DivergenceError("vorticity diverged", step)
        if record:
            frames.append(((step + 1) * dt, Field(grid, np.stack(velocity(w_hat)))))
    return Field(grid, np.stack(velocity(w_hat)))


def solve(params, ic: Field, cfg: SolverConfig, frames: list | None = None) -> Field:
    """Dispatch on the parameter family."""
    if isinstance(params, ScalarPDEParams):
        return solve_scalar(params, ic, cfg, frames)
    if params.family == "burgers":
        return solve_burgers(params, ic, cfg, frames)
    return solve_navier_stokes(params, ic, cfg, frames)
