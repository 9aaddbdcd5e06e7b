"""Noise schedule, Heun probability-flow integrator and observation guidance.

The guided dynamics integrate ``dx/dsigma = -sigma * (s(x) + g(x))`` where
``s = (D(x) - x) / sigma**2`` is the prior score and ``g`` the gradient of
the observation log-likelihood.  Writing ``D~ = D + sigma**2 * g`` this is
``dx/dsigma = (x - D~) / sigma``, which is what the stepper integrates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .fields import ObservationMask, derive_rng, derive_seed

GUIDANCE_MODES = ("off", "fixed", "residual_normalized")
JACOBIAN_MODES = ("exact_oracle", "identity")


@dataclass(frozen=True)
class SigmaSchedule:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    n_steps: int = 64

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise InvalidArgument("need 0 < sigma_min < sigma_max")
        if self.rho < 1:
            raise InvalidArgument("rho must be >= 1")
        if self.n_steps < 2:
            raise InvalidArgument("n_steps must be >= 2")


def karras_sigmas(s: SigmaSchedule = SigmaSchedule()) -> np.ndarray:
    """``n_steps`` levels from ``sigma_max`` down to ``sigma_min``, then 0."""
    i = np.arange(s.n_steps)
    a, b = s.sigma_max ** (1 / s.rho), s.sigma_min ** (1 / s.rho)
    sig = (a + i / (s.n_steps - 1) * (b - a)) ** s.rho
    sig[0], sig[-1] = s.sigma_max, s.sigma_min
    return np.append(sig, 0.0)


class MeasurementOp:
    """Masked restriction of selected channels, ``A(x) = x[mask]``.

    Parameters
    ----------
    masks : bool array ``(C, ny, nx)``
        Per-channel observed points.  Channels outside ``channels`` are
        ignored (treated as unobserved).
    channels : sequence of int, optional
        Observed channels; defaults to every channel with a true entry.
    """

    def __init__(self, masks, channels=None):
        if isinstance(masks, ObservationMask):
            masks = masks.masks
        masks = np.array(masks, dtype=bool)
        if masks.ndim != 3:
            raise InvalidArgument("masks must have shape (C, ny, nx)")
        if channels is None:
            channels = [c for c in range(masks.shape[0]) if masks[c].any()]
        channels = sorted(int(c) for c in channels)
        if any(not 0 <= c < masks.shape[0] for c in channels):
            raise InvalidArgument("observed channel out of range")
        keep = np.zeros(masks.shape[0], dtype=bool)
        keep[channels] = True
        masks[~keep] = False
        masks.setflags(write=False)
        self.masks = masks
        self.channels = tuple(channels)

    @property
    def shape(self):
        return self.masks.shape

    @property
    def size(self) -> int:
        return int(self.masks.sum())

    def full_channels(self) -> tuple:
        return tuple(c for c in self.channels if self.masks[c].all())

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.shape:
            return x[self.masks]
        return x[:, self.masks]

    def adjoint(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            out = np.zeros(self.shape)
            out[self.masks] = y
        else:
            out = np.zeros((y.shape[0],) + self.shape)
            out[:, self.masks] = y
        return out

    def observe(self, x_true) -> "Observation":
        return Observation(self(x_true), self)


@dataclass(frozen=True, eq=False)
class Observation:
    values: np.ndarray
    op: MeasurementOp

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size != self.op.size:
            raise InvalidArgument(f"{v.size} values for {self.op.size} observed points")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "residual_normalized"
    zeta: float = 1.0
    jacobian: str = "exact_oracle"
    hard_replace: bool = True

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise InvalidArgument(f"unknown guidance mode {self.mode!r}")
        if self.jacobian not in JACOBIAN_MODES:
            raise InvalidArgument(f"unknown jacobian mode {self.jacobian!r}")
        if not math.isfinite(self.zeta) or self.zeta < 0:
            raise InvalidArgument("zeta must be finite and non-negative")


def guidance_gradient(x, x0, obs: Observation, cfg: GuidanceConfig, denoiser=None,
                      sigma: float = 1.0, c: int = 0, vjp=None) -> np.ndarray:
    """Gradient of the observation log-likelihood ``-lam * ||y - A x0(x)||^2``.

    Returns ``2 lam J^T A^T (y - A x0)``.  ``J`` is the denoiser Jacobian
    (``exact_oracle``; ``vjp`` may be the prepared transpose product) or a
    scaled identity ``s(sigma) I`` where ``s`` is the denoiser's
    ``identity_scale`` (1 when absent).  Works on a single field or a batch
    along axis 0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if cfg.mode == "off" or obs is None:
        return np.zeros_like(x0)
    r = obs.values - obs.op(x0)
    if cfg.mode == "fixed":
        lam = cfg.zeta
    else:
        norms = np.linalg.norm(r, axis=-1, keepdims=True)
        lam = cfg.zeta / (norms + 1e-8)
    v = obs.op.adjoint(2.0 * lam * r)
    if cfg.jacobian == "identity":
        scale = getattr(denoiser, "identity_scale", None)
        return v if scale is None else scale(sigma) * v
    if vjp is None:
        if denoiser is None or not denoiser.has_jacobian:
            raise InvalidArgument("exact Jacobian guidance needs a denoiser with jvp_t")
        return denoiser.jvp_t(x, sigma, c, v)
    return vjp(v)


def _effective(x, sigma, denoiser, c, obs, cfg, trace=None):
    """Guided clean estimate ``D + sigma^2 g`` (hard replacement applied to D)."""
    exact = obs is not None and cfg.mode != "off" and cfg.jacobian == "exact_oracle"
    if exact:
        x0, vjp = denoiser.denoise_vjp(x, sigma, c)
    else:
        x0, vjp = denoiser.denoise(x, sigma, c), None
    if obs is None:
        return x0
    if trace is not None:
        trace.append(np.linalg.norm(obs.values - obs.op(x0), axis=-1))
    g = guidance_gradient(x, x0, obs, cfg, denoiser, sigma, c, vjp)
    if cfg.hard_replace and cfg.mode != "off":
        full = obs.op.full_channels()
        if full:
            x0 = x0.copy()
            y = obs.op.adjoint(obs.values)
            full = list(full)
            x0[..., full, :, :] = y[full]
    return x0 + sigma**2 * g


def prior_step(x, sigma_cur: float, sigma_next: float, denoiser, c: int,
               obs: Observation | None = None, cfg: GuidanceConfig | None = None,
               trace=None) -> np.ndarray:
    """One Heun step of the (guided) probability-flow ODE.

    The step to ``sigma_next = 0`` uses the Euler half only.
    """
    if not sigma_cur > sigma_next >= 0:
        raise InvalidArgument("need sigma_cur > sigma_next >= 0")
    cfg = cfg or GuidanceConfig(mode="off")
    h = sigma_next - sigma_cur
    d_cur = (x - _effective(x, sigma_cur, denoiser, c, obs, cfg, trace)) / sigma_cur
    x_next = x + h * d_cur
    if sigma_next > 0:
        d_next = (x_next - _effective(x_next, sigma_next, denoiser, c, obs, cfg)) / sigma_next
        x_next = x + 0.5 * h * (d_cur + d_next)
    return x_next


def integrate(x, sigmas, denoiser, c: int, obs=None, cfg=None, trace=None) -> np.ndarray:
    """Run :func:`prior_step` along an arbitrary decreasing noise sequence."""
    for i in range(len(sigmas) - 1):
        x = prior_step(x, float(sigmas[i]), float(sigmas[i + 1]), denoiser, c, obs, cfg, trace)
        if not np.all(np.isfinite(x)):
            raise DivergenceError("sampler state became non-finite", i)
    return x


def _shape(denoiser, obs):
    if obs is not None:
        return obs.op.shape
    shape = getattr(denoiser, "shape", None)
    if shape is None:
        raise InvalidArgument("cannot infer the sample shape")
    return tuple(shape)


def sample_posterior(denoiser, c: int, obs: Observation | None = None,
                     cfg: GuidanceConfig | None = None,
                     schedule: SigmaSchedule = SigmaSchedule(), seed: int = 0,
                     trace=None) -> np.ndarray:
    """Deterministic guided sample starting from ``sigma_max * N(0, I)``."""
    sig = karras_sigmas(schedule)
    x = sig[0] * derive_rng(seed).standard_normal(_shape(denoiser, obs))
    return integrate(x, sig, denoiser, c, obs, cfg, trace)


def sample_ensemble(denoiser, c: int, obs: Observation | None = None,
                    cfg: GuidanceConfig | None = None,
                    schedule: SigmaSchedule = SigmaSchedule(), M: int = 6,
                    seed: int = 0) -> np.ndarray:
    """``M`` posterior samples; member ``j`` uses seed ``derive_seed(seed, j)``.

    Members are integrated as one batch, which gives the same values as
    running :func:`sample_posterior` per member seed.
    """
    if M < 1:
        raise InvalidArgument("ensemble size must be >= 1")
    sig = karras_sigmas(schedule)
    shape = _shape(denoiser, obs)
    x = np.stack([sig[0] * derive_rng(member_seed(seed, j)).standard_normal(shape)
                  for j in range(M)])
    return integrate(x, sig, denoiser, c, obs, cfg)


def member_seed(seed: int, j: int) -> int:
    return derive_seed(seed, j)
