"""Forward, inverse and parameter-identification tasks as masked posterior sampling.

Every task builds a :class:`MeasurementOp` from a :class:`TaskSpec`, observes
the supplied physical fields (normalised with the dataset statistics) and
draws posterior samples.  Results are returned in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .fields import make_mask
from .prior import Denoiser, MixtureOraclePrior
from .sampler import (GuidanceConfig, MeasurementOp, SigmaSchedule, sample_ensemble,
                      sample_posterior, member_seed)
from .unified import PDEClass, find_class, lift_params, strip_mask, unlift_params

TASK_KINDS = ("forward", "inverse_state", "infer_params", "partial_params",
              "vector_forward_u", "vector_forward_v", "vector_inverse_u", "vector_inverse_v",
              "ood_joint")

# observed channels per task; the remaining channels are targets
_OBSERVED = {
    "forward": (0, 1),
    "inverse_state": (0, 2),
    "infer_params": (1, 2),
    "partial_params": (0, 1, 2),
    "vector_forward_u": (0, 1),
    "vector_forward_v": (0, 1),
    "vector_inverse_u": (1, 2),
    "vector_inverse_v": (0, 2),
    "ood_joint": (0, 1, 2),
}
_TARGET = {
    "forward": (2,), "inverse_state": (1,), "infer_params": (0,), "partial_params": (0,),
    "vector_forward_u": (2,), "vector_forward_v": (2,), "vector_inverse_u": (0,),
    "vector_inverse_v": (1,), "ood_joint": (1, 2),
}
_LAYOUT = {
    "vector_forward_u": "vector_state_u", "vector_inverse_u": "vector_state_u",
    "vector_forward_v": "vector_state_v", "vector_inverse_v": "vector_state_v",
}


@dataclass(frozen=True)
class TaskSpec:
    """Task kind, per-channel observation fractions and known parameters.

    ``fractions[ch]`` is the observed fraction of channel ``ch`` (0 for
    target channels).  For ``partial_params`` the channel-0 observation is
    the union of the strips listed in ``known``.
    """

    kind: str
    fractions: tuple
    known: tuple = ()

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvalidArgument(f"unknown task {self.kind!r}")
        if len(self.fractions) != 3:
            raise InvalidArgument("one observation fraction per channel")

    @property
    def observed(self) -> tuple:
        return _OBSERVED[self.kind]

    @property
    def targets(self) -> tuple:
        return _TARGET[self.kind]


def task_spec(kind: str, cls: PDEClass, fraction: float, known=()) -> TaskSpec:
    """Default TaskSpec: parameters fully observed when conditioned on, states at ``fraction``."""
    if kind not in TASK_KINDS:
        raise InvalidArgument(f"unknown task {kind!r}")
    need = _LAYOUT.get(kind, "scalar_param_state")
    if cls.layout != need:
        raise InvalidArgument(f"task {kind} needs layout {need}, class {cls.name} is {cls.layout}")
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument("fraction must lie in [0, 1]")
    fr = [0.0, 0.0, 0.0]
    for ch in _OBSERVED[kind]:
        fr[ch] = fraction
    if kind in ("forward", "inverse_state", "ood_joint"):
        fr[0] = 1.0
    if kind in ("infer_params", "partial_params") and cls.d_c < 1:
        raise InvalidArgument(f"class {cls.name} has no free coefficients")
    known = tuple(known)
    if kind == "partial_params":
        if not known:
            raise InvalidArgument("partial inference needs at least one known component")
        if set(known) >= set(cls.param_names):
            raise InvalidArgument("known components must be a strict subset of the parameters")
        unknown = [k for k in known if k not in cls.param_names]
        if unknown:
            raise InvalidArgument(f"unknown parameter names {unknown}")
        fr[0] = len(known) / cls.d_c
    return TaskSpec(kind, tuple(fr), known)


def measurement(spec: TaskSpec, cls: PDEClass, shape, seed: int) -> MeasurementOp:
    """Masks for ``spec``; random subsets are drawn from ``seed`` per channel."""
    ny, nx = shape[-2:]
    grid = cls.grid(nx)
    masks = np.zeros((3, ny, nx), dtype=bool)
    for ch in spec.observed:
        if spec.kind == "partial_params" and ch == 0:
            for name in spec.known:
                masks[0] |= strip_mask((ny, nx), cls.d_c, cls.param_names.index(name))
        else:
            masks[ch] = make_mask(grid, 3, spec.fractions[ch], seed).masks[ch]
    return MeasurementOp(masks, spec.observed)


@dataclass
class PhysicsPrior:
    """A denoiser plus the per-class normalisation it was trained under."""

    denoiser: Denoiser
    classes: tuple
    stats: dict
    schedule: SigmaSchedule = field(default_factory=SigmaSchedule)
    guidance: GuidanceConfig | None = None
    sparse_zeta: float = 1.0
    full_zeta: float = 0.2
    hard_replace: bool = True

    @classmethod
    def oracle(cls, ds, **kw) -> "PhysicsPrior":
        return cls.from_dataset(ds, MixtureOraclePrior.from_dataset(ds), **kw)

    @classmethod
    def from_dataset(cls, ds, denoiser: Denoiser, **kw) -> "PhysicsPrior":
        if "normalization" not in ds.metadata:
            ds.compute_normalization()
        stats = {c.id: ds._stats(c.id) for c in ds.classes}
        return cls(denoiser, ds.classes, stats, **kw)

    def cls(self, key) -> PDEClass:
        return find_class(self.classes, key)

    def normalize(self, cid, x):
        mean, std = self.stats[cid]
        return (np.asarray(x, dtype=np.float64) - mean) / std

    def denormalize(self, cid, z):
        mean, std = self.stats[cid]
        return np.asarray(z) * std + mean

    def guidance_for(self, op: MeasurementOp) -> GuidanceConfig:
        """Fixed scale when every observed channel is complete, else residual-normalised."""
        jac = "exact_oracle" if self.denoiser.has_jacobian else "identity"
        if self.guidance is not None:
            g = self.guidance
            return GuidanceConfig(g.mode, g.zeta, jac if g.jacobian == "exact_oracle" else
                                  g.jacobian, g.hard_replace)
        if len(op.full_channels()) == len(op.channels):
            return GuidanceConfig("fixed", self.full_zeta, jac, self.hard_replace)
        return GuidanceConfig("residual_normalized", self.sparse_zeta, jac, self.hard_replace)

    def posterior(self, cls: PDEClass, x_phys, op: MeasurementOp, seed: int,
                  M: int | None = None) -> np.ndarray:
        """Posterior sample(s) given the observed entries of ``x_phys``.

        Returns ``(3, ny, nx)`` for ``M=None`` or ``(M, 3, ny, nx)``.
        """
        obs = op.observe(self.normalize(cls.id, x_phys))
        cfg = self.guidance_for(op)
        if M is None:
            z = sample_posterior(self.denoiser, cls.id, obs, cfg, self.schedule, seed)
        else:
            z = sample_ensemble(self.denoiser, cls.id, obs, cfg, self.schedule, M, seed)
        return self.denormalize(cls.id, z)


def _state(a, shape=None):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    if a.ndim == 3:
        if a.shape[0] != 1:
            raise InvalidArgument("expected a single-channel field")
        a = a[0]
    if shape is not None and a.shape != tuple(shape):
        raise InvalidArgument(f"field shape {a.shape} != {tuple(shape)}")
    return a


def scalar_stack(cls: PDEClass, phi, u0=None, uT=None, shape=None) -> np.ndarray:
    """Physical ``(3, ny, nx)`` array; unknown entries filled with zeros."""
    given = next(_state(f) for f in (u0, uT) if f is not None) if shape is None else None
    shape = tuple(shape) if shape is not None else given.shape
    x = np.zeros((3,) + shape)
    if phi is not None and cls.d_c:
        x[0] = lift_params(phi, cls.grid(shape[-1])).data[0]
    if u0 is not None:
        x[1] = _state(u0, shape)
    if uT is not None:
        x[2] = _state(uT, shape)
    return x


def run_task(prior: PhysicsPrior, cls: PDEClass, spec: TaskSpec, x_phys, seed: int,
             M: int | None = None, mask_seed: int | None = None) -> np.ndarray:
    """Observe ``x_phys`` under ``spec`` and return physical posterior samples.

    Masks are drawn from ``mask_seed`` (default: ``seed``) so that repeated
    sampling can share one set of observed points.
    """
    x_phys = np.asarray(x_phys, dtype=np.float64)
    op = measurement(spec, cls, x_phys.shape, seed if mask_seed is None else mask_seed)
    return prior.posterior(cls, x_phys, op, seed, M)


def _scalar_only(cls):
    if not cls.is_scalar:
        raise InvalidArgument(f"class {cls.name} does not use the scalar layout")


def forward_predict(prior, cls, phi, u0, fraction, seed, M=None, mask_seed=None):
    """Terminal state sample(s) given the coefficients and the initial state."""
    _scalar_only(cls)
    spec = task_spec("forward", cls, fraction)
    out = run_task(prior, cls, spec, scalar_stack(cls, phi, u0=u0), seed, M, mask_seed)
    return out[..., 2, :, :]


def inverse_state(prior, cls, phi, uT, fraction, seed, M=None, mask_seed=None):
    """Initial state sample(s) given the coefficients and the terminal state."""
    _scalar_only(cls)
    spec = task_spec("inverse_state", cls, fraction)
    out = run_task(prior, cls, spec, scalar_stack(cls, phi, uT=uT), seed, M, mask_seed)
    return out[..., 1, :, :]


def _read_params(cls, Phi):
    Phi = np.asarray(Phi)
    if Phi.ndim == 2:
        return unlift_params(Phi, cls.d_c)
    return np.stack([unlift_params(p, cls.d_c) for p in Phi])


def infer_params(prior, cls, u0, uT, fraction, seed, M=None, mask_seed=None):
    """Coefficient estimate(s) read back from the sampled parameter channel."""
    _scalar_only(cls)
    spec = task_spec("infer_params", cls, fraction)
    out = run_task(prior, cls, spec, scalar_stack(cls, None, u0, uT), seed, M, mask_seed)
    return _read_params(cls, out[..., 0, :, :])


def infer_partial_params(prior, cls, u0, uT, known: dict, fraction, seed, M=None,
                         mask_seed=None) -> dict:
    """Remaining coefficients given exact values for the ``known`` components."""
    _scalar_only(cls)
    spec = task_spec("partial_params", cls, fraction, tuple(known))
    phi = np.array([known.get(n, 0.0) for n in cls.param_names])
    out = run_task(prior, cls, spec, scalar_stack(cls, phi, u0, uT), seed, M, mask_seed)
    est = _read_params(cls, out[..., 0, :, :])
    return {n: est[..., i] for i, n in enumerate(cls.param_names) if n not in known}


def vector_forward(prior, cls_u, cls_v, u0, v0, fraction, seed, M=None, mask_seed=None):
    """Terminal ``(uT, vT)`` from the two component-wise posteriors."""
    u0, v0 = _state(u0), _state(v0)
    if cls_u.layout != "vector_state_u" or cls_v.layout != "vector_state_v":
        raise InvalidArgument("vector_forward needs a u-layout and a v-layout class")
    x = np.stack([u0, v0, np.zeros_like(u0)])
    uT = run_task(prior, cls_u, task_spec("vector_forward_u", cls_u, fraction), x, seed, M,
                  mask_seed)
    vT = run_task(prior, cls_v, task_spec("vector_forward_v", cls_v, fraction), x,
                  member_seed(seed, 1_000_003), M, mask_seed)
    return uT[..., 2, :, :], vT[..., 2, :, :]


def vector_inverse(prior, cls, terminal, auxiliary, fraction, seed, M=None, mask_seed=None):
    """Missing initial component given the other one and the matching terminal field.

    For a u-layout class this samples ``u0`` given ``(v0, uT)``; for a
    v-layout class ``v0`` given ``(u0, vT)``.
    """
    if auxiliary is None:
        raise InvalidArgument("vector inversion needs the auxiliary initial component")
    term, aux = _state(terminal), _state(auxiliary)
    zero = np.zeros_like(term)
    if cls.layout == "vector_state_u":
        kind, x, target = "vector_inverse_u", np.stack([zero, aux, term]), 0
    elif cls.layout == "vector_state_v":
        kind, x, target = "vector_inverse_v", np.stack([aux, zero, term]), 1
    else:
        raise InvalidArgument(f"class {cls.name} is not a vector layout")
    out = run_task(prior, cls, task_spec(kind, cls, fraction), x, seed, M, mask_seed)
    return out[..., target, :, :]


def ood_joint_reconstruct(prior, cls, phi, u0, uT, fraction, seed, M=None, mask_seed=None):
    """Joint ``(u0, uT)`` sample from sparse observations of both states."""
    _scalar_only(cls)
    spec = task_spec("ood_joint", cls, fraction)
    out = run_task(prior, cls, spec, scalar_stack(cls, phi, u0, uT), seed, M, mask_seed)
    return out[..., 1, :, :], out[..., 2, :, :]
