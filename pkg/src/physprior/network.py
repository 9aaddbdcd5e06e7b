"""Small trainable class-conditional denoiser with EDM preconditioning (torch)."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import DivergenceError, FormatError, InvalidArgument
from .fields import derive_rng, derive_seed
from .prior import Denoiser

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Architecture:
    channels: int = 3
    size: int = 32
    pooled: int = 16
    width: int = 512
    blocks: int = 4
    n_classes: int = 3
    n_freq: int = 32

    def __post_init__(self):
        if self.size % self.pooled:
            raise InvalidArgument("field size must be a multiple of the pooled size")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-3
    p_mean: float = -1.2
    p_std: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.batch < 1:
            raise InvalidArgument("batch must be >= 1")
        if not self.p_std > 0:
            raise InvalidArgument("p_std must be positive")
        if self.steps < 0:
            raise InvalidArgument("steps must be >= 0")


class _Block(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.emb = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)

    def forward(self, h, e):
        z = F.silu(self.fc1(F.silu(self.norm(h))) + self.emb(e))
        return h + self.fc2(z)


class RawNet(nn.Module):
    """Pool, flatten, residual MLP conditioned on noise level and class, upsample."""

    def __init__(self, arch: Architecture):
        super().__init__()
        self.arch = arch
        flat = arch.channels * arch.pooled**2
        self.register_buffer("freqs", torch.exp(torch.linspace(0.0, math.log(1000.0),
                                                               arch.n_freq)))
        self.noise_fc = nn.Linear(2 * arch.n_freq, arch.width)
        self.class_emb = nn.Embedding(arch.n_classes, arch.width)
        self.inp = nn.Linear(flat, arch.width)
        self.blocks = nn.ModuleList(_Block(arch.width) for _ in range(arch.blocks))
        self.out = nn.Linear(arch.width, flat)

    def forward(self, x, c_noise, class_ids):
        a = self.arch
        h = F.adaptive_avg_pool2d(x, a.pooled).flatten(1)
        ang = c_noise[:, None] * self.freqs[None, :]
        e = F.silu(self.noise_fc(torch.cat([ang.sin(), ang.cos()], dim=1))
                   + self.class_emb(class_ids))
        h = self.inp(h)
        for blk in self.blocks:
            h = blk(h, e)
        y = self.out(F.silu(h)).view(-1, a.channels, a.pooled, a.pooled)
        return F.interpolate(y, size=(a.size, a.size), mode="bilinear", align_corners=False)


class Preconditioned(nn.Module):
    """``D(x) = c_skip x + c_out F(c_in x, c_noise, c)``."""

    def __init__(self, arch: Architecture, sigma_data: float):
        super().__init__()
        self.raw = RawNet(arch)
        self.sigma_data = float(sigma_data)

    def forward(self, x, sigma, class_ids):
        sd = self.sigma_data
        s = sigma.reshape(-1, 1, 1, 1)
        s2 = s**2 + sd**2
        c_skip, c_out, c_in = sd**2 / s2, s * sd / s2.sqrt(), 1.0 / s2.sqrt()
        c_noise = torch.log(sigma.reshape(-1)) / 4.0
        return c_skip * x + c_out * self.raw(c_in * x, c_noise, class_ids)


def dsm_loss_torch(model: Preconditioned, x0, class_ids, sigma, noise):
    """Batch mean of ``lambda(sigma) ||D(x0 + n) - x0||^2``."""
    sd = model.sigma_data
    lam = (sigma**2 + sd**2) / (sigma * sd) ** 2
    d = model(x0 + noise, sigma, class_ids)
    return (lam * ((d - x0) ** 2).flatten(1).sum(1)).mean()


class TrainableDenoiser(Denoiser):
    """Numpy-facing wrapper around a preconditioned network.

    Guidance approximates the Jacobian by ``c_skip(sigma) I``, the derivative
    of the skip path alone.
    """

    has_jacobian = False

    def __init__(self, model: Preconditioned, classes_hash: str = "",
                 losses: list | None = None):
        self.model = model.eval()
        self.classes_hash = classes_hash
        self.losses = list(losses or [])
        a = model.raw.arch
        self.shape = (a.channels, a.size, a.size)

    @property
    def arch(self) -> Architecture:
        return self.model.raw.arch

    @property
    def sigma_data(self) -> float:
        return self.model.sigma_data

    def identity_scale(self, sigma: float) -> float:
        sd = self.sigma_data
        return sd**2 / (sigma**2 + sd**2)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.model.parameters())

    @torch.no_grad()
    def denoise(self, x, sigma: float, c: int) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        dtype = next(self.model.parameters()).dtype
        xt = torch.as_tensor(x[None] if single else x, dtype=dtype)
        n = xt.shape[0]
        out = self.model(xt, torch.full((n,), float(sigma), dtype=dtype),
                         torch.full((n,), int(c), dtype=torch.long))
        out = out.double().numpy()
        return out[0] if single else out


def build(arch: Architecture, sigma_data: float, seed: int = 0,
          dtype=torch.float32) -> Preconditioned:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(derive_seed(seed, 0) % (2**63))
    try:
        model = Preconditioned(arch, sigma_data)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def train(ds, cfg: TrainConfig = TrainConfig(), arch: Architecture | None = None,
          window: int = 100) -> TrainableDenoiser:
    """Adam with cosine step-size decay on normalised samples of ``ds``."""
    if len(ds) == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    xs = np.stack([ds.normalize(s.class_id, s.x.data) for s in ds.samples])
    cids = np.array([s.class_id for s in ds.samples])
    arch = arch or Architecture(n_classes=len(ds.classes), size=ds.shape[-1])
    model = build(arch, ds.sigma_data, cfg.seed)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(cfg.steps, 1))
    rng = derive_rng(cfg.seed, 1)
    X = torch.as_tensor(xs, dtype=torch.float32)
    C = torch.as_tensor(cids, dtype=torch.long)
    losses = []
    for step in range(cfg.steps):
        idx = torch.as_tensor(rng.integers(0, len(xs), size=cfg.batch))
        sigma = torch.as_tensor(np.exp(cfg.p_mean + cfg.p_std * rng.standard_normal(cfg.batch)),
                                dtype=torch.float32)
        noise = torch.as_tensor(rng.standard_normal((cfg.batch,) + xs.shape[1:]),
                                dtype=torch.float32) * sigma[:, None, None, None]
        loss = dsm_loss_torch(model, X[idx], C[idx], sigma, noise)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError("training loss is not finite", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        losses.append(value)
        if window and (step + 1) % (10 * window) == 0:
            log.info("step %d loss %.4f", step + 1, float(np.mean(losses[-window:])))
    return TrainableDenoiser(model, registry_hash(ds.classes), losses)


def registry_hash(classes) -> str:
    blob = json.dumps([c.to_json() for c in classes], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# checkpoints: PADM header, one record per tensor

def save_checkpoint(den: TrainableDenoiser, path) -> None:
    state = den.model.state_dict()
    names = list(state)
    meta = {"kind": "checkpoint", "architecture": asdict(den.arch),
            "sigma_data": den.sigma_data, "classes_hash": den.classes_hash,
            "tensors": [[n, list(state[n].shape)] for n in names]}
    text = "".join(f"{k}={json.dumps(v, sort_keys=True)}\n" for k, v in sorted(meta.items()))
    blob = text.encode()
    parts = [b"PADM", struct.pack("<HHI", 1, 0, len(names)), struct.pack("<I", len(blob)), blob]
    for n in names:
        parts.append(state[n].detach().cpu().numpy().astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> TrainableDenoiser:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"PADM":
        raise FormatError("bad magic", 0)
    if len(buf) < 16:
        raise FormatError("truncated header", len(buf))
    version, _, count = struct.unpack("<HHI", buf[4:12])
    if version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    (mlen,) = struct.unpack("<I", buf[12:16])
    try:
        meta = {k: json.loads(v) for k, _, v in
                (line.partition("=") for line in buf[16:16 + mlen].decode().splitlines())}
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("unreadable metadata", 16) from None
    if meta.get("kind") != "checkpoint" or len(meta["tensors"]) != count:
        raise FormatError("not a denoiser checkpoint", 16)
    model = build(Architecture(**meta["architecture"]), meta["sigma_data"])
    pos = 16 + mlen
    state = {}
    for name, shape in meta["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        if pos + 4 * n > len(buf):
            raise FormatError(f"truncated tensor {name}", pos)
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        pos += 4 * n
    if pos != len(buf):
        raise FormatError("trailing bytes", pos)
    model.load_state_dict(state)
    return TrainableDenoiser(model, meta["classes_hash"])
