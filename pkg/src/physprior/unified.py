"""Unified 3-channel samples, parameter lifting, class registries and datasets.

Every sample is a field ``x`` of shape ``(3, ny, nx)``.  Scalar classes pack
``[Phi, u0, uT]`` where ``Phi`` is the lifted coefficient vector; the vector
classes pack ``[u0, v0, uT]`` or ``[u0, v0, vT]``.

The on-disk container ("PADM") is little-endian::

    b"PADM" | u16 version=1 | u16 reserved=0 | u32 sample_count
    u32 metadata_length | metadata (UTF-8 "key=value" lines, JSON values)
    per sample: u8 class_id | u8 d_c | u16 n_channels | u32 H | u32 W | u64 seed
                f32 phi[d_c] | f32 data[n_channels * H * W]

An empty dataset is the 12-byte header alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import pde
from .errors import DivergenceError, FormatError, InvalidArgument
from .fields import Field, Grid2D, derive_rng, derive_seed

log = logging.getLogger(__name__)

LAYOUTS = ("scalar_param_state", "vector_state_u", "vector_state_v")
CHANNEL_NAMES = {
    "scalar_param_state": ("Phi", "u0", "uT"),
    "vector_state_u": ("u0", "v0", "uT"),
    "vector_state_v": ("u0", "v0", "vT"),
}
INVESTIGATIONS = ("unified", "continuous_manifold", "structural", "parametric")

MAGIC = b"PADM"
VERSION = 1
MAX_REGEN_RATE = 0.05


@dataclass(frozen=True)
class PDEClass:
    """One generative class: a PDE family, its layout and its parameter law."""

    id: int
    name: str
    family: str
    layout: str = "scalar_param_state"
    param_names: tuple = ()
    param_ranges: tuple = ()
    fixed: tuple = ()
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    seed_key: int | None = None

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise InvalidArgument(f"unknown layout {self.layout!r}")
        if len(self.param_names) != len(self.param_ranges):
            raise InvalidArgument("each variable parameter needs a sampling range")

    @property
    def d_c(self) -> int:
        return len(self.param_names)

    @property
    def is_scalar(self) -> bool:
        return self.layout == "scalar_param_state"

    @property
    def stream_key(self) -> int:
        return self.id if self.seed_key is None else self.seed_key

    def grid(self, n: int) -> Grid2D:
        x0, x1, y0, y1 = self.domain
        return Grid2D(n, n, x0, x1, y0, y1, pde.FAMILY_BC[self.family])

    def physical_params(self, phi=(), reaction: float = 0.0):
        """Solver parameters from the fixed values plus ``phi``."""
        values = dict(self.fixed)
        values.update(zip(self.param_names, (float(p) for p in phi)))
        if self.family in pde.VECTOR_FAMILIES:
            return pde.VectorPDEParams(self.family, **values)
        family = self.family
        if reaction:
            if family != "advection_diffusion":
                raise InvalidArgument("a reaction term only extends advection-diffusion")
            family = "adr"
            values["k"] = reaction
        return pde.ScalarPDEParams(family, **values)

    def to_json(self) -> dict:
        return {"id": self.id, "name": self.name, "family": self.family,
                "layout": self.layout, "param_names": list(self.param_names),
                "param_ranges": [list(r) for r in self.param_ranges],
                "fixed": [list(f) for f in self.fixed], "domain": list(self.domain),
                "seed_key": self.seed_key}

    @classmethod
    def from_json(cls, d: dict) -> "PDEClass":
        return cls(d["id"], d["name"], d["family"], d["layout"], tuple(d["param_names"]),
                   tuple(tuple(r) for r in d["param_ranges"]),
                   tuple(tuple(f) for f in d["fixed"]), tuple(d["domain"]), d["seed_key"])


def _scalar(cid, name, family, params=(), ranges=(), **fixed):
    return PDEClass(cid, name, family, "scalar_param_state", tuple(params), tuple(ranges),
                    tuple(sorted(fixed.items())))


def registry(investigation: str) -> tuple[PDEClass, ...]:
    """Class library of a thematic investigation, ids dense from 0."""
    if investigation == "unified":
        return (
            _scalar(0, "diffusion", "diffusion", nu=0.25),
            _scalar(1, "advection", "advection", ax=4.0, ay=2.0),
            _scalar(2, "advection_diffusion", "advection_diffusion", nu=0.25, ax=4.0, ay=2.0),
        )
    if investigation in ("continuous_manifold", "structural"):
        classes = [
            _scalar(0, "diffusion", "diffusion", ["nu"], [(0.1, 0.4)]),
            _scalar(1, "advection", "advection", ["ax"], [(2.0, 5.0)], ay=2.0),
            _scalar(2, "advection_diffusion", "advection_diffusion", ["nu"], [(0.1, 0.4)],
                    ax=4.0, ay=2.0),
        ]
        if investigation == "structural":
            burgers = dict(family="burgers", fixed=(("nu", 0.05),),
                           domain=(-1.0, 1.0, -1.0, 1.0), seed_key=100)
            ns = dict(family="navier_stokes", fixed=(("L", 1.0), ("nu", 0.02)), seed_key=101)
            classes += [
                _scalar(3, "allen_cahn", "allen_cahn", ["eps2"], [(2.5e-3, 0.0121)]),
                PDEClass(4, "burgers_u", layout="vector_state_u", **burgers),
                PDEClass(5, "burgers_v", layout="vector_state_v", **burgers),
                PDEClass(6, "navier_stokes_u", layout="vector_state_u", **ns),
                PDEClass(7, "navier_stokes_v", layout="vector_state_v", **ns),
            ]
        return tuple(classes)
    if investigation == "parametric":
        return (
            _scalar(0, "diffusion", "diffusion", ["nu"], [(0.2, 0.4)]),
            _scalar(1, "advection", "advection", ["ax", "ay"], [(2.0, 3.0), (2.0, 3.0)]),
            _scalar(2, "advection_diffusion", "advection_diffusion", ["nu", "ax", "ay"],
                    [(0.2, 0.4), (2.0, 3.0), (2.0, 3.0)]),
        )
    raise InvalidArgument(f"unknown investigation {investigation!r}")


def find_class(classes, key) -> PDEClass:
    for c in classes:
        if c.id == key or c.name == key:
            return c
    raise InvalidArgument(f"class {key!r} is not registered")


# --------------------------------------------------------------------------
# lifting


def _strip_bounds(d_c: int, nx: int):
    return [(k * nx // d_c, (k + 1) * nx // d_c) for k in range(d_c)]


def lift_params(phi, grid: Grid2D) -> Field:
    """Broadcast ``phi`` to a field, one vertical strip per component."""
    phi = np.atleast_1d(np.asarray(phi, dtype=np.float64))
    d_c = phi.size
    if d_c < 1:
        raise InvalidArgument("lifting needs at least one coefficient")
    if d_c > grid.nx:
        raise InvalidArgument(f"{d_c} coefficients exceed {grid.nx} grid columns")
    out = np.empty(grid.shape)
    for value, (lo, hi) in zip(phi, _strip_bounds(d_c, grid.nx)):
        out[:, lo:hi] = value
    return Field(grid, out)


def unlift_params(Phi, d_c: int) -> np.ndarray:
    """Strip means of a lifted field (exact inverse of :func:`lift_params`)."""
    data = Phi.data[0] if isinstance(Phi, Field) else np.asarray(Phi, dtype=np.float64)
    if data.ndim == 3:
        data = data[0]
    if d_c < 1:
        raise InvalidArgument("d_c must be >= 1")
    if d_c > data.shape[-1]:
        raise InvalidArgument(f"{d_c} coefficients exceed {data.shape[-1]} grid columns")
    return np.array([data[:, lo:hi].mean() for lo, hi in _strip_bounds(d_c, data.shape[-1])])


def strip_mask(shape, d_c: int, k: int) -> np.ndarray:
    """Boolean support of strip ``k`` on a ``(ny, nx)`` grid."""
    m = np.zeros(shape, dtype=bool)
    lo, hi = _strip_bounds(d_c, shape[-1])[k]
    m[:, lo:hi] = True
    return m


# --------------------------------------------------------------------------
# samples


@dataclass(frozen=True, eq=False)
class UnifiedSample:
    class_id: int
    x: Field
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int = 0

    def __post_init__(self):
        if self.x.n_channels != 3:
            raise InvalidArgument("a unified sample has exactly 3 channels")
        phi = np.asarray(self.phi, dtype=np.float64).reshape(-1).copy()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    def __eq__(self, other):
        return (isinstance(other, UnifiedSample) and self.class_id == other.class_id
                and self.x == other.x and np.array_equal(self.phi, other.phi)
                and self.seed == other.seed)


def _as_channel(f, grid):
    a = f.data if isinstance(f, Field) else np.asarray(f, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[0] != 1:
            raise InvalidArgument("expected single-channel field")
        a = a[0]
    if a.shape != grid.shape:
        raise InvalidArgument(f"field shape {a.shape} does not match grid {grid.shape}")
    return a


def assemble_sample(cls: PDEClass, phi, *fields, grid: Grid2D | None = None,
                    seed: int = 0) -> UnifiedSample:
    """Pack state fields (and lifted ``phi``) into the class channel layout."""
    if grid is None:
        first = fields[0] if fields else None
        if not isinstance(first, Field):
            raise InvalidArgument("grid is required when fields are plain arrays")
        grid = first.grid
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    if phi.size != cls.d_c:
        raise InvalidArgument(f"{cls.name} expects {cls.d_c} coefficients, got {phi.size}")
    if cls.is_scalar:
        if len(fields) != 2:
            raise InvalidArgument("scalar layout takes (u0, uT)")
        ch0 = lift_params(phi, grid).data[0] if cls.d_c else np.zeros(grid.shape)
        chans = [ch0] + [_as_channel(f, grid) for f in fields]
    else:
        if len(fields) != 3:
            raise InvalidArgument(f"{cls.layout} takes three state fields")
        chans = [_as_channel(f, grid) for f in fields]
    return UnifiedSample(cls.id, Field(grid, np.stack(chans)), phi, seed)


# --------------------------------------------------------------------------
# generation


def draw_phi(cls: PDEClass, rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for lo, hi in cls.param_ranges])


def draw_ic(cls: PDEClass, rng: np.random.Generator) -> dict:
    """Draw IC parameters for one instance of ``cls``."""
    if cls.family == "navier_stokes":
        # U(0.5, 1.5]
        a = 1.5 - rng.uniform(0.0, 1.0)
        return {"a": a, "phi": ("sin", "cos")[rng.integers(2)],
                "psi": ("sin", "cos")[rng.integers(2)]}
    if cls.family == "burgers":
        c1 = tuple(rng.uniform(0.2, 0.8, size=2))
        c2 = tuple(rng.uniform(0.2, 0.8, size=2))
        return {"c1": c1, "w1": rng.uniform(0.025, 0.075),
                "c2": c2, "w2": rng.uniform(0.025, 0.075)}
    xc, yc = rng.uniform(0.2, 0.8, size=2)
    return {"xc": xc, "yc": yc, "w0": rng.uniform(0.025, 0.075)}


def initial_condition(cls: PDEClass, ic: dict, grid: Grid2D) -> Field:
    if cls.family == "navier_stokes":
        return pde.ns_ic(grid, ic["a"], ic["phi"], ic["psi"], dict(cls.fixed)["L"])
    if cls.family == "burgers":
        return pde.burgers_ic(grid, ic["c1"], ic["w1"], ic["c2"], ic["w2"])
    return pde.gaussian_bump_ic(grid, ic["xc"], ic["yc"], ic["w0"])


def simulate(cls: PDEClass, phi, ic: dict, n: int = 32, cfl: float = 0.5,
             reaction: float = 0.0) -> tuple[Field, Field]:
    """Solve on the 2x refined grid and return ``(initial, terminal)`` on the n-grid."""
    grid = cls.grid(n)
    fine = grid.refine(2)
    u0 = initial_condition(cls, ic, fine)
    family = "adr" if reaction else cls.family
    uT = pde.solve(cls.physical_params(phi, reaction), u0, pde.default_config(family, cfl=cfl))
    coarse = lambda f: Field(grid, f.data[:, ::2, ::2])
    return coarse(u0), coarse(uT)


def layout_fields(cls: PDEClass, u0: Field, uT: Field):
    """State fields in layout order for :func:`assemble_sample`."""
    if cls.layout == "scalar_param_state":
        return (u0, uT)
    g = u0.grid
    last = uT.data[0] if cls.layout == "vector_state_u" else uT.data[1]
    return (Field(g, u0.data[0]), Field(g, u0.data[1]), Field(g, last))


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _generate_group(args):
    """Solve one instance for every class sharing a seed key (Burgers u/v pair)."""
    classes, index, seed, n, cfl = args
    lead = classes[0]
    attempt = 0
    while True:
        sample_seed = derive_seed(seed, lead.stream_key, index, attempt)
        rng = derive_rng(sample_seed)
        phi = draw_phi(lead, rng)
        ic = draw_ic(lead, rng)
        try:
            u0, uT = simulate(lead, phi, ic, n, cfl)
        except DivergenceError as exc:
            log.warning("class %s sample %d diverged (%s); regenerating", lead.name, index, exc)
            attempt += 1
            if attempt > 50:
                raise
            continue
        phi = _f32(phi)
        samples = []
        for cls in classes:
            s = assemble_sample(cls, phi, *layout_fields(cls, u0, uT), seed=sample_seed)
            samples.append(UnifiedSample(cls.id, Field(s.x.grid, _f32(s.x.data)), phi,
                                         sample_seed))
        return samples, attempt


@dataclass
class Dataset:
    """Samples plus registry, grid shape, normalisation statistics and provenance."""

    samples: list
    classes: tuple
    shape: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = {c.id for c in self.classes}
        if sorted(ids) != list(range(len(ids))):
            raise InvalidArgument("class ids must be dense from 0")
        for s in self.samples:
            if s.class_id not in ids:
                raise InvalidArgument(f"sample has unregistered class {s.class_id}")
            if s.x.grid.shape != tuple(self.shape):
                raise InvalidArgument("all samples must share one grid shape")

    def __len__(self):
        return len(self.samples)

    def cls(self, key) -> PDEClass:
        return find_class(self.classes, key)

    def of_class(self, key) -> list:
        cid = self.cls(key).id
        return [s for s in self.samples if s.class_id == cid]

    def counts(self) -> dict:
        return {c.name: sum(s.class_id == c.id for s in self.samples) for c in self.classes}

    # normalisation -------------------------------------------------------

    def compute_normalization(self) -> None:
        """Per-class, per-channel affine statistics and the global sigma_data."""
        stats = {}
        pooled = []
        for c in self.classes:
            xs = np.stack([s.x.data for s in self.of_class(c.id)]) if self.of_class(c.id) \
                else np.zeros((1, 3) + tuple(self.shape))
            mean = xs.mean(axis=(0, 2, 3))
            std = xs.std(axis=(0, 2, 3))
            std = np.where(std > 1e-12, std, 1.0)
            stats[str(c.id)] = {"mean": mean.tolist(), "std": std.tolist()}
            pooled.append(((xs - mean[None, :, None, None]) / std[None, :, None, None]).ravel())
        self.metadata["normalization"] = stats
        self.metadata["sigma_data"] = float(np.concatenate(pooled).std())

    def _stats(self, class_id):
        if "normalization" not in self.metadata:
            self.compute_normalization()
        st = self.metadata["normalization"][str(int(class_id))]
        return np.asarray(st["mean"])[:, None, None], np.asarray(st["std"])[:, None, None]

    def normalize(self, class_id, x) -> np.ndarray:
        mean, std = self._stats(class_id)
        return (np.asarray(x) - mean) / std

    def denormalize(self, class_id, z) -> np.ndarray:
        mean, std = self._stats(class_id)
        return np.asarray(z) * std + mean

    def channel_scale(self, class_id) -> np.ndarray:
        return self._stats(class_id)[1][:, 0, 0]

    @property
    def sigma_data(self) -> float:
        if "sigma_data" not in self.metadata:
            self.compute_normalization()
        return float(self.metadata["sigma_data"])

    def normalized(self, key) -> np.ndarray:
        """Normalised training array ``(N_c, 3, ny, nx)`` for one class."""
        c = self.cls(key)
        xs = [s.x.data for s in self.of_class(c.id)]
        return self.normalize(c.id, np.stack(xs)) if xs else np.zeros((0, 3) + tuple(self.shape))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_dataset(investigation: str, n_per_class: int, seed: int, n: int = 32,
                     cfl: float = 0.5, jobs: int = 1, classes=None) -> Dataset:
    """Draw, solve and assemble ``n_per_class`` samples for every class.

    ``classes`` restricts generation to a subset of class names (the
    registry is kept whole so ids stay stable).
    """
    registry_ = registry(investigation)
    if n_per_class < 1:
        raise InvalidArgument("n_per_class must be >= 1")
    wanted = [c for c in registry_ if classes is None or c.name in classes]
    groups: dict = {}
    for c in wanted:
        groups.setdefault(c.stream_key, []).append(c)
    tasks = [(tuple(g), i, seed, n, cfl) for g in groups.values() for i in range(n_per_class)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_generate_group, tasks, chunksize=8))
    else:
        results = [_generate_group(t) for t in tasks]
    regen = sum(r[1] for r in results)
    if regen > MAX_REGEN_RATE * len(tasks):
        raise DivergenceError(f"{regen} regenerations exceed {MAX_REGEN_RATE:.0%} of samples")
    samples = sorted((s for r in results for s in r[0]), key=lambda s: s.class_id)
    # stable within a class: index order is preserved by sorted()
    cfg = {"investigation": investigation, "n_per_class": n_per_class, "seed": seed,
           "n": n, "cfl": cfl, "classes": sorted(classes) if classes else None}
    ds = Dataset(samples, registry_, (n, n), {
        "investigation": investigation, "seed": seed, "n_per_class": n_per_class,
        "config_hash": config_hash(cfg), "regenerated": regen})
    ds.compute_normalization()
    return ds


# --------------------------------------------------------------------------
# serialization

_SAMPLE_HEAD = struct.Struct("<BBHIIQ")


def _encode_metadata(ds: Dataset) -> bytes:
    meta = dict(ds.metadata)
    meta["shape"] = list(ds.shape)
    meta["classes"] = [c.to_json() for c in ds.classes]
    return "".join(f"{k}={json.dumps(meta[k], sort_keys=True)}\n" for k in sorted(meta)).encode()


def dataset_bytes(ds: Dataset) -> bytes:
    parts = [MAGIC, struct.pack("<HHI", VERSION, 0, len(ds.samples))]
    if not ds.samples:
        return b"".join(parts)
    meta = _encode_metadata(ds)
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    for s in ds.samples:
        C, H, W = s.x.data.shape
        parts.append(_SAMPLE_HEAD.pack(s.class_id, s.phi.size, C, H, W, s.seed))
        parts.append(s.phi.astype("<f4").tobytes())
        parts.append(s.x.data.astype("<f4").tobytes())
    return b"".join(parts)


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def parse_dataset(buf: bytes) -> Dataset:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic", 0)
    version, _reserved = struct.unpack("<HH", r.take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = struct.unpack("<I", r.take(4, "sample count"))
    if count == 0 and r.pos == len(buf):
        return Dataset([], (), (0, 0), {})
    (mlen,) = struct.unpack("<I", r.take(4, "metadata length"))
    mstart = r.pos
    try:
        meta = {}
        for line in r.take(mlen, "metadata").decode("utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key] = json.loads(value)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata ({exc})", mstart) from None
    classes = tuple(PDEClass.from_json(d) for d in meta.pop("classes"))
    shape = tuple(meta.pop("shape"))
    samples = []
    for _ in range(count):
        head = r.pos
        cid, d_c, C, H, W, seed = _SAMPLE_HEAD.unpack(r.take(_SAMPLE_HEAD.size, "sample header"))
        try:
            cls = find_class(classes, cid)
        except InvalidArgument:
            raise FormatError(f"unregistered class id {cid}", head) from None
        phi = np.frombuffer(r.take(4 * d_c, "phi"), dtype="<f4").astype(np.float64)
        data = np.frombuffer(r.take(4 * C * H * W, "sample data"), dtype="<f4")
        grid = cls.grid(W) if H == W else Grid2D(W, H, *cls.domain, pde.FAMILY_BC[cls.family])
        samples.append(UnifiedSample(cid, Field(grid, data.astype(np.float64).reshape(C, H, W)),
                                     phi, seed))
    if r.pos != len(buf):
        raise FormatError("trailing bytes", r.pos)
    return Dataset(samples, classes, shape, meta)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def write_trajectory(frames, path, family: str = "trajectory") -> None:
    """Dump solver frames ``[(t, Field), ...]`` as a PADM container (phi = [t])."""
    if not frames:
        raise InvalidArgument("no frames to write")
    grid = frames[0][1].grid
    cls = PDEClass(0, family, "diffusion", domain=(grid.x0, grid.x1, grid.y0, grid.y1))
    meta = {"kind": "trajectory", "bc": grid.bc}
    parts = [MAGIC, struct.pack("<HHI", VERSION, 0, len(frames))]
    m = "".join(f"{k}={json.dumps(v)}\n" for k, v in sorted(
        {**meta, "shape": list(grid.shape), "classes": [cls.to_json()]}.items())).encode()
    parts += [struct.pack("<I", len(m)), m]
    for t, f in frames:
        C, H, W = f.data.shape
        parts.append(_SAMPLE_HEAD.pack(0, 1, C, H, W, 0))
        parts.append(np.array([t], dtype="<f4").tobytes())
        parts.append(f.data.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_trajectory(path) -> list:
    """Frames ``[(t, Field), ...]`` written by :func:`write_trajectory`."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic", 0)
    version, _ = struct.unpack("<HH", r.take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = struct.unpack("<I", r.take(4, "frame count"))
    (mlen,) = struct.unpack("<I", r.take(4, "metadata length"))
    mstart = r.pos
    try:
        meta = {k: json.loads(v) for k, _, v in (line.partition("=") for line in
                                                 r.take(mlen, "metadata").decode().splitlines())}
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("unreadable metadata", mstart) from None
    if meta.get("kind") != "trajectory":
        raise FormatError("not a trajectory container", mstart)
    x0, x1, y0, y1 = meta["classes"][0]["domain"]
    frames = []
    for _ in range(count):
        _cid, d_c, C, H, W, _seed = _SAMPLE_HEAD.unpack(r.take(_SAMPLE_HEAD.size, "frame header"))
        t = float(np.frombuffer(r.take(4 * d_c, "time"), dtype="<f4")[0])
        data = np.frombuffer(r.take(4 * C * H * W, "frame data"), dtype="<f4")
        grid = Grid2D(W, H, x0, x1, y0, y1, meta["bc"])
        frames.append((t, Field(grid, data.astype(np.float64).reshape(C, H, W))))
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes", r.pos)
    return frames


def resimulate(cls: PDEClass, sample: UnifiedSample, n: int | None = None, cfl: float = 0.5,
               reaction: float = 0.0) -> tuple[Field, Field]:
    """Re-run a stored sample's draw (from its seed), optionally with a reaction term."""
    rng = derive_rng(sample.seed)
    phi = draw_phi(cls, rng)
    ic = draw_ic(cls, rng)
    return simulate(cls, phi, ic, n or sample.x.grid.nx, cfl, reaction)
