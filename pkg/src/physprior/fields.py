"""Grids, channelized fields, observation masks and seeded randomness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataCorruption, InvalidArgument

BOUNDARY_TAGS = ("neumann", "dirichlet", "periodic")


@dataclass(frozen=True)
class Grid2D:
    """Uniform tensor-product grid on ``[x0, x1] x [y0, y1]``.

    Non-periodic grids are node-centred and include both endpoints.
    Periodic grids hold ``n`` points ``x0 + i * h`` with ``h = (x1 - x0) / n``;
    the right endpoint is the periodic image of the left one.
    """

    nx: int
    ny: int
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    bc: str = "neumann"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise InvalidArgument(f"grid needs at least 4x4 points, got {self.nx}x{self.ny}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidArgument("grid bounds must satisfy x1 > x0 and y1 > y0")
        if self.bc not in BOUNDARY_TAGS:
            raise InvalidArgument(f"unknown boundary tag {self.bc!r}")

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def hx(self) -> float:
        n = self.nx if self.periodic else self.nx - 1
        return (self.x1 - self.x0) / n

    @property
    def hy(self) -> float:
        n = self.ny if self.periodic else self.ny - 1
        return (self.y1 - self.y0) / n

    @property
    def h(self) -> float:
        return min(self.hx, self.hy)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def x(self) -> np.ndarray:
        return self.x0 + self.hx * np.arange(self.nx)

    def y(self) -> np.ndarray:
        return self.y0 + self.hy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays of shape ``(ny, nx)`` (row index is y)."""
        return np.meshgrid(self.x(), self.y(), indexing="xy")

    def coarsen(self, factor: int = 2) -> "Grid2D":
        """Grid whose points are every ``factor``-th point of this one."""
        if self.periodic:
            if self.nx % factor or self.ny % factor:
                raise InvalidArgument("periodic grid size not divisible by factor")
            return Grid2D(self.nx // factor, self.ny // factor, self.x0, self.x1,
                          self.y0, self.y1, self.bc)
        if (self.nx - 1) % factor or (self.ny - 1) % factor:
            raise InvalidArgument("node grid intervals not divisible by factor")
        return Grid2D((self.nx - 1) // factor + 1, (self.ny - 1) // factor + 1,
                      self.x0, self.x1, self.y0, self.y1, self.bc)

    def refine(self, factor: int = 2) -> "Grid2D":
        """Inverse of :meth:`coarsen`."""
        if self.periodic:
            return Grid2D(self.nx * factor, self.ny * factor, self.x0, self.x1,
                          self.y0, self.y1, self.bc)
        return Grid2D((self.nx - 1) * factor + 1, (self.ny - 1) * factor + 1,
                      self.x0, self.x1, self.y0, self.y1, self.bc)

    def with_bc(self, bc: str) -> "Grid2D":
        return Grid2D(self.nx, self.ny, self.x0, self.x1, self.y0, self.y1, bc)


@dataclass(frozen=True, eq=False)
class Field:
    """Channel-major array of shape ``(n_channels, ny, nx)`` on a grid."""

    grid: Grid2D
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[1:] != self.grid.shape:
            raise InvalidArgument(
                f"field data shape {data.shape} does not match grid {self.grid.shape}")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def channel(self, i: int) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other):
        return (isinstance(other, Field) and self.grid == other.grid
                and np.array_equal(self.data, other.data))


def field_stats(f: Field) -> tuple[float, float, float]:
    """Return ``(min, max, l2norm)`` over all channels."""
    data = f.data
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
        raise DataCorruption(f"non-finite value at flat index {bad}")
    return float(data.min()), float(data.max()), float(np.sqrt(np.sum(data * data)))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit seed for the stream indexed by ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for stream ``keys`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SeededRng:
    """Root seed from which per-index streams are derived."""

    seed: int

    def stream(self, *keys: int) -> np.random.Generator:
        return derive_rng(self.seed, *keys)

    def child_seed(self, *keys: int) -> int:
        return derive_seed(self.seed, *keys)


def observed_count(fraction: float, n: int) -> int:
    # round half up
    return int(math.floor(fraction * n + 0.5))


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Boolean indicators of shape ``(n_channels, ny, nx)``."""

    grid: Grid2D
    masks: np.ndarray
    fractions: tuple = field(default=())

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim == 2:
            masks = masks[None]
        if masks.shape[1:] != self.grid.shape:
            raise InvalidArgument("mask shape does not match grid")
        masks = masks.copy()
        masks.setflags(write=False)
        object.__setattr__(self, "masks", masks)
        if not self.fractions:
            object.__setattr__(self, "fractions",
                               tuple(float(m.mean()) for m in masks))

    @property
    def n_channels(self) -> int:
        return self.masks.shape[0]

    def counts(self) -> list[int]:
        return [int(m.sum()) for m in self.masks]

    def __eq__(self, other):
        return (isinstance(other, ObservationMask) and self.grid == other.grid
                and np.array_equal(self.masks, other.masks))


def make_mask(grid: Grid2D, n_channels: int, fraction: float, seed: int) -> ObservationMask:
    """Select ``round(fraction * nx * ny)`` points per channel without replacement."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument(f"fraction must lie in [0, 1], got {fraction}")
    n = grid.size
    k = observed_count(fraction, n)
    masks = np.zeros((n_channels, n), dtype=bool)
    for c in range(n_channels):
        if k == n:
            masks[c] = True
        elif k > 0:
            idx = derive_rng(seed, c).choice(n, size=k, replace=False)
            masks[c, idx] = True
    return ObservationMask(grid, masks.reshape(n_channels, *grid.shape),
                           tuple([fraction] * n_channels))
