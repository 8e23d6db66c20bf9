"""Flow datasets: container, AQPD binary format, flattening, sampling, synthesis.

AQPD layout (all little-endian)::

    b"AQPD" | u32 version = 1 | u64 N | u64 T |
    f64 x_star[N, 2] | f64 t[T] | f64 u_star[N, 2, T] | f64 p_star[N, T]

Arrays are row-major.  Grid points of a synthetic dataset are ordered with
x fastest: point n = j * nx + i sits at (x_i, y_j).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import physics
from .errors import ConfigurationError, DataError, FormatError, UsageError

MAGIC = b"AQPD"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")


@dataclass(frozen=True)
class FlowDataset:
    x_star: np.ndarray  # (N, 2)
    t: np.ndarray  # (T,)
    u_star: np.ndarray  # (N, 2, T)
    p_star: np.ndarray  # (N, T)

    def __post_init__(self):
        for name in ("x_star", "t", "u_star", "p_star"):
            object.__setattr__(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        N, T = self.x_star.shape[0], self.t.shape[0]
        expect = {"x_star": (N, 2), "t": (T,), "u_star": (N, 2, T), "p_star": (N, T)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if N < 1 or T < 1:
            raise DataError("dataset needs N >= 1 and T >= 1")
        if np.any(np.diff(self.t) <= 0):
            raise DataError("time axis must be strictly increasing")

    @property
    def N(self) -> int:
        return self.x_star.shape[0]

    @property
    def T(self) -> int:
        return self.t.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate (min, max) of (x, y, t)."""
        lo = np.array([*self.x_star.min(axis=0), self.t.min()])
        hi = np.array([*self.x_star.max(axis=0), self.t.max()])
        return lo, hi


@dataclass(frozen=True)
class FlatPoints:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        for name in ("y", "t", "u", "v", "p"):
            if len(getattr(self, name)) != n:
                raise DataError("flat arrays must share one length")

    def __len__(self):
        return len(self.x)

    def points(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.t], axis=-1)

    def targets(self) -> np.ndarray:
        return np.stack([self.u, self.v, self.p], axis=-1)

    def take(self, idx) -> "FlatPoints":
        idx = np.asarray(idx, dtype=np.int64)
        return FlatPoints(*(getattr(self, k)[idx] for k in ("x", "y", "t", "u", "v", "p")))


# -- binary format --------------------------------------------------------------

def dataset_bytes(ds: FlowDataset) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, ds.N, ds.T)]
    parts += [a.astype("<f8").tobytes() for a in (ds.x_star, ds.t, ds.u_star, ds.p_star)]
    return b"".join(parts)


def save_dataset(ds: FlowDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


def parse_dataset(raw: bytes) -> FlowDataset:
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}", 0)
    if len(raw) < HEADER.size:
        raise FormatError("truncated header", len(raw))
    _, version, N, T = HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    shapes = [(N, 2), (T,), (N, 2, T), (N, T)]
    off, arrays = HEADER.size, []
    for shape in shapes:
        count = int(np.prod(shape))
        if len(raw) < off + 8 * count:
            raise FormatError(f"truncated payload, need {off + 8 * count} bytes, have {len(raw)}", len(raw))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).astype(float))
        off += 8 * count
    if len(raw) != off:
        raise FormatError(f"{len(raw) - off} trailing bytes", off)
    try:
        return FlowDataset(*arrays)
    except DataError as exc:
        raise FormatError(str(exc), HEADER.size) from None


def load_dataset(path) -> FlowDataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


# -- flattening and sampling ----------------------------------------------------

def flatten(ds: FlowDataset) -> FlatPoints:
    """Flat index n * T + k holds grid point n at time t[k]."""
    T = ds.T
    return FlatPoints(
        x=np.repeat(ds.x_star[:, 0], T),
        y=np.repeat(ds.x_star[:, 1], T),
        t=np.tile(ds.t, ds.N),
        u=ds.u_star[:, 0, :].reshape(-1),
        v=ds.u_star[:, 1, :].reshape(-1),
        p=ds.p_star.reshape(-1),
    )


def sample_indices(n_total: int, n_train: int, seed: int) -> np.ndarray:
    """First ``n_train`` slots of a seeded Fisher-Yates shuffle of range(n_total)."""
    if not 0 <= n_train <= n_total:
        raise UsageError(f"n_train {n_train} not in [0, {n_total}]")
    rng = np.random.default_rng(seed)
    idx = np.arange(n_total)
    for i in range(n_train):
        j = int(rng.integers(i, n_total))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:n_train].copy()


def sample_train(flat: FlatPoints, n_train: int, seed: int) -> FlatPoints:
    return flat.take(sample_indices(len(flat), n_train, seed))


def holdout_split(ds: FlowDataset, time_index: int | None = None) -> FlatPoints:
    """All grid points at one time index (default T // 2)."""
    k = ds.T // 2 if time_index is None else int(time_index)
    if not 0 <= k < ds.T:
        raise UsageError(f"time index {k} not in [0, {ds.T})")
    return flatten(ds).take(np.arange(ds.N) * ds.T + k)


# -- synthetic datasets ---------------------------------------------------------

class Solution(str, Enum):
    TAYLOR_GREEN = "taylor-green"
    REST = "rest"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    x_range: tuple = (0.0, 2.0 * np.pi)
    y_range: tuple = (0.0, 2.0 * np.pi)

    def coordinates(self) -> np.ndarray:
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"grid needs nx, ny >= 1, got {self.nx} x {self.ny}")
        for lo, hi in (self.x_range, self.y_range):
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ConfigurationError(f"invalid range ({lo}, {hi})")
        xs = np.linspace(*self.x_range, self.nx)
        ys = np.linspace(*self.y_range, self.ny)
        X, Y = np.meshgrid(xs, ys)  # rows follow y, so x runs fastest when flattened
        return np.stack([X.reshape(-1), Y.reshape(-1)], axis=-1)


@dataclass(frozen=True)
class Times:
    T: int
    t_max: float = 2.0

    def axis(self) -> np.ndarray:
        if self.T < 1:
            raise ConfigurationError(f"need T >= 1, got {self.T}")
        if self.T > 1 and not self.t_max > 0:
            raise ConfigurationError(f"t_max must be positive, got {self.t_max}")
        return np.linspace(0.0, self.t_max, self.T)


def synth_dataset(grid: Grid, times: Times, solution=Solution.TAYLOR_GREEN, nu=0.01,
                  rho=1.0, speed=1.0, pressure=0.0) -> FlowDataset:
    """Sample an exact Navier-Stokes solution on grid x time."""
    try:
        solution = Solution(solution)
    except ValueError:
        raise ConfigurationError(f"unknown solution {solution!r}") from None
    physics.FluidConstants(rho, nu)
    xy = grid.coordinates()
    t = times.axis()
    X = xy[:, 0:1]
    Y = xy[:, 1:2]
    if solution is Solution.TAYLOR_GREEN:
        u, v, p = physics.taylor_green(X, Y, t[None, :], nu, rho)
    else:
        s = speed if solution is Solution.UNIFORM else 0.0
        shape = (xy.shape[0], t.shape[0])
        u, v, p = np.full(shape, float(s)), np.zeros(shape), np.full(shape, float(pressure))
    return FlowDataset(xy, t, np.stack([u, v], axis=1), p)
