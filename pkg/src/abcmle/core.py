"""Parameter spaces, datasets and the seeded random-stream contract."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import AmleError, DimensionError

__all__ = [
    "Continuous",
    "Discrete",
    "ParameterSpace",
    "RealSample",
    "EventTimes",
    "Dataset",
    "RngSeed",
    "uniform_prior_draw",
    "in_space",
    "format_vector",
    "parse_vector",
    "read_dataset",
    "write_dataset",
]


@dataclass(frozen=True)
class Continuous:
    """Real coordinate with an open-interval support ``(lower, upper)``."""

    name: str
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise AmleError(f"dim {self.name!r}: bounds must be finite")
        if not lo < hi:
            raise AmleError(f"dim {self.name!r}: need lower < upper, got ({lo}, {hi})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # shift by half an ulp of the 53-bit grid so both ends are excluded
        x = rng.random(size)
        x += 2.0**-54
        x *= self.upper - self.lower
        x += self.lower
        np.clip(x, np.nextafter(self.lower, self.upper), np.nextafter(self.upper, self.lower), out=x)
        return x

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.lower) & (x < self.upper)


@dataclass(frozen=True)
class Discrete:
    """Integer coordinate restricted to a finite ordered value set."""

    name: str
    values: tuple

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if any(float(v) != float(o) for v, o in zip(vals, self.values)):
            raise AmleError(f"dim {self.name!r}: discrete values must be integers")
        if not vals:
            raise AmleError(f"dim {self.name!r}: empty value set")
        if len(set(vals)) != len(vals):
            raise AmleError(f"dim {self.name!r}: duplicate values")
        object.__setattr__(self, "values", vals)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, len(self.values), size)
        return np.asarray(self.values, dtype=float)[idx]

    def contains(self, x) -> np.ndarray:
        return np.isin(np.asarray(x, dtype=float), np.asarray(self.values, dtype=float))


Dim = Union[Continuous, Discrete]


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered product of continuous boxes and finite integer sets.

    Parameter vectors are plain float arrays in ``dims`` order; discrete
    coordinates hold integer values.
    """

    dims: tuple

    def __post_init__(self):
        dims = tuple(self.dims)
        if not dims:
            raise AmleError("parameter space needs at least one dim")
        names = [d.name for d in dims]
        if len(set(names)) != len(names):
            raise AmleError(f"duplicate dim names: {names}")
        object.__setattr__(self, "dims", dims)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def continuous_index(self) -> list[int]:
        return [i for i, d in enumerate(self.dims) if isinstance(d, Continuous)]

    @property
    def discrete_index(self) -> list[int]:
        return [i for i, d in enumerate(self.dims) if isinstance(d, Discrete)]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` vectors from the uniform prior; shape ``(size, ndim)``."""
        out = np.empty((size, self.ndim))
        for j, d in enumerate(self.dims):
            out[:, j] = d.draw(rng, size)
        return out

    def contains(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.ndim:
            raise DimensionError(f"expected {self.ndim} coordinates, got {thetas.shape[1]}")
        ok = np.ones(thetas.shape[0], dtype=bool)
        for j, d in enumerate(self.dims):
            ok &= d.contains(thetas[:, j])
        return ok

    def restrict(self, **bounds) -> "ParameterSpace":
        """Copy with some continuous dims replaced by new ``(lower, upper)`` bounds."""
        dims = []
        for d in self.dims:
            if d.name in bounds:
                lo, hi = bounds[d.name]
                dims.append(Continuous(d.name, lo, hi))
            else:
                dims.append(d)
        return ParameterSpace(tuple(dims))


@dataclass(frozen=True)
class RealSample:
    """``n`` observations of a ``q``-dimensional real variable."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise AmleError(f"RealSample needs an n x q matrix with n, q >= 1, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def values(self) -> np.ndarray:
        """The sample as a flat vector (only for ``q == 1``)."""
        if self.matrix.shape[1] != 1:
            raise DimensionError("values is only defined for univariate samples")
        return self.matrix[:, 0]

    def __len__(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class EventTimes:
    """Strictly increasing event times observed on ``(0, t0]``."""

    times: np.ndarray
    t0: float

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        t0 = float(self.t0)
        if not t0 > 0:
            raise AmleError(f"horizon must be positive, got {t0}")
        if t.size and (t[0] <= 0 or t[-1] > t0):
            raise AmleError("event times must lie in (0, t0]")
        if np.any(np.diff(t) <= 0):
            raise AmleError("event times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "t0", t0)

    def __len__(self):
        return self.times.size


Dataset = Union[RealSample, EventTimes]


@dataclass(frozen=True)
class RngSeed:
    """Seed plus stream identifier for reproducible, partitionable randomness.

    Generators are PCG64 seeded through ``SeedSequence`` with the stream id and
    any derivation ``path`` folded into the spawn key, so every
    ``(seed, stream_id, path)`` names an independent, repeatable stream.
    """

    seed: int
    stream_id: int = 0
    path: tuple = field(default=())

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.path):
            if not 0 <= int(v) < 2**64:
                raise AmleError(f"seed components must be 64-bit unsigned, got {v}")

    def derive(self, *keys: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def generator(self, *keys: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id), *self.path, *map(int, keys)))
        return np.random.Generator(np.random.PCG64(ss))

    def __str__(self):
        tail = "".join(f"/{k}" for k in self.path)
        return f"{self.seed}:{self.stream_id}{tail}"


def uniform_prior_draw(space: ParameterSpace, rng: np.random.Generator) -> np.ndarray:
    """One draw from the uniform prior on ``space``."""
    return space.draw(rng, 1)[0]


def in_space(space: ParameterSpace, theta) -> bool:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != space.ndim:
        raise DimensionError(f"expected a vector of {space.ndim} coordinates, got shape {theta.shape}")
    return bool(space.contains(theta)[0])


def format_vector(space: ParameterSpace, theta) -> str:
    """``name=value`` pairs; floats use ``repr`` so parsing is lossless."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (space.ndim,):
        raise DimensionError(f"expected {space.ndim} coordinates")
    parts = []
    for d, v in zip(space.dims, theta):
        parts.append(f"{d.name}={int(v)}" if isinstance(d, Discrete) else f"{d.name}={float(v)!r}")
    return ",".join(parts)


def parse_vector(space: ParameterSpace, text: str) -> np.ndarray:
    items = dict(p.split("=", 1) for p in text.strip().split(",") if p)
    if sorted(items) != sorted(space.names):
        raise DimensionError(f"expected coordinates {space.names}, got {sorted(items)}")
    return np.array([float(items[n]) for n in space.names])


def read_dataset(path, kind: str = "real") -> Dataset:
    """Load a dataset CSV.

    ``kind="real"``: one observation per row, comma separated columns.
    ``kind="events"``: a header line ``t0=<horizon>`` then one event time per row.
    Lines starting with ``#`` are ignored in both formats.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines()]
    if kind == "events":
        t0 = None
        times = []
        for ln in lines:
            if not ln or ln.startswith("#"):
                continue
            if ln.replace(" ", "").startswith("t0="):
                t0 = float(ln.split("=", 1)[1])
                continue
            times.append(float(ln.split(",")[0]))
        if t0 is None:
            raise AmleError(f"{path}: missing 't0=' header line")
        return EventTimes(np.array(times), t0)
    if kind != "real":
        raise AmleError(f"unknown dataset kind {kind!r}")
    rows = [
        [float(v) for v in row]
        for row in csv.reader(ln for ln in lines if ln and not ln.startswith("#"))
    ]
    if not rows:
        raise AmleError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise AmleError(f"{path}: ragged rows")
    return RealSample(np.array(rows))


def write_dataset(path, data: Dataset) -> None:
    buf = io.StringIO()
    if isinstance(data, EventTimes):
        buf.write(f"t0={data.t0!r}\n")
        for t in data.times:
            buf.write(f"{float(t)!r}\n")
    else:
        for row in data.matrix:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
