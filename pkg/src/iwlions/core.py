"""Time grids, Brownian paths, empirical measures and seed derivation.

Every random quantity in the package is drawn from a stream obtained through
:class:`SeedPolicy`.  A stream is addressed by ``(master, role, replication,
particle)`` and is materialised as a fresh :class:`numpy.random.Generator`
each time it is requested, so that the same address always yields the same
numbers.

Derivation rule (fixed for a given release of this package)::

    SeedSequence(entropy=master,
                 spawn_key=(crc32(role), replication, particle))  ->  PCG64

Gaussian variates come from ``Generator.standard_normal`` (numpy's ziggurat
method); bit-reproducibility is guaranteed for a fixed numpy version only.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "EmpiricalMeasure",
    "SeedPolicy",
    "Stream",
    "make_time_grid",
    "sample_brownian",
    "measure_moments",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_M = T``."""

    T: float
    M: int

    def __post_init__(self):
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise InvalidArgument(f"number of steps must be a positive integer, got {self.M!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidArgument(f"horizon must be positive and finite, got {self.T!r}")

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)


def make_time_grid(T: float, M: int) -> TimeGrid:
    return TimeGrid(float(T), int(M) if float(M).is_integer() else M)


def _role_code(role: str) -> int:
    return zlib.crc32(role.encode("utf-8"))


@dataclass(frozen=True)
class Stream:
    """Address of one random stream; ``generator()`` always restarts it."""

    master: int
    role: str
    replication: int = 0
    particle: int = 0

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            self.master, spawn_key=(_role_code(self.role), self.replication, self.particle)
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    @property
    def label(self) -> str:
        return f"{self.master}/{self.role}/{self.replication}/{self.particle}"


@dataclass(frozen=True)
class SeedPolicy:
    master: int

    def __post_init__(self):
        if not (0 <= int(self.master) < 2**64):
            raise InvalidArgument("master seed must be a 64-bit unsigned integer")

    def stream(self, role: str, replication: int = 0, particle: int = 0) -> Stream:
        return Stream(int(self.master), role, int(replication), int(particle))

    def particle_states(self, role: str, replication: int, n: int) -> np.ndarray:
        """128-bit PCG64 ``(state, inc)`` words for particles ``0..n-1``, shape ``(n, 4)``.

        They are read from one seed sequence per ``(role, replication)``;
        its output is prefix-stable, so row ``l`` never depends on ``n``.
        """
        ss = np.random.SeedSequence(int(self.master),
                                    spawn_key=(_role_code(role), int(replication), PARTICLE_BLOCK))
        return ss.generate_state(4 * n, np.uint64).reshape(n, 4)

    def particle_generator(self, role: str, replication: int, particle: int) -> np.random.Generator:
        """The generator behind row ``particle`` of :meth:`particle_normals`."""
        w = self.particle_states(role, replication, particle + 1)[particle]
        bg = np.random.PCG64()
        bg.state = _pcg_state(bg, w)
        return np.random.Generator(bg)

    def particle_normals(self, role: str, replication: int, n: int, shape) -> np.ndarray:
        """Standard normals of ``shape`` for particles ``0..n-1``, one stream each.

        Returns an array of shape ``(n, *shape)``; row ``l`` depends only on
        ``(master, role, replication, l)``.  One bit generator is re-seeded
        per particle, which avoids building ``n`` generator objects.
        """
        shape = tuple(shape)
        out = np.empty((n,) + shape)
        words = self.particle_states(role, replication, n)
        bg = np.random.PCG64()
        gen = np.random.Generator(bg)
        for l in range(n):
            bg.state = _pcg_state(bg, words[l])
            gen.standard_normal(out=out[l])
        return out


PARTICLE_BLOCK = 0xFFFFFFFF


def _pcg_state(bg, w):
    st = bg.state
    st["state"]["state"] = (int(w[0]) << 64) | int(w[1])
    st["state"]["inc"] = (int(w[2]) << 64) | int(w[3]) | 1
    st["has_uint32"] = 0
    st["uinteger"] = 0
    return st


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments of a d-dimensional Brownian motion on ``grid``."""

    grid: TimeGrid
    increments: np.ndarray  # (M, d)
    stream: str = ""
    _values: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.grid.M:
            raise InvalidArgument(
                f"increments must have shape (M={self.grid.M}, d), got {inc.shape}"
            )
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        vals = np.cumsum(np.concatenate([np.zeros((1, inc.shape[1])), inc]), axis=0)
        vals.setflags(write=False)
        object.__setattr__(self, "_values", vals)

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def values(self) -> np.ndarray:
        """``W(t_i)`` for ``i = 0..M``, shape ``(M+1, d)``."""
        return self._values

    @classmethod
    def zero(cls, grid: TimeGrid, d: int) -> "BrownianPath":
        return cls(grid, np.zeros((grid.M, d)), stream="zero")


def sample_brownian(grid: TimeGrid, d: int, stream) -> BrownianPath:
    """Sample a Brownian path; ``stream`` is a :class:`Stream` or a Generator."""
    if not (isinstance(d, (int, np.integer)) and d >= 1):
        raise InvalidArgument(f"dimension must be a positive integer, got {d!r}")
    if isinstance(stream, Stream):
        gen, label = stream.generator(), stream.label
    elif isinstance(stream, np.random.Generator):
        gen, label = stream, "generator"
    else:
        raise InvalidArgument("stream must be a Stream or numpy Generator")
    inc = gen.standard_normal((grid.M, d)) * np.sqrt(grid.dt)
    return BrownianPath(grid, inc, stream=label)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform empirical measure ``(1/N) sum_l delta_{x^l}``."""

    points: np.ndarray  # (N, d)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidArgument(f"points must have shape (N, d) with N >= 1, got {pts.shape}")
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def permuted(self, perm) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points[np.asarray(perm)])


def measure_moments(mu: EmpiricalMeasure, k: int) -> np.ndarray:
    """Mean vector (k=1) or second-moment matrix (k=2) of ``mu``."""
    x = mu.points
    if k == 1:
        return x.mean(axis=0)
    if k == 2:
        return np.einsum("li,lj->ij", x, x) / mu.N
    raise InvalidArgument(f"moment order must be 1 or 2, got {k!r}")
