"""Euler-Maruyama simulation of the driving process X and of particle clouds.

All schemes are left-point: ``Z_{i+1} = Z_i + drift_i dt + diffusion_i dW_i``
with coefficients evaluated at ``(t_i, Z_i, W(t_i))``.  Trajectories are built
with a sequential cumulative sum seeded by the initial value, which performs
exactly that recursion in floating point, so replaying the recorded increments
reproduces the stored path bit for bit.

Particle clouds are stored particle-major: ``Y[l, i]`` is particle ``l`` at
``t_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BrownianPath, EmpiricalMeasure, SeedPolicy, TimeGrid
from .errors import InvalidArgument

__all__ = [
    "CoefficientSpec",
    "InitialSampler",
    "StatePath",
    "ParticleCloudPath",
    "simulate_ito_process",
    "simulate_particle_system",
    "simulate_conditional_particle_system",
    "coefficient_integrability_report",
]

COEFFICIENT_KINDS = ("constant", "time-polynomial", "linear-in-state", "path-functional")


def _as_tuple(a):
    a = np.asarray(a, dtype=float)
    return a.tolist() if a.ndim else float(a)


@dataclass(frozen=True)
class CoefficientSpec:
    """Drift or diffusion coefficient from a closed vocabulary.

    ``constant``         value = offset
    ``time-polynomial``  value = sum_k coeffs[k] * t**k
    ``linear-in-state``  value = offset + gain . state
    ``path-functional``  value = offset + gain . W(t)   (W picked by ``source``)

    Scalars broadcast: a drift scalar ``c`` means ``c * ones(d)``, a diffusion
    scalar means ``c * I``.  A scalar gain acts coordinatewise (diagonal).
    Array gains have shape ``out_shape + (d,)``.
    """

    kind: str
    offset: object = 0.0
    coeffs: tuple = ()
    gain: object = 0.0
    source: str = "own"

    def __post_init__(self):
        if self.kind not in COEFFICIENT_KINDS:
            raise InvalidArgument(f"unknown coefficient kind {self.kind!r}")
        object.__setattr__(self, "offset", _as_tuple(self.offset))
        object.__setattr__(self, "gain", _as_tuple(self.gain))
        object.__setattr__(self, "coeffs", tuple(_as_tuple(c) for c in self.coeffs))

    @classmethod
    def constant(cls, value):
        return cls("constant", offset=value)

    @classmethod
    def time_polynomial(cls, coeffs):
        return cls("time-polynomial", coeffs=tuple(coeffs))

    @classmethod
    def linear_in_state(cls, gain, offset=0.0):
        return cls("linear-in-state", offset=offset, gain=gain)

    @classmethod
    def path_functional(cls, gain, offset=0.0, source="own"):
        return cls("path-functional", offset=offset, gain=gain, source=source)

    @property
    def state_dependent(self) -> bool:
        return self.kind == "linear-in-state"

    @property
    def path_dependent(self) -> bool:
        return self.kind == "path-functional"

    @property
    def is_zero(self) -> bool:
        arrays = [self.offset, self.gain, *self.coeffs]
        return all(not np.any(np.asarray(a)) for a in arrays)

    @staticmethod
    def _expand(a, role, d):
        a = np.asarray(a, dtype=float)
        if a.ndim == 0:
            return a * (np.ones(d) if role == "drift" else np.eye(d))
        shape = (d,) if role == "drift" else (d, d)
        if a.shape != shape:
            raise InvalidArgument(f"{role} coefficient must have shape {shape}, got {a.shape}")
        return a

    def _affine(self, z, role, d):
        g = np.asarray(self.gain, dtype=float)
        base = self._expand(self.offset, role, d)
        if g.ndim == 0:
            lin = g * z if role == "drift" else g * z[..., :, None] * np.eye(d)
        else:
            shape = ((d,) if role == "drift" else (d, d)) + (d,)
            if g.shape != shape:
                raise InvalidArgument(f"gain must have shape {shape}, got {g.shape}")
            lin = np.einsum("...k,ijk->...ij", z, g) if role == "diffusion" else z @ g.T
        return base + lin

    def evaluate(self, t, role, d, state=None, noise=None, batch=()):
        """Coefficient value at time ``t``.

        ``state``/``noise`` have shape ``batch + (d,)``; the result has shape
        ``batch + (d,)`` (drift) or ``batch + (d, d)`` (diffusion).
        """
        out_shape = (d,) if role == "drift" else (d, d)
        if self.kind == "constant":
            v = self._expand(self.offset, role, d)
        elif self.kind == "time-polynomial":
            v = np.zeros(out_shape)
            for k, c in enumerate(self.coeffs):
                v = v + self._expand(c, role, d) * t**k
        elif self.kind == "linear-in-state":
            if state is None:
                raise InvalidArgument("linear-in-state coefficient needs the current state")
            v = self._affine(np.asarray(state, dtype=float), role, d)
        else:
            if noise is None:
                raise InvalidArgument("path-functional coefficient needs the driving path")
            v = self._affine(np.asarray(noise, dtype=float), role, d)
        return np.broadcast_to(v, tuple(batch) + out_shape)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "time-polynomial":
            out["coeffs"] = list(self.coeffs)
        else:
            out["offset"] = self.offset
        if self.kind in ("linear-in-state", "path-functional"):
            out["gain"] = self.gain
        if self.kind == "path-functional":
            out["source"] = self.source
        return out


@dataclass(frozen=True)
class InitialSampler:
    """Initial law: ``point`` (value), ``gaussian`` (mean, std) or ``uniform`` (low, high)."""

    kind: str = "point"
    value: object = 0.0
    mean: object = 0.0
    std: float = 1.0
    low: object = 0.0
    high: object = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "uniform"):
            raise InvalidArgument(f"unknown initial sampler kind {self.kind!r}")
        for name in ("value", "mean", "low", "high"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))

    @property
    def needs_randomness(self) -> bool:
        return self.kind != "point"

    def sample(self, d: int, generator=None) -> np.ndarray:
        if self.kind == "point":
            return np.broadcast_to(np.asarray(self.value, dtype=float), (d,)).copy()
        if self.kind == "gaussian":
            z = generator.standard_normal(d)
            return np.asarray(self.mean, dtype=float) + self.std * z
        return generator.uniform(np.asarray(self.low, float), np.asarray(self.high, float), size=d)

    def sample_particles(self, n, d, policy: SeedPolicy, replication: int, role="initial"):
        """``(n, d)`` initial values; row ``l`` is the ``l``-th draw of the ``(role, replication)`` stream.

        Rows therefore depend only on their index, so growing ``n`` extends
        the sample without altering earlier particles.
        """
        if not self.needs_randomness:
            return np.broadcast_to(self.sample(d), (n, d)).copy()
        gen = policy.stream(role, replication).generator()
        if self.kind == "gaussian":
            return np.asarray(self.mean, dtype=float) + self.std * gen.standard_normal((n, d))
        return gen.uniform(np.asarray(self.low, float), np.asarray(self.high, float), size=(n, d))

    def to_dict(self):
        keys = {"point": ("value",), "gaussian": ("mean", "std"), "uniform": ("low", "high")}
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys[self.kind]}}


@dataclass(frozen=True, eq=False)
class StatePath:
    """Simulated X with the coefficient values used at each left point.

    ``gamma`` holds one ``(M, d, d)`` array per driving noise, in the order of
    ``noises``.
    """

    grid: TimeGrid
    values: np.ndarray  # (M+1, d)
    beta: np.ndarray  # (M, d)
    gamma: tuple  # of (M, d, d)
    noises: tuple  # of BrownianPath

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        """Recompute ``beta dt + sum_k gamma_k dW_k`` from the records."""
        inc = self.beta * self.grid.dt
        for g, w in zip(self.gamma, self.noises):
            inc = inc + np.einsum("mij,mj->mi", g, w.increments)
        return inc


@dataclass(frozen=True, eq=False)
class ParticleCloudPath:
    """N particle trajectories with their coefficient records.

    ``sigma`` is the idiosyncratic diffusion (``sigma^1`` in conditional mode),
    ``sigma0`` the common-noise loading (``None`` in full-flow mode).  Record
    arrays may be read-only broadcast views.
    """

    grid: TimeGrid
    Y: np.ndarray  # (N, M+1, d)
    b: np.ndarray  # (N, M, d)
    sigma: np.ndarray  # (N, M, d, d)
    dW: np.ndarray  # (N, M, d) idiosyncratic increments
    sigma0: np.ndarray = None  # (N, M, d, d)
    common: BrownianPath = None
    meta: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return "full" if self.common is None else "conditional"

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def dim(self) -> int:
        return self.Y.shape[2]

    def measure(self, i: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.Y[:, i, :])

    def permuted(self, perm) -> "ParticleCloudPath":
        perm = np.asarray(perm)
        take = lambda a: None if a is None else np.asarray(a)[perm]
        return ParticleCloudPath(
            self.grid, self.Y[perm], take(self.b), take(self.sigma), self.dW[perm],
            take(self.sigma0), self.common, dict(self.meta),
        )


def _validate_noise(grid, path, d, name):
    if path.grid != grid:
        raise InvalidArgument(f"{name} lives on a different time grid")
    if path.dim != d:
        raise InvalidArgument(f"{name} has dimension {path.dim}, expected {d}")


def simulate_ito_process(beta: CoefficientSpec, gamma, X0, driving, generator=None) -> StatePath:
    """Euler scheme for ``dX = beta dt + gamma dW`` (or ``gamma0 dW0 + gamma1 dW1``).

    ``driving`` is a BrownianPath, or a pair ``(W0, W1)`` in which case
    ``gamma`` must be a pair ``(gamma0, gamma1)``.  ``X0`` is a vector or an
    :class:`InitialSampler` (drawn with ``generator``).  Path-functional
    coefficients read the first driving noise unless ``source`` is ``"W1"``.
    """
    if isinstance(driving, BrownianPath):
        noises = (driving,)
        gammas = (gamma,)
    else:
        noises = tuple(driving)
        if isinstance(gamma, CoefficientSpec) or len(gamma) != len(noises):
            raise InvalidArgument("two driving noises need a pair of diffusion coefficients")
        gammas = tuple(gamma)
    grid = noises[0].grid
    d = noises[0].dim
    for k, w in enumerate(noises):
        _validate_noise(grid, w, d, f"driving noise {k}")

    if isinstance(X0, InitialSampler):
        x0 = X0.sample(d, generator)
    else:
        x0 = np.broadcast_to(np.asarray(X0, dtype=float), (d,)).copy()

    specs = (beta,) + gammas
    M, dt, t = grid.M, grid.dt, grid.nodes

    def noise_for(spec):
        k = 1 if (spec.source == "W1" and len(noises) > 1) else 0
        return noises[k].values

    if not any(s.state_dependent for s in specs):
        b = np.stack([beta.evaluate(t[i], "drift", d, noise=noise_for(beta)[i]) for i in range(M)]) \
            if beta.kind != "constant" else np.broadcast_to(beta.evaluate(0.0, "drift", d), (M, d))
        gs = []
        for g in gammas:
            if g.kind == "constant":
                gs.append(np.broadcast_to(g.evaluate(0.0, "diffusion", d), (M, d, d)))
            else:
                src = noise_for(g)
                gs.append(np.stack([g.evaluate(t[i], "diffusion", d, noise=src[i]) for i in range(M)]))
        inc = b * dt
        for g, w in zip(gs, noises):
            inc = inc + np.einsum("mij,mj->mi", g, w.increments)
        X = np.cumsum(np.concatenate([x0[None, :], inc]), axis=0)
        return StatePath(grid, X, np.asarray(b), tuple(gs), noises)

    X = np.empty((M + 1, d))
    X[0] = x0
    b = np.empty((M, d))
    gs = [np.empty((M, d, d)) for _ in gammas]
    for i in range(M):
        b[i] = beta.evaluate(t[i], "drift", d, state=X[i], noise=noise_for(beta)[i])
        inc = b[i] * dt
        for k, (g, w) in enumerate(zip(gammas, noises)):
            gs[k][i] = g.evaluate(t[i], "diffusion", d, state=X[i], noise=noise_for(g)[i])
            inc = inc + np.einsum("mij,mj->mi", gs[k][i][None], w.increments[i][None])[0]
        X[i + 1] = X[i] + inc
    return StatePath(grid, X, b, tuple(gs), noises)


def _simulate_cloud(grid, d, N, y0, b_spec, noise_terms):
    """Shared Euler loop.  ``noise_terms``: list of (spec, increments (N,M,d), path values (N,M+1,d) or None)."""
    M, dt, t = grid.M, grid.dt, grid.nodes
    specs = [b_spec] + [s for s, _, _ in noise_terms]

    def record(spec, role, i, state):
        src = None
        if spec.path_dependent:
            src = _source_values(spec, noise_terms)[:, i]
        return spec.evaluate(t[i], role, d, state=state, noise=src, batch=(N,))

    if not any(s.state_dependent for s in specs):
        def full_record(spec, role):
            if spec.kind == "constant":
                shape = (N, M, d) if role == "drift" else (N, M, d, d)
                return np.broadcast_to(spec.evaluate(0.0, role, d), shape)
            return np.stack([record(spec, role, i, None) for i in range(M)], axis=1)

        Y = np.empty((N, M + 1, d))
        Y[:, 0] = y0
        inc = Y[:, 1:]
        b = full_record(b_spec, "drift")
        bdt = shared_record(b, 1)
        if bdt is not None:  # same drift everywhere: a (d,) row broadcasts in the first add
            bdt = bdt * dt
        else:
            np.multiply(b, dt, out=inc)
        sigmas = []
        for spec, dw, _ in noise_terms:
            s = full_record(spec, "diffusion")
            sigmas.append(s)
            scalar = _scalar_identity(spec, d)
            if scalar is None:
                step = np.einsum("nmij,nmj->nmi", s, dw)
            elif scalar == 0.0:
                continue
            else:
                step = dw if scalar == 1.0 else scalar * dw
            if bdt is not None:
                np.add(step, bdt, out=inc)
                bdt = None
            else:
                inc += step
        if bdt is not None:
            inc[...] = bdt
        np.cumsum(Y, axis=1, out=Y)
        return Y, b, sigmas

    Y = np.empty((N, M + 1, d))
    Y[:, 0] = y0
    b = np.empty((N, M, d))
    sigmas = [np.empty((N, M, d, d)) for _ in noise_terms]
    for i in range(M):
        b[:, i] = record(b_spec, "drift", i, Y[:, i])
        inc = b[:, i] * dt
        for k, (spec, dw, _) in enumerate(noise_terms):
            sigmas[k][:, i] = record(spec, "diffusion", i, Y[:, i])
            inc = inc + np.einsum("nij,nj->ni", sigmas[k][:, i], dw[:, i])
        Y[:, i + 1] = Y[:, i] + inc
    return Y, b, sigmas


def shared_record(arr, tail):
    """The common trailing block of an array broadcast (zero strides) over its leading axes, else None."""
    arr = np.asarray(arr)
    lead = arr.ndim - tail
    if lead > 0 and all(st == 0 for st in arr.strides[:lead]):
        return arr[(0,) * lead]
    return None


def _scalar_identity(spec, d):
    """``c`` when a constant diffusion equals ``c * I``, else None."""
    if spec.kind != "constant":
        return None
    m = spec.evaluate(0.0, "diffusion", d)
    c = float(m[0, 0])
    return c if np.array_equal(m, c * np.eye(d)) else None


def _source_values(spec, noise_terms):
    # "common" reads W0 (first noise term in conditional mode), anything else the own noise.
    if spec.source == "common" and len(noise_terms) > 1:
        return noise_terms[0][2]
    return noise_terms[-1][2]


def _particle_increments(policy, replication, N, grid, d, role, spec=None):
    """Idiosyncratic increments; a read-only zero view when ``spec`` vanishes identically."""
    if spec is not None and spec.is_zero and not spec.path_dependent:
        return np.broadcast_to(np.zeros(d), (N, grid.M, d))
    return policy.particle_normals(role, replication, N, (grid.M, d)) * np.sqrt(grid.dt)


def _cumulative(dw):
    n, m, d = dw.shape
    return np.cumsum(np.concatenate([np.zeros((n, 1, d)), dw], axis=1), axis=1)


def simulate_particle_system(b: CoefficientSpec, sigma: CoefficientSpec, N: int, y0: InitialSampler,
                             grid: TimeGrid, policy: SeedPolicy, replication: int = 0, d: int = 1,
                             noise_role: str = "particle", initial_role: str = "initial") -> ParticleCloudPath:
    """N independent Euler copies of ``dY = b dt + sigma dW^l`` (full-flow mode)."""
    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise InvalidArgument(f"N must be a positive integer, got {N!r}")
    y_init = y0.sample_particles(N, d, policy, replication, initial_role)
    dw = _particle_increments(policy, replication, N, grid, d, noise_role, sigma)
    own = _cumulative(dw) if (b.path_dependent or sigma.path_dependent) else None
    Y, bb, (ss,) = _simulate_cloud(grid, d, N, y_init, b, [(sigma, dw, own)])
    return ParticleCloudPath(grid, Y, bb, ss, dw, meta={"replication": replication, "mode": "full"})


def simulate_conditional_particle_system(b: CoefficientSpec, sigma0: CoefficientSpec, sigma1: CoefficientSpec,
                                         N: int, y0: InitialSampler, common: BrownianPath, policy: SeedPolicy,
                                         replication: int = 0, grid: TimeGrid = None,
                                         noise_role: str = "particle",
                                         initial_role: str = "initial") -> ParticleCloudPath:
    """Particles sharing the common path ``W0`` with independent ``W^{1,l}``.

    With the same ``(policy, replication, roles)`` and ``sigma0 = 0`` this
    reproduces :func:`simulate_particle_system` path by path.
    """
    if grid is not None and grid != common.grid:
        raise InvalidArgument("common noise path lives on a different grid than requested")
    grid = common.grid
    if not (isinstance(N, (int, np.integer)) and N >= 1):
        raise InvalidArgument(f"N must be a positive integer, got {N!r}")
    d = common.dim
    y_init = y0.sample_particles(N, d, policy, replication, initial_role)
    dw1 = _particle_increments(policy, replication, N, grid, d, noise_role, sigma1)
    dw0 = np.broadcast_to(common.increments, (N, grid.M, d))
    need_paths = any(s.path_dependent for s in (b, sigma0, sigma1))
    w0_vals = np.broadcast_to(common.values, (N, grid.M + 1, d)) if need_paths else None
    own = _cumulative(dw1) if need_paths else None
    Y, bb, (s0, s1) = _simulate_cloud(grid, d, N, y_init, b, [(sigma0, dw0, w0_vals), (sigma1, dw1, own)])
    return ParticleCloudPath(grid, Y, bb, s1, dw1, sigma0=s0, common=common,
                             meta={"replication": replication, "mode": "conditional"})


def coefficient_integrability_report(specs: dict, grid: TimeGrid, R: int, policy: SeedPolicy,
                                     d: int = 1, y0: InitialSampler = None, x0: InitialSampler = None):
    """Monte Carlo estimates of the integrability functionals along simulated paths.

    ``specs`` may contain ``b``, ``sigma`` (for Y) and ``beta``, ``gamma`` (for
    X).  Returns ``{name: {"mean", "se", "n_finite", "n_nonfinite"}}`` for
    ``int|b|^2``, ``int|sigma|^4``, ``int|beta|``, ``int|gamma|^2``.  Non-finite
    samples are counted and excluded, never raised.
    """
    if R < 1:
        raise InvalidArgument("R must be >= 1")
    y0 = y0 or InitialSampler()
    x0 = x0 or InitialSampler()
    zero = CoefficientSpec.constant(0.0)
    dt = grid.dt
    samples = {"int_b2": [], "int_sigma4": [], "int_beta": [], "int_gamma2": []}
    for r in range(R):
        with np.errstate(all="ignore"):
            if "b" in specs or "sigma" in specs:
                cloud = simulate_particle_system(specs.get("b", zero), specs.get("sigma", zero), 1, y0,
                                                 grid, policy, r, d, noise_role="integrability-Y",
                                                 initial_role="integrability-Y0")
                b = np.asarray(cloud.b[0])
                s = np.asarray(cloud.sigma[0])
                samples["int_b2"].append(float(np.sum(np.sum(b**2, axis=-1)) * dt))
                samples["int_sigma4"].append(float(np.sum(np.sum(s**2, axis=(-1, -2)) ** 2) * dt))
            if "beta" in specs or "gamma" in specs:
                W = _brownian(grid, d, policy.stream("integrability-X", r))
                X = simulate_ito_process(specs.get("beta", zero), specs.get("gamma", zero), x0, W,
                                         policy.stream("integrability-X0", r).generator())
                samples["int_beta"].append(float(np.sum(np.linalg.norm(X.beta, axis=-1)) * dt))
                samples["int_gamma2"].append(float(np.sum(np.sum(X.gamma[0] ** 2, axis=(-1, -2))) * dt))
    out = {}
    for name, vals in samples.items():
        if not vals:
            continue
        v = np.asarray(vals)
        ok = np.isfinite(v)
        good = v[ok]
        se = float(good.std(ddof=1) / np.sqrt(good.size)) if good.size > 1 else 0.0
        out[name] = {
            "mean": float(good.mean()) if good.size else float("nan"),
            "se": se,
            "n_finite": int(ok.sum()),
            "n_nonfinite": int((~ok).sum()),
        }
    return out


def _brownian(grid, d, stream):
    from .core import sample_brownian

    return sample_brownian(grid, d, stream)
