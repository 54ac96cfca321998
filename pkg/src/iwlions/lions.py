"""Numerical Wasserstein calculus on empirical measures.

Lions derivatives are recovered from the empirical projection
``u^N(x^1..x^N) = u(mean of deltas)`` through

    d/dx^j u^N            = (1/N)   dmu u(x^j)
    d2/dx^k dx^j u^N      = (1/N)   dv dmu u(x^j) 1{j=k}  +  (1/N^2) dmu2 u(x^j, x^k)

using central differences.  All perturbed clouds of one stencil are stacked
along a batch axis and evaluated in a single call.  Particle indices are
0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as gamma_fn, pi

import numpy as np
from scipy import integrate
from scipy.optimize import linear_sum_assignment

from .core import EmpiricalMeasure
from .errors import InvalidArgument, UnsupportedOperation
from .functionals import MeasureFunctional

__all__ = [
    "FiniteDifferenceScheme",
    "MollifierKernel",
    "SecondDerivativeEstimate",
    "MollifiedResult",
    "empirical_projection",
    "numeric_lions_derivative",
    "numeric_lions_gradients",
    "numeric_lions_second",
    "numeric_space_derivatives",
    "mollified_projection",
    "wasserstein2",
    "lipschitz_bound",
    "ASSIGNMENT_CAP",
]

ASSIGNMENT_CAP = 512


@dataclass(frozen=True)
class FiniteDifferenceScheme:
    """Central differences with step ``rel_step * (1 + |anchor|)``."""

    rel_step: float = 1e-4
    mode: str = "central"

    def __post_init__(self):
        if not self.rel_step > 0:
            raise InvalidArgument(f"finite-difference step must be positive, got {self.rel_step!r}")
        if self.mode != "central":
            raise InvalidArgument("only central differences are supported")

    def step(self, anchor) -> np.ndarray:
        return self.rel_step * (1.0 + np.abs(np.asarray(anchor, dtype=float)))


def _points(mu):
    return (mu if isinstance(mu, EmpiricalMeasure) else EmpiricalMeasure(mu)).points


def _x(x):
    return None if x is None else np.atleast_1d(np.asarray(x, dtype=float))


def empirical_projection(F: MeasureFunctional, points, x=None) -> float:
    return float(F.value(_points(points), _x(x)))


def _eval_stack(F, clouds, x):
    """Evaluate ``F`` on clouds stacked as ``(S, N, d)``."""
    pts = np.moveaxis(clouds, 0, 1)  # (N, S, d)
    xx = None if x is None else np.broadcast_to(x, (clouds.shape[0], x.shape[-1]))
    return F.value(pts, xx)


def numeric_lions_derivative(F: MeasureFunctional, mu, j: int, scheme: FiniteDifferenceScheme = None,
                             x=None) -> np.ndarray:
    """``N`` times the central-difference gradient of ``u^N`` in ``x^j``."""
    scheme = scheme or FiniteDifferenceScheme()
    pts = _points(mu)
    N, d = pts.shape
    if not 0 <= j < N:
        raise InvalidArgument(f"particle index {j} out of range for N={N}")
    h = scheme.step(pts[j])
    clouds = np.repeat(pts[None], 2 * d, axis=0)
    for a in range(d):
        clouds[2 * a, j, a] += h[a]
        clouds[2 * a + 1, j, a] -= h[a]
    vals = _eval_stack(F, clouds, _x(x))
    return N * (vals[0::2] - vals[1::2]) / (2.0 * h)


def numeric_lions_gradients(F: MeasureFunctional, mu, scheme: FiniteDifferenceScheme = None,
                            x=None, indices=None) -> np.ndarray:
    """:func:`numeric_lions_derivative` for several particles at once, shape ``(len(indices), d)``.

    All particles by default.
    """
    scheme = scheme or FiniteDifferenceScheme()
    pts = _points(mu)
    N, d = pts.shape
    idx = np.arange(N) if indices is None else np.asarray(indices, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise InvalidArgument(f"particle index out of range for N={N}")
    K = idx.size
    h = scheme.step(pts[idx])  # (K, d)
    clouds = np.repeat(pts[None], 2 * K * d, axis=0).reshape(K, d, 2, N, d)
    for r, j in enumerate(idx):
        for a in range(d):
            clouds[r, a, 0, j, a] += h[r, a]
            clouds[r, a, 1, j, a] -= h[r, a]
    vals = _eval_stack(F, clouds.reshape(-1, N, d), _x(x)).reshape(K, d, 2)
    return N * (vals[..., 0] - vals[..., 1]) / (2.0 * h)


def _mixed(F, pts, j, k, scheme, x):
    """``d2 u^N / dx^k_b dx^j_a`` for all ``a, b`` (``j != k``)."""
    d = pts.shape[1]
    hj, hk = scheme.step(pts[j]), scheme.step(pts[k])
    clouds = np.repeat(pts[None], 4 * d * d, axis=0)
    s = 0
    for a in range(d):
        for b in range(d):
            for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                clouds[s, j, a] += sj * hj[a]
                clouds[s, k, b] += sk * hk[b]
                s += 1
    v = _eval_stack(F, clouds, x).reshape(d, d, 4)
    return (v[..., 0] - v[..., 1] - v[..., 2] + v[..., 3]) / (4.0 * np.outer(hj, hk))


def _diag(F, pts, j, scheme, x):
    """``d2 u^N / dx^j_b dx^j_a``."""
    d = pts.shape[1]
    h = scheme.step(pts[j])
    clouds = np.repeat(pts[None], 4 * d * d + 1, axis=0)
    s = 1
    for a in range(d):
        for b in range(d):
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                clouds[s, j, a] += sa * h[a]
                clouds[s, j, b] += sb * h[b]
                s += 1
    v = _eval_stack(F, clouds, x)
    quad = v[1:].reshape(d, d, 4)
    out = (quad[..., 0] - quad[..., 1] - quad[..., 2] + quad[..., 3]) / (4.0 * np.outer(h, h))
    # pure second derivatives use the 3-point stencil with step h (the 4-point
    # one above degenerates to step 2h on the diagonal)
    plus = np.repeat(pts[None], 2 * d, axis=0)
    for a in range(d):
        plus[2 * a, j, a] += h[a]
        plus[2 * a + 1, j, a] -= h[a]
    pm = _eval_stack(F, plus, x)
    for a in range(d):
        out[a, a] = (pm[2 * a] - 2.0 * v[0] + pm[2 * a + 1]) / (h[a] * h[a])
    return out


@dataclass(frozen=True)
class SecondDerivativeEstimate:
    """``dvdmu`` is filled on the diagonal (``j == k``) only."""

    dmu2: np.ndarray
    dvdmu: np.ndarray = None


def numeric_lions_second(F: MeasureFunctional, mu, j: int, k: int,
                         scheme: FiniteDifferenceScheme = None, x=None) -> SecondDerivativeEstimate:
    """Second Lions derivatives from second differences of ``u^N``.

    ``j != k``: ``N^2 d2u^N/dx^k dx^j`` estimates ``dmu2 u(x^j, x^k)``.
    ``j == k``: ``N d2u^N/(dx^j)^2 - dmu2 u(x^j, x^j) / N`` estimates
    ``dv dmu u(x^j)``.  The on-diagonal ``dmu2`` value is obtained as an
    off-diagonal derivative on the doubled cloud ``[x; x]`` (same measure,
    ``2N`` points); the correction is skipped when ``dmu2`` vanishes
    identically for ``F``.
    """
    scheme = scheme or FiniteDifferenceScheme()
    pts = _points(mu)
    N = pts.shape[0]
    xx = _x(x)
    for idx in (j, k):
        if not 0 <= idx < N:
            raise InvalidArgument(f"particle index {idx} out of range for N={N}")
    if j != k:
        return SecondDerivativeEstimate(N * N * _mixed(F, pts, j, k, scheme, xx))
    diag = N * _diag(F, pts, j, scheme, xx)
    if F.dmu2_factors(pts[:1], xx) == []:
        d = pts.shape[1]
        return SecondDerivativeEstimate(np.zeros((d, d)), diag)
    doubled = np.concatenate([pts, pts])
    dmu2_jj = (2 * N) ** 2 * _mixed(F, doubled, j, j + N, scheme, xx)
    return SecondDerivativeEstimate(dmu2_jj, diag - dmu2_jj / N)


def numeric_space_derivatives(F: MeasureFunctional, x, mu, scheme: FiniteDifferenceScheme = None):
    """Central-difference ``(dx, dxx)`` of ``u(., mu)`` at ``x``."""
    scheme = scheme or FiniteDifferenceScheme()
    pts = _points(mu)
    x = _x(x)
    d = x.size
    h = scheme.step(x)
    ev = lambda y: float(F.value(pts, y))
    u0 = ev(x)
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    E = np.eye(d)
    for a in range(d):
        up, um = ev(x + h[a] * E[a]), ev(x - h[a] * E[a])
        grad[a] = (up - um) / (2 * h[a])
        hess[a, a] = (up - 2 * u0 + um) / h[a] ** 2
        for b in range(a + 1, d):
            s = [ev(x + sa * h[a] * E[a] + sb * h[b] * E[b]) for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1))]
            hess[a, b] = hess[b, a] = (s[0] - s[1] - s[2] + s[3]) / (4 * h[a] * h[b])
    return grad, hess


@dataclass(frozen=True)
class MollifierKernel:
    """Bump density ``rho(z) ~ exp(-1/(1-|z|^2))`` on the unit ball, rescaled to ``n^d rho(n z)``."""

    n: int
    Q: int = 10_000
    d: int = 1

    def __post_init__(self):
        for name in ("n", "Q", "d"):
            val = getattr(self, name)
            if not (isinstance(val, (int, np.integer)) and val >= 1):
                raise InvalidArgument(f"{name} must be a positive integer, got {val!r}")

    support_radius = 1.0

    @property
    def scaled_radius(self) -> float:
        return self.support_radius / self.n

    @property
    def normalizer(self) -> float:
        return _bump_mass(self.d)

    def density(self, z) -> np.ndarray:
        """Unscaled base density ``rho`` at points ``z`` of shape ``(..., d)``."""
        r2 = np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out / self.normalizer

    def sample(self, generator, size) -> np.ndarray:
        """Draws from ``rho`` (unit scale) by rejection from the uniform ball."""
        size = tuple(np.atleast_1d(size))
        total = int(np.prod(size))
        out = np.empty((total, self.d))
        filled = 0
        while filled < total:
            m = max(2 * (total - filled), 64)
            g = generator.standard_normal((m, self.d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            r = generator.random(m) ** (1.0 / self.d)
            u = generator.random(m)
            keep = u < np.exp(1.0 - 1.0 / (1.0 - r * r))
            z = g[keep] * r[keep, None]
            take = min(z.shape[0], total - filled)
            out[filled:filled + take] = z[:take]
            filled += take
        return out.reshape(size + (self.d,))


_BUMP_CACHE = {}


def _bump_mass(d: int) -> float:
    if d not in _BUMP_CACHE:
        sphere = 2.0 * pi ** (d / 2.0) / gamma_fn(d / 2.0)
        radial, _ = integrate.quad(lambda r: r ** (d - 1) * np.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                                   epsabs=1e-14, epsrel=1e-13)
        _BUMP_CACHE[d] = sphere * radial
    return _BUMP_CACHE[d]


@dataclass(frozen=True)
class MollifiedResult:
    value: float  # u^{N,n}
    baseline: float  # u^N
    se: float
    draws: np.ndarray  # u on each shifted cloud, (Q,)
    w2_sq: np.ndarray  # squared W2 between original and shifted cloud, (Q,)
    w2_exact: bool  # False: identity-coupling upper bound (d >= 2)

    @property
    def error(self) -> float:
        return abs(self.value - self.baseline)


def mollified_projection(F: MeasureFunctional, points, kernel: MollifierKernel, stream, x=None,
                         chunk: int = 2048) -> MollifiedResult:
    """Monte Carlo ``u^{N,n}``: average of ``u`` over clouds ``y^i - Z^i / n``."""
    pts = _points(points)
    N, d = pts.shape
    if d != kernel.d:
        raise InvalidArgument(f"kernel dimension {kernel.d} differs from cloud dimension {d}")
    gen = stream.generator() if hasattr(stream, "generator") else stream
    xx = _x(x)
    Z = kernel.sample(gen, (kernel.Q, N)) / kernel.n  # (Q, N, d)
    vals = np.empty(kernel.Q)
    w2 = np.empty(kernel.Q)
    for s in range(0, kernel.Q, chunk):
        z = Z[s:s + chunk]
        shifted = pts[None] - z
        vals[s:s + chunk] = _eval_stack(F, shifted, xx)
        if d == 1:
            a = np.sort(pts[:, 0])
            b = np.sort(shifted[..., 0], axis=1)
            w2[s:s + chunk] = np.mean((b - a) ** 2, axis=1)
        else:
            w2[s:s + chunk] = np.mean(np.sum(z * z, axis=-1), axis=1)
    base = float(F.value(pts, xx))
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return MollifiedResult(float(vals.mean()), base, se, vals, w2, d == 1)


def lipschitz_bound(F: MeasureFunctional, points, margin: float = 1.0, grid: int = 41, x=None) -> float:
    """Brute-force ``sup |dmu u(mu, v)|`` over the bounding box of the cloud enlarged by ``margin``.

    The sup runs over a regular grid of the box and the cloud points, with the
    measure argument taken at the cloud itself and at the clouds translated to
    the box corners.
    """
    pts = _points(points)
    N, d = pts.shape
    lo, hi = pts.min(axis=0) - margin, pts.max(axis=0) + margin
    axes = [np.linspace(lo[a], hi[a], grid) for a in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    probe = np.concatenate([mesh, pts])
    xx = _x(x)
    best = np.max(np.linalg.norm(F.dmu(pts, probe, xx), axis=-1))
    corners = np.stack(np.meshgrid(*[[-margin, margin]] * d, indexing="ij"), axis=-1).reshape(-1, d)
    for c in corners:
        best = max(best, np.max(np.linalg.norm(F.dmu(pts + c, probe, xx), axis=-1)))
    return float(best)


def _quantile_w2_sq(a, b):
    a, b = np.sort(a, kind="stable"), np.sort(b, kind="stable")
    n, m = a.size, b.size
    cuts = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    cuts[-1] = 1.0
    widths = np.diff(np.concatenate([[0.0], cuts]))
    mids = cuts - widths / 2
    ia = np.minimum((mids * n).astype(int), n - 1)
    ib = np.minimum((mids * m).astype(int), m - 1)
    return float(np.sum(widths * (a[ia] - b[ib]) ** 2))


def wasserstein2(mu, nu) -> float:
    """Exact W2 between empirical measures (sorted pairing in 1-d, assignment otherwise)."""
    x, y = _points(mu), _points(nu)
    if x.shape[1] != y.shape[1]:
        raise InvalidArgument("measures live in different dimensions")
    if x.shape[1] == 1:
        if x.shape[0] == y.shape[0]:
            a = np.sort(x[:, 0], kind="stable")
            b = np.sort(y[:, 0], kind="stable")
            return float(np.sqrt(np.mean((a - b) ** 2)))
        return float(np.sqrt(_quantile_w2_sq(x[:, 0], y[:, 0])))
    if x.shape[0] != y.shape[0]:
        raise UnsupportedOperation("W2 for unequal cloud sizes is only implemented in one dimension")
    if x.shape[0] > ASSIGNMENT_CAP:
        raise UnsupportedOperation(f"exact assignment capped at N={ASSIGNMENT_CAP}; not computed")
    # canonical row and argument order so that W2(mu, nu) == W2(nu, mu) bit for bit
    x, y = (v[np.lexsort(v.T[::-1])] for v in (x, y))
    if x.tobytes() > y.tobytes():
        x, y = y, x
    cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    r, c = linear_sum_assignment(cost)
    return float(np.sqrt(cost[r, c].mean()))
