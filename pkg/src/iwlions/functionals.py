"""Catalogue of measure functionals u(x, mu) with closed-form derivatives.

Batched conventions used throughout:

* ``pts``  cloud points, shape ``(N, *B, d)``; the functional is evaluated at
  the uniform empirical measure over axis 0, independently for each batch
  index ``B`` (typically the time axis).
* ``x``    space argument, shape ``(*B, d)``, or ``None`` for x-free members.
* ``v``    evaluation points for Lions derivatives, shape ``(K, *B, d)``.

Derivative index conventions (derivative index first):

* ``dmu2(v, v')[a, b] = d/dv'_b (dmu u(v))_a``
* ``dxdmu(v)[a, k]   = d/dx_a (dmu u(v))_k``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .core import EmpiricalMeasure
from .errors import InvalidArgument, UnsupportedOperation

__all__ = [
    "Ridge",
    "InnerFunction",
    "MeasureFunctional",
    "FUNCTIONAL_KINDS",
    "eval_functional",
    "lions_derivative",
    "lions_hessian_v",
    "lions_second",
    "space_derivatives",
    "functional_from_dict",
]

FUNCTIONAL_KINDS = ("linear", "quadratic-mean", "double-integral", "variance", "product", "second-moment")
MAX_DEGREE = 4


def _horner(s, c):
    """``sum c[k] s**k`` with trailing zeros trimmed and in-place updates."""
    s = np.asarray(s, dtype=float)
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return np.broadcast_to(0.0, s.shape)
    c = c[: nz[-1] + 1]
    if c.size == 1:  # read-only broadcast; callers never write into derivative arrays
        return np.broadcast_to(float(c[0]), s.shape)
    out = s * c[-1]
    for ck in c[-2:0:-1]:
        if ck != 0.0:
            out += ck
        out *= s
    if c[0] != 0.0:
        out += c[0]
    return out


@dataclass(frozen=True)
class Ridge:
    """Profile ``p`` applied to ``w . v`` (or to every coordinate when ``direction`` is None).

    ``poly``: ``params = (c0, ..., c4)``, ascending powers.
    ``trig``: ``params = (a, b, omega)``, ``p(s) = a cos(omega s) + b sin(omega s)``.
    """

    profile: str
    params: tuple
    direction: tuple = None

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        if self.profile == "poly":
            if not 1 <= len(params) <= MAX_DEGREE + 1:
                raise InvalidArgument(f"polynomial profile needs 1..{MAX_DEGREE + 1} coefficients")
        elif self.profile == "trig":
            if len(params) != 3:
                raise InvalidArgument("trigonometric profile needs (a, b, omega)")
        else:
            raise InvalidArgument(f"unknown profile {self.profile!r}")
        object.__setattr__(self, "params", params)
        if self.direction is not None:
            object.__setattr__(self, "direction", tuple(float(w) for w in np.ravel(self.direction)))

    def derivs(self, s, orders=(0, 1, 2)):
        """``p(s), p'(s), p''(s)`` (only the requested orders, in order)."""
        if self.profile == "poly":
            c = np.asarray(self.params)
            out = []
            for k in orders:
                ck = P.polyder(c, k) if k < c.size else np.zeros(1)
                out.append(_horner(s, ck))
            return tuple(out)
        a, b, w = self.params
        ws = w * s
        out = []
        for k in orders:
            if k == 0:
                out.append(a * np.cos(ws) + b * np.sin(ws))
            elif k == 1:
                out.append(w * (b * np.cos(ws) - a * np.sin(ws)))
            else:
                out.append(-w * w * (a * np.cos(ws) + b * np.sin(ws)))
        return tuple(out)

    @property
    def is_constant(self) -> bool:
        if self.profile == "poly":
            return not any(self.params[1:])
        a, b, w = self.params
        return w == 0.0 or (a == 0.0 and b == 0.0)


@dataclass(frozen=True)
class InnerFunction:
    """Scalar function on R^d written as a sum of ridge profiles."""

    ridges: tuple = ()
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ridges", tuple(self.ridges))
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def poly(cls, coeffs, direction=None):
        return cls((Ridge("poly", tuple(coeffs), direction),))

    @classmethod
    def trig(cls, a, b, omega, direction=None):
        return cls((Ridge("trig", (a, b, omega), direction),))

    @classmethod
    def constant(cls, c):
        return cls((), offset=c)

    @property
    def is_constant(self) -> bool:
        return all(r.is_constant for r in self.ridges)

    @property
    def is_zero(self) -> bool:
        return self.offset == 0.0 and all(
            not any(r.params) if r.profile == "poly" else r.params[0] == r.params[1] == 0.0
            for r in self.ridges
        )

    def _check_dim(self, d):
        for r in self.ridges:
            if r.direction is not None and len(r.direction) != d:
                raise InvalidArgument(f"ridge direction has length {len(r.direction)}, points have d={d}")

    def all_derivs(self, v):
        """Value ``(...)``, gradient ``(..., d)`` and Hessian ``(..., d, d)`` at ``v``."""
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        self._check_dim(d)
        val = np.full(v.shape[:-1], self.offset)
        grad = np.zeros(v.shape)
        hess = np.zeros(v.shape + (d,))
        eye = np.eye(d)
        for r in self.ridges:
            if r.direction is None:
                p, p1, p2 = r.derivs(v)
                val = val + p.sum(axis=-1)
                grad = grad + p1
                hess = hess + p2[..., :, None] * eye
            else:
                w = np.asarray(r.direction)
                p, p1, p2 = r.derivs(v @ w)
                val = val + p
                grad = grad + p1[..., None] * w
                hess = hess + p2[..., None, None] * np.outer(w, w)
        return val, grad, hess

    def value(self, v):
        v = np.asarray(v, dtype=float)
        self._check_dim(v.shape[-1])
        val = None
        for r in self.ridges:
            s = v if r.direction is None else v @ np.asarray(r.direction)
            (p,) = r.derivs(s, (0,))
            p = p.sum(axis=-1) if r.direction is None else p
            val = p if val is None else val + p
        if val is None:
            return np.full(v.shape[:-1], self.offset)
        if self.offset != 0.0:
            val = val + self.offset
        return val

    def grad(self, v):
        v = np.asarray(v, dtype=float)
        self._check_dim(v.shape[-1])
        g = None
        for r in self.ridges:
            if r.direction is None:
                term = r.derivs(v, (1,))[0]
            else:
                w = np.asarray(r.direction)
                term = r.derivs(v @ w, (1,))[0][..., None] * w
            g = term if g is None else g + term
        return np.zeros(v.shape) if g is None else g

    def hess(self, v):
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        self._check_dim(d)
        h = None
        for r in self.ridges:
            if r.direction is None:
                p2 = r.derivs(v, (2,))[0]
                term = p2[..., None] if d == 1 else p2[..., :, None] * np.eye(d)
            else:
                w = np.asarray(r.direction)
                term = r.derivs(v @ w, (2,))[0][..., None, None] * np.outer(w, w)
            h = term if h is None else h + term
        return np.zeros(v.shape + (d,)) if h is None else h

    def to_dict(self):
        return {
            "offset": self.offset,
            "ridges": [
                {"profile": r.profile, "params": list(r.params),
                 **({"direction": list(r.direction)} if r.direction is not None else {})}
                for r in self.ridges
            ]
        }

    @classmethod
    def from_dict(cls, spec):
        if isinstance(spec, (int, float)):
            return cls.constant(spec)
        if "ridges" in spec or "offset" in spec:
            ridges = tuple(Ridge(r["profile"], tuple(r["params"]), r.get("direction")) for r in spec.get("ridges", ()))
            return cls(ridges, offset=spec.get("offset", 0.0))
        profile = spec.get("profile", "poly")
        params = spec.get("params", spec.get("coeffs"))
        if params is None:
            raise InvalidArgument("inner function needs 'params' (or 'coeffs')")
        return cls((Ridge(profile, tuple(params), spec.get("direction")),))


def _pts(pts):
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 1:
        raise InvalidArgument("empty cloud")
    return pts


def _bcast(s, tail):
    """Append ``tail`` singleton axes to a batch array (or pass a scalar through)."""
    s = np.asarray(s, dtype=float)
    return s.reshape(s.shape + (1,) * tail)


@dataclass(frozen=True)
class MeasureFunctional:
    """One catalogue member.

    ``linear``           int f dmu
    ``quadratic-mean``   (int f dmu)^2
    ``double-integral``  int int f(v - w) dmu(v) dmu(w)
    ``variance``         int |v|^2 dmu - |int v dmu|^2
    ``product``          a(x) * int f dmu
    ``second-moment``    scale * int |v|^2 dmu
    """

    kind: str
    f: InnerFunction = None
    a: InnerFunction = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise InvalidArgument(f"unknown functional kind {self.kind!r}")
        if self.kind in ("linear", "quadratic-mean", "double-integral", "product") and self.f is None:
            raise InvalidArgument(f"functional kind {self.kind!r} needs an inner function f")
        if self.kind == "product" and self.a is None:
            raise InvalidArgument("product functional needs a space factor a")
        object.__setattr__(self, "scale", float(self.scale))

    # constructors -----------------------------------------------------
    @classmethod
    def linear(cls, f):
        return cls("linear", f=f)

    @classmethod
    def quadratic_mean(cls, f):
        return cls("quadratic-mean", f=f)

    @classmethod
    def double_integral(cls, h):
        return cls("double-integral", f=h)

    @classmethod
    def variance(cls):
        return cls("variance")

    @classmethod
    def product(cls, a, f):
        return cls("product", f=f, a=a)

    @classmethod
    def second_moment(cls, scale=1.0):
        return cls("second-moment", scale=scale)

    @classmethod
    def constant(cls, c):
        return cls.linear(InnerFunction.constant(c))

    @classmethod
    def zero(cls):
        return cls.constant(0.0)

    @classmethod
    def mean(cls, direction=None):
        return cls.linear(InnerFunction.poly((0.0, 1.0), direction))

    # structure --------------------------------------------------------
    @property
    def x_free(self) -> bool:
        return self.kind != "product" or self.a.is_constant

    @property
    def mu_free(self) -> bool:
        return self.kind in ("linear", "product") and self.f.is_constant

    @property
    def is_zero(self) -> bool:
        if self.kind == "linear":
            return self.f.is_zero
        if self.kind == "second-moment":
            return self.scale == 0.0
        return False

    def _x_factor(self, x, batch, deriv=0, d=1):
        """``a(x)`` (or its gradient/Hessian) for product members."""
        if x is None:
            if not self.a.is_constant:
                raise InvalidArgument("this functional depends on x; pass a space argument")
            return np.broadcast_to(self.a.value(np.zeros(d)), batch)
        x = np.asarray(x, dtype=float)
        return self.a.all_derivs(x)[deriv]

    # values -----------------------------------------------------------
    def value(self, pts, x=None):
        pts = _pts(pts)
        k = self.kind
        if k == "linear":
            return self.f.value(pts).mean(axis=0)
        if k == "quadratic-mean":
            m = self.f.value(pts).mean(axis=0)
            return m * m
        if k == "double-integral":
            diff = pts[:, None] - pts[None, :]
            return self.f.value(diff).mean(axis=(0, 1))
        if k == "variance":
            m = pts.mean(axis=0)
            return (pts * pts).sum(axis=-1).mean(axis=0) - (m * m).sum(axis=-1)
        if k == "product":
            return self._x_factor(x, pts.shape[1:-1], d=pts.shape[-1]) * self.f.value(pts).mean(axis=0)
        return self.scale * (pts * pts).sum(axis=-1).mean(axis=0)

    def inner_mean(self, pts):
        """``int f dmu`` for members built on an inner function."""
        return self.f.value(_pts(pts)).mean(axis=0)

    # Lions derivatives ------------------------------------------------
    def dmu(self, pts, v, x=None):
        pts = _pts(pts)
        v = np.asarray(v, dtype=float)
        k = self.kind
        if k == "linear":
            return self.f.grad(v)
        if k == "quadratic-mean":
            return 2.0 * _bcast(self.inner_mean(pts), 1) * self.f.grad(v)
        if k == "double-integral":
            diff = v[:, None] - pts[None, :]
            return (self.f.grad(diff) - self.f.grad(-diff)).mean(axis=1)
        if k == "variance":
            return 2.0 * (v - pts.mean(axis=0))
        if k == "product":
            return _bcast(self._x_factor(x, pts.shape[1:-1], d=pts.shape[-1]), 1) * self.f.grad(v)
        return 2.0 * self.scale * v

    def dvdmu(self, pts, v, x=None):
        pts = _pts(pts)
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        eye = np.broadcast_to(np.eye(d), v.shape + (d,))
        k = self.kind
        if k == "linear":
            return self.f.hess(v)
        if k == "quadratic-mean":
            return 2.0 * _bcast(self.inner_mean(pts), 2) * self.f.hess(v)
        if k == "double-integral":
            diff = v[:, None] - pts[None, :]
            return (self.f.hess(diff) + self.f.hess(-diff)).mean(axis=1)
        if k == "variance":
            return 2.0 * eye
        if k == "product":
            return _bcast(self._x_factor(x, pts.shape[1:-1], d=pts.shape[-1]), 2) * self.f.hess(v)
        return 2.0 * self.scale * eye

    def dmu2(self, pts, v, vp, x=None):
        """Second Lions derivative at the paired points ``(v[k], vp[k])``."""
        pts = _pts(pts)
        v = np.asarray(v, dtype=float)
        vp = np.asarray(vp, dtype=float)
        d = v.shape[-1]
        k = self.kind
        if k == "quadratic-mean":
            return 2.0 * self.f.grad(v)[..., :, None] * self.f.grad(vp)[..., None, :]
        if k == "double-integral":
            return -(self.f.hess(v - vp) + self.f.hess(vp - v))
        if k == "variance":
            return np.broadcast_to(-2.0 * np.eye(d), np.broadcast_shapes(v.shape, vp.shape) + (d,)).copy()
        return np.zeros(np.broadcast_shapes(v.shape, vp.shape) + (d,))

    def dmu2_factors(self, pts, x=None):
        """Separable form of ``dmu2`` at the cloud points themselves.

        Returns a list of ``(coef, G, H)`` with ``dmu2(pts[l], pts[m])[a, b] =
        sum coef * G[l, ..., a] * H[m, ..., b]``; ``coef`` is a scalar or a
        batch array.  An empty list means ``dmu2`` vanishes; ``None`` means no
        finite separable form is available.
        """
        pts = _pts(pts)
        k = self.kind
        if k == "quadratic-mean":
            g = self.f.grad(pts)
            return [(2.0, g, g)]
        if k == "variance":
            d = pts.shape[-1]
            out = []
            for c in range(d):
                e = np.zeros(d)
                e[c] = 1.0
                e = np.broadcast_to(e, pts.shape)
                out.append((-2.0, e, e))
            return out
        if k == "double-integral":
            return None
        return []

    # space derivatives ------------------------------------------------
    def dx(self, pts, x=None):
        pts = _pts(pts)
        batch, d = pts.shape[1:-1], pts.shape[-1]
        if self.x_free:
            return np.zeros(batch + (d,))
        return self._x_factor(x, batch, 1) * _bcast(self.inner_mean(pts), 1)

    def dxx(self, pts, x=None):
        pts = _pts(pts)
        batch, d = pts.shape[1:-1], pts.shape[-1]
        if self.x_free:
            return np.zeros(batch + (d, d))
        return self._x_factor(x, batch, 2) * _bcast(self.inner_mean(pts), 2)

    def dxdmu(self, pts, v, x=None):
        pts = _pts(pts)
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        if self.x_free:
            return np.zeros(v.shape + (d,))
        ga = self._x_factor(x, pts.shape[1:-1], 1)
        return ga[None, ..., :, None] * self.f.grad(v)[..., None, :]

    # serialisation ----------------------------------------------------
    def to_dict(self):
        out = {"kind": self.kind}
        if self.f is not None:
            out["f"] = self.f.to_dict()
        if self.a is not None:
            out["a"] = self.a.to_dict()
        if self.kind == "second-moment":
            out["scale"] = self.scale
        return out


def functional_from_dict(spec) -> MeasureFunctional:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InvalidArgument("functional spec needs a 'kind'")
    kind = spec["kind"]
    if kind not in FUNCTIONAL_KINDS:
        raise InvalidArgument(f"unknown functional kind {kind!r}")
    f = InnerFunction.from_dict(spec["f"]) if "f" in spec else None
    a = InnerFunction.from_dict(spec["a"]) if "a" in spec else None
    return MeasureFunctional(kind, f=f, a=a, scale=spec.get("scale", 1.0))


# single-point convenience API -----------------------------------------

def _cloud(mu):
    return mu.points if isinstance(mu, EmpiricalMeasure) else _pts(mu)


def eval_functional(F: MeasureFunctional, x, mu) -> float:
    """``u(x, mu)`` on an empirical measure."""
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return float(F.value(_cloud(mu), xx))


def lions_derivative(F: MeasureFunctional, mu, v, x=None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return F.dmu(_cloud(mu), v[None], xx)[0]


def lions_hessian_v(F: MeasureFunctional, mu, v, x=None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return F.dvdmu(_cloud(mu), v[None], xx)[0]


def lions_second(F: MeasureFunctional, mu, v, vp, x=None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    vp = np.atleast_1d(np.asarray(vp, dtype=float))
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return F.dmu2(_cloud(mu), v[None], vp[None], xx)[0]


def space_derivatives(F: MeasureFunctional, x, mu, v=None):
    """``(dx, dxx, dxdmu(v))``; the last entry is None when ``v`` is not given."""
    pts = _cloud(mu)
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    dxdmu = None
    if v is not None:
        vv = np.atleast_1d(np.asarray(v, dtype=float))
        dxdmu = F.dxdmu(pts, vv[None], xx)[0]
    return F.dx(pts, xx), F.dxx(pts, xx), dxdmu


def require_separable(F: MeasureFunctional, pts, x=None):
    fac = F.dmu2_factors(pts, x)
    if fac is None:
        raise UnsupportedOperation(f"{F.kind} has no separable second Lions derivative")
    return fac
