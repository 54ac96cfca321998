"""Itô random fields u_t(x, mu) with explicit dynamics.

Every catalogue field has the form

    u_t(x, mu) = a_t * F(x, mu) + S_t * G(x, mu)

where ``a_t`` is a scalar modulation driven by the grid or by one noise
channel, and ``S_t = c . W^ch_t`` is a loading on one noise channel.  The drift
and diffusion coefficients then read

    phi_t = (da_t/dt) F,      psi^ch_t = lam a_t F + c G

on the channel(s) concerned.  The pathwise integrated values are kept as left
point sums so that ``field_value`` is literally
``f + sum phi dt + sum psi . dW`` at a frozen argument.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import BrownianPath, EmpiricalMeasure
from .errors import InvalidArgument
from .functionals import MeasureFunctional, functional_from_dict

__all__ = [
    "FIELD_KINDS",
    "ItoRandomField",
    "FieldPath",
    "make_ito_field",
    "field_value",
    "field_from_dict",
]

FIELD_KINDS = ("static", "drift-ramp", "exponential-martingale", "linear-noise", "mean-times-common-noise")
SINGLE_CHANNELS = ("W",)
TWO_CHANNELS = ("W0", "W1")


def _vec(a):
    a = np.asarray(a, dtype=float)
    return a.tolist() if a.ndim else float(a)


@dataclass(frozen=True)
class ItoRandomField:
    """Catalogue field; build through :func:`make_ito_field`.

    ``modulation`` is ``none``, ``ramp`` (``a_t = 1 + t^2/2``) or ``exp``
    (``da = a lam . dW^ch``).  ``G``/``c`` describe the noise loading.
    """

    kind: str
    F: MeasureFunctional
    modulation: str = "none"
    lam: object = 0.0
    G: MeasureFunctional = None
    c: object = 0.0
    channel: str = "W"
    mode: str = "single"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InvalidArgument(f"unknown field kind {self.kind!r}")
        allowed = SINGLE_CHANNELS if self.mode == "single" else TWO_CHANNELS
        if self.mode not in ("single", "two"):
            raise InvalidArgument(f"field mode must be 'single' or 'two', got {self.mode!r}")
        if self.channel not in allowed:
            raise InvalidArgument(f"channel {self.channel!r} not available in {self.mode}-noise mode")
        object.__setattr__(self, "lam", _vec(self.lam))
        object.__setattr__(self, "c", _vec(self.c))

    @property
    def channels(self):
        return SINGLE_CHANNELS if self.mode == "single" else TWO_CHANNELS

    @property
    def has_loading(self) -> bool:
        return self.G is not None and np.any(np.asarray(self.c) != 0.0)

    @property
    def is_noisy(self) -> bool:
        return self.modulation == "exp" or self.has_loading

    @property
    def x_free(self) -> bool:
        return self.F.x_free and (self.G is None or self.G.x_free)

    @property
    def mu_free(self) -> bool:
        return self.F.mu_free and (self.G is None or self.G.mu_free)

    def as_two_noise(self, channel: str = "W1") -> "ItoRandomField":
        """The same field driven by ``channel`` of a two-noise setting."""
        if self.mode == "two":
            return self
        return replace(self, mode="two", channel=channel)

    def along(self, noises) -> "FieldPath":
        return FieldPath(self, _noise_map(self, noises))

    def to_dict(self):
        out = {"kind": self.kind, "mode": self.mode, "channel": self.channel, "F": self.F.to_dict()}
        if self.modulation == "exp":
            out["lam"] = self.lam
        if self.G is not None:
            out["G"] = self.G.to_dict()
            out["c"] = self.c
        return out


def make_ito_field(kind: str, F: MeasureFunctional = None, *, lam=1.0, G: MeasureFunctional = None,
                   c=1.0, channel: str = None, mode: str = None) -> ItoRandomField:
    """Build a catalogue field.

    ``static``                  u_t = F
    ``drift-ramp``              u_t = F (1 + t^2/2),        phi_t = t F
    ``exponential-martingale``  u_t = F exp(lam.W_t - |lam|^2 t/2),  psi_t = lam u_t
    ``linear-noise``            u_t = F + (c.W_t) G,        psi_t = c G   (G defaults to 1)
    ``mean-times-common-noise`` u_t = (c.W0_t) G,           psi0_t = c G  (G defaults to the mean)
    """
    if kind not in FIELD_KINDS:
        raise InvalidArgument(f"unknown field kind {kind!r}")
    F = F if F is not None else MeasureFunctional.zero()
    if kind == "static":
        return ItoRandomField(kind, F, mode=mode or "single", channel=channel or _default_channel(mode))
    if kind == "drift-ramp":
        return ItoRandomField(kind, F, modulation="ramp", mode=mode or "single",
                              channel=channel or _default_channel(mode))
    if kind == "exponential-martingale":
        return ItoRandomField(kind, F, modulation="exp", lam=lam, mode=mode or "single",
                              channel=channel or _default_channel(mode))
    if kind == "linear-noise":
        G = G if G is not None else MeasureFunctional.constant(1.0)
        return ItoRandomField(kind, F, G=G, c=c, mode=mode or "single", channel=channel or _default_channel(mode))
    G = G if G is not None else MeasureFunctional.mean()
    return ItoRandomField(kind, F, G=G, c=c, mode="two", channel=channel or "W0")


def _default_channel(mode):
    return "W1" if mode == "two" else "W"


def _noise_map(field, noises):
    if isinstance(noises, BrownianPath):
        noises = {"W": noises} if field.mode == "single" else None
        if noises is None:
            raise InvalidArgument("two-noise field needs both W0 and W1")
    elif isinstance(noises, (tuple, list)):
        names = field.channels
        if len(noises) != len(names):
            raise InvalidArgument(f"expected {len(names)} driving paths, got {len(noises)}")
        noises = dict(zip(names, noises))
    noises = dict(noises)
    for ch in field.channels:
        if ch not in noises:
            raise InvalidArgument(f"missing driving path {ch!r} for {field.mode}-noise field")
    grids = {noises[ch].grid for ch in field.channels}
    if len(grids) != 1:
        raise InvalidArgument("driving paths live on different grids")
    return {ch: noises[ch] for ch in field.channels}


class FieldPath:
    """A field realised along given driving paths.

    Evaluators take time indices ``idx`` (any int array shape ``B``), cloud
    points ``pts`` of shape ``(N, *B, d)`` and ``x`` of shape ``(*B, d)``.
    """

    def __init__(self, field: ItoRandomField, noises: dict):
        self.field = field
        self.noises = noises
        first = noises[field.channels[0]]
        self.grid = first.grid
        self.d = first.dim
        M, dt, t = self.grid.M, self.grid.dt, self.grid.nodes
        own = noises[field.channel]
        if field.modulation == "none":
            a = np.ones(M + 1)
            self.phi_rate = np.zeros(M)
        elif field.modulation == "ramp":
            a = np.cumsum(np.concatenate([[1.0], t[:-1] * dt]))
            self.phi_rate = t[:-1].copy()
        else:
            lam = np.broadcast_to(np.asarray(field.lam, dtype=float), (self.d,))
            a = np.cumprod(np.concatenate([[1.0], 1.0 + own.increments @ lam]))
            self.phi_rate = np.zeros(M)
        self.a = a
        self.lam = np.broadcast_to(np.asarray(field.lam, dtype=float), (self.d,)) \
            if field.modulation == "exp" else np.zeros(self.d)
        self.c = np.broadcast_to(np.asarray(field.c, dtype=float), (self.d,)) \
            if field.G is not None else np.zeros(self.d)
        if field.G is not None:
            self.S = np.cumsum(np.concatenate([[0.0], own.increments @ self.c]))
        else:
            self.S = np.zeros(M + 1)
        self._use_F = not field.F.is_zero
        self._use_G = field.G is not None and not field.G.is_zero and np.any(self.c != 0.0)

    # helpers -----------------------------------------------------------
    def _combine(self, idx, fF, fG, tail, template):
        out = None
        if self._use_F:
            out = fF()
            if self.field.modulation != "none":
                out = self.a[idx].reshape(np.shape(idx) + (1,) * tail) * out
        if self._use_G:
            g = self.S[idx].reshape(np.shape(idx) + (1,) * tail) * fG()
            out = g if out is None else out + g
        return np.zeros(template) if out is None else out

    @staticmethod
    def _batch(pts):
        return pts.shape[1:-1]

    # values and derivatives -------------------------------------------
    def value(self, idx, pts, x=None):
        idx = np.asarray(idx)
        F, G = self.field.F, self.field.G
        return self._combine(idx, lambda: F.value(pts, x), lambda: G.value(pts, x), 0, self._batch(pts))

    def phi(self, idx, pts, x=None):
        idx = np.asarray(idx)
        if self.field.modulation != "ramp" or not self._use_F:
            return np.zeros(self._batch(pts))
        return self.phi_rate[idx] * self.field.F.value(pts, x)

    def psi(self, channel, idx, pts, x=None):
        """Diffusion coefficient on ``channel``, shape ``(*B, d)``."""
        idx = np.asarray(idx)
        out = np.zeros(self._batch(pts) + (self.d,))
        if channel != self.field.channel:
            return out
        if self.field.modulation == "exp" and self._use_F:
            out = out + (self.a[idx] * self.field.F.value(pts, x))[..., None] * self.lam
        if self._use_G:
            out = out + self.field.G.value(pts, x)[..., None] * self.c
        return out

    def dx(self, idx, pts, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dx(pts, x), lambda: G.dx(pts, x), 1,
                             self._batch(pts) + (self.d,))

    def dxx(self, idx, pts, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dxx(pts, x), lambda: G.dxx(pts, x), 2,
                             self._batch(pts) + (self.d, self.d))

    def dmu(self, idx, pts, v, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dmu(pts, v, x), lambda: G.dmu(pts, v, x), 1,
                             np.shape(v))

    def dvdmu(self, idx, pts, v, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dvdmu(pts, v, x), lambda: G.dvdmu(pts, v, x), 2,
                             np.shape(v) + (self.d,))

    def dxdmu(self, idx, pts, v, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dxdmu(pts, v, x), lambda: G.dxdmu(pts, v, x), 2,
                             np.shape(v) + (self.d,))

    def dmu2_factors(self, idx, pts, x=None):
        """Separable factors of ``dmu2 u_t`` (see :meth:`MeasureFunctional.dmu2_factors`)."""
        idx = np.asarray(idx)
        out = []
        for use, fun, scale in ((self._use_F, self.field.F, self.a), (self._use_G, self.field.G, self.S)):
            if not use:
                continue
            fac = fun.dmu2_factors(pts, x)
            if fac is None:
                return None
            out.extend((coef * scale[idx], g, h) for coef, g, h in fac)
        return out

    def dmu2(self, idx, pts, v, vp, x=None):
        F, G = self.field.F, self.field.G
        return self._combine(np.asarray(idx), lambda: F.dmu2(pts, v, vp, x), lambda: G.dmu2(pts, v, vp, x), 2,
                             np.broadcast_shapes(np.shape(v), np.shape(vp)) + (self.d,))

    def dxpsi(self, channel, idx, pts, x=None):
        """``D[k, j] = d psi_j / d x_k`` on ``channel``, shape ``(*B, d, d)``."""
        idx = np.asarray(idx)
        out = np.zeros(self._batch(pts) + (self.d, self.d))
        if channel != self.field.channel:
            return out
        if self.field.modulation == "exp" and self._use_F and not self.field.F.x_free:
            out = out + self.a[idx][..., None, None] * self.field.F.dx(pts, x)[..., :, None] * self.lam
        if self._use_G and not self.field.G.x_free:
            out = out + self.field.G.dx(pts, x)[..., :, None] * self.c
        return out

    def dmupsi(self, channel, idx, pts, v, x=None):
        """``D[k, j] = (dmu psi_j(v))_k`` on ``channel``, shape ``(K, *B, d, d)``."""
        idx = np.asarray(idx)
        out = np.zeros(np.shape(v) + (self.d,))
        if channel != self.field.channel:
            return out
        if self.field.modulation == "exp" and self._use_F and not self.field.F.mu_free:
            out = out + self.a[idx][..., None, None] * self.field.F.dmu(pts, v, x)[..., :, None] * self.lam
        if self._use_G and not self.field.G.mu_free:
            out = out + self.field.G.dmu(pts, v, x)[..., :, None] * self.c
        return out

    # closed form ------------------------------------------------------
    def closed_form_modulation(self):
        """Exact ``a_t`` on the grid nodes (``a`` itself is its Euler/Riemann version)."""
        t = self.grid.nodes
        if self.field.modulation == "none":
            return np.ones_like(t)
        if self.field.modulation == "ramp":
            return 1.0 + 0.5 * t * t
        W = self.noises[self.field.channel].values
        return np.exp(W @ self.lam - 0.5 * float(self.lam @ self.lam) * t)

    def closed_form_value(self, i, pts, x=None):
        F, G = self.field.F, self.field.G
        out = self.closed_form_modulation()[i] * F.value(pts, x)
        if G is not None:
            out = out + float(self.noises[self.field.channel].values[i] @ self.c) * G.value(pts, x)
        return out


def field_value(field: ItoRandomField, i: int, x, mu, noises) -> float:
    """``u_{t_i}(x, mu) = f + sum_{j<i} phi_j dt + sum_{j<i} psi_j . dW_j`` at a frozen argument."""
    fp = field.along(noises)
    if not (isinstance(i, (int, np.integer)) and 0 <= i <= fp.grid.M):
        raise InvalidArgument(f"time index {i!r} is not on the grid 0..{fp.grid.M}")
    pts = mu.points if isinstance(mu, EmpiricalMeasure) else np.atleast_2d(np.asarray(mu, dtype=float))
    xx = None if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    return float(fp.value(i, pts, xx))


def field_from_dict(spec) -> ItoRandomField:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InvalidArgument("field spec needs a 'kind'")
    kind = spec["kind"]
    if kind not in FIELD_KINDS:
        raise InvalidArgument(f"unknown field kind {kind!r}")
    F = functional_from_dict(spec["F"]) if "F" in spec else None
    G = functional_from_dict(spec["G"]) if "G" in spec else None
    kw = {}
    for key in ("lam", "c", "channel", "mode"):
        if key in spec:
            kw[key] = spec[key]
    return make_ito_field(kind, F, G=G, **kw)
