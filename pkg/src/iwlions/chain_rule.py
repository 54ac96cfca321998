"""Term-by-term discretised chain rules for random fields along measure flows.

One engine computes every candidate term on the shared grid with left-point
sums; each theorem then selects its stable term schema.  Twin-space
expectations are replaced by ensemble averages over the particle cloud:
a plain average for single expectations and an ordered-pair U-statistic
(diagonal excluded) for the double expectation in the ``dmu2`` term.

Trace terms are computed as elementwise sums ``sum(A * B)`` with the index
conventions of :mod:`iwlions.functionals` (derivative index first), which is
``Tr(A B^T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BrownianPath
from .errors import InvalidArgument, UnsupportedOperation
from .fields import ItoRandomField
from .sde import ParticleCloudPath, StatePath, shared_record

__all__ = [
    "THEOREMS",
    "SCHEMAS",
    "ExpansionReport",
    "EnsembleExpectationEstimator",
    "expand_ito_wentzell_classic",
    "expand_ito_lions",
    "expand_full_flow_measure",
    "expand_full_flow_joint",
    "expand_conditional_ito_lions",
    "expand_conditional_measure",
    "expand_conditional_joint",
    "expand",
    "residual",
    "term_ablation",
]

SCHEMAS = {
    "IW-classic": ("phi_dt", "psi_dW", "dxu_beta_dt", "dxu_gamma_dW", "hess_x_dt", "dxpsi_gamma_dt"),
    "IW-reduced": ("phi_dt", "psi_dW", "dxu_beta_dt", "dxu_gamma_dW", "hess_x_dt", "dxpsi_gamma_dt"),
    "IL-full": ("phi_dt", "dxu_beta_dt", "dxu_gamma_dW", "hess_x_dt", "dmu_b_dt", "dv_dmu_sigma_dt"),
    "IWL-full-measure": ("phi_dt", "psi_dW", "dmu_b_dt", "dv_dmu_sigma_dt"),
    "IWL-full-joint": ("phi_dt", "psi_dW", "dxu_gamma_dW", "dxpsi_gamma_dt", "dxu_beta_dt", "hess_x_dt",
                       "dmu_b_dt", "dv_dmu_sigma_dt"),
    "IL-conditional": ("phi_dt", "dxu_beta_dt", "dxu_gamma0_dW0", "dxu_gamma1_dW1", "hess_x_dt", "dmu_b_dt",
                       "sigma0_dmu_dW0", "dv_dmu_sigma_dt", "dx_dmu_gamma0_dt", "dmu2_sigma0_dt"),
    "IWL-conditional-measure": ("phi_dt", "psi0_dW0", "psi1_dW1", "dmu_b_dt", "sigma0_dmu_dW0",
                                "dv_dmu_sigma_dt", "dmu2_sigma0_dt", "dmu_psi0_sigma0_dt"),
    "IWL-conditional-joint": ("phi_dt", "psi0_dW0", "psi1_dW1", "dxu_beta_dt", "dxu_gamma0_dW0",
                              "dxu_gamma1_dW1", "hess_x_dt", "dxpsi0_gamma0_dt", "dxpsi1_gamma1_dt",
                              "dmu_b_dt", "sigma0_dmu_dW0", "dv_dmu_sigma_dt", "dmu2_sigma0_dt",
                              "dx_dmu_gamma0_dt", "dmu_psi0_sigma0_dt"),
}
THEOREMS = tuple(SCHEMAS)

@dataclass
class ExpansionReport:
    """LHS increment, named RHS terms and the residual ``lhs - sum(terms)``.

    Sums over terms use :func:`math.fsum` in schema order, so the residual is
    a deterministic function of the stored fields.
    """

    theorem: str
    lhs: float
    terms: dict
    meta: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.lhs - math.fsum(self.terms.values())

    @property
    def term_sum(self) -> float:
        return math.fsum(self.terms.values())

    def ablation(self, term: str) -> float:
        return term_ablation(self, term)

    def as_row(self) -> dict:
        return {"lhs": self.lhs, **self.terms, "residual": self.residual}


def residual(report: ExpansionReport) -> float:
    return report.residual


def term_ablation(report: ExpansionReport, term: str) -> float:
    """Residual with ``term`` left out of the right-hand side."""
    if term not in report.terms:
        raise InvalidArgument(f"term {term!r} not in the {report.theorem} schema")
    return report.lhs - math.fsum(v for k, v in report.terms.items() if k != term)


@dataclass(frozen=True)
class EnsembleExpectationEstimator:
    """Ensemble stand-in for twin-space expectations.

    ``full-average``: mean over particles (axis 0).
    ``u-statistic-pairs``: mean over ordered pairs ``l != l'``.
    """

    mode: str = "full-average"

    def __post_init__(self):
        if self.mode not in ("full-average", "u-statistic-pairs"):
            raise InvalidArgument(f"unknown estimator mode {self.mode!r}")

    def mean(self, values):
        return np.asarray(values).mean(axis=0)

    def pair_mean_separable(self, g, h):
        """Mean of ``g[l] . h[m]`` over ``l != m`` for per-particle vectors ``(N, *B, d)``."""
        N = g.shape[0]
        if N < 2:
            raise InvalidArgument("pair average needs at least two particles")
        total = np.einsum("...d,...d->...", g.sum(axis=0), h.sum(axis=0))
        diag = np.einsum("n...d,n...d->...", g, h)
        return (total - diag) / (N * (N - 1))

    def pair_mean_kernel(self, kernel, N):
        """Mean of ``kernel(l, m)`` over ``l != m``; ``kernel`` maps index arrays to values."""
        if N < 2:
            raise InvalidArgument("pair average needs at least two particles")
        acc = 0.0
        for l in range(N):
            m = np.delete(np.arange(N), l)
            acc = acc + kernel(np.full(m.shape, l), m).sum(axis=0)
        return acc / (N * (N - 1))


def _constant_matrix(arr):
    """The common matrix of a record broadcast over its leading axes, else None."""
    return shared_record(arr, 2)


def _constant_vector(arr):
    return shared_record(arr, 1)


def _rmul(V, S):
    """Row vectors times a fixed matrix, ``V @ S``; scalar multiply when d = 1."""
    if S.shape == (1, 1):
        return V if S[0, 0] == 1.0 else V * S[0, 0]
    return V @ S


def _sum_dt(values, dt):
    return float(np.sum(values) * dt)


def _frob_mean(H, S):
    """``mean_l sum_ab H[l, i, a, b] * S[l, i, a, b]`` with cheap paths for broadcast records."""
    Sc = _constant_matrix(S)
    Hc = _constant_matrix(H)
    if Sc is not None and Hc is not None:
        return np.full(H.shape[1:-2], np.sum(Hc * Sc))
    if Sc is not None:
        return np.einsum("...ab,ab->...", H.mean(axis=0), Sc)
    return np.einsum("n...ab,n...ab->...", H, S) / H.shape[0]


def _outer(A, B):
    """``A B^T`` for stacks of matrices, staying broadcast for constant records."""
    Ac, Bc = _constant_matrix(A), _constant_matrix(B)
    if Ac is not None and Bc is not None:
        return np.broadcast_to(Ac @ Bc.T, np.broadcast_shapes(A.shape, B.shape))
    return np.einsum("...ij,...kj->...ik", A, B)


class _Engine:
    """Shared computation of all candidate terms for one realisation."""

    def __init__(self, fp, grid, X: StatePath = None, cloud: ParticleCloudPath = None, common=None):
        self.fp = fp
        self.grid = grid
        self.X = X
        self.cloud = cloud
        self.M = grid.M
        self.dt = grid.dt
        self.d = fp.d
        self.idx = np.arange(self.M)
        self.est = EnsembleExpectationEstimator()
        if cloud is not None:
            self.pts = cloud.Y[:, : self.M, :]
            self.pts_end = cloud.Y[:, [0, self.M], :]
        else:
            self.pts = np.zeros((1, self.M, self.d))
            self.pts_end = np.zeros((1, 2, self.d))
        self.x = None if X is None else X.values[: self.M]
        self.x_end = None if X is None else X.values[[0, self.M]]
        self.common = common

    # -- lhs --------------------------------------------------------------
    def lhs(self):
        vals = self.fp.value(np.array([0, self.M]), self.pts_end, self.x_end)
        return float(vals[1] - vals[0])

    # -- field dynamics -----------------------------------------------------
    def phi(self):
        return _sum_dt(self.fp.phi(self.idx, self.pts, self.x), self.dt)

    def psi(self, channel, dW):
        p = self.fp.psi(channel, self.idx, self.pts, self.x)
        return float(np.sum(np.einsum("md,md->m", p, dW)))

    # -- space terms --------------------------------------------------------
    def dxu(self):
        if not hasattr(self, "_dxu"):
            self._dxu = self.fp.dx(self.idx, self.pts, self.x)
        return self._dxu

    def dxu_beta(self):
        return _sum_dt(np.einsum("md,md->m", self.dxu(), self.X.beta), self.dt)

    def dxu_gamma(self, k, dW):
        g = self.X.gamma[k]
        incr = np.einsum("mij,mj->mi", g, dW)
        return float(np.sum(np.einsum("md,md->m", self.dxu(), incr)))

    def hess_x(self):
        H = self.fp.dxx(self.idx, self.pts, self.x)
        S = sum(_outer(g, g) for g in self.X.gamma)
        return 0.5 * _sum_dt(np.einsum("mab,mab->m", H, S), self.dt)

    def dxpsi_gamma(self, channel, k):
        D = self.fp.dxpsi(channel, self.idx, self.pts, self.x)
        return _sum_dt(np.einsum("mab,mab->m", D, self.X.gamma[k]), self.dt)

    # -- measure terms ------------------------------------------------------
    def dmu(self):
        if not hasattr(self, "_dmu"):
            self._dmu = self.fp.dmu(self.idx, self.pts, self.pts, self.x)
        return self._dmu

    def dmu_b(self):
        b = self.cloud.b
        bc = _constant_vector(b)
        if bc is not None:
            return _sum_dt(self.dmu().mean(axis=0) @ bc, self.dt)
        return _sum_dt(np.einsum("nmd,nmd->m", self.dmu(), b) / self.cloud.N, self.dt)

    def sigma0_dmu(self, dW0):
        s0 = self.cloud.sigma0
        sc = _constant_matrix(s0)
        if sc is not None:
            avg = _rmul(self.dmu().mean(axis=0), sc)  # (sigma0^T dmu)_j = sum_k dmu_k sigma0[k, j]
        else:
            avg = np.einsum("nmk,nmkj->mj", self.dmu(), s0) / self.cloud.N
        return float(np.sum(np.einsum("mj,mj->m", avg, dW0)))

    def particle_martingale(self):
        """``sum_i mean_l dmu u(Y^l) . sigma^l dW^l`` (vanishes as N grows)."""
        c = self.cloud
        sc = _constant_matrix(c.sigma)
        if sc is not None:
            incr = _rmul(c.dW, sc.T)
        else:
            incr = np.einsum("nmij,nmj->nmi", c.sigma, c.dW)
        return float(np.sum(np.einsum("nmd,nmd->m", self.dmu(), incr)) / c.N)

    def dvdmu(self):
        if self._dvdmu_zero():
            return 0.0
        c = self.cloud
        S = _outer(c.sigma, c.sigma)
        if c.sigma0 is not None:
            S0 = _outer(c.sigma0, c.sigma0)
            Sc, S0c = _constant_matrix(S), _constant_matrix(S0)
            if Sc is not None and S0c is not None:
                S = np.broadcast_to(Sc + S0c, S.shape)
            else:
                S = S + S0
        H = self.fp.dvdmu(self.idx, self.pts, self.pts, self.x)
        return 0.5 * _sum_dt(_frob_mean(H, S), self.dt)

    def _dvdmu_zero(self):
        fp = self.fp
        terms = []
        if fp._use_F:
            terms.append(fp.field.F)
        if fp._use_G:
            terms.append(fp.field.G)
        # second-order pieces vanish for mean-type functionals with affine inner function
        return all(t.kind in ("linear", "product", "quadratic-mean") and _affine(t.f) for t in terms)

    def dmu2(self):
        c = self.cloud
        s0 = c.sigma0
        fac = self.fp.dmu2_factors(self.idx, self.pts, self.x)
        if fac is not None and not fac:
            return 0.0
        if c.N < 2:
            raise InvalidArgument("the pair-averaged term needs N >= 2")
        sc = _constant_matrix(s0)
        if fac is not None:
            total = np.zeros(self.M)
            for coef, G, H in fac:
                if sc is not None:
                    g = _rmul(G, sc)  # sigma0^T G as a row vector
                    h = g if H is G else _rmul(H, sc)
                else:
                    g = np.einsum("nmk,nmkj->nmj", G, s0)
                    h = np.einsum("nmk,nmkj->nmj", H, s0)
                total = total + coef * self.est.pair_mean_separable(g, h)
            return 0.5 * _sum_dt(total, self.dt)
        # brute force over ordered pairs
        pts, fp, idx, x = self.pts, self.fp, self.idx, self.x

        def kernel(l, m):
            D = fp.dmu2(idx, pts, pts[l], pts[m], x)
            S = _outer(np.asarray(s0)[l], np.asarray(s0)[m])
            return np.einsum("k...ab,k...ab->k...", D, S)

        return 0.5 * _sum_dt(self.est.pair_mean_kernel(kernel, c.N), self.dt)

    def dxdmu_gamma0(self):
        if self.fp.field.x_free:
            return 0.0
        C = self.fp.dxdmu(self.idx, self.pts, self.pts, self.x)
        g0 = self.X.gamma[0]
        S = _outer(np.broadcast_to(g0, (self.cloud.N,) + g0.shape), self.cloud.sigma0)
        return _sum_dt(_frob_mean(C, S), self.dt)

    def dmupsi0(self):
        D = self.fp.dmupsi("W0", self.idx, self.pts, self.pts, self.x)
        return _sum_dt(_frob_mean(D, self.cloud.sigma0), self.dt)


def _affine(f):
    if f is None:
        return True
    return all(r.profile == "poly" and not any(r.params[2:]) for r in f.ridges)


# ---------------------------------------------------------------------------
# validation helpers

def _same_grid(*objs):
    grids = [o.grid for o in objs if o is not None]
    if any(g != grids[0] for g in grids[1:]):
        raise InvalidArgument("inputs live on different time grids")


def _same_path(a: BrownianPath, b: BrownianPath, what):
    if a is b:
        return
    if a.grid != b.grid or not np.array_equal(a.increments, b.increments):
        raise InvalidArgument(f"{what} must be the same Brownian path")


def _check_x(X, noises, what="X"):
    if X is None:
        raise InvalidArgument(f"{what} path is required")
    if len(X.noises) != len(noises):
        raise InvalidArgument(f"{what} is driven by {len(X.noises)} noise(s), expected {len(noises)}")
    for a, b in zip(X.noises, noises):
        _same_path(a, b, f"{what}'s driving noise and the supplied noise")


def _meta(theorem, grid, cloud=None, extra=None):
    meta = {"theorem": theorem, "T": grid.T, "M": grid.M, "N": 0 if cloud is None else cloud.N}
    if cloud is not None and "replication" in cloud.meta:
        meta["replication"] = cloud.meta["replication"]
    meta.update(extra or {})
    return meta


def _report(theorem, eng, values, diagnostics=None, meta=None):
    terms = {name: float(values.get(name, 0.0)) for name in SCHEMAS[theorem]}
    return ExpansionReport(theorem, eng.lhs(), terms, meta or {}, diagnostics or {})


def _measure_terms(eng, conditional, dW0=None):
    out = {"dmu_b_dt": eng.dmu_b(), "dv_dmu_sigma_dt": eng.dvdmu()}
    if conditional:
        out["sigma0_dmu_dW0"] = eng.sigma0_dmu(dW0)
        out["dmu2_sigma0_dt"] = eng.dmu2()
        out["dmu_psi0_sigma0_dt"] = eng.dmupsi0()
    return out


def _diag(eng):
    return {"particle_dW": eng.particle_martingale()}


# ---------------------------------------------------------------------------
# public evaluators

def expand_ito_wentzell_classic(field: ItoRandomField, X: StatePath, W: BrownianPath,
                                theorem: str = "IW-classic") -> ExpansionReport:
    """Itô-Wentzell for a field ``V_t(x)`` without measure dependence."""
    if theorem not in ("IW-classic", "IW-reduced"):
        raise InvalidArgument(f"{theorem!r} is not an Itô-Wentzell schema")
    if field.mode != "single":
        raise InvalidArgument("classic Itô-Wentzell needs a single-noise field")
    if not field.mu_free:
        raise InvalidArgument("classic Itô-Wentzell needs a field without measure dependence")
    _same_grid(X, W)
    _check_x(X, (W,))
    fp = field.along(W)
    eng = _Engine(fp, W.grid, X=X)
    dW = W.increments
    values = {
        "phi_dt": eng.phi(),
        "psi_dW": eng.psi("W", dW),
        "dxu_beta_dt": eng.dxu_beta(),
        "dxu_gamma_dW": eng.dxu_gamma(0, dW),
        "hess_x_dt": eng.hess_x(),
        "dxpsi_gamma_dt": eng.dxpsi_gamma("W", 0),
    }
    return _report(theorem, eng, values, meta=_meta(theorem, W.grid))


def expand_ito_lions(field: ItoRandomField, X: StatePath, cloud: ParticleCloudPath) -> ExpansionReport:
    """Itô-Lions for a deterministic (noise-free) time-dependent functional."""
    theorem = "IL-full"
    if field.is_noisy:
        raise InvalidArgument("Itô-Lions needs a deterministic field (no noise coefficients)")
    if cloud.mode != "full":
        raise InvalidArgument("conditional cloud supplied; use the conditional evaluators")
    if X is None or len(X.noises) != 1:
        raise InvalidArgument("Itô-Lions needs X driven by a single Brownian motion")
    _same_grid(X, cloud)
    W = X.noises[0]
    fp = field.along(W) if field.mode == "single" else field.along((W, W))
    eng = _Engine(fp, cloud.grid, X=X, cloud=cloud)
    values = {
        "phi_dt": eng.phi(),
        "dxu_beta_dt": eng.dxu_beta(),
        "dxu_gamma_dW": eng.dxu_gamma(0, W.increments),
        "hess_x_dt": eng.hess_x(),
        **_measure_terms(eng, False),
    }
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, cloud.grid, cloud))


def expand_full_flow_measure(field: ItoRandomField, cloud: ParticleCloudPath, W: BrownianPath) -> ExpansionReport:
    theorem = "IWL-full-measure"
    if field.mode != "single":
        raise InvalidArgument("two-noise field supplied; use the conditional evaluators")
    if cloud.mode != "full":
        raise InvalidArgument("conditional cloud supplied; use the conditional evaluators")
    if not field.x_free:
        raise InvalidArgument("field depends on x; use expand_full_flow_joint")
    _same_grid(cloud, W)
    eng = _Engine(field.along(W), W.grid, cloud=cloud)
    values = {"phi_dt": eng.phi(), "psi_dW": eng.psi("W", W.increments), **_measure_terms(eng, False)}
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, W.grid, cloud))


def expand_full_flow_joint(field: ItoRandomField, X: StatePath, cloud: ParticleCloudPath,
                           W: BrownianPath) -> ExpansionReport:
    theorem = "IWL-full-joint"
    if field.mode != "single":
        raise InvalidArgument("two-noise field supplied; use the conditional evaluators")
    if cloud.mode != "full":
        raise InvalidArgument("conditional cloud supplied; use the conditional evaluators")
    _same_grid(X, cloud, W)
    _check_x(X, (W,))
    eng = _Engine(field.along(W), W.grid, X=X, cloud=cloud)
    dW = W.increments
    values = {
        "phi_dt": eng.phi(),
        "psi_dW": eng.psi("W", dW),
        "dxu_gamma_dW": eng.dxu_gamma(0, dW),
        "dxpsi_gamma_dt": eng.dxpsi_gamma("W", 0),
        "dxu_beta_dt": eng.dxu_beta(),
        "hess_x_dt": eng.hess_x(),
        **_measure_terms(eng, False),
    }
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, W.grid, cloud))


def _conditional_common(field, cloud, W0, W1, need_two=True):
    if need_two and field.mode != "two":
        raise InvalidArgument("single-noise field supplied; the conditional evaluators need a two-noise field")
    if cloud.mode != "conditional":
        raise InvalidArgument("full-flow cloud supplied; the conditional evaluators need a conditional cloud")
    _same_grid(cloud, W0, W1)
    _same_path(cloud.common, W0, "the cloud's common noise and W0")


def expand_conditional_ito_lions(field: ItoRandomField, X: StatePath, cloud: ParticleCloudPath,
                                 W0: BrownianPath, W1: BrownianPath) -> ExpansionReport:
    """Conditional Itô-Lions for a deterministic functional."""
    theorem = "IL-conditional"
    if field.is_noisy:
        raise InvalidArgument("conditional Itô-Lions needs a deterministic field")
    _conditional_common(field, cloud, W0, W1, need_two=False)
    _check_x(X, (W0, W1))
    eng = _Engine(field.as_two_noise().along((W0, W1)), W0.grid, X=X, cloud=cloud)
    values = {
        "phi_dt": eng.phi(),
        "dxu_beta_dt": eng.dxu_beta(),
        "dxu_gamma0_dW0": eng.dxu_gamma(0, W0.increments),
        "dxu_gamma1_dW1": eng.dxu_gamma(1, W1.increments),
        "hess_x_dt": eng.hess_x(),
        "dx_dmu_gamma0_dt": eng.dxdmu_gamma0(),
        **_measure_terms(eng, True, W0.increments),
    }
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, W0.grid, cloud))


def expand_conditional_measure(field: ItoRandomField, cloud: ParticleCloudPath, W0: BrownianPath,
                               W1: BrownianPath) -> ExpansionReport:
    theorem = "IWL-conditional-measure"
    _conditional_common(field, cloud, W0, W1)
    if not field.x_free:
        raise InvalidArgument("field depends on x; use expand_conditional_joint")
    eng = _Engine(field.along((W0, W1)), W0.grid, cloud=cloud)
    values = {
        "phi_dt": eng.phi(),
        "psi0_dW0": eng.psi("W0", W0.increments),
        "psi1_dW1": eng.psi("W1", W1.increments),
        **_measure_terms(eng, True, W0.increments),
    }
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, W0.grid, cloud))


def expand_conditional_joint(field: ItoRandomField, X: StatePath, cloud: ParticleCloudPath,
                             W0: BrownianPath, W1: BrownianPath) -> ExpansionReport:
    theorem = "IWL-conditional-joint"
    _conditional_common(field, cloud, W0, W1)
    _check_x(X, (W0, W1))
    eng = _Engine(field.along((W0, W1)), W0.grid, X=X, cloud=cloud)
    values = {
        "phi_dt": eng.phi(),
        "psi0_dW0": eng.psi("W0", W0.increments),
        "psi1_dW1": eng.psi("W1", W1.increments),
        "dxu_beta_dt": eng.dxu_beta(),
        "dxu_gamma0_dW0": eng.dxu_gamma(0, W0.increments),
        "dxu_gamma1_dW1": eng.dxu_gamma(1, W1.increments),
        "hess_x_dt": eng.hess_x(),
        "dxpsi0_gamma0_dt": eng.dxpsi_gamma("W0", 0),
        "dxpsi1_gamma1_dt": eng.dxpsi_gamma("W1", 1),
        "dx_dmu_gamma0_dt": eng.dxdmu_gamma0(),
        **_measure_terms(eng, True, W0.increments),
    }
    return _report(theorem, eng, values, _diag(eng), _meta(theorem, W0.grid, cloud))


def expand(theorem: str, field: ItoRandomField, *, X=None, cloud=None, W=None, W0=None, W1=None):
    """Dispatch by theorem id."""
    if theorem in ("IW-classic", "IW-reduced"):
        return expand_ito_wentzell_classic(field, X, W, theorem)
    if theorem == "IL-full":
        return expand_ito_lions(field, X, cloud)
    if theorem == "IWL-full-measure":
        return expand_full_flow_measure(field, cloud, W)
    if theorem == "IWL-full-joint":
        return expand_full_flow_joint(field, X, cloud, W)
    if theorem == "IL-conditional":
        return expand_conditional_ito_lions(field, X, cloud, W0, W1)
    if theorem == "IWL-conditional-measure":
        return expand_conditional_measure(field, cloud, W0, W1)
    if theorem == "IWL-conditional-joint":
        return expand_conditional_joint(field, X, cloud, W0, W1)
    raise InvalidArgument(f"unknown theorem id {theorem!r}")
