"""Built-in oracle suites with pinned seeds and tolerances.

``projection``   finite-difference Lions derivatives against closed forms
``classic``      Itô-Wentzell for ``V_t(x) = x W_t`` along ``X = W``
``full``         full-flow second-moment oracle with a Gaussian cloud
``conditional``  ``(int v dmu)^2`` under common noise, plus the common-noise loading field
``ablation``     the four term-necessity oracles

Each suite returns a list of :class:`iwlions.checks.CheckResult`.  Monte Carlo
points are memoised in a :class:`SuiteContext`, so suites sharing a point
(for instance ``conditional`` and ``ablation``) simulate it once.
"""

from __future__ import annotations

import json
import math
import time
from importlib import resources

import numpy as np

from .chain_rule import (expand_conditional_joint, expand_full_flow_joint, expand_full_flow_measure,
                         expand_ito_wentzell_classic)
from .checks import CheckResult, evaluate_checks
from .config import ExperimentConfig, parse_config
from .core import SeedPolicy, make_time_grid, sample_brownian
from .errors import InvalidArgument
from .fields import make_ito_field
from .functionals import InnerFunction, MeasureFunctional, Ridge
from .harness import build_tables, mollification_study, run_replications
from .lions import numeric_lions_gradients, numeric_lions_second
from .sde import (CoefficientSpec, InitialSampler, simulate_conditional_particle_system, simulate_ito_process,
                  simulate_particle_system)

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

__all__ = ["SUITES", "SuiteContext", "builtin_config", "run_suite", "projection_checks", "reduction_checks",
           "mollification_checks", "catalogue", "classic_checks", "full_checks",
           "conditional_checks", "conditional_tables", "ablation_checks", "lhs_tracking_check"]

SUITES = ("projection", "classic", "full", "conditional", "ablation")
SLOPE_WINDOW = [0.35, 0.65]
SLOPE_M = (256, 1024, 4096)


def builtin_config(name: str) -> ExperimentConfig:
    """One of the TOML configs shipped in ``iwlions/suites``."""
    text = resources.files("iwlions").joinpath("suites", f"{name}.toml").read_text()
    return parse_config(_toml.loads(text))


def builtin_config_path(name: str):
    return resources.files("iwlions").joinpath("suites", f"{name}.toml")


class SuiteContext:
    """Memoises ladder points by ``(config, M, N, field labels)``."""

    def __init__(self, seed=None, fault: str = "", threads: int = 1):
        self.seed = seed
        self.fault = fault
        self.threads = threads
        self._cache = {}
        self.seconds = {}

    def config(self, name: str, **overrides) -> ExperimentConfig:
        """A built-in config with this context's seed and fault applied."""
        if self.seed is not None:
            overrides.setdefault("seed", self.seed)
        if self.fault:
            overrides.setdefault("fault", self.fault)
        cfg = builtin_config(name)
        return cfg.with_overrides(**overrides) if overrides else cfg

    def stats(self, cfg: ExperimentConfig, M: int, N: int, fields=None):
        labels = tuple(sorted(fields)) if fields else ("main",)
        key = (json.dumps(cfg.to_dict(), sort_keys=True), M, N, labels)
        if key not in self._cache:
            t0 = time.perf_counter()
            self._cache[key] = run_replications(cfg, M, N, fields, threads=self.threads)
            self.seconds[key] = time.perf_counter() - t0
        return self._cache[key]

    def tables(self, cfg: ExperimentConfig, fields=None):
        per_label = {}
        for M, N in cfg.ladder_points():
            for lab, st in self.stats(cfg, M, N, fields).items():
                per_label.setdefault(lab, []).append(st)
        return build_tables(cfg, per_label)


# ---------------------------------------------------------------------------
# projection identity

def catalogue(d: int) -> dict:
    """The six functional kinds with non-trivial inner functions in dimension ``d``."""
    w = tuple(np.ones(d) / np.sqrt(d))
    IF = InnerFunction
    return {
        "linear": MeasureFunctional.linear(IF((Ridge("poly", (0.3, -1.0, 0.5, 0.2, -0.05)),
                                               Ridge("trig", (1.0, 0.5, 1.3), w)))),
        "quadratic-mean": MeasureFunctional.quadratic_mean(IF((Ridge("poly", (0.0, 1.0, 0.5)),
                                                               Ridge("trig", (0.5, 1.0, 0.7), w)))),
        "double-integral": MeasureFunctional.double_integral(IF((Ridge("trig", (1.0, 0.0, 1.0)),
                                                                 Ridge("poly", (0.0, 0.0, 0.5))))),
        "variance": MeasureFunctional.variance(),
        "product": MeasureFunctional.product(IF.poly((1.0, 0.5, 0.25)), IF.trig(1.0, 1.0, 0.8)),
        "second-moment": MeasureFunctional.second_moment(0.7),
    }


def projection_checks(seed: int = 20240611, clouds: int = 20, sizes=(8, 64), dims=(1, 2),
                      first_tol: float = 1e-5, second_tol: float = 1e-3):
    """First and second Lions derivatives by finite differences of the empirical projection.

    First derivatives are checked at every particle; second derivatives at the
    index pairs ``(0,0), (1,1), (0,1), (N-1,2)`` covering both diagonal and
    off-diagonal stencils.
    """
    rng = np.random.default_rng(seed)
    worst1, worst2 = {}, {}
    for d in dims:
        cat = catalogue(d)
        for N in sizes:
            for _ in range(clouds):
                pts = rng.normal(size=(N, d))
                x = rng.normal(size=d)
                for name, F in cat.items():
                    e1 = float(np.max(np.abs(numeric_lions_gradients(F, pts, x=x) - F.dmu(pts, pts, x))))
                    e2 = 0.0
                    for j, k in ((0, 0), (1, 1), (0, 1), (N - 1, 2)):
                        est = numeric_lions_second(F, pts, j, k, x=x)
                        exact = F.dmu2(pts, pts[j][None], pts[k][None], x)[0]
                        e2 = max(e2, float(np.max(np.abs(est.dmu2 - exact))))
                        if j == k:
                            e2 = max(e2, float(np.max(np.abs(est.dvdmu - F.dvdmu(pts, pts[j][None], x)[0]))))
                    worst1[name] = max(worst1.get(name, 0.0), e1)
                    worst2[name] = max(worst2.get(name, 0.0), e2)
    out = []
    for name in worst1:
        out.append(CheckResult(f"first_derivative[{name}]", worst1[name] <= first_tol, worst1[name], first_tol))
        out.append(CheckResult(f"second_derivative[{name}]", worst2[name] <= second_tol, worst2[name], second_tol))
    return out


# ---------------------------------------------------------------------------
# Monte Carlo suites

def classic_checks(ctx: SuiteContext):
    cfg = ctx.config("classic")
    st = ctx.stats(cfg, cfg.M[-1], 1)["main"]
    point = {k: v for k, v in cfg.tolerances.items() if k not in ("slope_M",)}
    out = evaluate_checks(point, st)
    ladder = cfg.with_overrides(M=SLOPE_M)
    tab = ctx.tables(ladder)["main"]
    out += evaluate_checks({"slope_M": SLOPE_WINDOW}, tab.rows[-1], tab)
    return out


def full_checks(ctx: SuiteContext):
    cfg = ctx.config("full_gaussian")
    tab = ctx.tables(cfg)["main"]
    st = tab.row(cfg.M[-1], cfg.N[-1])
    out = evaluate_checks(cfg.tolerances, st)
    out += evaluate_checks({"slope_M": SLOPE_WINDOW, "monotone_N": True}, st, tab)
    if tab.corrected_slope_M is not None:
        # informational: the residual net of the particle martingale
        out += evaluate_checks({"chaos_corrected_slope_M": SLOPE_WINDOW}, st, tab)
    return out


def _conditional_fields(cfg):
    loading = builtin_config("common_noise_loading")
    return {"main": (cfg.theorem, cfg.build_field()), "loading": (loading.theorem, loading.build_field())}


def conditional_tables(ctx: SuiteContext):
    cfg = ctx.config("conditional_m2")
    return cfg, ctx.tables(cfg, _conditional_fields(cfg))


def lhs_tracking_check(cfg, st, tol=0.1):
    """RMS over replications of ``lhs - (W0_T)^2``; the empirical mean differs from W0_T by O(N^-1/2)."""
    policy = SeedPolicy(cfg.seed)
    grid = make_time_grid(cfg.T, st.M)
    diffs = []
    for rep in st.reports:
        w0 = sample_brownian(grid, cfg.d, policy.stream("W0", rep.meta["replication"]))
        diffs.append(rep.lhs - float(w0.values[-1, 0]) ** 2)
    rms = math.sqrt(math.fsum(np.square(diffs)) / len(diffs))
    return CheckResult("lhs_tracks_common_noise_square", rms <= tol, rms, tol, "rms of lhs - (W0_T)^2")


def conditional_checks(ctx: SuiteContext):
    cfg, tabs = conditional_tables(ctx)
    tab = tabs["main"]
    st = tab.row(cfg.M[-1], cfg.N[-1])
    out = evaluate_checks(cfg.tolerances, st, tab)
    out.append(lhs_tracking_check(cfg, st))
    loading = builtin_config("common_noise_loading")
    out += [CheckResult("loading:" + c.name, c.passed, c.value, c.threshold, c.detail)
            for c in evaluate_checks(loading.tolerances, tabs["loading"].row(cfg.M[-1], cfg.N[-1]))]
    return out


def ablation_checks(ctx: SuiteContext):
    """Dropping each distinguishing term moves the residual by its closed-form value (1 here)."""
    out = []
    classic = ctx.config("classic", M=[4096])
    st = ctx.stats(classic, 4096, 1)["main"]
    out += evaluate_checks({"ablation_shift": {"term": "dxpsi_gamma_dt", "target": 1.0, "rel": 0.1}}, st)

    cfg, tabs = conditional_tables(ctx)
    st = tabs["main"].row(cfg.M[-1], cfg.N[-1])
    out += evaluate_checks({"ablation_shift": {"term": "dmu2_sigma0_dt", "target": 1.0, "rel": 0.1}}, st)
    st = tabs["loading"].row(cfg.M[-1], cfg.N[-1])
    out += evaluate_checks({"ablation_shift": {"term": "dmu_psi0_sigma0_dt", "target": 1.0, "rel": 0.1}}, st)

    mixed = ctx.config("mixed_derivative")
    st = ctx.stats(mixed, mixed.M[-1], mixed.N[-1])["main"]
    out += evaluate_checks({"ablation_shift": {"term": "dx_dmu_gamma0_dt", "target": 1.0, "rel": 0.1}}, st)
    return out


def run_suite(name: str, ctx: SuiteContext = None):
    ctx = ctx or SuiteContext()
    if name == "projection":
        return projection_checks() if ctx.seed is None else projection_checks(seed=ctx.seed)
    if name == "classic":
        return classic_checks(ctx)
    if name == "full":
        return full_checks(ctx)
    if name == "conditional":
        return conditional_checks(ctx)
    if name == "ablation":
        return ablation_checks(ctx)
    raise InvalidArgument(f"unknown oracle suite {name!r}; expected one of {list(SUITES)}")


# ---------------------------------------------------------------------------
# structural checks

def _max_gap(a: dict, b: dict, pairs):
    return max(abs(a[p] - b[q]) for p, q in pairs)


def reduction_checks(seed: int = 20240611, M: int = 256, N: int = 128, tol: float = 1e-12):
    """Reduction lattice on shared realisations.

    * conditional-joint with ``sigma0 = 0`` and an x-free field equals
      full-flow-measure term by term, with ``W1`` playing the role of ``W``;
    * full-flow-joint with an x-free field equals full-flow-measure;
    * full-flow-joint with a measure-free field equals classical Itô-Wentzell.
    Terms absent from the smaller schema must vanish.
    """
    policy = SeedPolicy(seed)
    grid = make_time_grid(1.0, M)
    C = CoefficientSpec
    W = sample_brownian(grid, 1, policy.stream("W", 0))
    W0 = sample_brownian(grid, 1, policy.stream("W0", 0))
    y0 = InitialSampler("gaussian", mean=0.0, std=1.0)
    b = C("linear-in-state", offset=0.2, gain=-0.5)
    sigma = C("time-polynomial", coeffs=(0.8, 0.3))
    cloud = simulate_particle_system(b, sigma, N, y0, grid, policy, 0)
    ccloud = simulate_conditional_particle_system(b, C.constant(0.0), sigma, N, y0, W0, policy, 0)
    X = simulate_ito_process(C.constant(0.1), C.constant(0.9), np.array([0.3]), W)
    X2 = simulate_ito_process(C.constant(0.1), (C.constant(0.0), C.constant(0.9)), np.array([0.3]), (W0, W))
    out = []

    xfree = make_ito_field("linear-noise", MeasureFunctional.variance(), G=MeasureFunctional.mean(), c=0.7)
    full = expand_full_flow_measure(xfree, cloud, W)
    cond = expand_conditional_joint(xfree.as_two_noise("W1"), X2, ccloud, W0, W)
    pairs = [("phi_dt", "phi_dt"), ("psi1_dW1", "psi_dW"), ("dmu_b_dt", "dmu_b_dt"),
             ("dv_dmu_sigma_dt", "dv_dmu_sigma_dt")]
    gap = max(_max_gap(cond.terms, full.terms, pairs), abs(cond.lhs - full.lhs),
              max(abs(v) for k, v in cond.terms.items() if k not in dict(pairs)))
    out.append(CheckResult("conditional_joint_to_full_measure", gap <= tol, gap, tol))

    joint = expand_full_flow_joint(xfree, X, cloud, W)
    same = [(k, k) for k in full.terms]
    gap = max(_max_gap(joint.terms, full.terms, same), abs(joint.lhs - full.lhs),
              max(abs(v) for k, v in joint.terms.items() if k not in full.terms))
    out.append(CheckResult("full_joint_to_full_measure", gap <= tol, gap, tol))

    mufree = make_ito_field("linear-noise", MeasureFunctional.product(InnerFunction.poly((0.0, 0.0, 1.0)),
                                                                       InnerFunction.constant(1.0)),
                            G=MeasureFunctional.product(InnerFunction.poly((0.0, 1.0)), InnerFunction.constant(1.0)),
                            c=0.5)
    joint = expand_full_flow_joint(mufree, X, cloud, W)
    classic = expand_ito_wentzell_classic(mufree, X, W)
    same = [(k, k) for k in classic.terms]
    gap = max(_max_gap(joint.terms, classic.terms, same), abs(joint.lhs - classic.lhs),
              max(abs(v) for k, v in joint.terms.items() if k not in classic.terms))
    out.append(CheckResult("full_joint_to_classic", gap <= tol, gap, tol))
    return out


def mollification_checks(seed: int = 20240611, N: int = 64, n_levels=(4, 16, 64), Q: int = 10_000):
    """Variance functional: mollification error below ``Lip * radius / n`` and every draw within the W2 bound."""
    rows = mollification_study(MeasureFunctional.variance(), N, n_levels, Q=Q, seed=seed)
    out = []
    for r in rows:
        out.append(CheckResult(f"mollified_error[n={r.n}]", r.error <= r.bound, r.error, r.bound,
                               f"lip={r.lipschitz:.4g} se={r.se:.3g}"))
        out.append(CheckResult(f"w2_perturbation[n={r.n}]", r.w2_ok, r.max_w2 ** 2, (1.0 / r.n) ** 2,
                               "max over draws of W2^2"))
    errs = [r.error for r in rows]
    out.append(CheckResult("mollified_error_decreasing", all(b < a for a, b in zip(errs, errs[1:])), errs,
                           "strictly decreasing"))
    return out
