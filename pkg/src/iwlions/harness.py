"""Monte Carlo harness: replications, convergence ladders, slopes and run artefacts.

Every replication ``r`` draws its noises from the streams
``(seed, role, r[, particle])`` of :class:`iwlions.core.SeedPolicy`, so a row
of the output depends only on ``(config, seed, M, N, r)``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _stats

from . import __version__
from .chain_rule import SCHEMAS, ExpansionReport, expand
from .config import ExperimentConfig
from .core import SeedPolicy, make_time_grid, sample_brownian
from .errors import InvalidArgument
from .functionals import MeasureFunctional
from .lions import MollifierKernel, lipschitz_bound, mollified_projection
from .sde import (InitialSampler, simulate_conditional_particle_system, simulate_ito_process,
                  simulate_particle_system)

__all__ = [
    "ReplicationStats",
    "SlopeFit",
    "ConvergenceTable",
    "run_single",
    "run_replications",
    "summarize",
    "fit_loglog_slope",
    "convergence_study",
    "build_tables",
    "mollification_study",
    "MollificationRow",
    "write_run",
    "NONFINITE_LIMIT",
]

NONFINITE_LIMIT = 0.10
_DEFAULTS = {"beta": 0.0, "gamma": 1.0, "gamma0": 1.0, "gamma1": 1.0, "b": 0.0, "sigma": 1.0,
             "sigma0": 1.0, "sigma1": 1.0}


# ---------------------------------------------------------------------------
# one replication

def _coef(cfg: ExperimentConfig, group, key):
    return cfg.coefficient(group, key, _DEFAULTS[key])


def run_single(cfg: ExperimentConfig, M: int, N: int, replication: int, fields=None):
    """Simulate one replication at ``(M, N)`` and expand every requested field.

    ``fields`` maps labels to ``(theorem, ItoRandomField)``; by default the
    config's own pair under the label ``"main"``.  All fields share the same
    simulated noises, state process and cloud.
    """
    policy = SeedPolicy(cfg.seed)
    grid = make_time_grid(cfg.T, M)
    d = cfg.d
    if fields is None:
        fields = {"main": (cfg.theorem, cfg.build_field())}
    conditional = cfg.conditional
    W = W0 = W1 = X = cloud = None
    if conditional:
        W0 = sample_brownian(grid, d, policy.stream("W0", replication))
        W1 = sample_brownian(grid, d, policy.stream("W1", replication))
    else:
        W = sample_brownian(grid, d, policy.stream("W", replication))

    if cfg.needs_x:
        x0 = cfg.sampler("process", "x0")
        gen = policy.stream("x0", replication).generator()
        beta = _coef(cfg, "process", "beta")
        if conditional:
            X = simulate_ito_process(beta, (_coef(cfg, "process", "gamma0"), _coef(cfg, "process", "gamma1")),
                                     x0, (W0, W1), gen)
        else:
            X = simulate_ito_process(beta, _coef(cfg, "process", "gamma"), x0, W, gen)

    if cfg.needs_cloud:
        y0 = cfg.sampler("cloud", "y0")
        b = _coef(cfg, "cloud", "b")
        if conditional:
            cloud = simulate_conditional_particle_system(b, _coef(cfg, "cloud", "sigma0"),
                                                         _coef(cfg, "cloud", "sigma1"), N, y0, W0, policy,
                                                         replication)
        else:
            cloud = simulate_particle_system(b, _coef(cfg, "cloud", "sigma"), N, y0, grid, policy,
                                             replication, d)

    out = {}
    for label, (theorem, fld) in fields.items():
        if theorem in ("IL-conditional",) and fld.mode == "single":
            fld = fld.as_two_noise()
        rep = expand(theorem, fld, X=X, cloud=cloud, W=W, W0=W0, W1=W1)
        rep.meta["replication"] = replication
        rep.meta["N"] = N if cloud is not None else 0
        out[label] = _apply_fault(rep, cfg.fault)
    return out


def _apply_fault(report: ExpansionReport, fault: str) -> ExpansionReport:
    """Negative-control hook: ``drop-term:<name>`` zeroes one right-hand-side term."""
    if not fault:
        return report
    name = fault.split(":", 1)[1]
    if name not in report.terms:
        raise InvalidArgument(f"fault term {name!r} not in the {report.theorem} schema")
    terms = dict(report.terms)
    terms[name] = 0.0
    return ExpansionReport(report.theorem, report.lhs, terms, {**report.meta, "fault": fault}, report.diagnostics)


# ---------------------------------------------------------------------------
# statistics

@dataclass
class ReplicationStats:
    """Summary of the residuals at one ladder point."""

    theorem: str
    M: int
    N: int
    R: int  # replications attempted
    n_used: int
    n_nonfinite: int
    mean: float
    rms: float
    var: float  # population variance, so rms**2 == mean**2 + var
    se: float  # sample std / sqrt(n_used)
    term_means: dict
    term_ses: dict
    lhs_mean: float
    diag_means: dict = field(default_factory=dict)
    corrected_rms: float = float("nan")  # rms of residual minus the particle martingale
    seconds: float = 0.0
    reports: list = field(default_factory=list, repr=False)

    @property
    def failed(self) -> bool:
        return self.n_nonfinite > NONFINITE_LIMIT * self.R

    @property
    def term_sum_mean(self) -> float:
        return math.fsum(self.term_means.values())

    def ablation_mean(self, term: str) -> float:
        """Mean residual with ``term`` dropped from every replication."""
        if term not in self.term_means:
            raise InvalidArgument(f"term {term!r} not in the {self.theorem} schema")
        return self.mean + self.term_means[term]

    def as_row(self) -> dict:
        return {"theorem": self.theorem, "M": self.M, "N": self.N, "R": self.R, "n_used": self.n_used,
                "n_nonfinite": self.n_nonfinite, "mean_residual": self.mean, "rms_residual": self.rms,
                "var_residual": self.var, "se": self.se, "corrected_rms": self.corrected_rms,
                "term_means": self.term_means, "term_ses": self.term_ses, "diag_means": self.diag_means,
                "lhs_mean": self.lhs_mean, "failed": self.failed, "seconds": self.seconds}


def _finite(rep: ExpansionReport) -> bool:
    return math.isfinite(rep.lhs) and all(math.isfinite(v) for v in rep.terms.values())


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return math.fsum(x) / x.size, se


def summarize(reports, M, N, seconds=0.0) -> ReplicationStats:
    """Statistics over replications, excluding those with non-finite output."""
    if not reports:
        raise InvalidArgument("no replications to summarise")
    theorem = reports[0].theorem
    good = [r for r in reports if _finite(r)]
    res = np.array([r.residual for r in good])
    n = len(good)
    if n:
        mean = math.fsum(res) / n
        rms = math.sqrt(math.fsum(res * res) / n)
        var = math.fsum((res - mean) ** 2) / n
        se = float(res.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    else:
        mean = rms = var = se = float("nan")
    term_means, term_ses = {}, {}
    for name in SCHEMAS[theorem]:
        term_means[name], term_ses[name] = _mean_se([r.terms[name] for r in good])
    diag_means = {}
    corrected = float("nan")
    if good and good[0].diagnostics:
        for k in good[0].diagnostics:
            diag_means[k] = _mean_se([r.diagnostics[k] for r in good])[0]
        if "particle_dW" in good[0].diagnostics:
            c = res - np.array([r.diagnostics["particle_dW"] for r in good])
            corrected = math.sqrt(math.fsum(c * c) / n)
    return ReplicationStats(theorem, M, N, len(reports), n, len(reports) - n, mean, rms, var, se,
                            term_means, term_ses, _mean_se([r.lhs for r in good])[0], diag_means, corrected,
                            seconds, list(reports))


def run_replications(cfg: ExperimentConfig, M: int, N: int, fields=None, R: int = None, threads: int = 1):
    """All replications at one ladder point; returns ``{label: ReplicationStats}``.

    With ``threads > 1`` replications run in a thread pool; results are
    gathered in replication order, so the output does not depend on ``threads``.
    """
    R = cfg.R if R is None else R
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: run_single(cfg, M, N, r, fields), range(R)))
    else:
        results = (run_single(cfg, M, N, r, fields) for r in range(R))
    collected = {}
    for out in results:
        for label, rep in out.items():
            collected.setdefault(label, []).append(rep)
    secs = time.perf_counter() - t0
    return {label: summarize(reps, M, N, secs) for label, reps in collected.items()}


# ---------------------------------------------------------------------------
# slopes and convergence tables

@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit of ``log2 y = a - rate * log2 x``; ``rate`` is the decay order."""

    rate: float
    intercept: float
    ci_low: float
    ci_high: float
    points: int

    def as_dict(self):
        return {"rate": self.rate, "intercept": self.intercept, "ci": [self.ci_low, self.ci_high],
                "points": self.points}


def fit_loglog_slope(xs, ys, level: float = 0.95) -> SlopeFit:
    """Fit the decay rate of ``ys`` against ``xs`` on log2 axes, with a t-based interval."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.size < 2:
        raise InvalidArgument("a slope needs at least two points")
    if not (np.all(np.isfinite(ys)) and np.all(ys > 0) and np.all(xs > 0)):
        raise InvalidArgument("non-finite or non-positive values in slope fit")
    x, y = np.log2(xs), np.log2(ys)
    res = _stats.linregress(x, y)
    if x.size > 2:
        t = _stats.t.ppf(0.5 + level / 2.0, x.size - 2)
        half = t * res.stderr
    else:
        half = float("nan")
    rate = -res.slope
    return SlopeFit(float(rate), float(res.intercept), float(rate - half), float(rate + half), int(x.size))


@dataclass
class ConvergenceTable:
    config: ExperimentConfig
    rows: list  # of ReplicationStats
    slope_M: SlopeFit = None
    slope_N: SlopeFit = None
    corrected_slope_M: SlopeFit = None
    warnings: list = field(default_factory=list)

    def row(self, M, N) -> ReplicationStats:
        for r in self.rows:
            if r.M == M and r.N == N:
                return r
        raise KeyError((M, N))

    def as_dicts(self):
        return [r.as_row() for r in self.rows]


def _axis_slope(rows, axis, fixed_key, fixed, value="rms"):
    pts = sorted((getattr(r, axis), getattr(r, value)) for r in rows
                 if getattr(r, fixed_key) == fixed and not r.failed)
    if len(pts) < 3:
        return None
    return fit_loglog_slope([p[0] for p in pts], [p[1] for p in pts])


def build_tables(cfg: ExperimentConfig, per_label: dict) -> dict:
    """Convergence tables (with slopes) from ``{label: [ReplicationStats, ...]}``."""
    tables = {}
    Mmax, Nmax = cfg.M[-1], cfg.N[-1]
    for lab, rows in per_label.items():
        tab = ConvergenceTable(cfg, sorted(rows, key=lambda r: (r.M, r.N)))
        tab.slope_M = _axis_slope(rows, "M", "N", Nmax)
        if cfg.needs_cloud:
            tab.slope_N = _axis_slope(rows, "N", "M", Mmax)
            if all(math.isfinite(r.corrected_rms) for r in rows):
                tab.corrected_slope_M = _axis_slope(rows, "M", "N", Nmax, "corrected_rms")
        if tab.slope_M is None:
            tab.warnings.append("fewer than three M levels: no M-slope reported")
        if cfg.needs_cloud and tab.slope_N is None:
            tab.warnings.append("fewer than three N levels: no N-slope reported")
        tables[lab] = tab
    return tables


def convergence_study(cfg: ExperimentConfig, fields=None, progress=None, runner=None) -> dict:
    """Run every ladder point; returns ``{label: ConvergenceTable}`` with slopes along M and N.

    A slope is reported only when its axis has at least three points; a
    warning is recorded otherwise.  ``runner(cfg, M, N, fields)`` replaces
    :func:`run_replications`, e.g. to reuse cached points.
    """
    runner = runner or run_replications
    per_label = {}
    for M, N in cfg.ladder_points():
        out = runner(cfg, M, N, fields)
        for lab, st in out.items():
            per_label.setdefault(lab, []).append(st)
        if progress:
            progress(M, N, out)
    return build_tables(cfg, per_label)


# ---------------------------------------------------------------------------
# mollification

@dataclass(frozen=True)
class MollificationRow:
    n: int
    error: float  # |u^{N,n} - u^N|
    se: float
    lipschitz: float
    bound: float  # lipschitz / n
    max_w2: float
    w2_ok: bool  # every draw within the support-radius bound
    w2_exact: bool


def mollification_study(F: MeasureFunctional, N: int, n_levels, Q: int = 10_000, seed: int = 0, d: int = 1,
                        y0: InitialSampler = None, replication: int = 0, x=None):
    """Mollified projections of one fixed cloud at increasing ``n``.

    The cloud is drawn from ``y0`` (standard Gaussian by default) on the
    ``initial`` stream; kernel draws use the ``mollifier`` stream, one
    replication index per level.
    """
    policy = SeedPolicy(seed)
    y0 = y0 or InitialSampler("gaussian", mean=0.0, std=1.0)
    pts = y0.sample_particles(N, d, policy, replication)
    lip = lipschitz_bound(F, pts, x=x)
    rows = []
    for k, n in enumerate(n_levels):
        kern = MollifierKernel(n, Q, d)
        res = mollified_projection(F, pts, kern, policy.stream("mollifier", replication, k), x=x)
        max_w2 = float(np.sqrt(res.w2_sq.max()))
        rows.append(MollificationRow(n, res.error, res.se, lip, lip / n, max_w2,
                                     bool(max_w2 <= kern.scaled_radius * (1 + 1e-12)), res.w2_exact))
    return rows


# ---------------------------------------------------------------------------
# artefacts

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _run_dir(out_root, name):
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S")
    base = os.path.join(out_root, f"{stamp}-{name}")
    path, k = base, 1
    while os.path.exists(path):
        path = f"{base}-{k}"
        k += 1
    os.makedirs(path)
    return path


def write_terms_csv(path, stats_rows):
    """Per-replication rows: ladder point, replication, lhs, each term, residual."""
    rows = [(st, rep) for st in stats_rows for rep in st.reports]
    if not rows:
        return
    names = list(rows[0][1].terms)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "N", "replication", "lhs", *names, "residual"])
        for st, rep in rows:
            w.writerow([st.M, st.N, rep.meta.get("replication", ""), _fmt(rep.lhs),
                        *(_fmt(rep.terms[k]) for k in names), _fmt(rep.residual)])


def write_convergence_csv(path, table: ConvergenceTable):
    sM = table.slope_M.rate if table.slope_M else float("nan")
    sN = table.slope_N.rate if table.slope_N else float("nan")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["M", "N", "n", "R", "mean_residual", "rms_residual", "se", "slope_M", "slope_N"])
        for r in table.rows:
            w.writerow([r.M, r.N, "", r.R, _fmt(r.mean), _fmt(r.rms), _fmt(r.se), _fmt(sM), _fmt(sN)])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    return obj


def manifest(cfg: ExperimentConfig, argv=None, threads=1, extra=None) -> dict:
    """Everything needed to reproduce a run: config echo, seed and versions."""
    return {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "platform": platform.platform(),
        "seed": cfg.seed,
        "threads": threads,
        "argv": list(argv or []),
        "created": _dt.datetime.now().isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
        **(extra or {}),
    }


def write_run(out_root, cfg: ExperimentConfig, stats_rows, report: dict, table: ConvergenceTable = None,
              argv=None, threads=1, extra=None) -> str:
    """Write ``terms.csv``, ``report.json``, ``manifest.json`` (and ``convergence.csv``) to a new run directory."""
    path = _run_dir(out_root, cfg.name)
    outputs = [os.path.join(path, f) for f in ("terms.csv", "report.json", "manifest.json")]
    write_terms_csv(outputs[0], stats_rows)
    if table is not None:
        outputs.append(os.path.join(path, "convergence.csv"))
        write_convergence_csv(outputs[-1], table)
    with open(os.path.join(path, "report.json"), "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(_json_safe(manifest(cfg, argv, threads, {**(extra or {}), "outputs": outputs})), fh,
                  indent=2, sort_keys=True)
    return path
