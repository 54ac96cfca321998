"""Tolerance checks applied to harness output.

Each key of a config's ``[tolerances]`` table maps to one check:

``rms_max = t``                  RMS residual <= t
``rms_window = [lo, hi]``        lo <= RMS residual <= hi
``mean_within_se = k``           |mean residual| <= k * SE
``max_abs_residual = t``         every replication has |residual| <= t
``term_sum = {target, k_se}``    mean term sum within k_se standard errors of target
``term_exact = {name = v}``      the named term equals v (to 1e-12) in every replication
``ablation = {term, target, rel}``       mean residual without ``term`` within rel*|target| of target
``ablation_shift = {term, target, rel}`` dropping ``term`` moves the mean residual by target (+- rel*|target|)
``slope_M = [lo, hi]``           fitted M decay rate inside the window
``slope_N = [lo, hi]``           same along N
``chaos_corrected_slope_M = [lo, hi]``  M rate of the residual minus the particle martingale
``monotone_N = true``            RMS non-increasing in N within one standard error

Point checks use the largest ``(M, N)`` of the ladder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["CheckResult", "evaluate_checks", "rms_se"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: object
    threshold: object
    detail: str = ""

    @property
    def skipped(self) -> bool:
        return self.detail.startswith("skipped")

    def line(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"{status} {self.name}: value={_show(self.value)} threshold={_show(self.threshold)} {self.detail}".rstrip()

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value, "threshold": self.threshold,
                "detail": self.detail}


def _show(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_show(x) for x in v) + "]"
    return str(v)


def rms_se(st) -> float:
    """Delta-method standard error of the RMS residual."""
    res = np.array([r.residual for r in st.reports if math.isfinite(r.residual)])
    if res.size < 2 or st.rms == 0:
        return 0.0
    return float((res * res).std(ddof=1) / math.sqrt(res.size) / (2.0 * st.rms))


def _term_sum_se(st):
    s = np.array([r.term_sum for r in st.reports if math.isfinite(r.term_sum)])
    return float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else float("nan")


def _window(tol, key):
    if not (isinstance(tol, (list, tuple)) and len(tol) == 2):
        raise ConfigError(f"{key} must be a [low, high] pair", key=f"tolerances.{key}")
    return float(tol[0]), float(tol[1])


def _slope_check(name, fit, tol):
    lo, hi = _window(tol, name)
    if fit is None:  # omitted, not failed; callers surface this as a warning
        return CheckResult(name, True, None, [lo, hi], "skipped: fewer than three ladder levels")
    return CheckResult(name, lo <= fit.rate <= hi, fit.rate, [lo, hi],
                       f"ci=[{fit.ci_low:.3g}, {fit.ci_high:.3g}] points={fit.points}")


def evaluate_checks(tolerances: dict, st, table=None):
    """Apply every tolerance to the point statistics ``st`` (and ``table`` for slope checks)."""
    out = []
    if st.failed:
        out.append(CheckResult("finite_replications", False, st.n_nonfinite, f"<= 10% of {st.R}",
                               "too many non-finite replications"))
    for key, tol in tolerances.items():
        if key == "rms_max":
            out.append(CheckResult(key, st.rms <= tol, st.rms, tol))
        elif key == "rms_window":
            lo, hi = _window(tol, key)
            out.append(CheckResult(key, lo <= st.rms <= hi, st.rms, [lo, hi]))
        elif key == "mean_within_se":
            lim = tol * st.se
            out.append(CheckResult(key, abs(st.mean) <= lim, st.mean, lim, f"se={st.se:.3g}"))
        elif key == "max_abs_residual":
            worst = max(abs(r.residual) for r in st.reports)
            out.append(CheckResult(key, worst <= tol, worst, tol))
        elif key == "term_sum":
            target, k = float(tol["target"]), float(tol.get("k_se", 3.0))
            se = _term_sum_se(st)
            lim = k * se
            out.append(CheckResult(key, abs(st.term_sum_mean - target) <= lim, st.term_sum_mean, target,
                                   f"allowed +-{lim:.3g} ({k:g} se)"))
        elif key == "term_exact":
            for name, value in tol.items():
                vals = [r.terms.get(name, float("nan")) for r in st.reports]
                worst = max(abs(v - value) for v in vals)
                out.append(CheckResult(f"term_exact[{name}]", worst <= 1e-12, worst, 1e-12,
                                       f"target={value!r}"))
        elif key in ("ablation", "ablation_shift"):
            term, target, rel = tol["term"], float(tol["target"]), float(tol.get("rel", 0.1))
            value = st.ablation_mean(term)
            if key == "ablation_shift":
                value -= st.mean
            lim = rel * abs(target)
            out.append(CheckResult(f"{key}[{term}]", abs(value - target) <= lim, value, target,
                                   f"allowed +-{lim:.3g}"))
        elif key in ("slope_M", "slope_N", "chaos_corrected_slope_M"):
            fit = None if table is None else {"slope_M": table.slope_M, "slope_N": table.slope_N,
                                              "chaos_corrected_slope_M": table.corrected_slope_M}[key]
            out.append(_slope_check(key, fit, tol))
        elif key == "monotone_N":
            if not tol:
                continue
            if table is None:
                out.append(CheckResult(key, False, None, True, "needs a convergence run"))
                continue
            Mmax = max(r.M for r in table.rows)
            rows = sorted((r for r in table.rows if r.M == Mmax), key=lambda r: r.N)
            bad = [(a.N, b.N) for a, b in zip(rows, rows[1:]) if b.rms > a.rms + max(rms_se(a), rms_se(b))]
            out.append(CheckResult(key, not bad, [r.rms for r in rows], "non-increasing within 1 se",
                                   f"violations={bad}" if bad else ""))
        else:
            raise ConfigError(f"unknown tolerance {key!r}", key=f"tolerances.{key}")
    return out
