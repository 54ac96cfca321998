import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from iwlions.chain_rule import ExpansionReport
from iwlions.checks import evaluate_checks
from iwlions.errors import InvalidArgument
from iwlions.harness import (build_tables, convergence_study, fit_loglog_slope, manifest, mollification_study,
                             run_replications, run_single, summarize, write_run)
from iwlions.oracles import builtin_config


def _reports(residuals, theorem="IWL-full-measure"):
    return [ExpansionReport(theorem, float(r), {"phi_dt": 0.0, "psi_dW": 0.0, "dmu_b_dt": 0.0,
                                                "dv_dmu_sigma_dt": 0.0}, {"replication": i})
            for i, r in enumerate(residuals)]


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=50))
def test_rms_mean_variance_identity(xs):
    s = summarize(_reports(xs), 8, 8)
    assert s.rms ** 2 == pytest.approx(s.mean ** 2 + s.var, rel=1e-9, abs=1e-9)


def test_standard_error_uses_sample_deviation():
    s = summarize(_reports([1.0, 2.0, 3.0, 4.0]), 8, 8)
    assert s.mean == 2.5 and s.se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)


def test_nonfinite_replications():
    few = summarize(_reports([0.1] * 19 + [float("nan")]), 8, 8)
    assert few.n_used == 19 and few.n_nonfinite == 1 and not few.failed and few.mean == pytest.approx(0.1)
    many = summarize(_reports([0.1] * 17 + [float("nan"), float("inf"), float("nan")]), 8, 8)
    assert many.failed
    names = [c.name for c in evaluate_checks({"rms_max": 1.0}, many)]
    assert names[0] == "finite_replications"
    assert not all(c.passed for c in evaluate_checks({"rms_max": 1.0}, many))


def test_slope_fit_recovers_exact_rate():
    Ms = [256, 1024, 4096]
    fit = fit_loglog_slope(Ms, [3.0 * m ** -0.5 for m in Ms])
    assert abs(fit.rate - 0.5) <= 1e-6 and fit.points == 3
    with pytest.raises(InvalidArgument):
        fit_loglog_slope([8], [1.0])
    with pytest.raises(InvalidArgument):
        fit_loglog_slope([8, 16], [1.0, 0.0])


def test_fewer_than_three_levels_warns_and_skips():
    cfg = builtin_config("classic").with_overrides(M=[256, 1024], R=4)
    table = convergence_study(cfg)["main"]
    assert table.slope_M is None and table.warnings
    (check,) = [c for c in evaluate_checks(cfg.tolerances, table.rows[-1], table) if c.name == "slope_M"]
    assert check.passed and check.skipped and check.line().startswith("SKIP")


def test_replications_are_deterministic_and_thread_independent():
    cfg = builtin_config("full_gaussian").with_overrides(M=[32], N=[16], R=6)
    a = run_replications(cfg, 32, 16)["main"]
    b = run_replications(cfg, 32, 16, threads=3)["main"]
    assert [r.residual for r in a.reports] == [r.residual for r in b.reports]
    assert [r.terms for r in a.reports] == [r.terms for r in b.reports]


def test_growing_r_keeps_existing_replications():
    cfg = builtin_config("full_gaussian").with_overrides(M=[32], N=[16])
    a = run_replications(cfg, 32, 16, R=3)["main"]
    b = run_replications(cfg, 32, 16, R=7)["main"]
    assert [r.residual for r in a.reports] == [r.residual for r in b.reports][:3]


def test_seed_changes_results():
    cfg = builtin_config("classic")
    a = run_single(cfg, 64, 1, 0)["main"].residual
    b = run_single(cfg.with_overrides(seed=cfg.seed + 1), 64, 1, 0)["main"].residual
    assert a != b


def test_fault_injection_drops_a_term():
    cfg = builtin_config("classic")
    ok = run_single(cfg, 64, 1, 0)["main"]
    bad = run_single(cfg.with_overrides(fault="drop-term:dxpsi_gamma_dt"), 64, 1, 0)["main"]
    assert bad.terms["dxpsi_gamma_dt"] == 0 and bad.residual == pytest.approx(ok.residual + 1.0, abs=1e-12)


def test_cross_ladder_design():
    cfg = builtin_config("full_gaussian").with_overrides(M=[8, 16, 32], N=[4, 8, 16])
    assert cfg.ladder_points() == [(8, 16), (16, 16), (32, 4), (32, 8), (32, 16)]
    full = cfg.with_overrides(design="full")
    assert len(full.ladder_points()) == 9


def test_tables_and_run_directory(tmp_path):
    cfg = builtin_config("full_gaussian").with_overrides(M=[8, 16, 32], N=[4, 8, 16], R=4)
    tab = convergence_study(cfg)["main"]
    assert tab.slope_M is not None and tab.slope_N is not None and tab.corrected_slope_M is not None
    path = write_run(str(tmp_path), cfg, tab.rows, {"passed": True}, tab, ["converge"], 1, {"note": "x"})
    rows = list(csv.DictReader(open(f"{path}/terms.csv")))
    assert len(rows) == 5 * 4
    assert float(rows[0]["residual"]) == tab.rows[0].reports[0].residual
    conv = list(csv.DictReader(open(f"{path}/convergence.csv")))
    assert [int(r["M"]) for r in conv] == [r.M for r in tab.rows]
    man = json.load(open(f"{path}/manifest.json"))
    assert man["seed"] == cfg.seed and man["config"] == json.loads(json.dumps(cfg.to_dict()))
    assert any(p.endswith("terms.csv") for p in man["outputs"])


def test_manifest_fields():
    m = manifest(builtin_config("frozen"), ["verify"], 2)
    for key in ("package_version", "numpy_version", "seed", "threads", "config", "created"):
        assert key in m


def test_mollification_study_rows():
    from iwlions.functionals import MeasureFunctional as MF
    rows = mollification_study(MF.variance(), 32, (4, 16), Q=500, seed=1)
    assert [r.n for r in rows] == [4, 16]
    assert all(r.error <= r.bound for r in rows)
    assert all(r.w2_ok and math.isfinite(r.max_w2) for r in rows)
