import math

import numpy as np
import pytest

from iwlions.chain_rule import (SCHEMAS, THEOREMS, EnsembleExpectationEstimator, expand, expand_conditional_joint,
                                expand_conditional_measure, expand_full_flow_joint, expand_full_flow_measure,
                                expand_ito_lions, expand_ito_wentzell_classic, residual, term_ablation)
from iwlions.core import SeedPolicy, make_time_grid, sample_brownian
from iwlions.errors import InvalidArgument
from iwlions.fields import make_ito_field
from iwlions.functionals import InnerFunction as IF, MeasureFunctional as MF
from iwlions.oracles import reduction_checks
from iwlions.sde import (CoefficientSpec as C, InitialSampler, simulate_conditional_particle_system,
                         simulate_ito_process, simulate_particle_system)

ZERO, ONE = C.constant(0.0), C.constant(1.0)
X_LIN = IF.poly((0.0, 1.0))
M2 = MF.quadratic_mean(X_LIN)


def _setup(M=128, seed=5, rep=0):
    policy = SeedPolicy(seed)
    grid = make_time_grid(1.0, M)
    W = sample_brownian(grid, 1, policy.stream("W", rep))
    W0 = sample_brownian(grid, 1, policy.stream("W0", rep))
    W1 = sample_brownian(grid, 1, policy.stream("W1", rep))
    return policy, grid, W, W0, W1


def _x_times(f):
    return MF.product(X_LIN, f)


def test_schemas():
    assert set(THEOREMS) == {"IW-classic", "IW-reduced", "IL-full", "IWL-full-measure", "IWL-full-joint",
                             "IL-conditional", "IWL-conditional-measure", "IWL-conditional-joint"}
    assert len(SCHEMAS["IWL-full-joint"]) == 8
    assert len(SCHEMAS["IWL-conditional-joint"]) == 15
    assert set(SCHEMAS["IWL-conditional-measure"]) <= set(SCHEMAS["IWL-conditional-joint"])


# classical ------------------------------------------------------------------

def test_classic_x_times_brownian():
    _, grid, W, _, _ = _setup()
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    V = make_ito_field("linear-noise", G=_x_times(IF.constant(1.0)))
    rep = expand_ito_wentzell_classic(V, X, W)
    w, dw = W.values[:-1, 0], W.increments[:, 0]
    assert rep.terms["phi_dt"] == 0 and rep.terms["dxu_beta_dt"] == 0 and rep.terms["hess_x_dt"] == 0
    assert rep.terms["psi_dW"] == pytest.approx(np.sum(w * dw), abs=1e-12)
    assert rep.terms["dxu_gamma_dW"] == pytest.approx(np.sum(w * dw), abs=1e-12)
    assert rep.terms["dxpsi_gamma_dt"] == 1.0
    assert rep.residual == pytest.approx(np.sum(dw * dw) - 1.0, abs=1e-12)


def test_classic_residual_statistics():
    M, R = 64, 800
    V = make_ito_field("linear-noise", G=_x_times(IF.constant(1.0)))
    res = []
    for r in range(R):
        _, _, W, _, _ = _setup(M, seed=9, rep=r)
        res.append(expand_ito_wentzell_classic(V, simulate_ito_process(ZERO, ONE, np.zeros(1), W), W).residual)
    res = np.array(res)
    assert abs(res.mean()) <= 4 * res.std() / math.sqrt(R)
    assert res.var() == pytest.approx(2.0 / M, rel=0.2)


def test_classic_frozen_and_drift_only():
    _, grid, W, _, _ = _setup()
    frozen = simulate_ito_process(ZERO, ZERO, np.array([0.7]), W)
    rep = expand_ito_wentzell_classic(make_ito_field("static", _x_times(IF.constant(1.0))), frozen, W)
    assert rep.lhs == 0 and all(v == 0 for v in rep.terms.values())
    X = simulate_ito_process(ONE, ZERO, np.zeros(1), W)
    rep = expand_ito_wentzell_classic(make_ito_field("static", _x_times(IF.constant(1.0))), X, W)
    assert rep.lhs == pytest.approx(1.0, abs=1e-12)
    assert [k for k, v in rep.terms.items() if v != 0] == ["dxu_beta_dt"]
    assert abs(rep.residual) <= 1e-12


def test_classic_rejects_measure_dependence_and_grid_mismatch():
    _, grid, W, _, _ = _setup()
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    with pytest.raises(InvalidArgument):
        expand_ito_wentzell_classic(make_ito_field("static", MF.mean()), X, W)
    other = sample_brownian(make_time_grid(1.0, 64), 1, SeedPolicy(1).stream("W", 0))
    with pytest.raises(InvalidArgument):
        expand_ito_wentzell_classic(make_ito_field("static", _x_times(IF.constant(1.0))), X, other)


# Itô-Lions ------------------------------------------------------------------

def test_ito_lions_second_moment():
    policy, grid, W, _, _ = _setup(M=256)
    N = 1024
    cloud = simulate_particle_system(ZERO, ONE, N, InitialSampler("point", value=0.0), grid, policy, 0)
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    rep = expand_ito_lions(make_ito_field("static", MF.linear(IF.poly((0, 0, 1)))), X, cloud)
    assert rep.terms["dmu_b_dt"] == 0
    assert rep.terms["dv_dmu_sigma_dt"] == pytest.approx(1.0, abs=1e-12)
    assert abs(rep.residual) <= 3 * (N ** -0.5 + 256 ** -0.5)


def test_ito_lions_mean_with_drift():
    policy, grid, W, _, _ = _setup()
    cloud = simulate_particle_system(ONE, C.constant(0.7), 64, InitialSampler("gaussian"), grid, policy, 0)
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    rep = expand_ito_lions(make_ito_field("static", MF.mean()), X, cloud)
    assert rep.terms["dmu_b_dt"] == pytest.approx(1.0, abs=1e-12)
    assert rep.terms["dv_dmu_sigma_dt"] == 0
    Y = cloud.Y
    change = Y[:, -1, 0].mean() - Y[:, 0, 0].mean()
    assert rep.residual == pytest.approx(change - 1.0, abs=1e-12)


def test_ito_lions_rejects_conditional_cloud_and_noisy_fields():
    policy, grid, W, W0, _ = _setup()
    ccloud = simulate_conditional_particle_system(ZERO, ONE, ONE, 8, InitialSampler(), W0, policy, 0)
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    with pytest.raises(InvalidArgument):
        expand_ito_lions(make_ito_field("static", MF.mean()), X, ccloud)
    cloud = simulate_particle_system(ZERO, ONE, 8, InitialSampler(), grid, policy, 0)
    with pytest.raises(InvalidArgument):
        expand_ito_lions(make_ito_field("linear-noise", MF.mean()), X, cloud)


# full flow ------------------------------------------------------------------

def test_full_measure_linear_noise_on_frozen_cloud():
    policy, grid, W, _, _ = _setup()
    cloud = simulate_particle_system(ZERO, ZERO, 16, InitialSampler("gaussian"), grid, policy, 0)
    rep = expand_full_flow_measure(make_ito_field("linear-noise", c=1.5), cloud, W)
    assert rep.lhs == pytest.approx(1.5 * W.values[-1, 0], abs=1e-12)
    assert rep.terms["psi_dW"] == pytest.approx(1.5 * W.values[-1, 0], abs=1e-12)
    assert abs(rep.residual) <= 1e-12


def test_full_measure_rejects_two_noise_fields():
    policy, grid, W, _, _ = _setup()
    cloud = simulate_particle_system(ZERO, ONE, 8, InitialSampler(), grid, policy, 0)
    with pytest.raises(InvalidArgument):
        expand_full_flow_measure(make_ito_field("mean-times-common-noise"), cloud, W)
    with pytest.raises(InvalidArgument):
        expand_full_flow_measure(make_ito_field("static", _x_times(X_LIN)), cloud, W)


def test_exponential_martingale_residual_order():
    # the field noise runs through the same left-point recursion as the psi term,
    # so the residual telescopes; the half-order rate sits between lhs and exp(W_T - T/2) - 1
    Ms, R = (64, 256, 1024), 48
    fld = make_ito_field("exponential-martingale", MF.mean())
    rms = []
    for M in Ms:
        err = []
        for r in range(R):
            policy, grid, W, _, _ = _setup(M, seed=13, rep=r)
            cloud = simulate_particle_system(ZERO, ZERO, 2, InitialSampler("point", value=1.0), grid, policy, r)
            rep = expand_full_flow_measure(fld, cloud, W)
            assert abs(rep.residual) <= 1e-12
            err.append(rep.lhs - (np.exp(W.values[-1, 0] - 0.5) - 1.0))
        rms.append(np.sqrt(np.mean(np.square(err))))
    slope = -np.polyfit(np.log2(Ms), np.log2(rms), 1)[0]
    assert 0.35 <= slope <= 0.65


def test_full_joint_cross_term_and_ablation():
    policy, grid, W, _, _ = _setup()
    c = 0.8
    cloud = simulate_particle_system(ZERO, ZERO, 4, InitialSampler("point", value=c), grid, policy, 0)
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    fld = make_ito_field("linear-noise", G=_x_times(X_LIN))
    rep = expand_full_flow_joint(fld, X, cloud, W)
    assert rep.terms["dxpsi_gamma_dt"] == pytest.approx(c, abs=1e-12)
    assert rep.lhs == pytest.approx(c * W.values[-1, 0] ** 2, abs=1e-12)
    dw = W.increments[:, 0]
    assert rep.residual == pytest.approx(c * (np.sum(dw * dw) - 1.0), abs=1e-12)
    assert rep.ablation("dxpsi_gamma_dt") - rep.residual == pytest.approx(c, abs=1e-12)


def test_full_joint_reduces_to_ito_on_x_squared():
    policy, grid, W, _, _ = _setup()
    cloud = simulate_particle_system(ZERO, ZERO, 3, InitialSampler("point", value=1.0), grid, policy, 0)
    X = simulate_ito_process(ZERO, ONE, np.zeros(1), W)
    fld = make_ito_field("static", MF.product(IF.poly((0, 0, 1)), X_LIN))
    rep = expand_full_flow_joint(fld, X, cloud, W)
    w, dw = W.values[:-1, 0], W.increments[:, 0]
    assert rep.lhs == pytest.approx(W.values[-1, 0] ** 2, abs=1e-12)
    assert rep.terms["dxu_gamma_dW"] == pytest.approx(2 * np.sum(w * dw), abs=1e-12)
    assert rep.terms["hess_x_dt"] == pytest.approx(1.0, abs=1e-12)
    assert rep.residual == pytest.approx(np.sum(dw * dw) - 1.0, abs=1e-12)


# conditional ----------------------------------------------------------------

def test_conditional_mean_square():
    policy, grid, W, W0, W1 = _setup(M=256)
    cloud = simulate_conditional_particle_system(ZERO, ONE, ONE, 2048, InitialSampler(), W0, policy, 0)
    rep = expand_conditional_measure(make_ito_field("static", M2, mode="two"), cloud, W0, W1)
    assert rep.terms["dmu2_sigma0_dt"] == pytest.approx(1.0, abs=1e-12)
    assert rep.terms["dv_dmu_sigma_dt"] == 0 and rep.terms["dmu_psi0_sigma0_dt"] == 0
    assert rep.lhs == pytest.approx(W0.values[-1, 0] ** 2, abs=0.2)
    assert abs(rep.residual) <= 0.3
    assert rep.ablation("dmu2_sigma0_dt") - rep.residual == pytest.approx(1.0, abs=1e-12)


def test_conditional_loading_term():
    policy, grid, W, W0, W1 = _setup()
    cloud = simulate_conditional_particle_system(ZERO, ONE, ONE, 256, InitialSampler(), W0, policy, 0)
    rep = expand_conditional_measure(make_ito_field("mean-times-common-noise"), cloud, W0, W1)
    assert rep.terms["dmu_psi0_sigma0_dt"] == pytest.approx(1.0, abs=1e-12)


def test_conditional_rejects_single_noise_field_and_foreign_common_noise():
    policy, grid, W, W0, W1 = _setup()
    cloud = simulate_conditional_particle_system(ZERO, ONE, ONE, 8, InitialSampler(), W0, policy, 0)
    with pytest.raises(InvalidArgument):
        expand_conditional_measure(make_ito_field("static", M2), cloud, W0, W1)
    with pytest.raises(InvalidArgument):
        expand_conditional_measure(make_ito_field("static", M2, mode="two"), cloud, W, W1)


def test_conditional_joint_mixed_derivative():
    policy, grid, W, W0, W1 = _setup()
    cloud = simulate_conditional_particle_system(ZERO, ONE, ZERO, 32, InitialSampler(), W0, policy, 0)
    X = simulate_ito_process(ZERO, (ONE, ZERO), np.zeros(1), (W0, W1))
    rep = expand_conditional_joint(make_ito_field("static", _x_times(X_LIN), mode="two"), X, cloud, W0, W1)
    assert rep.lhs == pytest.approx(W0.values[-1, 0] ** 2, abs=1e-12)
    assert rep.terms["dx_dmu_gamma0_dt"] == pytest.approx(1.0, abs=1e-12)
    w, dw = W0.values[:-1, 0], W0.increments[:, 0]
    assert rep.terms["dxu_gamma0_dW0"] == pytest.approx(np.sum(w * dw), abs=1e-12)
    assert rep.terms["sigma0_dmu_dW0"] == pytest.approx(np.sum(w * dw), abs=1e-12)
    assert rep.residual == pytest.approx(np.sum(dw * dw) - 1.0, abs=1e-12)


def test_conditional_joint_second_noise_cross_term():
    policy, grid, W, W0, W1 = _setup()
    cloud = simulate_conditional_particle_system(ZERO, ZERO, ZERO, 4, InitialSampler(), W0, policy, 0)
    X = simulate_ito_process(ZERO, (ZERO, ONE), np.zeros(1), (W0, W1))
    fld = make_ito_field("linear-noise", G=_x_times(IF.constant(1.0)), c=2.0, mode="two", channel="W1")
    rep = expand_conditional_joint(fld, X, cloud, W0, W1)
    assert rep.terms["dxpsi1_gamma1_dt"] == pytest.approx(2.0, abs=1e-12)
    assert rep.ablation("dxpsi1_gamma1_dt") - rep.residual == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("theorem", ["IWL-full-measure", "IWL-full-joint", "IWL-conditional-measure",
                                     "IWL-conditional-joint", "IW-classic"])
def test_frozen_dynamics_give_zero(theorem):
    policy, grid, W, W0, W1 = _setup()
    y0 = InitialSampler("gaussian")
    conditional = "conditional" in theorem
    if conditional:
        cloud = simulate_conditional_particle_system(ZERO, ZERO, ZERO, 16, y0, W0, policy, 0)
        X = simulate_ito_process(ZERO, (ZERO, ZERO), np.array([0.4]), (W0, W1))
    else:
        cloud = simulate_particle_system(ZERO, ZERO, 16, y0, grid, policy, 0)
        X = simulate_ito_process(ZERO, ZERO, np.array([0.4]), W)
    F = _x_times(IF.constant(1.0)) if theorem == "IW-classic" else (
        MF.variance() if "measure" in theorem else MF.product(IF.trig(1.0, 0.0, 1.0), IF.poly((0, 0, 1))))
    fld = make_ito_field("static", F, mode="two" if conditional else None)
    rep = expand(theorem, fld, X=X, cloud=cloud, W=W, W0=W0, W1=W1)
    assert abs(rep.residual) <= 1e-12 and all(abs(v) <= 1e-12 for v in rep.terms.values())


def test_reduction_lattice():
    for check in reduction_checks(seed=3, M=64, N=32):
        assert check.passed, check.line()


# report plumbing ------------------------------------------------------------

def test_residual_and_ablation_bookkeeping():
    policy, grid, W, _, _ = _setup()
    cloud = simulate_particle_system(C.constant(0.5), ONE, 64, InitialSampler("gaussian"), grid, policy, 0)
    rep = expand_full_flow_measure(make_ito_field("linear-noise", MF.variance(), c=0.3), cloud, W)
    assert residual(rep) == rep.lhs - math.fsum(rep.terms.values())
    assert abs(residual(rep) + math.fsum(rep.terms.values()) - rep.lhs) <= math.ulp(abs(rep.lhs)) * 2
    assert term_ablation(rep, "phi_dt") == rep.residual  # zero-valued term
    assert term_ablation(rep, "dmu_b_dt") == pytest.approx(rep.residual + rep.terms["dmu_b_dt"], abs=1e-14)
    with pytest.raises(InvalidArgument):
        term_ablation(rep, "dxu_beta_dt")
    with pytest.raises(InvalidArgument):
        expand("IW-strong", rep)


def test_reports_are_permutation_invariant():
    policy, grid, W, W0, W1 = _setup()
    cloud = simulate_conditional_particle_system(C.linear_in_state(-0.5), ONE, ONE, 32, InitialSampler("gaussian"),
                                                 W0, policy, 0)
    fld = make_ito_field("linear-noise", MF.variance(), G=M2, mode="two", channel="W0")
    a = expand_conditional_measure(fld, cloud, W0, W1)
    b = expand_conditional_measure(fld, cloud.permuted(np.random.default_rng(0).permutation(32)), W0, W1)
    for k in a.terms:
        assert a.terms[k] == pytest.approx(b.terms[k], abs=1e-12)


def test_u_statistic_pair_average():
    est = EnsembleExpectationEstimator("u-statistic-pairs")
    g = np.random.default_rng(0).normal(size=(7, 1))
    ones = np.ones((7, 1))
    assert est.pair_mean_separable(2 * ones, ones) == 2.0
    brute = np.mean([g[l, 0] * g[m, 0] for l in range(7) for m in range(7) if l != m])
    assert est.pair_mean_separable(g, g) == pytest.approx(brute, abs=1e-14)
    assert est.pair_mean_kernel(lambda l, m: g[l, 0] * g[m, 0], 7) == pytest.approx(brute, abs=1e-14)
    with pytest.raises(InvalidArgument):
        est.pair_mean_separable(g[:1], g[:1])
    with pytest.raises(InvalidArgument):
        EnsembleExpectationEstimator("bootstrap")
