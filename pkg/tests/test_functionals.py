import numpy as np
import pytest
from hypothesis import given, strategies as st

from iwlions.core import EmpiricalMeasure, SeedPolicy, make_time_grid, sample_brownian
from iwlions.errors import InvalidArgument, UnsupportedOperation
from iwlions.fields import field_from_dict, field_value, make_ito_field
from iwlions.functionals import (InnerFunction as IF, MeasureFunctional as MF, Ridge, eval_functional,
                                 functional_from_dict, lions_derivative, lions_hessian_v, lions_second,
                                 require_separable, space_derivatives)
from iwlions.oracles import catalogue

ONE23 = EmpiricalMeasure(np.array([[1.0], [2.0], [3.0]]))
V2 = MF.linear(IF.poly((0, 0, 1)))
M2 = MF.quadratic_mean(IF.poly((0, 1)))


def test_evaluation_examples():
    assert eval_functional(MF.mean(), None, ONE23) == 2
    assert eval_functional(M2, None, ONE23) == 4
    assert eval_functional(MF.variance(), None, ONE23) == pytest.approx(2 / 3, abs=1e-15)


def test_derivative_examples():
    assert lions_derivative(V2, ONE23, 3.0) == pytest.approx([6.0])
    assert lions_hessian_v(V2, ONE23, 3.0) == pytest.approx(np.array([[2.0]]))
    assert lions_second(V2, ONE23, 3.0, 1.0) == pytest.approx(np.array([[0.0]]))

    assert lions_derivative(M2, ONE23, -7.0) == pytest.approx([4.0])
    assert lions_hessian_v(M2, ONE23, -7.0) == pytest.approx(np.array([[0.0]]))
    assert lions_second(M2, ONE23, -7.0, 0.5) == pytest.approx(np.array([[2.0]]))

    var = MF.variance()
    assert lions_derivative(var, ONE23, 5.0) == pytest.approx([6.0])
    assert lions_hessian_v(var, ONE23, 5.0) == pytest.approx(np.array([[2.0]]))
    assert lions_second(var, ONE23, 5.0, 0.0) == pytest.approx(np.array([[-2.0]]))


def test_double_integral_second_derivative_is_not_separable():
    F = MF.double_integral(IF.trig(1.0, 0.0, 1.0))
    pts = np.array([[0.1], [0.7]])
    assert F.dmu2_factors(pts) is None
    with pytest.raises(UnsupportedOperation):
        require_separable(F, pts)
    # the kernel form is still available: -g''(v - v') - g''(v' - v) with g = cos
    assert lions_second(F, pts, 0.3, 0.1) == pytest.approx(np.array([[2 * np.cos(0.2)]]))


def test_bad_inner_functions_rejected():
    with pytest.raises(InvalidArgument):
        Ridge("poly", (1, 2, 3, 4, 5, 6))
    with pytest.raises(InvalidArgument):
        Ridge("trig", (1, 2))
    with pytest.raises(InvalidArgument):
        MF("cubic-mean")


@pytest.mark.parametrize("d", [1, 2])
def test_space_derivatives_match_finite_differences(d):
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(7, d))
    x = rng.normal(size=d)
    h = 1e-5
    F = MF.product(IF.poly((1.0, 0.5, 0.25, -0.1)), IF.trig(1.0, 1.0, 0.8))
    dx, dxx, _ = space_derivatives(F, x, pts)
    for a in range(d):
        e = np.eye(d)[a] * h
        fd = (eval_functional(F, x + e, pts) - eval_functional(F, x - e, pts)) / (2 * h)
        assert dx[a] == pytest.approx(fd, abs=1e-6)
        fd2 = (space_derivatives(F, x + e, pts)[0] - space_derivatives(F, x - e, pts)[0]) / (2 * h)
        assert np.allclose(dxx[a], fd2, atol=1e-6)


def test_mixed_space_measure_derivative():
    F = MF.product(IF.poly((0, 1)), IF.poly((0, 0, 1)))
    _, _, dxdmu = space_derivatives(F, np.array([2.0]), ONE23, v=np.array([3.0]))
    # d/dx of a(x) dmu(v) = a'(x) f'(v) = 1 * 6
    assert dxdmu == pytest.approx(np.array([[6.0]]))


@given(st.integers(0, 10_000), st.sampled_from([1, 2]))
def test_second_lions_derivative_transpose_symmetry(seed, d):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(5, d))
    v, vp, x = rng.normal(size=(3, d))
    for F in catalogue(d).values():
        a = lions_second(F, pts, v, vp, x)
        b = lions_second(F, pts, vp, v, x)
        assert np.array_equal(a, b.T)


@given(st.sampled_from(sorted(catalogue(1))))
def test_functionals_serialise(name):
    F = catalogue(2)[name]
    G = functional_from_dict(F.to_dict())
    pts = np.random.default_rng(0).normal(size=(6, 2))
    x = np.array([0.3, -0.2])
    assert eval_functional(G, x, pts) == eval_functional(F, x, pts)


# fields --------------------------------------------------------------------

def _path(M=64, d=1, role="W", rep=0):
    return sample_brownian(make_time_grid(1.0, M), d, SeedPolicy(77).stream(role, rep))


def test_static_field_is_constant():
    W = _path()
    fld = make_ito_field("static", V2)
    fp = fld.along(W)
    idx = np.arange(W.grid.M)
    pts = np.broadcast_to(ONE23.points[:, None, :], (3, W.grid.M, 1))
    assert not fp.phi(idx, pts).any() and not fp.psi("W", idx, pts).any()
    for i in (0, 17, 64):
        assert field_value(fld, i, None, ONE23, W) == pytest.approx(14 / 3)


def test_linear_noise_field_telescopes():
    W = _path()
    fld = make_ito_field("linear-noise", MF.zero(), c=2.5)
    for i in (0, 9, 64):
        assert field_value(fld, i, None, ONE23, W) == pytest.approx(2.5 * W.values[i, 0], abs=1e-12)
    fld = make_ito_field("linear-noise", V2, c=-1.0)
    assert field_value(fld, 64, None, ONE23, W) == pytest.approx(14 / 3 - W.values[-1, 0], abs=1e-12)


def test_drift_ramp_riemann_error():
    errs = []
    for M in (64, 256, 1024):
        W = _path(M)
        v = field_value(make_ito_field("drift-ramp", V2), M, None, ONE23, W)
        errs.append(abs(v - 14 / 3 * 1.5))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] <= 14 / 3 / 1024


def test_exponential_martingale_converges_at_half_order():
    fld = make_ito_field("exponential-martingale", MF.constant(1.0), lam=1.0)
    pts = np.zeros((1, 1))
    Ms = [256, 1024, 4096]
    rms = []
    for M in Ms:
        errs = []
        for r in range(32):
            fp = fld.along(_path(M, rep=r))
            idx = np.arange(M + 1)
            cloud = np.broadcast_to(pts[:, None, :], (1, M + 1, 1))
            exact = np.exp(fp.noises["W"].values[:, 0] - 0.5 * fp.grid.nodes)
            errs.append(np.max(np.abs(fp.value(idx, cloud) - exact)))
        rms.append(np.sqrt(np.mean(np.square(errs))))
    slope = -np.polyfit(np.log2(Ms), np.log2(rms), 1)[0]
    assert 0.35 <= slope <= 0.65


def test_common_noise_loading_field():
    fld = make_ito_field("mean-times-common-noise")
    assert fld.mode == "two" and fld.channel == "W0"
    W0, W1 = _path(role="W0"), _path(role="W1")
    v = field_value(fld, 64, None, ONE23, {"W0": W0, "W1": W1})
    assert v == pytest.approx(2.0 * W0.values[-1, 0], abs=1e-12)
    fp = fld.along({"W0": W0, "W1": W1})
    idx = np.arange(64)
    pts = np.broadcast_to(ONE23.points[:, None, :], (3, 64, 1))
    assert not fp.psi("W1", idx, pts).any()
    assert np.allclose(fp.psi("W0", idx, pts), 2.0)
    with pytest.raises(InvalidArgument):
        field_value(fld, 3, None, ONE23, W0)


def test_unknown_field_kind_and_off_grid_time():
    with pytest.raises(InvalidArgument):
        make_ito_field("brownian-sheet", V2)
    with pytest.raises(InvalidArgument):
        field_value(make_ito_field("static", V2), 65, None, ONE23, _path())


def test_field_round_trip():
    fld = make_ito_field("linear-noise", MF.variance(), G=MF.mean(), c=0.7)
    assert field_from_dict(fld.to_dict()) == fld
