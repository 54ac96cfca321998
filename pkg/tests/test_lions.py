import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from iwlions.core import EmpiricalMeasure, SeedPolicy
from iwlions.errors import InvalidArgument, UnsupportedOperation
from iwlions.functionals import InnerFunction as IF, MeasureFunctional as MF, lions_derivative, lions_second
from iwlions.lions import (FiniteDifferenceScheme, MollifierKernel, empirical_projection, lipschitz_bound,
                           mollified_projection, numeric_lions_derivative, numeric_lions_gradients,
                           numeric_lions_second, wasserstein2)
from iwlions.oracles import catalogue

ONE23 = np.array([[1.0], [2.0], [3.0]])
V2 = MF.linear(IF.poly((0, 0, 1)))
M2 = MF.quadratic_mean(IF.poly((0, 1)))


def test_projection_examples():
    assert empirical_projection(MF.mean(), [[3.0], [1.0], [2.0]]) == 2
    assert empirical_projection(M2, [[0.0], [4.0]]) == 4


def test_numeric_derivative_examples():
    assert abs(numeric_lions_derivative(V2, ONE23, 1)[0] - 4) <= 1e-6
    for j in range(3):
        assert numeric_lions_derivative(M2, ONE23, j)[0] == pytest.approx(4, abs=1e-6)
    pts = np.random.default_rng(1).normal(size=(9, 2)) * 5
    for j in (0, 4, 8):
        assert np.allclose(numeric_lions_derivative(MF.linear(IF.poly((0, 1))), pts, j), 1.0, atol=1e-10)


def test_numeric_second_examples():
    assert numeric_lions_second(M2, ONE23, 0, 1).dmu2[0, 0] == pytest.approx(2, abs=1e-4)
    est = numeric_lions_second(V2, ONE23, 0, 0)
    assert est.dvdmu[0, 0] == pytest.approx(2, abs=1e-4)
    assert est.dmu2[0, 0] == 0
    assert numeric_lions_second(MF.variance(), [[0.0], [2.0]], 0, 1).dmu2[0, 0] == pytest.approx(-2, abs=1e-4)


def test_diagonal_correction_removes_order_one_over_n_bias():
    # for (mean)^2 the raw diagonal N * d2u^N is 2/N, the corrected estimate is 0
    est = numeric_lions_second(M2, ONE23, 2, 2)
    assert est.dvdmu[0, 0] == pytest.approx(0, abs=1e-4)
    assert est.dmu2[0, 0] == pytest.approx(2, abs=1e-4)


def test_invalid_arguments():
    for h in (0.0, -1e-4):
        with pytest.raises(InvalidArgument):
            FiniteDifferenceScheme(rel_step=h)
    with pytest.raises(InvalidArgument):
        numeric_lions_second(V2, [[1.0]], 0, 1)
    with pytest.raises(InvalidArgument):
        numeric_lions_derivative(V2, ONE23, 3)
    with pytest.raises(InvalidArgument):
        numeric_lions_gradients(V2, ONE23, indices=[-1])


@pytest.mark.parametrize("d", [1, 2])
def test_gradients_agree_with_single_particle_version(d):
    pts = np.random.default_rng(d).normal(size=(6, d))
    F = catalogue(d)["product"]
    x = np.full(d, 0.4)
    g = numeric_lions_gradients(F, pts, x=x)
    for j in range(6):
        assert np.allclose(g[j], numeric_lions_derivative(F, pts, j, x=x), rtol=0, atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
def test_projection_identity_on_random_clouds(seed, d):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(8, d))
    x = rng.normal(size=d)
    for F in catalogue(d).values():
        xx = None if F.x_free else x
        exact = lions_derivative(F, pts, pts[3], xx)
        assert np.max(np.abs(numeric_lions_derivative(F, pts, 3, x=xx) - exact)) <= 1e-5
        num = numeric_lions_second(F, pts, 1, 5, x=xx).dmu2
        assert np.max(np.abs(num - lions_second(F, pts, pts[1], pts[5], xx))) <= 1e-3


# W2 -------------------------------------------------------------------------

def test_w2_examples():
    assert wasserstein2([[0.0]], [[1.0]]) == 1
    assert wasserstein2([[0.0], [2.0]], [[3.0], [1.0]]) == 1
    assert wasserstein2([[0.0, 0.0], [1.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]]) == 0


def test_w2_unsupported_cases():
    with pytest.raises(UnsupportedOperation):
        wasserstein2(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(UnsupportedOperation):
        wasserstein2(np.zeros((513, 2)), np.zeros((513, 2)))
    with pytest.raises(InvalidArgument):
        wasserstein2(np.zeros((3, 1)), np.zeros((3, 2)))


def test_w2_unequal_sizes_in_one_dimension():
    # {0, 1} against {0, 0.5, 1}: quantile coupling costs (1/6)(0.5)^2 * 2
    assert wasserstein2([[0.0], [1.0]], [[0.0], [0.5], [1.0]]) ** 2 == pytest.approx(1 / 12)
    assert wasserstein2([[0.0], [1.0]], [[1.0], [0.0], [0.0], [1.0]]) == 0


clouds = st.integers(1, 7).flatmap(lambda n: st.tuples(
    *[st.lists(st.floats(-5, 5).map(lambda v: round(v, 6)), min_size=n, max_size=n) for _ in range(3)]))


@given(clouds, st.sampled_from([1, 2]))
def test_w2_metric_axioms(abc, d):
    a, b, c = (np.array(v).reshape(-1, 1) for v in abc)
    if d == 2:
        a, b, c = (np.hstack([v, v[::-1] * 0.5]) for v in (a, b, c))
    assert wasserstein2(a, b) == wasserstein2(b, a)
    assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-12
    if d == 1:
        assert (wasserstein2(a, b) == 0) == (sorted(a[:, 0]) == sorted(b[:, 0]))
    assert wasserstein2(a, a[::-1]) == 0


def test_empirical_measure_convergence_rate():
    rng = np.random.default_rng(2024)
    ref = rng.normal(size=(2**16, 1))
    Ns = [2**k for k in range(6, 13)]
    means = [np.mean([wasserstein2(rng.normal(size=(N, 1)), ref) ** 2 for _ in range(64)]) for N in Ns]
    slope = np.polyfit(np.log2(Ns), np.log2(means), 1)[0]
    assert -1.3 <= slope <= -0.7
    chain = [wasserstein2(rng.normal(size=(N, 1)), rng.normal(size=(4 * N, 1))) for N in (16, 256, 4096)]
    assert chain[0] > chain[1] > chain[2]


# mollifier ------------------------------------------------------------------

@pytest.mark.parametrize("d", [1, 2])
def test_bump_kernel_is_normalised(d):
    k = MollifierKernel(n=4, d=d)
    if d == 1:
        mass, _ = integrate.quad(lambda z: k.density(np.array([z]))[()], -1, 1, epsabs=1e-13)
    else:
        radial, _ = integrate.quad(lambda r: r * k.density(np.array([r, 0.0]))[()], 0, 1, epsabs=1e-13)
        mass = 2 * np.pi * radial
    assert abs(mass - 1) <= 1e-8


def test_kernel_rejects_bad_parameters():
    for kw in ({"n": 0}, {"n": 4, "Q": 0}, {"n": 2.5}):
        with pytest.raises(InvalidArgument):
            MollifierKernel(**kw)


def test_kernel_draws_are_symmetric_and_supported():
    z = MollifierKernel(n=1, d=2).sample(np.random.default_rng(0), 20000)
    assert np.all(np.linalg.norm(z, axis=-1) < 1)
    assert np.all(np.abs(z.mean(axis=0)) < 0.01)


def test_mollified_linear_functional_matches_projection():
    pts = np.random.default_rng(5).normal(size=(32, 1))
    res = mollified_projection(MF.mean(), pts, MollifierKernel(n=4, Q=4000), SeedPolicy(1).stream("mollifier", 0))
    assert res.error <= 4 * res.se + 1e-15


def test_mollified_projection_is_deterministic():
    pts = np.random.default_rng(5).normal(size=(16, 1))
    k = MollifierKernel(n=16, Q=500)
    a = mollified_projection(MF.variance(), pts, k, SeedPolicy(3).stream("mollifier", 0))
    b = mollified_projection(MF.variance(), pts, k, SeedPolicy(3).stream("mollifier", 0))
    assert a.value == b.value and np.array_equal(a.draws, b.draws)


@pytest.mark.parametrize("d", [1, 2])
def test_mollified_variance_bounds_and_refinement(d):
    pts = np.random.default_rng(8).normal(size=(64, d))
    F = MF.variance()
    lip = lipschitz_bound(F, pts)
    errs = []
    for n in (4, 16, 64, 256):
        k = MollifierKernel(n=n, Q=2000, d=d)
        res = mollified_projection(F, pts, k, SeedPolicy(11).stream("mollifier", 0, 0))
        assert res.error <= lip * k.scaled_radius
        assert np.all(res.w2_sq <= k.scaled_radius ** 2)
        errs.append(res.error)
    assert all(a > b for a, b in zip(errs, errs[1:]))
