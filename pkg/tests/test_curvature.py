import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finsler_ac.curvature import (chern_curvature, comparison_constant, ct_function, distortion,
                                  distortion_s_curvature, div_cartan, flag_curvature,
                                  hessian_comparison_rhs, k0_bound, laplacian_comparison_rhs,
                                  mixed_weighted_ricci, ricci, ricci_trace, t_curvature,
                                  tau_difference, u_tensor, weighted_flag, weighted_ricci)
from finsler_ac.errors import DegenerateFlagError, ValidationError
from finsler_ac.measure import gaussian, lebesgue
from finsler_ac.metric import SamplingResolution, fundamental_tensor, spray_and_connection
from finsler_ac.presets import (conformal_torus, euclidean_plane, randers_const_b, randers_torus,
                                sphere_chart)

from conftest import load_frozen

SPHERE_X = np.array([[1.0, 0.5], [0.6, 2.0], [2.2, 4.0]])


def test_flat_and_minkowski_curvature_vanish():
    for spec in (euclidean_plane(), randers_const_b()):
        cd = chern_curvature(spec, [0.3, 0.4], [0.5, -1.0])
        assert np.abs(cd.R).max() < 1e-8
        assert np.abs(cd.P).max() < 1e-8


def test_sphere_curvature_oracle():
    spec = sphere_chart()
    y = np.array([0.3, 0.8])
    for x in SPHERE_X:
        cd = chern_curvature(spec, x, y)
        g = cd.g
        # constant curvature 1: R^i_jkl = delta^i_k g_jl - delta^i_l g_jk
        I = np.eye(2)
        expected = np.einsum("ik,jl->ijkl", I, g) - np.einsum("il,jk->ijkl", I, g)
        np.testing.assert_allclose(cd.R, expected, atol=2e-5)
        assert flag_curvature(spec, x, y, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-5)
        F = math.sqrt(y @ g @ y)
        assert ricci(spec, x, y / F) == pytest.approx(1.0, abs=1e-5)
    gauss = [row["gauss"] for row in load_frozen("closed_forms.json")["sphere"]]
    assert gauss == pytest.approx([1.0] * len(gauss))


def test_flag_scale_invariance_and_degenerate():
    spec = randers_torus()
    x, y, u = [0.3, 0.6], np.array([0.4, 0.7]), np.array([1.0, -0.2])
    a = flag_curvature(spec, x, y, u)
    b = flag_curvature(spec, x, y, 2 * u + 3 * y)
    assert a == pytest.approx(b, abs=1e-6)
    with pytest.raises(DegenerateFlagError):
        flag_curvature(spec, x, y, 2 * y)


def test_ricci_basis_independence():
    spec = randers_torus()
    x, y = [0.3, 0.6], [0.4, 0.7]
    a, b = ricci(spec, x, y, seed=1), ricci(spec, x, y, seed=7)
    assert a == pytest.approx(b, abs=1e-8)
    assert ricci_trace(spec, x, y) == pytest.approx(a, abs=1e-7)


def test_s_curvature_examples():
    wc = distortion_s_curvature(euclidean_plane(), lebesgue(), [0.2, 0.3], [1.0, 0.5])
    assert abs(wc.tau) < 1e-14 and abs(wc.S) < 1e-12 and abs(wc.S_dot) < 1e-10
    r = randers_const_b()
    wc = distortion_s_curvature(r, lebesgue(), [0.2, 0.3], [1.0, 0.5])
    assert abs(wc.S) < 1e-10 and abs(wc.S_dot) < 1e-8
    # det g of |y| + b.y is (1 + b.y/|y|)^3 for a = I in two dimensions: x independent
    y = np.array([1.0, 0.5])
    det = np.linalg.det(fundamental_tensor(r, [0.2, 0.3], y).g)
    assert det == pytest.approx((1 + 0.5 * y[0] / np.linalg.norm(y)) ** 3, rel=1e-12)
    spec = randers_torus()
    assert distortion(spec, gaussian(), [0.2, 0.3], 2 * y) == pytest.approx(
        distortion(spec, gaussian(), [0.2, 0.3], y), abs=1e-12)


def test_gaussian_weighted_ricci_oracle(rng):
    # tau = |x|^2/2, S = <x, y>, S_dot = |y|^2; N = inf gives 1 for unit y
    spec = euclidean_plane(domain=None)
    mu = gaussian()
    x = rng.uniform(0.1, 0.9, (10, 2))
    theta = rng.uniform(0, 2 * np.pi, 10)
    y = np.stack([np.cos(theta), np.sin(theta)], -1)
    wc = distortion_s_curvature(spec, mu, x, y)
    center = np.asarray(mu.center) if hasattr(mu, "center") else np.zeros(2)
    np.testing.assert_allclose(wc.S, np.einsum("ij,ij->i", x - center, y), atol=1e-8)
    np.testing.assert_allclose(wc.S_dot, 1.0, atol=1e-6)
    np.testing.assert_allclose(weighted_ricci(spec, mu, np.inf, x, y), 1.0, atol=1e-6)


def test_weighted_ricci_monotone_and_case_rules():
    spec = conformal_torus()
    x, y = [0.3, 0.2], [0.6, 0.5]
    vals = [weighted_ricci(spec, lebesgue(), N, x, y) for N in (2.5, 3, 5, 50, np.inf)]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    assert weighted_ricci(spec, lebesgue(), 2, x, y) == -np.inf
    with pytest.raises(ValidationError):
        weighted_ricci(spec, lebesgue(), 1.5, x, y)


def test_conformal_weighted_ricci_closed_form(rng):
    spec = conformal_torus()
    x = rng.uniform(0, 1, (20, 2))
    y = rng.normal(size=(20, 2))
    A, k = 0.1, 2 * np.pi
    p1, p11 = A * k * np.cos(k * x[:, 0]), -A * k * k * np.sin(k * x[:, 0])
    yy = (y**2).sum(1)
    ric = -p11 * yy
    S = 2 * p1 * y[:, 0]
    S_dot = 2 * (p11 * y[:, 0] ** 2 - 2 * (y[:, 0] * p1) ** 2 + yy * p1**2)
    N = 4.0
    # x-derivatives use steps of 1e-4 times the extent: agreement is at FD level
    np.testing.assert_allclose(weighted_ricci(spec, lebesgue(), N, x, y), ric + S_dot - S**2 / (N - 2),
                               atol=1e-5)


def test_mixed_weighted_ricci():
    spec = randers_torus()
    mu = lebesgue()
    x, V, W = np.array([0.3, 0.6]), np.array([0.4, 0.7]), np.array([-0.5, 0.2])
    assert mixed_weighted_ricci(spec, mu, 4, x, V, V) == pytest.approx(
        weighted_ricci(spec, mu, 4, x, V), abs=1e-8)
    assert mixed_weighted_ricci(spec, mu, 4, x, V, [0.0, 0.0]) == pytest.approx(
        weighted_ricci(spec, mu, 4, x, V), abs=1e-12)
    assert abs(mixed_weighted_ricci(euclidean_plane(), mu, 4, x, V, W)) < 1e-10
    # brute-force trace g^{ij}(W) g_V(R_V(e_i, V) V, e_j) by explicit loops
    R = chern_curvature(spec, x, V).R
    gV = fundamental_tensor(spec, x, V).g
    gWinv = np.linalg.inv(fundamental_tensor(spec, x, W).g)
    tr = 0.0
    for i in range(2):
        for j in range(2):
            for m in range(2):
                for a in range(2):
                    for l in range(2):
                        tr += gWinv[i, j] * gV[m, j] * R[m, a, i, l] * V[a] * V[l]
    wc = distortion_s_curvature(spec, mu, x, V)
    assert mixed_weighted_ricci(spec, mu, 4, x, V, W) == pytest.approx(
        tr + wc.S_dot - wc.S**2 / 2, abs=1e-9)


def test_weighted_flag_sphere_term_by_term():
    spec = sphere_chart()
    mu = lebesgue()
    x, V, W = SPHERE_X[0], np.array([0.3, 0.8]), np.array([1.0, 0.1])
    n, k = 2, 4
    wc = distortion_s_curvature(spec, mu, x, V)
    F2 = V @ fundamental_tensor(spec, x, V).g @ V
    expected = 1.0 + wc.S_dot / ((n - 1) * F2) - wc.S**2 / ((n - 1) * (k - n) * F2)
    assert weighted_flag(spec, mu, k, x, V, W) == pytest.approx(expected, abs=1e-5)
    assert abs(weighted_flag(euclidean_plane(), mu, k, x, V, W)) < 1e-10


def test_non_riemannian_tensors_vanish():
    mu = lebesgue()
    x, V, W = [0.3, 0.6], [0.4, 0.7], [-0.5, 0.2]
    for spec in (conformal_torus(), sphere_chart(), randers_const_b()):
        xx = SPHERE_X[0] if spec.name == "sphere-chart" else x
        assert abs(t_curvature(spec, xx, V, W)) < 1e-8
        assert abs(u_tensor(spec, xx, V, W)) < 1e-8
        assert np.abs(div_cartan(spec, xx, V)[0]).max() < 1e-8
        if spec.family == "riemannian":
            assert np.abs(tau_difference(spec, mu, xx, V, W)).max() < 1e-8
        k0 = k0_bound(spec, mu, spec.domain)
        assert k0.K0 < 1e-7


def test_non_riemannian_randers_torus():
    spec, mu = randers_torus(), lebesgue()
    x, V, W = [0.3, 0.6], np.array([0.4, 0.7]), np.array([-0.5, 0.2])
    a, b = tau_difference(spec, mu, x, V, W), tau_difference(spec, mu, x, W, V)
    np.testing.assert_allclose(a, -b, atol=1e-12)
    assert np.abs(tau_difference(spec, mu, x, V, V)).max() == 0
    u1, u2 = u_tensor(spec, x, V, W, frame_seed=1), u_tensor(spec, x, V, W, frame_seed=9)
    assert u1 == pytest.approx(u2, abs=1e-7)
    vec, norm = div_cartan(spec, x, V)
    _, norm2 = div_cartan(spec, x, 2.5 * V)
    assert norm >= 0 and norm == pytest.approx(norm2, rel=1e-6)
    k0 = k0_bound(spec, mu, spec.domain, SamplingResolution(points_per_axis=3))
    assert k0.K0 > 0
    # P vanishes iff T vanishes: the x-dependent drift is not Berwald
    assert np.abs(chern_curvature(spec, x, V).P).max() > 1e-4
    assert abs(t_curvature(spec, x, V, W)) > 1e-6


def test_k0_bound_against_dense_sampling():
    spec, mu = randers_torus(), lebesgue()
    coarse = k0_bound(spec, mu, spec.domain, SamplingResolution(points_per_axis=3, refine=False))
    dense = k0_bound(spec, mu, spec.domain, SamplingResolution(points_per_axis=8, directions=128, refine=False))
    assert dense.K0 == pytest.approx(coarse.K0, rel=0.1)


def _raised_cartan_tensor(spec, x, y):
    fd = fundamental_tensor(spec, x, y)
    return np.einsum("ia,jb,abk->ijk", fd.g_inv, fd.g_inv, fd.C)


def test_div_cartan_dual_route_linear_field():
    """Total x-derivative of C^{ij}_k(x, V(x)) for V(x) = v + J (x - x0) gives
    the same divergence as the horizontal-derivative route."""
    spec = randers_torus()
    x0, v = np.array([0.3, 0.6]), np.array([0.4, 0.7])
    J = np.array([[0.2, -0.1], [0.3, 0.05]])
    vec, norm = div_cartan(spec, x0, v, field_jacobian=J)
    h = 1e-5
    dT = np.zeros((2, 2, 2, 2))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        plus = _raised_cartan_tensor(spec, x0 + e, v + J @ e)
        minus = _raised_cartan_tensor(spec, x0 - e, v - J @ e)
        dT[i] = (plus - minus) / (2 * h)
    T = _raised_cartan_tensor(spec, x0, v)
    Gam = spray_and_connection(spec, x0, v).Gamma
    cov = (dT + np.einsum("iml,mjk->lijk", Gam, T) + np.einsum("jml,imk->lijk", Gam, T)
           - np.einsum("mkl,ijm->lijk", Gam, T))
    brute = np.einsum("iijk,k->j", cov, v)
    g = fundamental_tensor(spec, x0, v).g
    np.testing.assert_allclose(vec, g @ brute, atol=1e-6)
    assert norm > 1e-4
    # the parallel extension J = -N gives zero
    N = spray_and_connection(spec, x0, v).N
    np.testing.assert_allclose(div_cartan(spec, x0, v, field_jacobian=-N)[0], 0.0, atol=1e-8)


def test_ct_function_examples():
    assert ct_function(0.0, 2.0) == pytest.approx(0.5)
    assert ct_function(-1.0, 1.0) == pytest.approx(1.3130353, abs=1e-7)
    for row in load_frozen("closed_forms.json")["ct"]:
        assert ct_function(row["c"], row["r"]) == pytest.approx(row["value"], rel=1e-12)
    with pytest.raises(ValidationError):
        ct_function(1.0, 4.0)


def test_comparison_rhs_examples():
    g = np.eye(2)
    assert hessian_comparison_rhs(3, 2, 0.0, 1.0, g, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(2.0)
    assert hessian_comparison_rhs(3, 2, 0.0, 1.0, g, [1.0, 0.0], [1.0, 0.0]) == pytest.approx(0.0)
    assert hessian_comparison_rhs(5, 2, 0.0, 1.0, g, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(4.0)
    for row in load_frozen("closed_forms.json")["laplacian_comparison"]:
        val = laplacian_comparison_rhs(row["N"], row["n"], row["alpha"], row["K"], row["K0"], row["r"])
        assert val == pytest.approx(row["value"], rel=1e-12)
    assert comparison_constant(3, 2, 1) == 2
    for bad in ((2.0, 2, 1.0, 1.0, 0.0, 1.0), (3.0, 2, 0.5, 1.0, 0.0, 1.0), (3.0, 2, 1.0, -1.0, 0.0, 1.0)):
        with pytest.raises(ValidationError):
            laplacian_comparison_rhs(*bad)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 5.0), st.floats(0.05, 10.0))
def test_property_ct_ordering(c, r):
    """ct_{-c}(r) >= 1/r >= ct_c(r) wherever defined."""
    assert ct_function(-c, r) >= 1 / r - 1e-12
    if math.sqrt(c) * r < math.pi * 0.999:
        assert ct_function(c, r) <= 1 / r + 1e-12


def test_s_free_weighted_ricci_is_n_independent():
    spec, mu = randers_const_b(), lebesgue()
    x, y = [0.3, 0.2], [0.6, 0.5]
    vals = [weighted_ricci(spec, mu, N, x, y) for N in (2, 3, 7, np.inf)]
    assert np.allclose(vals, vals[0], atol=1e-10)


def test_laplacian_comparison_limits():
    assert comparison_constant(5, 2, 1) == 4
    for r in (0.3, 1.0, 4.0):
        assert laplacian_comparison_rhs(3, 2, 2.0, 0.0, 0.0, r) == pytest.approx(comparison_constant(3, 2, 2.0) / r)
    # direct evaluation: 2 sqrt(1/2) coth(sqrt(1/2)) = 2.3227 (the 1.7196 quoted alongside it does not
    # follow from the formula)
    val = laplacian_comparison_rhs(3, 2, 1, 1, 0, 1.0)
    assert val == pytest.approx(2 * math.sqrt(0.5) / math.tanh(math.sqrt(0.5)), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4.0, 4.0), st.floats(0.05, 1.4), st.floats(1.01, 1.5))
def test_property_ct_decreasing(c, r, factor):
    r2 = r * factor
    if c > 0 and math.sqrt(c) * r2 >= math.pi:
        return
    assert ct_function(c, r2) < ct_function(c, r)
