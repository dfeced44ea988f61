import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finsler_ac.curvature import comparison_constant, ct_function
from finsler_ac.domain import ChartDomain
from finsler_ac.errors import InadmissibleParametersError, ResidualGateError, ValidationError
from finsler_ac.estimator import (LEMMA9_TERMS, EstimateParams, cutoff_constants, cutoff_profile,
                                  evaluation_mask, h_functional, lemma8_residual, lemma9_gap,
                                  liouville_check, optimize_case2, remark3_case1, remark3_case2,
                                  theorem10_bound, theorem10_case1, theorem10_case2,
                                  theorem10_windows, theorem11_case1, theorem11_case2,
                                  theorem11_windows, theorem2_shape_constant, verify_estimate,
                                  w_norm_identity, w_transform)
from finsler_ac.field import GridField, SolverConfig, gradient_field, solve_allen_cahn
from finsler_ac.measure import gaussian, lebesgue
from finsler_ac.metric import SamplingResolution
from finsler_ac.presets import conformal_torus, euclidean_plane, randers_torus, unit_torus

from conftest import load_frozen, solve_kink

TWO_PI = 2 * np.pi


def _smooth(n=24, spec_domain=None):
    dom = spec_domain or unit_torus()
    return GridField.from_function(dom, n, lambda x: 0.6 + 0.25 * np.sin(TWO_PI * x[..., 0] + 0.2)
                                   * np.cos(TWO_PI * x[..., 1] + 0.5))


def test_params_validation_and_json():
    p = EstimateParams(N=3, q=0.2, s=2.0)
    assert p.beta == pytest.approx(0.08)
    assert p.reduced_dimension(2) == pytest.approx(2.5)
    back = EstimateParams.from_json({k: v for k, v in p.to_json().items() if k not in ("beta", "C0")})
    assert back == p
    with pytest.raises(InadmissibleParametersError):
        EstimateParams(N=3, epsilon=1.0)
    with pytest.raises(InadmissibleParametersError):
        EstimateParams(N=3, q=0.0)
    with pytest.raises(InadmissibleParametersError):
        p.reduced_dimension(3)
    with pytest.raises(ValidationError):
        EstimateParams.from_json({"N": 3, "bogus": 1})
    assert EstimateParams(N=3, A=4.0, K0=0.5).C0 == pytest.approx(1.0)


def test_cutoff_constants():
    assert cutoff_profile(np.array([0.0, 1.0, 2.0, 3.0])) == pytest.approx([1, 1, 0, 0])
    C1, C2 = cutoff_constants()
    # -phi'/sqrt(phi) = pi sin / cos * cos ... peaks at pi; -phi'' peaks at pi^2 / 2
    assert C1 == pytest.approx(math.pi, rel=1e-4)
    assert C2 == pytest.approx(math.pi**2 / 2, rel=1e-6)


def test_w_transform_examples():
    one = GridField.from_function(unit_torus(), 16, lambda x: np.ones(x.shape[:-1]))
    assert np.all(w_transform(one, 0.3).values == 1)
    half = one.with_values(np.full((16, 16), 0.5))
    assert np.allclose(w_transform(half, 2.0).values, 4.0)
    with pytest.raises(ValidationError):
        w_transform(one.with_values(-one.values), 1.0)


def test_algebraic_identities():
    for spec in (conformal_torus(), randers_torus()):
        u = _smooth()
        params = EstimateParams(N=4, q=0.3, s=1.5)
        hf = h_functional(spec, lebesgue(), u, params)
        m = hf.mask
        np.testing.assert_allclose(hf.H.values[m], params.q**2 * hf.H_normalized.values[m], rtol=1e-12)
        w = w_transform(u, params.q).values
        np.testing.assert_allclose(w ** (-2 / params.q), u.values**2, rtol=1e-12)


def test_norm_identity_fd_level():
    spec = randers_torus()
    errs = []
    for n in (32, 64):
        lhs, rhs, m = w_norm_identity(spec, lebesgue(), _smooth(n), 0.4)
        errs.append(np.abs(lhs - rhs)[m].max())
    assert errs[1] < errs[0] / 3.5


def test_h_functional_examples():
    spec = euclidean_plane()
    p = EstimateParams(N=3, s=2 / 3)
    one = GridField.from_function(unit_torus(), 16, lambda x: np.ones(x.shape[:-1]))
    assert np.all(h_functional(spec, lebesgue(), one, p).H_normalized.values == 0)
    half = one.with_values(np.full((16, 16), 0.5))
    assert np.allclose(h_functional(spec, lebesgue(), half, p).H_normalized.values, 0.5)


def test_empty_mask_reports():
    spec = euclidean_plane()
    one = GridField.from_function(unit_torus(), 16, lambda x: np.ones(x.shape[:-1]))
    r8 = lemma8_residual(spec, lebesgue(), one, 1.0)
    assert r8.empty and r8.sup_residual == 0.0
    r9 = lemma9_gap(spec, lebesgue(), one, EstimateParams(N=4))
    assert r9.empty and r9.min_gap == 0.0


def test_lemma8_on_kink():
    region = ChartDomain(1, "open-box", (0.5,), (3.0,))
    sups, gaps = [], []
    for h in (0.1, 0.05):
        spec, mu, u, _ = solve_kink(h)
        r = lemma8_residual(spec, mu, u, 1.0, region=region)
        assert not r.empty
        sups.append(r.sup_residual)
        gaps.append(r.sup_assembly_gap)
    # w = 1/u has a large fourth derivative near x = 0.5, so only the rates are small-h clean
    assert sups[0] / sups[1] >= 3.5
    assert gaps[0] / gaps[1] >= 3.5


def test_lemma9_terms_against_brute_force():
    oracle = load_frozen("lemma9_terms.json")
    spec = conformal_torus()
    res = tuple(oracle["resolution"])
    u = GridField.from_function(spec.domain, res, lambda x: 0.6 + 0.2 * np.sin(TWO_PI * x[..., 0])
                                * np.cos(TWO_PI * x[..., 1]) + 0.1 * np.cos(TWO_PI * x[..., 1]))
    p = oracle["params"]
    params = EstimateParams(N=p["N"], epsilon=p["epsilon"], q=p["q"], s=p["s"])
    ric = np.array(oracle["ricci_at_minus_grad_u"]).reshape(res)
    r = lemma9_gap(spec, lebesgue(), u, params, ricci=ric, u_floor=0.0)
    assert r.mask.sum() > 0.9 * r.mask.size
    for k in LEMMA9_TERMS:
        ref = np.array(oracle["terms"][k]).reshape(res)
        assert np.nanmax(np.abs(np.where(r.mask, r.terms[k] - ref, np.nan))) <= 1e-8, k
    # the curvature module's own Ric^N agrees with the closed form at FD accuracy
    own = lemma9_gap(spec, lebesgue(), u, params, u_floor=0.0)
    assert np.nanmax(np.abs(own.ricci - ric)) < 1e-5


def test_lemma9_ricci_scaling_linear():
    spec = conformal_torus()
    u = _smooth()
    params = EstimateParams(N=4, q=1 / math.sqrt(6), s=2 / 3)
    base = lemma9_gap(spec, lebesgue(), u, params)
    flipped = lemma9_gap(spec, lebesgue(), u, params, ricci=base.ricci, ricci_scale=-1.0)
    m = base.mask
    np.testing.assert_allclose((base.gap - flipped.gap)[m], -2 * base.terms["ricci"][m], atol=1e-10)


def test_evaluation_mask_drops_edges_and_low_values():
    spec, mu, u, _ = solve_kink(0.1)
    m = evaluation_mask(u, gradient_field(spec, mu, u))
    assert not m[:2].any() and not m[-2:].any()
    assert np.all(u.values[m] > 0.2)


def test_theorem10_examples():
    p = EstimateParams(N=3, epsilon=0.5, rho0=1.0, K=1.0)
    assert theorem10_case1(p, 2) == pytest.approx(20 / 3, rel=1e-15)
    assert theorem10_case1(replace(p, K=0.0), 2) == 0.0
    r3 = remark3_case2(3, 2, K=1.0, C=1.0)
    assert theorem10_case2(r3, 2) == pytest.approx(load_frozen("closed_forms.json")["theorem1"]["case2_float"], rel=1e-13)
    assert theorem10_windows(r3, 2)[1] == pytest.approx(r3.q, rel=1e-12)
    with pytest.raises(InadmissibleParametersError):
        theorem10_case2(replace(r3, q=2 * r3.q), 2)
    with pytest.raises(InadmissibleParametersError):
        theorem10_case2(replace(r3, s=0.9), 2)
    c1, c2 = theorem10_bound(replace(p, s=0.5), 2)
    assert c2 is None and c1 == pytest.approx(20 / 3)
    # the q-carrying form is the raw normalization
    assert theorem10_case1(p, 2, with_q=True) == pytest.approx(20 / 3 * p.q**2)


def test_theorem11_limits():
    p = remark3_case1(3, 2, A=1.5, K0=0.2)
    R = 2.0
    CNA = comparison_constant(p.N, 2, p.A)
    D = p.reduced_dimension(2)
    tiny = theorem11_case1(p, 2, R, 1e-14)
    ct0 = D / (1 - p.epsilon) * ((2 * p.C1**2 + p.C2) / R**2
                                + 2 * (p.N + 1 - p.epsilon * (p.N + 1 - 2)) / (1 - p.epsilon) * p.C1**2 / R**2
                                + p.C1 / R * (CNA * ct_function(0.0, R) + p.C0))
    assert tiny == pytest.approx(ct0, rel=1e-8)
    K = 0.7
    big = theorem11_case1(p, 2, 1e10, K)
    assert big == pytest.approx(D / (1 - p.epsilon) * 2 * p.A * K, rel=1e-8)
    # R = 1e3 already close
    assert theorem11_case1(p, 2, 1e3, K) == pytest.approx(D / (1 - p.epsilon) * 2 * p.A * K, rel=5e-3)
    with pytest.raises(InadmissibleParametersError):
        theorem11_case1(p, 2, -1.0, K)


def test_theorem11_case2_window_and_large_R():
    r3 = remark3_case2(3, 2, C=1.2, K=0.4)
    q1, q2 = theorem11_windows(r3, 2)
    assert r3.q <= q2
    val = theorem11_case2(r3, 2, 1e10, 0.4)
    D = r3.reduced_dimension(2)
    tail = D * 4 / (2 * 0.5 * 1) * 0.4 + 2 / r3.q * math.sqrt(D / 1.0) * 1.2**2
    assert val == pytest.approx(tail, rel=1e-8)


def test_theorem2_shape():
    for case in (1, 2):
        p = remark3_case1(3, 2, A=1.3, K0=0.4) if case == 1 else remark3_case2(3, 2, A=1.3, K0=0.4, C=1.1)
        cshape = theorem2_shape_constant(p, 2, case)
        for R in (0.5, 1.0, 3.0, 10.0):
            for K in (0.0, 0.3, 2.0):
                if case == 1:
                    bound = theorem11_case1(p, 2, R, K)
                    linear = (p.N + 2) * 2 * p.A * K
                    assert p.reduced_dimension(2) / (1 - p.epsilon) == pytest.approx(p.N + 2)
                    assert bound - linear <= cshape * (1 + R + R * math.sqrt(K)) / R**2 + 1e-12
                else:
                    bound = theorem11_case2(p, 2, R, K)
                    D = p.reduced_dimension(2)
                    linear = D * 4 / (2 * 0.5) * p.A * K + 2 / p.q * math.sqrt(D) * p.C**2
                    assert bound - linear <= cshape * (1 + R + R * math.sqrt(K)) / R**2 + 1e-9
    # Remark-4 constants: 27/sqrt(2) (N+n)^(3/2) C^2 and 2(N+n) K
    r = remark3_case2(3, 2, C=1.0, K=1.0)
    D = r.reduced_dimension(2)
    assert 2 / r.q * math.sqrt(D) == pytest.approx(27 / math.sqrt(2) * 5**1.5, rel=1e-13)
    assert D * 4 / (2 * 0.5) == pytest.approx(2 * 5)


def test_parameter_search_beats_remark3():
    r3 = remark3_case2(3, 2, K=0.0, C=1.0)
    fixed = theorem10_case2(r3, 2)
    best, p = optimize_case2(r3, 2, q_points=15)
    assert best <= fixed
    assert p.q <= theorem10_windows(p, 2)[1] * (1 + 1e-12)
    best11, p11 = optimize_case2(r3, 2, q_points=9, kind="theorem11", R=5.0, K2R=0.1)
    assert best11 <= theorem11_case2(r3, 2, 5.0, 0.1)


@settings(max_examples=60, deadline=None)
@given(st.floats(2.1, 10), st.floats(0.05, 0.95), st.floats(0.0, 5.0), st.floats(1.0, 3.0),
       st.floats(0.001, 1.0))
def test_property_theorem10_case1_monotone(N, eps, K, rho, q):
    p = EstimateParams(N=N, epsilon=eps, K=K, rho0=rho, q=q)
    base = theorem10_case1(p, 2)
    assert theorem10_case1(replace(p, K=K + 0.5), 2) >= base
    assert theorem10_case1(replace(p, rho0=rho * 1.1), 2) >= base
    assert theorem10_case1(replace(p, q=q * 0.5), 2) == base


@settings(max_examples=40, deadline=None)
@given(st.floats(2.5, 8), st.floats(0.1, 0.9), st.floats(1.1, 4.0))
def test_property_case2_window_positive(N, eps, s):
    p = EstimateParams(N=N, epsilon=eps, s=s)
    q1, q2 = theorem10_windows(p, 2)
    assert 0 < q2 <= 1 and q1 > 0
    assert theorem10_case2(replace(p, q=q2), 2) > 0


def test_verify_theorem1_conformal_torus():
    spec, mu = conformal_torus(), lebesgue()
    u0 = GridField.from_function(spec.domain, 24, lambda x: 0.6 + 0.3 * np.sin(TWO_PI * x[..., 0]))
    u, rep = solve_allen_cahn(spec, mu, u0, SolverConfig(residual_tol=1e-6, clamp_positive=True,
                                                         dt_initial=0.7 / 24**2))
    report = verify_estimate(spec, mu, u, EstimateParams(N=3, q=0.2), "T1-case1", gate_tol=1e-5)
    assert report.passed and report.max_ratio <= 1
    assert report.extra["measured"]["K"] > 0
    js = report.to_json()
    assert js["pass"] is True and js["theorem"] == "T1-case1"
    with pytest.raises(ValidationError):
        verify_estimate(spec, mu, u, EstimateParams(N=3), "T9")


def test_verify_flat_torus_constant_limit():
    spec, mu = euclidean_plane(), lebesgue()
    one = GridField.from_function(unit_torus(), 16, lambda x: np.ones(x.shape[:-1]))
    rep = verify_estimate(spec, mu, one, EstimateParams(N=3), "T1-case1", gate_tol=1e-12)
    assert rep.lhs_max == 0 and rep.rhs_bound == 0 and rep.passed


def test_verify_randers_torus_clamped():
    spec, mu = randers_torus(), lebesgue()
    u0 = GridField.from_function(spec.domain, 16, lambda x: 0.7 + 0.2 * np.sin(TWO_PI * x[..., 0]))
    u, rep = solve_allen_cahn(spec, mu, u0, SolverConfig(residual_tol=1e-6, clamp_positive=True,
                                                         dt_initial=0.4 / 16**2))
    report = verify_estimate(spec, mu, u, EstimateParams(N=3, q=0.2), "T1-case1", gate_tol=1e-5)
    assert report.passed
    assert report.extra["measured"]["rho0"] > 1


def test_verify_ball_theorem():
    dom = ChartDomain(2, "open-box", (-2.0, -2.0), (2.0, 2.0))
    spec = euclidean_plane(domain=dom)
    mu = gaussian()
    half = lambda x: np.full(x.shape[:-1], 0.5)
    u0 = GridField.from_function(dom, 21, half, boundary=half)
    u, _ = solve_allen_cahn(spec, mu, u0, SolverConfig(residual_tol=1e-8, dt_initial=0.2 * 0.2**2))
    rep = verify_estimate(spec, mu, u, EstimateParams(N=3), "T2-case1", R=0.9, center=[0.0, 0.0],
                          gate_tol=1e-6)
    assert rep.passed and rep.extra["R"] == 0.9
    with pytest.raises(ValidationError):
        verify_estimate(spec, mu, u, EstimateParams(N=3), "T2-case1")


def test_liouville_examples():
    spec, mu = euclidean_plane(), lebesgue()
    one = GridField.from_function(unit_torus(), 16, lambda x: np.ones(x.shape[:-1]))
    assert liouville_check(spec, mu, one, 1e-4).verdict == "pass"
    half = one.with_values(np.full((16, 16), 0.5))
    with pytest.raises(ResidualGateError):
        liouville_check(spec, mu, half, 1e-4)
    neg = one.with_values(-np.ones((16, 16)))
    assert liouville_check(spec, mu, neg, 1e-4).verdict == "hypotheses not met"
    # negative sampled curvature
    v = liouville_check(conformal_torus(), mu, one, 1e-4, samples=SamplingResolution(points_per_axis=8))
    assert v.verdict == "hypotheses not met" and v.ricci_min < 0
