"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
written straight to the terminal (outside pytest's capture).
"""
import math
import time

import numpy as np
import pytest
import sympy as sp

from finsler_ac import cli
from finsler_ac.curvature import (chern_curvature, comparison_constant, ct_function, div_cartan, k0_bound,
                                  laplacian_comparison_rhs, t_curvature, tau_difference, u_tensor)
from finsler_ac.domain import ChartDomain
from finsler_ac.estimator import (EstimateParams, LEMMA9_TERMS, lemma8_residual, lemma9_gap,
                                  liouville_check, remark3_case1, remark3_case2, theorem10_case1,
                                  theorem11_case1, theorem11_case2, theorem2_shape_constant)
from finsler_ac.field import (GridField, SolverConfig, energy, finsler_laplacian, first_variation,
                              gradient_field, residual_report, reverse_duality_check, solve_allen_cahn,
                              weak_residual)
from finsler_ac.measure import lebesgue
from finsler_ac.metric import (SamplingResolution, fundamental_tensor, global_invariants,
                               legendre_transform, reverse_metric, spray_and_connection)
from finsler_ac.presets import (conformal_torus, euclidean_plane, randers_const_b, randers_torus,
                                sphere_chart)

from conftest import kink, load_frozen, solve_kink

TWO_PI = 2 * np.pi
KINK_H = (0.05, 0.025, 0.0125)


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line, then assert."""
    def _verdict(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return _verdict


def _points(spec, rng, m):
    lo, hi = np.asarray(spec.domain.lower), np.asarray(spec.domain.upper)
    pad = 0.05 * (hi - lo)
    return rng.uniform(lo + pad, hi - pad, (m, spec.dim))


def test_01_riemannian_reduction(rng, verdict):
    t0 = time.perf_counter()
    mu = lebesgue()
    worst = {"analytic": 0.0, "finite-difference": 0.0}
    inv_dev = 0.0
    for mode in worst:
        for make in (sphere_chart, conformal_torus):
            spec = make(derivative_mode=mode)
            x = _points(spec, rng, 20)
            V, W = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
            J = rng.normal(size=(20, 2, 2))
            sizes = [
                np.abs(fundamental_tensor(spec, x, V).C).max(),
                np.abs(chern_curvature(spec, x, V).P).max(),
                np.abs(t_curvature(spec, x, V, W)).max(),
                np.abs(u_tensor(spec, x, V, W)).max(),
                np.abs(tau_difference(spec, mu, x, V, W)).max(),
                div_cartan(spec, x, V, field_jacobian=J)[1].max(),
            ]
            norms = k0_bound(spec, mu, spec.domain, SamplingResolution(points_per_axis=3, refine=False))
            sizes += [norms.T_norm, norms.K0]
            worst[mode] = max(worst[mode], max(sizes))
            if mode == "analytic":
                inv = global_invariants(spec, spec.domain, SamplingResolution(points_per_axis=4))
                inv_dev = max(inv_dev, *(abs(v - 1) for v in (inv.alpha, inv.rho, inv.kappa, inv.kappa_star)))
    dt = time.perf_counter() - t0
    ok = worst["analytic"] <= 1e-8 and worst["finite-difference"] <= 1e-5 and inv_dev <= 1e-6 and dt < 10
    verdict(1, "Riemannian reduction", ok,
            f"max tensor analytic {worst['analytic']:.1e}, FD {worst['finite-difference']:.1e}; "
            f"invariant deviation {inv_dev:.1e}; {dt:.1f} s")


def test_02_euler_and_homogeneity(rng, verdict):
    t0 = time.perf_counter()
    euler, ladder = 0.0, 0.0
    for make in (euclidean_plane, sphere_chart, randers_const_b, randers_torus):
        spec = make()
        x = _points(spec, rng, 1000)
        y = rng.normal(size=(1000, 2))
        base = fundamental_tensor(spec, x, y)
        con = spray_and_connection(spec, x, y)
        euler = max(euler, np.abs(np.einsum("...ijk,...i->...jk", base.C, y)).max())
        for k in (0.5, 2.0, 3.0):
            sc = fundamental_tensor(spec, x, k * y)
            ck = spray_and_connection(spec, x, k * y)
            scale = lambda a: max(1.0, np.abs(a).max())
            ladder = max(ladder,
                         np.abs(sc.F - k * base.F).max() / scale(base.F),
                         np.abs(sc.g - base.g).max() / scale(base.g),
                         np.abs(k * sc.C - base.C).max() / scale(base.C),
                         np.abs(ck.G - k * k * con.G).max() / scale(k * k * con.G),
                         np.abs(ck.N - k * con.N).max() / scale(k * con.N),
                         np.abs(ck.Gamma - con.Gamma).max() / scale(con.Gamma))
    dt = time.perf_counter() - t0
    ok = euler <= 1e-9 and ladder <= 1e-8 and dt < 10
    verdict(2, "Euler lemma and homogeneity", ok,
            f"max |C_ijk y^i| {euler:.1e}, worst ladder defect {ladder:.1e} (4 presets x 1000); {dt:.1f} s")


def test_03_legendre_round_trip(rng, verdict):
    t0 = time.perf_counter()
    spec = randers_const_b(0.5)
    x = _points(spec, rng, 1000)
    xi = rng.normal(size=(1000, 2))
    worst = 0.0
    for method in ("auto", "newton"):
        y = legendre_transform(spec, x, xi, method=method)
        g = fundamental_tensor(spec, x, y).g
        res = np.abs(np.einsum("...ij,...j->...i", g, y) - xi).max(axis=-1) / np.abs(xi).max(axis=-1)
        worst = max(worst, res.max())
    dt = time.perf_counter() - t0
    verdict(3, "Legendre round trip", worst <= 1e-10 and dt < 5,
            f"max |g(y) y - xi| / |xi| {worst:.1e} (closed form and Newton, 1000 covectors); {dt:.1f} s")


def test_04_reversibility(verdict):
    t0 = time.perf_counter()
    spec = randers_const_b(0.5)
    rho = global_invariants(spec, spec.domain).rho
    oracle = load_frozen("closed_forms.json")["reversibility_c05"]
    dt = time.perf_counter() - t0
    ok = abs(rho - 3) <= 1e-4 and abs(oracle - 3) <= 1e-12 and dt < 5
    verdict(4, "reversibility closed form", ok, f"rho = {rho:.8f}, 1-D maximization {oracle:.12f}; {dt:.1f} s")


def test_05_kink_convergence(verdict):
    t0 = time.perf_counter()
    errs, finest = [], None
    for h in KINK_H:
        spec, mu, u, rep = solve_kink(h)
        errs.append(float(np.max(np.abs(u.values - kink(u.nodes())))))
        finest = residual_report(spec, mu, u).strong_residual
    order = float(np.polyfit(np.log(KINK_H), np.log(errs), 1)[0])
    dt = time.perf_counter() - t0
    ok = order >= 1.9 and finest <= 1e-6 and dt < 60
    verdict(5, "kink convergence", ok,
            f"sup errors {', '.join(f'{e:.2e}' for e in errs)}; fitted order {order:.3f}; "
            f"finest strong residual {finest:.1e}; {dt:.1f} s")


def test_06_energy_descent_and_first_variation(rng, verdict):
    t0 = time.perf_counter()
    increases = []
    descent = True
    for h in KINK_H:
        _, _, _, rep = solve_kink(h)
        increases.append(float(np.max(np.diff(rep.energy_trace))))
        descent &= rep.energy_nonincreasing()
    # first variation against a centred difference of J, at non-stationary fields
    worst = 0.0
    spec, mu, u, _ = solve_kink(KINK_H[-1])
    cases = [(spec, mu, GridField.from_function(u.domain, u.resolution, lambda x: np.tanh(x[..., 0]),
                                                boundary=kink))]
    rt = randers_torus()
    cases.append((rt, mu, GridField.from_function(rt.domain, 32, lambda x: 0.5 + 0.3 * np.sin(
        TWO_PI * x[..., 0] + 0.4) * np.sin(TWO_PI * x[..., 1] + 1.1))))
    step = 1e-5
    for spec_c, mu_c, uc in cases:
        free = uc.free_nodes()
        for _ in range(10):
            v = uc.with_values(np.where(free, rng.normal(size=uc.resolution), 0.0))
            plus = uc.with_values(uc.values + step * v.values)
            minus = uc.with_values(uc.values - step * v.values)
            fd = (energy(spec_c, mu_c, plus) - energy(spec_c, mu_c, minus)) / (2 * step)
            an = first_variation(spec_c, mu_c, uc, v)
            worst = max(worst, abs(fd - an) / abs(an))
    dt = time.perf_counter() - t0
    ok = descent and worst <= 1e-6 and dt < 30
    verdict(6, "energy descent and first variation", ok,
            f"largest step increase {max(increases):.1e} (round-off slack 8 eps |J|); "
            f"first variation rel. error {worst:.1e} on 20 directions; {dt:.1f} s")


@pytest.mark.slow
def test_07_liouville_flat_torus(verdict):
    t0 = time.perf_counter()
    spec, mu = euclidean_plane(), lebesgue()
    u0 = GridField.from_function(spec.domain, 128, lambda x: 0.5 + 0.3 * np.sin(TWO_PI * x[..., 0])
                                 * np.sin(TWO_PI * x[..., 1]))
    h = 1.0 / 128
    u, rep = solve_allen_cahn(spec, mu, u0, SolverConfig(dt_initial=0.9 * h * h, residual_tol=2e-5,
                                                         clamp_positive=True))
    v = liouville_check(spec, mu, u, 1e-4, gate_tol=2e-4)
    dt = time.perf_counter() - t0
    ok = rep.converged and v.verdict == "pass" and v.sup_deviation <= 1e-4 and v.sup_gradient <= 1e-4 and dt < 300
    verdict(7, "Liouville on the flat torus", ok,
            f"{rep.steps} steps; sup|u - 1| {v.sup_deviation:.1e}, sup F(grad u) {v.sup_gradient:.1e}, "
            f"verdict {v.verdict!r}; {dt:.1f} s")


def test_08_lemma8_on_kink(verdict):
    t0 = time.perf_counter()
    runs = [solve_kink(h) for h in KINK_H]
    results = [lemma8_residual(spec, mu, u, 1.0) for spec, mu, u, _ in runs]
    # pointwise rates at the coarse nodes: the u > 0.2 edge moves with h, so
    # raw sups compare different points
    res_ratios, asm_ratios, raw = [], [], []
    for rc, rf in zip(results, results[1:]):
        m = rc.mask
        fine_res = rf.residual[::2][m]
        fine_asm = (rf.laplacian_w - rf.assembly)[::2][m]
        res_ratios.append(np.max(np.abs(rc.residual[m])) / np.max(np.abs(fine_res)))
        asm_ratios.append(np.max(np.abs((rc.laplacian_w - rc.assembly)[m])) / np.max(np.abs(fine_asm)))
        raw.append(rc.sup_residual / rf.sup_residual)
    dt = time.perf_counter() - t0
    ok = min(res_ratios) >= 3.5 and min(asm_ratios) >= 3.5 and dt < 60
    verdict(8, "Lemma 8 on the kink", ok,
            f"residual ratios {', '.join(f'{r:.2f}' for r in res_ratios)}; assembly ratios "
            f"{', '.join(f'{r:.2f}' for r in asm_ratios)} (raw sup ratios {', '.join(f'{r:.2f}' for r in raw)}); "
            f"{dt:.1f} s")


def test_09_lemma9_gap(tmp_path, verdict):
    t0 = time.perf_counter()
    oracle = load_frozen("lemma9_terms.json")
    spec = conformal_torus()
    res = tuple(oracle["resolution"])
    u = GridField.from_function(spec.domain, res, lambda x: 0.6 + 0.2 * np.sin(TWO_PI * x[..., 0])
                                * np.cos(TWO_PI * x[..., 1]) + 0.1 * np.cos(TWO_PI * x[..., 1]))
    p = oracle["params"]
    params = EstimateParams(N=p["N"], epsilon=p["epsilon"], q=p["q"], s=p["s"])
    ric = np.array(oracle["ricci_at_minus_grad_u"]).reshape(res)
    r = lemma9_gap(spec, lebesgue(), u, params, ricci=ric, u_floor=0.0)
    term_err = max(float(np.max(np.abs((r.terms[k] - np.array(oracle["terms"][k]).reshape(res))[r.mask])))
                   for k in LEMMA9_TERMS)
    report = cli.run("lemma-checks", tmp_path)
    l9, cal = report["results"]["lemma9"], report["results"]["calibration"]
    dt = time.perf_counter() - t0
    ok = term_err <= 1e-8 and report["verdicts"]["lemma9_gap_within_slack"] and not l9["empty"] and dt < 300
    verdict(9, "Lemma 9 gap", ok,
            f"brute-force term error {term_err:.1e}; min gap {l9['min_gap']:.3e} on {l9['mask_nodes']} nodes "
            f">= -C h^2 = {-cal['slack']:.3e} (Euclidean C {cal['C']:.0f}); {dt:.1f} s")


def test_10_theorem1_conformal_torus(tmp_path, verdict):
    t0 = time.perf_counter()
    report = cli.run("verify-theorem1", tmp_path)
    est = report["results"]["estimate"]
    N, n, rho0, K = sp.Integer(3), sp.Integer(2), sp.Integer(1), sp.Integer(1)
    eps = sp.Rational(1, 2)
    D = N - eps * (N - n)
    case1 = 4 * rho0**2 * K * D / (3 * (1 - eps))
    symbolic = case1 == sp.Rational(4, 3) * (N + n) * rho0**2 * K == sp.Rational(20, 3)
    numeric = theorem10_case1(EstimateParams(N=3, epsilon=0.5, rho0=1.0, K=1.0), 2)
    dt = time.perf_counter() - t0
    ok = (est["pass"] and est["max_ratio"] <= 1 and est["measured"]["K"] > 0 and symbolic
          and abs(numeric - 20 / 3) <= 1e-15 * 20 / 3 and dt < 300)
    verdict(10, "Theorem 1 on the conformal torus", ok,
            f"max_ratio {est['max_ratio']:.3g} ({est['mask_nodes']} nodes with grad u != 0), sampled K "
            f"{est['measured']['K']:.4f}; case-1 constant {case1} (package {numeric!r}); {dt:.1f} s")


def test_11_theorem11_limits(verdict):
    t0 = time.perf_counter()
    n = 2
    p = remark3_case1(3, n, A=1.5, K0=0.2)
    R, D = 2.0, p.reduced_dimension(n)
    CNA = comparison_constant(p.N, n, p.A)
    ct0 = D / (1 - p.epsilon) * ((2 * p.C1**2 + p.C2) / R**2
                                + 2 * (p.N + 1 - p.epsilon * (p.N + 1 - n)) / (1 - p.epsilon) * p.C1**2 / R**2
                                + p.C1 / R * (CNA * ct_function(0.0, R) + p.C0))
    small_k = abs(theorem11_case1(p, n, R, 1e-14) / ct0 - 1)
    K = 0.7
    large_r = abs(theorem11_case1(p, n, 1e10, K) / (D / (1 - p.epsilon) * 2 * p.A * K) - 1)
    # Remark-4 substitution: bound - linear part <= C (1 + R + R sqrt K) / R^2
    shape_ok = True
    for case in (1, 2):
        q = remark3_case1(3, n, A=1.3, K0=0.4) if case == 1 else remark3_case2(3, n, A=1.3, K0=0.4, C=1.1)
        c = theorem2_shape_constant(q, n, case)
        Dq = q.reduced_dimension(n)
        for R_ in (0.5, 1.0, 3.0, 10.0):
            for K_ in (0.0, 0.3, 2.0):
                if case == 1:
                    tail = theorem11_case1(q, n, R_, K_) - (q.N + n) * 2 * q.A * K_
                else:
                    tail = theorem11_case2(q, n, R_, K_) - (Dq * 4 / (2 * 0.5) * q.A * K_
                                                            + 2 / q.q * math.sqrt(Dq) * q.C**2)
                shape_ok &= tail <= c * (1 + R_ + R_ * math.sqrt(K_)) / R_**2 + 1e-9
    r = remark3_case2(3, n, C=1.0, K=1.0)
    coeff = 2 / r.q * math.sqrt(r.reduced_dimension(n))
    coeff_ok = abs(coeff / (27 / math.sqrt(2) * 5**1.5) - 1) <= 1e-13
    dt = time.perf_counter() - t0
    ok = small_k <= 1e-8 and large_r <= 1e-8 and shape_ok and coeff_ok and dt < 5
    verdict(11, "Theorem 11 limits", ok,
            f"K -> 0 rel. error {small_k:.1e}; R -> inf rel. error {large_r:.1e}; "
            f"Theorem-2 shape {'holds' if shape_ok else 'violated'}, 27/sqrt2 (N+n)^1.5 C^2 coefficient "
            f"{'matches' if coeff_ok else 'differs'}; {dt:.2f} s")


def test_12_reverse_duality(tmp_path, verdict):
    t0 = time.perf_counter()
    report = cli.run("randers-duality", tmp_path)
    duo = report["results"]["reverse_duality"]
    h = report["config"]["grid"]["spacing"][0]
    gap_solution = abs(duo["weak_residual_forward"] - duo["weak_residual_reverse"])
    # the identity is algebraic, so it also holds away from solutions
    spec, mu = randers_torus(), lebesgue()
    u = GridField.from_function(spec.domain, 32, lambda x: 0.4 + 0.3 * np.sin(TWO_PI * x[..., 0] + 0.3)
                                * np.cos(TWO_PI * x[..., 1]))
    gap_field = abs(weak_residual(spec, mu, u) - weak_residual(reverse_metric(spec), mu, u.with_values(-u.values)))
    nodal = reverse_duality_check(spec, mu, u)
    dt = time.perf_counter() - t0
    ok = max(gap_solution, gap_field, nodal) <= 1e-8 + h * h and dt < 60
    verdict(12, "reverse-metric duality", ok,
            f"|weak(u; F) - weak(-u; reverse F)| {gap_solution:.1e} at the solution, {gap_field:.1e} on a test field "
            f"(nodal max {nodal:.1e}); allowance 1e-8 + h^2 = {1e-8 + h * h:.1e}; {dt:.1f} s")


def test_13_ct_continuity_and_comparison(verdict):
    t0 = time.perf_counter()
    r = np.linspace(0.1, 10.0, 1000)
    cont = max(float(np.max(np.abs(ct_function(c, r) - 1 / r))) for c in (1e-6, -1e-6))
    radii = np.linspace(0.05, 5.0, 100)
    n = 2
    margin = min(float(np.min(laplacian_comparison_rhs(N, n, 1.0, 0.0, 0.0, radii) - (n - 1) / radii))
                 for N in (2.5, 3.0, 6.0))
    # the lattice Laplacian of |x - p| agrees with (n - 1)/r away from p
    dom = ChartDomain(2, "open-box", (-1.0, -1.0), (1.0, 1.0))
    spec, mu = euclidean_plane(domain=dom), lebesgue()
    dist = lambda x: np.linalg.norm(x, axis=-1)
    field = GridField.from_function(dom, 161, dist, boundary=dist)
    lap = finsler_laplacian(spec, mu, field, gradient_field(spec, mu, field)).values
    rr = dist(field.nodes())
    ring = (rr > 0.3) & (rr < 0.9)
    lattice = float(np.max(np.abs(lap[ring] * rr[ring] - (n - 1))))
    dt = time.perf_counter() - t0
    ok = cont <= 1e-5 and margin >= 0 and lattice <= 1e-2 and dt < 5
    verdict(13, "ct continuity and comparison", ok,
            f"max |ct(+-1e-6, r) - 1/r| {cont:.1e} on [0.1, 10]; min RHS - (n-1)/r {margin:.3e} at 100 radii; "
            f"lattice r Delta r - (n-1) {lattice:.1e}; {dt:.2f} s")
