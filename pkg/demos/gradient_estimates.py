"""Gradient estimates on solved fields, and how the ball bound scales with R.

1. Flat torus, positive data: the clamped flow goes to u = 1 and the
   Liouville check passes.
2. Box [-2, 2]^2 with a Gaussian measure and boundary value 0.5: the
   solution is not constant, so the ball estimate around 0 is tested on
   real gradients.
3. The ball bound as a function of R for fixed curvature inputs.

    python demos/gradient_estimates.py
"""
import numpy as np

from finsler_ac.domain import ChartDomain
from finsler_ac.estimator import (EstimateParams, liouville_check, remark3_case1, theorem11_case1,
                                  verify_estimate)
from finsler_ac.field import GridField, SolverConfig, solve_allen_cahn
from finsler_ac.measure import gaussian, lebesgue
from finsler_ac.presets import euclidean_plane

TWO_PI = 2 * np.pi

# 1. Liouville on a 32^2 flat torus
spec, mu = euclidean_plane(), lebesgue()
u0 = GridField.from_function(spec.domain, 32, lambda x: 0.5 + 0.3 * np.sin(TWO_PI * x[..., 0])
                             * np.sin(TWO_PI * x[..., 1]))
u, rep = solve_allen_cahn(spec, mu, u0, SolverConfig(dt_initial=0.9 / 32**2, residual_tol=2e-5,
                                                     clamp_positive=True))
v = liouville_check(spec, mu, u, 1e-4)
print(f"Liouville: {rep.steps} steps, sup|u - 1| = {v.sup_deviation:.1e}, "
      f"sup F(grad u) = {v.sup_gradient:.1e}, min sampled Ric^N = {v.ricci_min:.1e} -> {v.verdict}")

# 2. ball estimate on a Gaussian box
dom = ChartDomain(2, "open-box", (-2.0, -2.0), (2.0, 2.0))
box = euclidean_plane(domain=dom)
half = lambda x: np.full(x.shape[:-1], 0.5)
u0 = GridField.from_function(dom, 41, half, boundary=half)
u, rep = solve_allen_cahn(box, gaussian(), u0, SolverConfig(dt_initial=0.9 * 0.1**2, residual_tol=1e-8,
                                                            clamp_positive=True))
print(f"box solve: {rep.steps} steps, u in [{u.values.min():.4f}, {u.values.max():.4f}]")
for R in (0.5, 0.9):
    report = verify_estimate(box, gaussian(), u, EstimateParams(N=3), "T2-case1", R=R, center=[0.0, 0.0],
                             gate_tol=1e-7)
    m = report.extra["measured"]
    print(f"  R = {R}: max lhs {report.lhs_max:.4e} <= bound {report.rhs_bound:.4e} "
          f"(ratio {report.max_ratio:.2e}, K = {m['K']:.3f}, K0 = {m['K0']:.1e}) pass = {report.passed}")

# 3. the case-1 ball bound falls like 1/R^2 + 1/R towards its curvature floor
p = remark3_case1(3, 2, A=1.0, K0=0.0)
floor = (p.N + 2) * 2 * p.A * 1.0
for R in (0.5, 1.0, 2.0, 4.0, 8.0, 64.0, 1e4):
    print(f"  bound(R = {R:<7g}, K = 1) = {theorem11_case1(p, 2, R, 1.0):12.4f}   floor {floor:.4f}")
