"""Tour of a Minkowski-Randers norm |y| + 0.5 y^1 on the unit torus.

Prints the sampled global constants, checks the Legendre map on a few
covectors, shows that the forward distance is asymmetric, and compares the
flat Randers curvature with a Randers drift that varies in x.

    python demos/randers_geometry.py
"""
import numpy as np

from finsler_ac.curvature import chern_curvature, k0_bound, ricci
from finsler_ac.geodesic import forward_distance, integrate_geodesic
from finsler_ac.measure import lebesgue
from finsler_ac.metric import dual_norm, eval_metric, fundamental_tensor, global_invariants, legendre_transform
from finsler_ac.presets import randers_const_b, randers_torus

spec = randers_const_b(0.5)
inv = global_invariants(spec, spec.domain)
print(f"rho = {inv.rho:.6f}  kappa = {inv.kappa:.6f}  kappa* = {inv.kappa_star:.6f}  alpha = {inv.alpha:.6f}")
print(f"  sqrt(kappa) = {np.sqrt(inv.kappa):.6f}, so the reversibility bound rho <= sqrt(kappa) is tight here")

# Legendre map: y with g(y) y = xi, and F(y) = F*(xi)
x = np.array([0.3, 0.7])
for xi in ([1.0, 0.0], [-1.0, 0.0], [0.3, -0.8]):
    y = legendre_transform(spec, x, xi)
    g = fundamental_tensor(spec, x, y).g
    print(f"xi = {xi}: y = {np.round(y, 6)}, |g y - xi| = {np.abs(g @ y - xi).max():.1e}, "
          f"F(y) = {float(eval_metric(spec, x, y)):.6f}, F*(xi) = {float(dual_norm(spec, x, xi)):.6f}")

p, q = np.zeros(2), np.array([0.4, 0.0])
d_pq, d_qp = forward_distance(spec, p, q), forward_distance(spec, q, p)
print(f"d(p, q) = {d_pq:.4f}, d(q, p) = {d_qp:.4f}, ratio {d_pq / d_qp:.3f} (bounded by rho = {inv.rho:.3f})")

# x-independent norm: straight geodesics, no curvature
path = integrate_geodesic(spec, x, [0.2, 0.1], t_max=1.0)
print(f"geodesic endpoint {np.round(path.x[-1], 12)} vs straight line {x + [0.2, 0.1]}")
cd = chern_curvature(spec, x, [1.0, 0.3])
print(f"constant drift: max |R| = {np.abs(cd.R).max():.1e}, max |P| = {np.abs(cd.P).max():.1e}")

# drift that varies in x: the Landsberg tensor and the non-Riemannian norms switch on
wavy = randers_torus()
cd = chern_curvature(wavy, x, [1.0, 0.3])
norms = k0_bound(wavy, lebesgue(), wavy.domain)
print(f"varying drift: max |P| = {np.abs(cd.P).max():.3e}, Ric = {float(ricci(wavy, x, [1.0, 0.3])):.4f}")
print(f"  sampled norms: U {norms.U_norm:.3e}, distortion gap {norms.Ttensor_norm:.3e}, "
      f"div C {norms.divC_norm:.3e}, K0 = {norms.K0:.3e}")
