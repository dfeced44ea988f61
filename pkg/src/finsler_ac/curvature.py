"""Curvatures of Finsler metric measure spaces.

Chern curvatures R and P, flag and Ricci curvature, distortion and
S-curvature, weighted and mixed weighted Ricci curvature, the
non-Riemannian tensors T, U, the distortion difference and div C, and the
right-hand sides of the Hessian and Laplacian comparison theorems.

Index conventions follow :mod:`finsler_ac.metric`: ``R[..., i, j, k, l] =
R^i_{jkl}`` (antisymmetric in k, l) and ``P[..., i, j, k, l] = P^i_{jkl} =
-dGamma^i_jk/dy^l``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _fd
from .errors import DegenerateFlagError, DegenerateMetricError, ValidationError, ZeroVectorError
from .measure import MeasureSpec
from .metric import (Y_STEP, SamplingResolution, _as_resolution, _bcast, _connection, _F_raw,
                     _require_nonzero, check_randers_positive, dual_norm, metric_and_cartan,
                     unit_directions, x_derivative, x_steps)


@dataclass
class CurvatureData:
    """Chern curvature package at (x, y).

    ``flag(u)`` evaluates the flag curvature with pole y for transverse
    edges u of matching batch shape.
    """

    R: np.ndarray
    P: np.ndarray
    landsberg: np.ndarray
    ric: np.ndarray
    g: np.ndarray
    y: np.ndarray

    def flag(self, u):
        return _flag_from(self.R, self.g, self.y, np.asarray(u, dtype=float))


def _gamma_at(spec, x, y):
    return _connection(spec, x, y).Gamma


def _curvature_arrays(spec, x, y):
    conn = _connection(spec, x, y, margin_stencils=2)
    Gam, N = conn.Gamma, conn.N
    dx_gam = x_derivative(spec, lambda xx: _gamma_at(spec, xx, y), x, margin_stencils=2)
    h = Y_STEP * _F_raw(spec, x, y)
    dy_gam = _fd.first_derivative_along(lambda yy: _gamma_at(spec, x, yy), y, h)
    # delta_m Gamma = d_m Gamma - N^p_m dGamma/dy^p
    delta = dx_gam - np.einsum("...pm,...pijk->...mijk", N, dy_gam)
    first = np.einsum("...kijl->...ijkl", delta)            # delta_k Gamma^i_jl
    R = (first - np.einsum("...ijkl->...ijlk", first)
         + np.einsum("...ikm,...mjl->...ijkl", Gam, Gam)
         - np.einsum("...ilm,...mjk->...ijkl", Gam, Gam))
    P = -np.einsum("...lijk->...ijkl", dy_gam)
    return R, P, conn


def _flag_from(R, g, y, u):
    Ru = np.einsum("...j,...ijkl,...k,...l->...i", y, R, u, y)
    num = np.einsum("...i,...ij,...j->...", Ru, g, u)
    gyy = np.einsum("...i,...ij,...j->...", y, g, y)
    guu = np.einsum("...i,...ij,...j->...", u, g, u)
    gyu = np.einsum("...i,...ij,...j->...", y, g, u)
    den = gyy * guu - gyu**2
    if np.any(den <= 1e-12 * gyy * guu):
        raise DegenerateFlagError("flag pole y and edge u are parallel")
    return num / den


def g_orthonormal_frame(g, first=None, seed=None):
    """Batched g-orthonormal frames (rows), optionally starting with ``first``.

    Works in Cholesky coordinates w = L^T v (g = L L^T), where a Householder
    QR completes the first vector to an orthonormal basis. ``seed`` draws
    random completion candidates instead of the coordinate axes.
    """
    n = g.shape[-1]
    shape = g.shape[:-2]
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegenerateMetricError("orthonormal frame construction failed") from None
    if seed is None:
        cand = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
    else:
        cand = np.random.default_rng(seed).standard_normal(shape + (n, n))
    if first is not None:
        w0 = np.einsum("...ji,...j->...i", L, first)
        cand = np.concatenate([w0[..., :, None], cand[..., :, : n - 1]], axis=-1)
    q, r = np.linalg.qr(cand)
    if first is not None:
        q[..., :, 0] *= np.sign(r[..., 0, 0])[..., None]
    E = np.linalg.solve(np.swapaxes(L, -1, -2), q)
    return np.swapaxes(E, -1, -2)


def _ricci_from(R, g, y, F, seed=None):
    frame = g_orthonormal_frame(g, first=y / F[..., None], seed=seed)
    Ry = np.einsum("...j,...ijkl,...l->...ik", y, R, y)            # u -> R_y(u)
    total = 0.0
    for i in range(1, frame.shape[-2]):
        e = frame[..., i, :]
        total = total + np.einsum("...i,...ij,...jk,...k->...", e, g, Ry, e)
    return total


def chern_curvature(spec, x, y) -> CurvatureData:
    """Chern Riemannian curvature R, non-Riemannian curvature P, Landsberg L, Ric."""
    x, y = _bcast(x, y)
    _require_nonzero(y)
    check_randers_positive(spec, x)
    R, P, conn = _curvature_arrays(spec, x, y)
    # L^i_kl = -y^j P^i_jkl, lowered with g_y
    L_up = -np.einsum("...j,...ijkl->...ikl", y, P)
    L = np.einsum("...im,...mkl->...ikl", conn.g, L_up)
    F = _F_raw(spec, x, y)
    ric = _ricci_from(R, conn.g, y, F)
    return CurvatureData(R=R, P=P, landsberg=L, ric=ric, g=conn.g, y=y)


def flag_curvature(spec, x, y, u):
    """K(y, u) = g_y(R_y(u), u) / (g_y(y,y) g_y(u,u) - g_y(y,u)^2)."""
    cd = chern_curvature(spec, x, y)
    u = np.broadcast_to(np.asarray(u, dtype=float), cd.y.shape)
    return cd.flag(u)


def ricci(spec, x, y, seed=None):
    """Ric(y) = F^2 sum_i K(y, e_i) over a g_y-orthonormal completion of y/F.

    ``seed`` selects a random completion (the result is basis independent).
    """
    x, y = _bcast(x, y)
    _require_nonzero(y)
    R, _, conn = _curvature_arrays(spec, x, y)
    return _ricci_from(R, conn.g, y, _F_raw(spec, x, y), seed=seed)


def ricci_trace(spec, x, y):
    """Ric(y) as the trace y^j R^i_{j i l} y^l (independent of any frame)."""
    x, y = _bcast(x, y)
    R, _, _ = _curvature_arrays(spec, x, y)
    return np.einsum("...j,...ijil,...l->...", y, R, y)


# ---------------------------------------------------------------------------
# measure-coupled quantities

@dataclass
class WeightedCurvature:
    """Distortion tau, S-curvature, its derivative along the geodesic, and the
    weighted curvatures when requested."""

    tau: np.ndarray
    S: np.ndarray
    S_dot: np.ndarray
    ric_N: np.ndarray | None = None
    mixed_ric_N: np.ndarray | None = None
    flag_N: np.ndarray | None = None


def distortion(spec, mu: MeasureSpec, x, y):
    """tau = log(sqrt(det g(x, y)) / sigma(x))."""
    x, y = _bcast(x, y)
    g = metric_and_cartan(spec, x, y, with_cartan=False)[0]
    _, logdet = np.linalg.slogdet(g)
    return 0.5 * logdet - mu.log_density(x)


def _geodesic_samples(spec, x, y, dt, k):
    """States at t = -k dt, ..., k dt along the spray geodesic (RK4 steps)."""
    from .geodesic import rk4_step
    fwd = [(x, y)]
    bwd = []
    xf, vf = x, y
    xb, vb = x, y
    for _ in range(k):
        xf, vf = rk4_step(spec, xf, vf, dt)
        fwd.append((xf, vf))
        xb, vb = rk4_step(spec, xb, vb, -dt)
        bwd.append((xb, vb))
    return bwd[::-1] + fwd


def distortion_s_curvature(spec, mu, x, y) -> WeightedCurvature:
    """tau, S = d tau/dt and S_dot = d^2 tau/dt^2 along the geodesic from (x, y).

    Derivatives are 5-point differences of tau sampled on a short RK4
    geodesic with spatial step 1e-3 of the smallest domain extent.
    """
    x, y = _bcast(x, y)
    _require_nonzero(y)
    tau0 = distortion(spec, mu, x, y)
    if spec.x_independent and mu.constant:
        zero = np.zeros_like(tau0)
        return WeightedCurvature(tau=tau0, S=zero, S_dot=zero.copy())
    F = _F_raw(spec, x, y)
    dt = 1e-3 * float(np.min(spec.domain.extent)) / F
    states = _geodesic_samples(spec, x, y, dt[..., None], 2)
    taus = [distortion(spec, mu, xs, vs) for xs, vs in states]
    tm2, tm1, t0, tp1, tp2 = taus
    S = (tm2 - 8 * tm1 + 8 * tp1 - tp2) / (12 * dt)
    S_dot = (-tm2 + 16 * tm1 - 30 * t0 + 16 * tp1 - tp2) / (12 * dt**2)
    return WeightedCurvature(tau=tau0, S=S, S_dot=S_dot)


def _s_is_zero(S, F, spec):
    return np.abs(S) <= 1e-8 * F / float(np.min(spec.domain.extent))


def _weighted_combine(base, wc, N, n, F, spec):
    """Attach S_dot and -S^2/(N-n) per the case rules of the weighted curvatures."""
    if N < n:
        raise ValidationError(f"weighted curvature needs N >= n = {n}, got {N}")
    if np.isinf(N):
        return base + wc.S_dot
    if N == n:
        return np.where(_s_is_zero(wc.S, F, spec), base + wc.S_dot, -np.inf)
    return base + wc.S_dot - wc.S**2 / (N - n)


def weighted_ricci(spec, mu, N, x, y):
    """Ric_N = Ric + S_dot - S^2/(N - n); N = inf drops the last term and
    N = n gives -inf wherever S != 0."""
    x, y = _bcast(x, y)
    _require_nonzero(y)
    wc = distortion_s_curvature(spec, mu, x, y)
    F = _F_raw(spec, x, y)
    return _weighted_combine(ricci(spec, x, y), wc, N, spec.dim, F, spec)


def _trace_against(R, gV, gW_inv, V):
    # g^{ij}(W) g_mj(V) R^m_{a i l}(V) V^a V^l
    return np.einsum("...ij,...mj,...mail,...a,...l->...", gW_inv, gV, R, V, V)


def mixed_weighted_ricci(spec, mu, N, x, V, W):
    """tr_W R_V(V) + S_dot(V) - S(V)^2/(N - n); W = 0 gives weighted_ricci(V)."""
    x, V = _bcast(x, V)
    _require_nonzero(V)
    W = np.broadcast_to(np.asarray(W, dtype=float), V.shape)
    wzero = np.all(W == 0, axis=-1)
    Wsafe = np.where(wzero[..., None], V, W)
    R, _, conn = _curvature_arrays(spec, x, V)
    gW = metric_and_cartan(spec, x, Wsafe, with_cartan=False)[0]
    tr = _trace_against(R, conn.g, np.linalg.inv(gW), V)
    ric = _ricci_from(R, conn.g, V, _F_raw(spec, x, V))
    base = np.where(wzero, ric, tr)
    wc = distortion_s_curvature(spec, mu, x, V)
    return _weighted_combine(base, wc, N, spec.dim, _F_raw(spec, x, V), spec)


def weighted_flag(spec, mu, k, x, V, W):
    """K^k(V; W) = K(V; W) + S_dot/((n-1) F^2) - S^2/((n-1)(k-n) F^2)."""
    x, V = _bcast(x, V)
    n = spec.dim
    K = flag_curvature(spec, x, V, W)
    wc = distortion_s_curvature(spec, mu, x, V)
    F2 = _F_raw(spec, x, V) ** 2
    scaled = WeightedCurvature(tau=wc.tau, S=wc.S / np.sqrt((n - 1) * F2),
                               S_dot=wc.S_dot / ((n - 1) * F2))
    if k < n:
        raise ValidationError(f"weighted flag curvature needs k >= n = {n}")
    if np.isinf(k):
        return K + scaled.S_dot
    if k == n:
        return np.where(_s_is_zero(wc.S, np.sqrt(F2), spec), K + scaled.S_dot, -np.inf)
    return K + scaled.S_dot - wc.S**2 / ((n - 1) * (k - n) * F2)


# ---------------------------------------------------------------------------
# non-Riemannian tensors

def frozen_christoffel(spec, x, v, margin_stencils=1):
    """Levi-Civita Christoffel symbols of the Riemannian metric g_V at x.

    V extends v by V(x') = v - N(x, v)(x' - x), i.e. V is parallel at x; the
    frozen metric x' -> g(x', V(x')) is differenced in x.
    """
    x, v = _bcast(x, v)
    N = _connection(spec, x, v).N

    def g_along(xx):
        V = v - np.einsum("...ij,...j->...i", N, xx - x)
        return metric_and_cartan(spec, xx, V, with_cartan=False)[0]

    # periodic wrap must not alter the displacement xx - x; difference unwrapped
    dom = spec.domain
    hx = x_steps(spec)
    dom.check_stencil(x, margin_stencils * hx)
    n = x.shape[-1]
    parts = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = hx[k]
        parts.append((g_along(x + e) - g_along(x - e)) / (2 * hx[k]))
    dg = np.stack(parts, axis=x.ndim - 1)                      # (..., k, i, j)
    g = metric_and_cartan(spec, x, v, with_cartan=False)[0]
    bracket = (np.einsum("...kjl->...ljk", dg) + np.einsum("...jlk->...ljk", dg) - dg)
    return 0.5 * np.einsum("...il,...ljk->...ijk", np.linalg.inv(g), bracket)


def _lower(spec, x, y):
    g = metric_and_cartan(spec, x, y, with_cartan=False)[0]
    return np.einsum("...ij,...j->...i", g, y)


def t_curvature(spec, x, y, v):
    """T_y(v) = y_l (Gamma(x, y) - Gamma_hat(x; V))^l_jk v^j v^k.

    Gamma_hat is the Levi-Civita connection of g_V for the extension of v
    that is parallel at x.
    """
    x, y = _bcast(x, y)
    v = np.broadcast_to(np.asarray(v, dtype=float), y.shape)
    _require_nonzero(y)
    _require_nonzero(v)
    diff = _connection(spec, x, y).Gamma - frozen_christoffel(spec, x, v)
    return np.einsum("...l,...ljk,...j,...k->...", _lower(spec, x, y), diff, v, v)


def u_vector(spec, x, y, W, frame_seed=None):
    """U(y, W) = sum_i (Gamma(x, W) - Gamma_hat(x; Y))(e_i, e_i) over a
    g_W-orthonormal frame, Gamma_hat from the extension of y parallel at x."""
    x, y = _bcast(x, y)
    W = np.broadcast_to(np.asarray(W, dtype=float), y.shape)
    _require_nonzero(y)
    _require_nonzero(W)
    diff = _connection(spec, x, W).Gamma - frozen_christoffel(spec, x, y)
    gW = metric_and_cartan(spec, x, W, with_cartan=False)[0]
    if frame_seed is None:
        return np.einsum("...jk,...mjk->...m", np.linalg.inv(gW), diff)
    frame = g_orthonormal_frame(gW, seed=frame_seed)
    return np.einsum("...rj,...mjk,...rk->...m", frame, diff, frame)


def u_tensor(spec, x, y, W, frame_seed=None):
    """U_y(W) = g_W(U(y, W), W)."""
    x, y = _bcast(x, y)
    W = np.broadcast_to(np.asarray(W, dtype=float), y.shape)
    U = u_vector(spec, x, y, W, frame_seed)
    return np.einsum("...i,...i->...", U, _lower(spec, x, W))


def horizontal_distortion_gradient(spec, mu, x, y):
    """delta tau / delta x^i = d_i tau - N^m_i d tau/dy^m at reference y."""
    x, y = _bcast(x, y)
    conn = _connection(spec, x, y)
    grad_x = 0.5 * np.einsum("...ab,...iba->...i", conn.g_inv, conn.dg) - mu.grad_log_density(x)
    # d tau / dy^m = g^ab C_abm (mean Cartan torsion)
    mean_cartan = np.einsum("...ab,...abm->...m", conn.g_inv, conn.C)
    return grad_x - np.einsum("...mi,...m->...i", conn.N, mean_cartan)


def tau_difference(spec, mu, x, V, W):
    """Covector T_i(V, W) = (delta tau/delta x^i)(V) - (delta tau/delta x^i)(W)."""
    x, V = _bcast(x, V)
    W = np.broadcast_to(np.asarray(W, dtype=float), V.shape)
    _require_nonzero(V)
    _require_nonzero(W)
    return horizontal_distortion_gradient(spec, mu, x, V) - horizontal_distortion_gradient(spec, mu, x, W)


def _raised_cartan(spec, x, y):
    g, C = metric_and_cartan(spec, x, y)
    gi = np.linalg.inv(g)
    return np.einsum("...ia,...jb,...abk->...ijk", gi, gi, C)


def div_cartan(spec, x, V, field_jacobian=None):
    """Horizontal Chern divergence of the Cartan tensor along a vector field V.

    ``divC(V)^j = d/dx^i-covariant of C^{ij}_k(x, V(x)) contracted with V^k``,
    i.e. ``C^{ij}_{k|i}(V) V^k - C^{ij}_m (dV^m/dx^i + N^m_i(V))``. The first
    term vanishes identically (C^{ij}_k y^k = 0 and y is horizontally
    parallel), so the value is carried by the covariant derivative of V.

    Parameters
    ----------
    field_jacobian : ndarray (..., n, n), optional
        ``J[..., m, i] = dV^m/dx^i`` at x. Defaults to the extension that is
        parallel at x (J = -N), for which div C vanishes.

    Returns
    -------
    covector : ndarray (..., n)
        Lowered by g_V.
    norm : ndarray (...,)
        Dual norm F*(x, covector).
    """
    x, V = _bcast(x, V)
    _require_nonzero(V)
    conn = _connection(spec, x, V)
    Cup = _raised_cartan(spec, x, V)                         # C^{ij}_k
    dx = x_derivative(spec, lambda xx: _raised_cartan(spec, xx, V), x)        # (..., l, i, j, k)
    h = Y_STEP * _F_raw(spec, x, V)
    dy = _fd.first_derivative_along(lambda yy: _raised_cartan(spec, x, yy), V, h)
    delta = dx - np.einsum("...ml,...mijk->...lijk", conn.N, dy)
    Gam = conn.Gamma
    # T^{ij}_{k|l} = delta_l T + Gamma^i_ml T^{mj}_k + Gamma^j_ml T^{im}_k - Gamma^m_kl T^{ij}_m
    cov = (delta
           + np.einsum("...iml,...mjk->...lijk", Gam, Cup)
           + np.einsum("...jml,...imk->...lijk", Gam, Cup)
           - np.einsum("...mkl,...ijm->...lijk", Gam, Cup))
    vec = np.einsum("...iijk,...k->...j", cov, V)
    if field_jacobian is not None:
        nabla_V = np.asarray(field_jacobian, dtype=float) + conn.N    # (..., m, i)
        vec = vec - np.einsum("...ijm,...mi->...j", Cup, nabla_V)
    covector = np.einsum("...jb,...b->...j", conn.g, vec)
    return covector, _dual_norm_safe(spec, x, covector)


def _dual_norm_safe(spec, x, xi):
    tiny = np.max(np.abs(xi), axis=-1) < 1e-300
    xi_safe = np.where(tiny[..., None], 0.0, xi)
    return dual_norm(spec, x, xi_safe)


@dataclass
class NonRiemannianNorms:
    """Sampled maxima of F(U), F*(T(V, W)) and F*(div C(V)); K0 is their sum."""

    T_norm: float
    U_norm: float
    Ttensor_norm: float
    divC_norm: float
    K0: float
    resolution: dict

    def as_dict(self):
        return {"T_norm": self.T_norm, "U_norm": self.U_norm, "Ttensor_norm": self.Ttensor_norm,
                "divC_norm": self.divC_norm, "K0": self.K0, "resolution": self.resolution}


def k0_bound(spec, mu, region, samples=SamplingResolution(points_per_axis=3)) -> NonRiemannianNorms:
    """Sampled maxima of the three non-Riemannian norms and K0 = their sum.

    T_norm (max |T_y(v)| over unit y, v) is reported alongside but is not
    part of K0.
    """
    res = _as_resolution(samples)
    n = spec.dim
    pts = region.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    P, D = len(pts), len(dirs)
    X = np.broadcast_to(pts[:, None, :], (P, D, n))
    Y = np.broadcast_to(dirs[None, :, :], (P, D, n))
    Fd = _F_raw(spec, X, Y)
    Y = Y / Fd[..., None]                                   # indicatrix
    conn = _connection(spec, X, Y)
    hat = frozen_christoffel(spec, X, Y)
    gW_inv = conn.g_inv
    # U(y, W)^m = g_W^{jk} (Gamma(W) - Gamma_hat(y))^m_jk
    A = np.einsum("pwjk,pwmjk->pwm", gW_inv, conn.Gamma)
    B = np.einsum("pwjk,pymjk->pwym", gW_inv, hat)
    U = A[:, :, None, :] - B                                # (P, W, Y, n)
    XU = np.broadcast_to(pts[:, None, None, :], U.shape)
    zeroU = np.all(np.abs(U) < 1e-300, axis=-1)
    Usafe = np.where(zeroU[..., None], 1.0, U)
    FU = np.where(zeroU, 0.0, _F_raw(spec, XU, Usafe))
    # T_y(v) over pairs
    ylow = np.einsum("pyij,pyj->pyi", conn.g, Y)
    Tyv = np.einsum("pyl,pyljk,pvj,pvk->pyv", ylow, conn.Gamma, Y, Y) \
        - np.einsum("pyl,pvljk,pvj,pvk->pyv", ylow, hat, Y, Y)
    # distortion difference: delta tau (V) - delta tau (W)
    dtau = horizontal_distortion_gradient(spec, mu, X, Y)
    Tt = dtau[:, :, None, :] - dtau[:, None, :, :]
    Ftt = _dual_norm_safe(spec, np.broadcast_to(pts[:, None, None, :], Tt.shape), Tt)
    _, divn = div_cartan(spec, X, Y)
    u_norm = float(np.max(FU))
    tt_norm = float(np.max(Ftt))
    dc_norm = float(np.max(divn))
    return NonRiemannianNorms(T_norm=float(np.max(np.abs(Tyv))), U_norm=u_norm,
                              Ttensor_norm=tt_norm, divC_norm=dc_norm,
                              K0=u_norm + tt_norm + dc_norm, resolution=res.as_dict())


# ---------------------------------------------------------------------------
# comparison right-hand sides

def ct_function(c, r):
    """ct_c(r): sqrt(c) cot(sqrt(c) r), 1/r, or sqrt(-c) coth(sqrt(-c) r).

    A Taylor expansion is used when |c| r^2 is tiny so that the value is
    continuous in c at c = 0.
    """
    c = float(c)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValidationError("ct_c(r) needs r > 0")
    if c > 0 and np.any(r >= np.pi / np.sqrt(c)):
        raise ValidationError("ct_c(r) with c > 0 needs r < pi/sqrt(c)")
    z = c * r**2
    small = np.abs(z) < 1e-6
    out = np.empty_like(r)
    rs = r[small]
    zs = z[small]
    out[small] = (1 - zs / 3 - zs**2 / 45) / rs
    rb = r[~small]
    if c > 0:
        s = np.sqrt(c)
        out[~small] = s / np.tan(s * rb)
    elif c < 0:
        s = np.sqrt(-c)
        out[~small] = s / np.tanh(s * rb)
    return out if out.ndim else float(out)


def hessian_comparison_rhs(N, n, c, r, g, grad_r, X):
    """(N-1)/(n-1) ct_c(r) (g(X, X) - g(grad r, X)^2) with g = g_{grad r}."""
    if not N > n:
        raise ValidationError("hessian comparison needs N > n")
    g = np.asarray(g, dtype=float)
    X = np.asarray(X, dtype=float)
    grad_r = np.asarray(grad_r, dtype=float)
    xx = np.einsum("...i,...ij,...j->...", X, g, X)
    rx = np.einsum("...i,...ij,...j->...", grad_r, g, X)
    return (N - 1) / (n - 1) * ct_function(c, r) * (xx - rx**2)


def comparison_constant(N, n, alpha):
    """C(N, alpha) = N + (alpha - 1) n - alpha."""
    return N + (alpha - 1) * n - alpha


def laplacian_comparison_rhs(N, n, alpha, K, K0, r):
    """C(N, alpha) ct_{-K/C}(r) + sqrt(alpha) K0."""
    if not N > n:
        raise ValidationError("laplacian comparison needs N > n")
    if alpha < 1 or K < 0 or K0 < 0:
        raise ValidationError("laplacian comparison needs alpha >= 1, K >= 0, K0 >= 0")
    C = comparison_constant(N, n, alpha)
    if C <= 0:
        raise ValidationError(f"C(N, alpha) = {C} must be positive")
    return C * ct_function(-K / C, r) + np.sqrt(alpha) * K0
