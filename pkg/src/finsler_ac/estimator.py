"""Gradient-estimate pipeline on solved fields.

Covers the substitution w = u^-q, the auxiliary function
H = F^2(grad w)/w^2 + beta (1 - w^(-2/q)) with beta = s q^2, the differential
inequality satisfied by H, the global (compact) and local (ball) bounds, and
the Liouville verdict.

Two normalizations of H are carried side by side: ``H`` is the raw function
above, ``H_normalized = H / q^2 = F^2(grad u)/u^2 + s (1 - u^2)`` is the form
in which the bounds are stated. Every report says which one it uses.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace

import numpy as np

from .curvature import comparison_constant, k0_bound, weighted_ricci, mixed_weighted_ricci
from .domain import ChartDomain
from .errors import InadmissibleParametersError, ResidualGateError, ValidationError
from .field import (GridField, _node_metric, central_gradient, finsler_laplacian, gradient_field,
                    linearized_laplacian, strong_residual)
from .metric import (SamplingResolution, _F_raw, _as_resolution, dual_norm, metric_and_cartan,
                     misalignment, reversibility, unit_directions)

U_FLOOR = 0.2
BOUNDARY_MARGIN = 2


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class EstimateParams:
    """Constants of the gradient estimates.

    Attributes
    ----------
    N : float
        Weighted-dimension parameter, N > n.
    epsilon : float
        In (0, 1).
    q, s : float
        Positive; beta = s q^2 is derived.
    rho0, K, A, K0, C : float
        Reversibility bound, curvature lower bound (Ric^N >= -K), misalignment
        bound, non-Riemannian bound and sup u.
    C1, C2 : float
        Cut-off constants (see :func:`cutoff_constants`).
    """

    N: float
    epsilon: float = 0.5
    q: float = 0.1
    s: float = 2.0 / 3.0
    rho0: float = 1.0
    K: float = 0.0
    A: float = 1.0
    K0: float = 0.0
    C: float = 1.0
    C1: float = math.pi
    C2: float = math.pi**2 / 2

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise InadmissibleParametersError("epsilon must lie in (0, 1)")
        if not self.q > 0 or not self.s > 0:
            raise InadmissibleParametersError("q and s must be positive")
        for name in ("rho0", "K", "A", "K0", "C", "C1", "C2"):
            if getattr(self, name) < 0:
                raise InadmissibleParametersError(f"{name} must be nonnegative")

    @property
    def beta(self) -> float:
        return self.s * self.q**2

    @property
    def C0(self) -> float:
        """Comparison contribution of the non-Riemannian tensors, sqrt(A) K0."""
        return math.sqrt(self.A) * self.K0

    def reduced_dimension(self, n) -> float:
        """N - epsilon (N - n)."""
        self.check_dimension(n)
        return self.N - self.epsilon * (self.N - n)

    def check_dimension(self, n):
        if not self.N > n:
            raise InadmissibleParametersError(f"need N > n = {n}, got N = {self.N}")

    def to_json(self):
        out = asdict(self)
        out["beta"] = self.beta
        out["C0"] = self.C0
        return out

    @classmethod
    def from_json(cls, obj):
        allowed = set(cls.__dataclass_fields__)
        extra = set(obj) - allowed
        if extra:
            raise ValidationError(f"unknown params keys: {sorted(extra)}")
        if "N" not in obj:
            raise ValidationError("params need N")
        return cls(**{k: float(v) for k, v in obj.items()})


def remark3_case1(N, n, **kw) -> EstimateParams:
    return EstimateParams(N=N, epsilon=0.5, q=1 / math.sqrt(N + n), s=2 / 3, **kw)


def remark3_case2(N, n, **kw) -> EstimateParams:
    return EstimateParams(N=N, epsilon=0.5, q=2 / (27 * (N + n)), s=2.0, **kw)


# ---------------------------------------------------------------------------
# cut-off profile

def cutoff_profile(r):
    """1 on [0, 1], cos^2(pi (r - 1) / 2) on [1, 2], 0 beyond (C^{1,1})."""
    r = np.asarray(r, dtype=float)
    mid = np.cos(0.5 * np.pi * (r - 1)) ** 2
    return np.where(r <= 1, 1.0, np.where(r >= 2, 0.0, mid))


def cutoff_constants(samples=200_001):
    """(C1, C2) with -C1 <= phi'/sqrt(phi) <= 0 and phi'' >= -C2 on [1, 2).

    Evaluated on a fine grid of the open transition interval from the exact
    derivatives ``phi' = -(pi/2) sin(pi (r-1))`` and
    ``phi'' = -(pi^2/2) cos(pi (r-1))``.
    """
    r = np.linspace(1.0, 2.0, samples)[:-1]
    t = np.pi * (r - 1)
    d1 = -0.5 * np.pi * np.sin(t)
    d2 = -0.5 * np.pi**2 * np.cos(t)
    ratio = d1 / np.sqrt(cutoff_profile(r))
    return float(-ratio.min()), float(-d2.min())


# ---------------------------------------------------------------------------
# w and H

def w_transform(u: GridField, q) -> GridField:
    """w = u^-q; requires u > 0 everywhere."""
    if not q > 0:
        raise ValidationError("q must be positive")
    if np.any(u.values <= 0):
        raise ValidationError("w = u^-q needs u > 0 on the grid")
    w = u.with_values(u.values ** (-q))
    w.boundary = None if u.boundary is None else (lambda x, f=u.boundary: f(x) ** (-q))
    w._ghost_cache = {}
    return w


def _reference_inverse(spec, u: GridField, grad):
    """g^{ij}(x, grad u), identity where grad u = 0 (unused there)."""
    nm = _node_metric(spec, u)
    if nm.kind == "euclidean":
        n = u.domain.dim
        return np.broadcast_to(np.eye(n), u.resolution + (n, n))
    if nm.kind == "riemannian":
        return nm.a_inv
    ref = np.where(grad.mask[..., None], grad.grad, 1.0)
    g, _ = metric_and_cartan(spec, u.nodes(), ref, with_cartan=False)
    return np.linalg.inv(g)


def _reference_norm2(g_inv, xi):
    return np.einsum("...ij,...i,...j->...", g_inv, xi, xi)


def _erode(mask, steps, periodic):
    out = mask.copy()
    for _ in range(steps):
        nxt = out.copy()
        for k in range(mask.ndim):
            if periodic:
                nxt &= np.roll(out, 1, axis=k) & np.roll(out, -1, axis=k)
            else:
                up = np.zeros_like(out)
                dn = np.zeros_like(out)
                sl_a = [slice(None)] * mask.ndim
                sl_b = [slice(None)] * mask.ndim
                sl_a[k], sl_b[k] = slice(1, None), slice(None, -1)
                up[tuple(sl_a)] = out[tuple(sl_b)]
                dn[tuple(sl_b)] = out[tuple(sl_a)]
                nxt &= up & dn
        out = nxt
    return out


def evaluation_mask(u: GridField, grad, u_floor=U_FLOOR, region=None):
    """Nodes of M_u with u > u_floor, whose two-node neighbourhood has u > 0,
    at least two nodes from an open boundary, and inside ``region``."""
    positive = _erode(u.values > 0, BOUNDARY_MARGIN, u.domain.periodic)
    m = grad.mask & (u.values > u_floor) & positive
    if not u.domain.periodic:
        inner = np.zeros_like(m)
        inner[(slice(BOUNDARY_MARGIN, -BOUNDARY_MARGIN),) * u.domain.dim] = True
        m &= inner
    if region is not None:
        m &= region.contains(u.nodes())
    return m


def _field_from(u, values):
    # auxiliary lattice function (no Dirichlet profile; ghosts extrapolated)
    vals = np.where(np.isfinite(values), values, 0.0)
    return GridField(u.domain, vals, u.grad_mask_eps)


@dataclass
class HField:
    """H (raw), H_normalized = H / q^2 and the M_u mask.

    ``gradient_term`` is F^2_{grad u}(grad w)/w^2 (raw); off M_u it is 0.
    """

    H: GridField
    H_normalized: GridField
    mask: np.ndarray
    gradient_term: np.ndarray
    params: EstimateParams
    normalization: str = "raw H; H_normalized = H / q^2"


def h_functional(spec, mu, u: GridField, params: EstimateParams, grad=None) -> HField:
    """H from w = u^-q with dw = -q u^(-q-1) du, and H_normalized from u directly."""
    if np.any(u.values <= 0):
        raise ValidationError("H needs u > 0 on the grid")
    grad = grad or gradient_field(spec, mu, u)
    q, s = params.q, params.s
    w = u.values ** (-q)
    dw = (-q * u.values ** (-q - 1))[..., None] * grad.du
    g_inv = _reference_inverse(spec, u, grad)
    gterm = np.where(grad.mask, _reference_norm2(g_inv, dw) / w**2, 0.0)
    H = gterm + params.beta * (1 - w ** (-2 / q))
    Hn = grad.norm**2 / u.values**2 + s * (1 - u.values**2)
    return HField(u.with_values(H), u.with_values(Hn), grad.mask, gterm, params)


def w_norm_identity(spec, mu, u: GridField, q):
    """Both sides of F^2_{grad u}(grad w)/w^2 = q^2 F^2(grad u)/u^2 on M_u.

    The left side differentiates w = u^-q on the lattice (independent of the
    chain rule); returns ``(lhs, rhs, mask)``.
    """
    grad = gradient_field(spec, mu, u)
    w = w_transform(u, q)
    dw = central_gradient(w)
    g_inv = _reference_inverse(spec, u, grad)
    lhs = _reference_norm2(g_inv, dw) / w.values**2
    rhs = q**2 * grad.norm**2 / u.values**2
    return lhs, rhs, grad.mask


# ---------------------------------------------------------------------------
# differential identities on solved fields

@dataclass
class Lemma8Result:
    """Residual of the w-equation on the evaluation mask (NaN elsewhere)."""

    residual: np.ndarray
    laplacian_w: np.ndarray
    assembly: np.ndarray
    mask: np.ndarray
    empty: bool

    @property
    def sup_residual(self) -> float:
        return float(np.nanmax(np.abs(self.residual))) if not self.empty else 0.0

    @property
    def sup_assembly_gap(self) -> float:
        if self.empty:
            return 0.0
        return float(np.nanmax(np.abs(self.laplacian_w - self.assembly)))


def lemma8_residual(spec, mu, u: GridField, q, u_floor=U_FLOOR, region=None) -> Lemma8Result:
    """Delta^{grad u} w - [(q+1)/q F^2(grad w)/w + q w - q w^((q-2)/q)] on M_u.

    ``assembly`` is q(q+1) u^(-q-2) F^2(grad u) - q u^(-q-1) Delta u, the
    chain-rule form of Delta^{grad u} w, for comparison with the lattice value.
    """
    grad = gradient_field(spec, mu, u)
    m = evaluation_mask(u, grad, u_floor, region)
    nan = np.full(u.resolution, np.nan)
    if not np.any(m):
        return Lemma8Result(nan, nan.copy(), nan.copy(), m, True)
    with np.errstate(divide="ignore", invalid="ignore"):
        wv = np.where(u.values > 0, u.values ** (-q), np.nan)
    w = _field_from(u, wv)
    w._ghost_cache = {}
    dw = central_gradient(w)
    lap_w = linearized_laplacian(spec, mu, w, grad.grad, dw).values
    g_inv = _reference_inverse(spec, u, grad)
    Fw2 = _reference_norm2(g_inv, dw)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = (q + 1) / q * Fw2 / wv + q * wv - q * wv ** ((q - 2) / q)
        lap_u = finsler_laplacian(spec, mu, u, grad).values
        assembly = q * (q + 1) * u.values ** (-q - 2) * grad.norm**2 - q * u.values ** (-q - 1) * lap_u
    res = np.where(m, lap_w - rhs, np.nan)
    return Lemma8Result(res, np.where(m, lap_w, np.nan), np.where(m, assembly, np.nan), m, False)


@dataclass
class Lemma9Result:
    """Gap Delta^{grad u} H - RHS on the evaluation mask, and every RHS term."""

    gap: np.ndarray
    laplacian_H: np.ndarray
    terms: dict
    mask: np.ndarray
    empty: bool
    ricci: np.ndarray = dc_field(default=None, repr=False)

    @property
    def min_gap(self) -> float:
        return float(np.nanmin(self.gap)) if not self.empty else 0.0


LEMMA9_TERMS = ("H2", "F4", "cross", "gradient", "wH", "potential", "ricci")


def lemma9_terms(H, P, u2, dH_dot_grad_u, uvals, ric, params: EstimateParams, n):
    """The seven right-hand-side terms as arrays.

    Parameters
    ----------
    H : raw H; P : F^2(grad w)/w^2; u2 : w^(-2/q) = u^2;
    dH_dot_grad_u : dH(grad u); ric : Ric^N(x, -grad u).
    """
    eps, s, q = params.epsilon, params.s, params.q
    D = params.reduced_dimension(n)
    out = {
        "H2": 2 * (1 - eps) / D * H**2 / (s * s * q * q),
        "F4": (2 * (1 - eps) * (s * q + s - 1) ** 2 / (D * s * s * q * q) - 2 * (1 / eps - 1)) * P**2,
        "cross": 4 * (1 - eps) * (s * q + s - 1) / (D * s * s * q * q) * H * P,
        # (2/q) g(grad H, grad log w) with d log w = -q du/u
        "gradient": -2.0 * dH_dot_grad_u / uvals,
        "wH": 2 * u2 * H,
        "potential": (2 - 6 * s) * P * u2,
        # Ric^N(grad w)/w^2 with grad w = -q u^(-q-1) grad u
        "ricci": 2 * q * q * ric / uvals**2,
    }
    return out


def lemma9_gap(spec, mu, u: GridField, params: EstimateParams, ricci=None, ricci_scale=1.0,
               u_floor=U_FLOOR, region=None, mixed_direction=None) -> Lemma9Result:
    """Delta^{grad u} H - RHS of the H inequality on the evaluation mask.

    Delta^{grad u} H is the divergence form sigma^-1 d_i(sigma g^{ij}(grad u) H_j).

    Parameters
    ----------
    ricci : ndarray, optional
        Replaces Ric^N(x, -grad u) (same shape as u); computed by the curvature
        module otherwise. grad w is a positive multiple of -grad u, and the
        weighted Ricci curvature is 2-homogeneous but not even.
    ricci_scale : float
        Synthetic multiplier of the Ricci input (linearity checks).
    """
    n = u.domain.dim
    params.check_dimension(n)
    grad = gradient_field(spec, mu, u)
    m = evaluation_mask(u, grad, u_floor, region)
    nan = np.full(u.resolution, np.nan)
    if not np.any(m):
        return Lemma9Result(nan, nan.copy(), {k: nan.copy() for k in LEMMA9_TERMS}, m, True)
    q = params.q
    uv = u.values
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pos = uv > 0
        w = np.where(pos, uv ** (-q), np.nan)
        dw = (-q * uv ** (-q - 1))[..., None] * grad.du
        g_inv = _reference_inverse(spec, u, grad)
        P = np.where(grad.mask, _reference_norm2(g_inv, dw) / w**2, 0.0)
        u2 = w ** (-2 / q)
        H = P + params.beta * (1 - u2)
    Hf = _field_from(u, H)
    dH = central_gradient(Hf)
    lap_H = linearized_laplacian(spec, mu, Hf, grad.grad, dH).values
    if ricci is None:
        ric = np.zeros(u.resolution)
        x = u.nodes()[m]
        if mixed_direction is None:
            ric[m] = weighted_ricci(spec, mu, params.N, x, -grad.grad[m])
        else:
            W = np.broadcast_to(mixed_direction, x.shape)
            ric[m] = mixed_weighted_ricci(spec, mu, params.N, x, -grad.grad[m], W)
    else:
        ric = np.asarray(ricci, dtype=float)
    ric_used = ricci_scale * ric
    dHgu = np.einsum("...i,...i->...", dH, grad.grad)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = lemma9_terms(H, P, u2, dHgu, uv, ric_used, params, n)
    total = sum(terms.values())
    gap = np.where(m, lap_H - total, np.nan)
    terms = {k: np.where(m, v, np.nan) for k, v in terms.items()}
    return Lemma9Result(gap, np.where(m, lap_H, np.nan), terms, m, False, ricci=np.where(m, ric, np.nan))


# ---------------------------------------------------------------------------
# theorem bounds (stated in the H_normalized form)

def theorem10_windows(params: EstimateParams, n):
    """Admissible q ranges: (case-1 upper bound, case-2 upper bound)."""
    D = params.reduced_dimension(n)
    eps, s = params.epsilon, params.s
    q1 = 0.5 / (1 + math.sqrt(D / eps))
    if s > 1:
        q2 = min(1.0, (s - 1) / s / ((1 - eps) / eps + (3 * s - 1) ** 2 / 2) * 2 * (1 - eps) / D)
    else:
        q2 = 0.0
    return q1, q2


def theorem10_case1(params: EstimateParams, n, with_q=False) -> float:
    """4 rho0^2 K D / (3 (1 - eps)) (s = 2/3); with_q multiplies by q^2 (raw H)."""
    D = params.reduced_dimension(n)
    val = 4 * params.rho0**2 * params.K * D / (3 * (1 - params.epsilon))
    return val * params.q**2 if with_q else val


def theorem10_case2(params: EstimateParams, n, check_window=True, rel_tol=1e-12) -> float:
    """D s^2 rho0^2 K / (2 (1-eps)(s-1)) + (s/q) sqrt(D / (2 (1-eps))) C^2."""
    if not params.s > 1:
        raise InadmissibleParametersError("case 2 needs s > 1")
    D = params.reduced_dimension(n)
    if check_window:
        _, q2 = theorem10_windows(params, n)
        if params.q > q2 * (1 + rel_tol):
            raise InadmissibleParametersError(f"q = {params.q} exceeds the case-2 window {q2}")
    eps, s, q = params.epsilon, params.s, params.q
    return (D * s * s * params.rho0**2 * params.K / (2 * (1 - eps) * (s - 1))
            + s / q * math.sqrt(D / (2 * (1 - eps))) * params.C**2)


def theorem10_bound(params: EstimateParams, n):
    """(case-1 bound, case-2 bound); a case whose hypotheses fail gives None.

    Case 1 is independent of q in this normalization, so only epsilon, N and
    n are checked for it; its q window is available from
    :func:`theorem10_windows`.
    """
    c1 = theorem10_case1(params, n)
    try:
        c2 = theorem10_case2(params, n)
    except InadmissibleParametersError:
        c2 = None
    return c1, c2


def theorem11_windows(params: EstimateParams, n):
    D = params.reduced_dimension(n)
    eps, s = params.epsilon, params.s
    q1 = 3 / (2 * (1 + math.sqrt(D / eps)))
    if s > 1:
        q2 = 2 * (1 - eps) * (s - 1) / (s * D * (1 / eps - 1 + (3 * s - 1) ** 2 / 2))
    else:
        q2 = 0.0
    return q1, q2


def _coth_term(K2R, CNA, R):
    """sqrt(K C) coth(R sqrt(K / C)); tends to C / R as K -> 0."""
    if K2R == 0:
        return CNA / R
    z = R * math.sqrt(K2R / CNA)
    if z < 1e-6:
        return CNA / R * (1 + z * z / 3)
    return math.sqrt(K2R * CNA) / math.tanh(z)


def theorem11_case1(params: EstimateParams, n, R, K2R) -> float:
    _check_ball(params, R, K2R)
    D = params.reduced_dimension(n)
    eps, N = params.epsilon, params.N
    C1, C2 = params.C1, params.C2
    CNA = comparison_constant(N, n, params.A)
    bracket = ((2 * C1**2 + C2) / R**2 + 2 * params.A * K2R
               + 2 * (N + 1 - eps * (N + 1 - n)) / (1 - eps) * C1**2 / R**2
               + C1 / R * (_coth_term(K2R, CNA, R) + params.C0))
    return D / (1 - eps) * bracket


def theorem11_case2(params: EstimateParams, n, R, K2R, check_window=True, rel_tol=1e-12) -> float:
    _check_ball(params, R, K2R)
    if not params.s > 1:
        raise InadmissibleParametersError("case 2 needs s > 1")
    D = params.reduced_dimension(n)
    if check_window:
        _, q2 = theorem11_windows(params, n)
        if params.q > q2 * (1 + rel_tol):
            raise InadmissibleParametersError(f"q = {params.q} exceeds the case-2 window {q2}")
    eps, s, q = params.epsilon, params.s, params.q
    C1, C2 = params.C1, params.C2
    CNA = comparison_constant(params.N, n, params.A)
    inner = (D * s * s * C1**2 / (4 * (1 - eps) * (s * q + s - 1) * R**2) + 2 * C1**2 / R**2
             + C2 / R**2 + C1 / R * (_coth_term(K2R, CNA, R) + params.C0))
    return (D * s * s / (2 * (1 - eps)) * inner
            + D * s * s / (2 * (1 - eps) * (s - 1)) * params.A * K2R
            + s / q * math.sqrt(D / (2 * (1 - eps))) * params.C**2)


def _check_ball(params, R, K2R):
    if not R > 0:
        raise InadmissibleParametersError("R must be positive")
    if K2R < 0:
        raise InadmissibleParametersError("K(2R) must be nonnegative")
    if params.A < 1:
        raise InadmissibleParametersError("misalignment bound A must be >= 1")


def theorem11_bound(params, n, R, K2R):
    c1 = theorem11_case1(params, n, R, K2R)
    try:
        c2 = theorem11_case2(params, n, R, K2R)
    except InadmissibleParametersError:
        c2 = None
    return c1, c2


def theorem2_shape_constant(params: EstimateParams, n, case=1) -> float:
    """Smallest C' with  bound - [linear K terms] <= C' (1 + R + R sqrt(K)) / R^2.

    Uses sqrt(K C) coth(R sqrt(K/C)) <= sqrt(K C) + C / R; the linear-in-K
    part (2 A K D/(1-eps) in case 1, D s^2 A K/(2(1-eps)(s-1)) in case 2) and
    the C^2 constant of case 2 stay outside.
    """
    D = params.reduced_dimension(n)
    eps, N, s, q = params.epsilon, params.N, params.s, params.q
    C1, C2 = params.C1, params.C2
    CNA = comparison_constant(N, n, params.A)
    if case == 1:
        pref = D / (1 - eps)
        r2 = (2 * C1**2 + C2) + 2 * (N + 1 - eps * (N + 1 - n)) / (1 - eps) * C1**2
    else:
        pref = D * s * s / (2 * (1 - eps))
        r2 = D * s * s * C1**2 / (4 * (1 - eps) * (s * q + s - 1)) + 2 * C1**2 + C2
    # coefficients of 1/R^2, 1/R and sqrt(K)/R
    a = pref * (r2 + C1 * CNA)
    b = pref * C1 * params.C0
    c = pref * C1 * math.sqrt(CNA)
    return max(a, b, c)


# ---------------------------------------------------------------------------
# parameter search

EPS_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
S_GRID_CASE2 = (1.5, 2.0, 3.0)


def _threads():
    import os
    try:
        return max(1, int(os.environ.get("FINSLER_AC_THREADS", "1")))
    except ValueError:
        return 1


def optimize_case2(params: EstimateParams, n, q_points=25, kind="theorem10", R=None, K2R=None):
    """Grid search over (eps, s, q) of the case-2 bound; returns (best, params).

    q runs over a log grid ending at each window's upper edge.
    """
    tuples = []
    for eps in EPS_GRID:
        for s in S_GRID_CASE2:
            trial = replace(params, epsilon=eps, s=s)
            windows = theorem10_windows if kind == "theorem10" else theorem11_windows
            _, qmax = windows(trial, n)
            for q in np.geomspace(qmax * 1e-3, qmax, q_points):
                tuples.append(replace(trial, q=float(q)))

    def value(p):
        if kind == "theorem10":
            return theorem10_case2(p, n, check_window=False)
        return theorem11_case2(p, n, R, K2R, check_window=False)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        vals = list(pool.map(value, tuples))
    k = int(np.argmin(vals))
    return float(vals[k]), tuples[k]


# ---------------------------------------------------------------------------
# measured curvature inputs

def sampled_ricci_min(spec, mu, N, region: ChartDomain, samples=SamplingResolution(points_per_axis=4),
                      mixed_direction=None) -> float:
    """min of Ric^N(x, y) over sampled points and F-unit directions."""
    res = _as_resolution(samples)
    n = spec.dim
    pts = region.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    X = np.broadcast_to(pts[:, None, :], (len(pts), len(dirs), n))
    Y = np.broadcast_to(dirs[None], X.shape)
    Y = Y / _F_raw(spec, X, Y)[..., None]
    if mixed_direction is None:
        vals = weighted_ricci(spec, mu, N, X, Y)
    else:
        vals = mixed_weighted_ricci(spec, mu, N, X, Y, mixed_direction)
    return float(np.min(vals))


def measure_inputs(spec, mu, params: EstimateParams, region: ChartDomain,
                   samples=SamplingResolution(points_per_axis=4), with_k0=False):
    """params with K, rho0, A (and optionally K0) replaced by sampled values.

    Returns ``(params, measured)`` where ``measured`` records the raw samples.
    """
    ric_min = sampled_ricci_min(spec, mu, params.N, region, samples)
    rho = reversibility(spec, region, samples).value
    alpha = misalignment(spec, region, samples).value
    measured = {"ricci_min": ric_min, "rho0": rho, "A": alpha,
                "K": max(0.0, -ric_min), "resolution": _as_resolution(samples).as_dict()}
    update = dict(K=measured["K"], rho0=rho, A=max(1.0, alpha))
    if with_k0:
        k0 = k0_bound(spec, mu, region, samples)
        measured["K0"] = k0.K0
        measured["non_riemannian"] = k0.as_dict()
        update["K0"] = k0.K0
    return replace(params, **update), measured


# ---------------------------------------------------------------------------
# reports

@dataclass
class EstimateReport:
    theorem: str
    params: dict
    lhs_max: float
    rhs_bound: float
    max_ratio: float
    passed: bool
    witness: list
    normalization: str = "H_normalized = F^2(grad u)/u^2 + s (1 - u^2)"
    extra: dict = dc_field(default_factory=dict)

    def to_json(self):
        return {"theorem": self.theorem, "params": self.params, "lhs_max": self.lhs_max,
                "rhs_bound": self.rhs_bound, "max_ratio": self.max_ratio, "pass": self.passed,
                "witness": self.witness, "normalization": self.normalization, **self.extra}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def residual_gate(spec, mu, u: GridField, tol):
    r = strong_residual(spec, mu, u)
    if not r <= tol:
        raise ResidualGateError(f"field is not a converged solution: strong residual {r:.3e} > {tol:.3e}")
    return r


THEOREMS = ("T1-case1", "T1-case2", "T2-case1", "T2-case2")


def verify_estimate(spec, mu, u: GridField, params: EstimateParams, theorem: str,
                    R=None, center=None, tol=1e-9, gate_tol=None, inputs=None,
                    samples=SamplingResolution(points_per_axis=4)):
    """Compare max over M_u of H_normalized with a theorem bound.

    ``T1-*`` use the compact bounds over the whole lattice; ``T2-*`` use the
    ball bounds with radius R, the max being taken over nodes of M_u in the
    forward ball B(center, R).

    Curvature inputs are measured, not read from ``params``: K (or K(2R)),
    rho0, A and K0 come from :func:`measure_inputs` over the lattice domain
    (a superset of B(center, 2R), hence a valid K(2R)), and C = max u.
    ``inputs`` may pass a precomputed ``measure_inputs`` result.
    """
    if theorem not in THEOREMS:
        raise ValidationError(f"unknown theorem id {theorem!r}")
    n = u.domain.dim
    if gate_tol is not None:
        residual_gate(spec, mu, u, gate_tol)
    if np.any(u.values <= 0):
        raise ValidationError("estimates need a positive solution")
    case = 1 if theorem.endswith("case1") else 2
    ball = theorem.startswith("T2")
    if inputs is None:
        inputs = measure_inputs(spec, mu, params, u.domain, samples, with_k0=ball)
    params, measured = inputs
    params = replace(params, C=float(u.values.max()))
    if case == 1:
        if params.C > 1 + 1e-12:
            raise InadmissibleParametersError("case 1 needs u <= C <= 1")
        params = replace(params, s=2 / 3, C=min(params.C, 1.0))
    hf = h_functional(spec, mu, u, params)
    select = hf.mask.copy()
    if not ball:
        rhs = theorem10_case1(params, n) if case == 1 else theorem10_case2(params, n)
    else:
        if R is None or center is None:
            raise ValidationError("ball theorems need R and center")
        K2R = params.K
        rhs = theorem11_case1(params, n, R, K2R) if case == 1 else theorem11_case2(params, n, R, K2R)
        from .geodesic import distance_field
        d = distance_field(spec, center, u.nodes())
        select &= np.isfinite(d.values) & (d.values < R)
    if np.any(select):
        vals = np.where(select, hf.H_normalized.values, -np.inf)
        k = int(np.argmax(vals))
        lhs = float(vals.ravel()[k])
        witness = [int(i) for i in np.unravel_index(k, u.resolution)]
    else:
        # M_u empty: the gradient term vanishes and so does the comparison set
        lhs, witness = 0.0, []
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs <= tol else math.inf
    extra = {"measured": measured, "mask_nodes": int(hf.mask.sum())}
    if ball:
        extra["R"] = float(R)
        extra["center"] = [float(c) for c in center]
    return EstimateReport(theorem, params.to_json(), lhs, float(rhs), float(ratio),
                          bool(ratio <= 1 + tol), witness, extra=extra)


@dataclass
class LiouvilleVerdict:
    verdict: str                 # "pass", "fail" or "hypotheses not met"
    sup_deviation: float
    sup_gradient: float
    ricci_min: float
    reason: str = ""

    def to_json(self):
        return asdict(self)


def liouville_check(spec, mu, u: GridField, tol, N=None, gate_tol=1e-4,
                    samples=SamplingResolution(points_per_axis=4), mixed_direction=None):
    """sup |u - 1| <= tol and sup F(grad u) <= tol, under sampled Ric^N >= 0.

    The residual gate runs first (ResidualGateError for non-solutions);
    hypothesis failures give the verdict "hypotheses not met".
    """
    residual_gate(spec, mu, u, gate_tol)
    n = u.domain.dim
    N = n + 1 if N is None else N
    du = central_gradient(u)
    sup_grad = float(np.max(dual_norm(spec, u.nodes(), du)))
    dev = float(np.max(np.abs(u.values - 1)))
    region = u.domain
    ric_min = sampled_ricci_min(spec, mu, N, region, samples, mixed_direction)
    if np.any(u.values <= 0) or u.values.max() > 1 + 1e-12:
        return LiouvilleVerdict("hypotheses not met", dev, sup_grad, ric_min, "need 0 < u <= 1")
    # sampled curvature must be nonnegative up to sampling noise
    if ric_min < -1e-6:
        return LiouvilleVerdict("hypotheses not met", dev, sup_grad, ric_min,
                                "sampled weighted Ricci curvature is negative")
    ok = dev <= tol and sup_grad <= tol
    return LiouvilleVerdict("pass" if ok else "fail", dev, sup_grad, ric_min)
