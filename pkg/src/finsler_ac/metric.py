"""Finsler metric kernel.

Evaluates F, the fundamental tensor g, the Cartan tensor C, spray and Chern
connection coefficients, Legendre duality, and sampled global invariants
(reversibility, uniform convexity/smoothness, misalignment).

Every pointwise function is batched: ``x`` and ``y`` are arrays of shape
(..., n) that broadcast against each other, and results carry the broadcast
leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from . import _fd
from .coefficients import (CoefficientField, covector_field_from_json, identity_matrix,
                           matrix_field_from_json)
from .domain import ChartDomain
from .errors import (DegenerateMetricError, LegendreError, NonPositiveMetricError,
                     ValidationError, ZeroVectorError)

FAMILIES = ("euclidean", "riemannian", "randers", "custom")
DERIVATIVE_MODES = ("analytic", "finite-difference")

Y_STEP = 1e-3      # h_y = Y_STEP * F(x, y)
X_STEP = 1e-4      # h_x = X_STEP * domain extent (per axis)


@dataclass(frozen=True)
class MetricSpec:
    """Declarative description of a Finsler metric on a single chart.

    Parameters
    ----------
    family : {"euclidean", "riemannian", "randers", "custom"}
    domain : ChartDomain
    a : CoefficientField, optional
        Riemannian part, x -> symmetric positive-definite matrix.
    b : CoefficientField, optional
        Randers drift covector (components b_i, lowered).
    custom_F : callable, optional
        Batched black-box evaluator ``(x, y) -> F``.
    derivative_mode : {"analytic", "finite-difference"}
        How y-derivatives of F^2 are computed. Custom metrics always use
        finite differences.
    x_independent : bool
        Declares the metric translation invariant (Minkowski); enables the
        straight-line distance shortcut. Derived automatically for the
        built-in families.
    """

    family: str
    domain: ChartDomain
    a: CoefficientField | None = None
    b: CoefficientField | None = None
    custom_F: Callable | None = None
    derivative_mode: str = "analytic"
    x_independent: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"family must be one of {FAMILIES}")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ValidationError(f"derivative_mode must be one of {DERIVATIVE_MODES}")
        n = self.domain.dim
        if self.family in ("riemannian", "randers") and self.a is None:
            object.__setattr__(self, "a", identity_matrix(n))
        if self.family == "randers" and self.b is None:
            raise ValidationError("randers family needs a drift covector b")
        if self.family == "custom":
            if self.custom_F is None:
                raise ValidationError("custom family needs custom_F")
            object.__setattr__(self, "derivative_mode", "finite-difference")
        if self.family == "euclidean":
            object.__setattr__(self, "x_independent", True)
        elif self.family == "riemannian":
            object.__setattr__(self, "x_independent", bool(self.a.constant))
        elif self.family == "randers":
            object.__setattr__(self, "x_independent", bool(self.a.constant and self.b.constant))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def analytic(self) -> bool:
        return self.derivative_mode == "analytic"

    def to_json(self) -> dict:
        if self.family == "custom":
            raise ValidationError("custom metrics are not serialisable")
        out = {"family": self.family}
        if self.family in ("riemannian", "randers"):
            out["a"] = self.a.description
        if self.family == "randers":
            out["b"] = self.b.description
        out["derivative_mode"] = self.derivative_mode
        return out

    @classmethod
    def from_json(cls, obj, domain: ChartDomain) -> "MetricSpec":
        allowed = {"family", "a", "b", "derivative_mode"}
        unknown = set(obj) - allowed
        if unknown:
            raise ValidationError(f"unknown metric keys: {sorted(unknown)}")
        family = obj.get("family")
        if family not in ("euclidean", "riemannian", "randers"):
            raise ValidationError(f"metric family {family!r} cannot be built from JSON")
        n = domain.dim
        a = matrix_field_from_json(obj["a"], n) if "a" in obj else None
        b = covector_field_from_json(obj["b"], n) if "b" in obj else None
        if family == "euclidean" and (a is not None or b is not None):
            raise ValidationError("euclidean metric takes no coefficients")
        if family == "riemannian" and b is not None:
            raise ValidationError("riemannian metric takes no drift b")
        return cls(family, domain, a=a, b=b,
                   derivative_mode=obj.get("derivative_mode", "analytic"))


def euclidean(domain: ChartDomain, derivative_mode="analytic") -> MetricSpec:
    return MetricSpec("euclidean", domain, derivative_mode=derivative_mode)


def riemannian(domain, a, derivative_mode="analytic") -> MetricSpec:
    return MetricSpec("riemannian", domain, a=a, derivative_mode=derivative_mode)


def randers(domain, a, b, derivative_mode="analytic") -> MetricSpec:
    return MetricSpec("randers", domain, a=a, b=b, derivative_mode=derivative_mode)


def custom(domain, fun, x_independent=False) -> MetricSpec:
    return MetricSpec("custom", domain, custom_F=fun, x_independent=x_independent)


def reverse_metric(spec: MetricSpec) -> MetricSpec:
    """The reverse metric F_bar(x, y) = F(x, -y)."""
    if spec.family in ("euclidean", "riemannian"):
        return spec
    if spec.family == "randers":
        b = spec.b
        neg = CoefficientField(lambda x: -b(x), _negated(b.description), constant=b.constant)
        return MetricSpec("randers", spec.domain, a=spec.a, b=neg,
                          derivative_mode=spec.derivative_mode)
    fun = spec.custom_F
    return MetricSpec("custom", spec.domain, custom_F=lambda x, y: fun(x, -np.asarray(y)),
                      x_independent=spec.x_independent)


def _negated(desc):
    if isinstance(desc, list):
        return [-v for v in desc]
    if isinstance(desc, dict) and desc.get("preset") == "sine":
        d = dict(desc)
        d["constant"] = [-v for v in desc["constant"]]
        d["amplitude"] = [-v for v in desc["amplitude"]]
        return d
    if isinstance(desc, dict) and "polynomial" in desc:
        return {"polynomial": [{"coef": (-np.asarray(t["coef"])).tolist(), "powers": t["powers"]}
                               for t in desc["polynomial"]]}
    return {"negated": desc}


# ---------------------------------------------------------------------------
# pointwise evaluation

def _bcast(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.broadcast_arrays(x, y)


def _require_nonzero(y):
    if np.any(np.all(y == 0.0, axis=-1)):
        raise ZeroVectorError("metric-tensor operations need y != 0")


def _drift_norm2(a_inv, b):
    return np.einsum("...i,...ij,...j->...", b, a_inv, b)


def check_randers_positive(spec: MetricSpec, x):
    """Raise unless |b(x)|_a < 1 at every point of ``x``."""
    if spec.family != "randers":
        return
    x = np.asarray(x, dtype=float)
    a = spec.a(x)
    b = spec.b(x)
    nb = _drift_norm2(np.linalg.inv(a), b)
    if np.any(nb >= 1.0):
        worst = float(np.sqrt(np.max(nb)))
        raise NonPositiveMetricError(f"Randers drift has |b|_a = {worst:.6g} >= 1")


def _F_raw(spec, x, y):
    fam = spec.family
    if fam == "euclidean":
        return np.sqrt(np.einsum("...i,...i->...", y, y))
    if fam == "custom":
        out = np.asarray(spec.custom_F(x, y))
        # keep extended precision when the evaluator propagates it
        return out if out.dtype == np.longdouble else out.astype(float)
    a = spec.a(x)
    alpha = np.sqrt(np.einsum("...i,...ij,...j->...", y, a, y))
    if fam == "riemannian":
        return alpha
    return alpha + np.einsum("...i,...i->...", spec.b(x), y)


def eval_metric(spec: MetricSpec, x, y):
    """F(x, y) for y != 0.

    Examples
    --------
    >>> from finsler_ac.presets import euclidean_plane
    >>> float(eval_metric(euclidean_plane(), [0, 0], [3, 4]))
    5.0
    """
    x, y = _bcast(x, y)
    _require_nonzero(y)
    check_randers_positive(spec, x)
    return _F_raw(spec, x, y)


def _randers_pieces(a, b, y):
    ay = np.einsum("...ij,...j->...i", a, y)
    alpha = np.sqrt(np.einsum("...i,...i->...", y, ay))
    beta = np.einsum("...i,...i->...", b, y)
    dalpha = ay / alpha[..., None]
    hess_alpha = (a - dalpha[..., :, None] * dalpha[..., None, :]) / alpha[..., None, None]
    return alpha, beta, dalpha, hess_alpha


def _g_analytic(spec, x, y, with_cartan=True):
    n = y.shape[-1]
    shape = y.shape[:-1]
    fam = spec.family
    if fam == "euclidean":
        g = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
        return g, (np.zeros(shape + (n, n, n)) if with_cartan else None)
    a = np.broadcast_to(spec.a(x), shape + (n, n))
    if fam == "riemannian":
        return a.copy(), (np.zeros(shape + (n, n, n)) if with_cartan else None)
    b = np.broadcast_to(spec.b(x), shape + (n,))
    alpha, beta, dalpha, hess_alpha = _randers_pieces(a, b, y)
    lb = dalpha + b
    g = ((alpha + beta) / alpha)[..., None, None] * (a - dalpha[..., :, None] * dalpha[..., None, :]) \
        + lb[..., :, None] * lb[..., None, :]
    if not with_cartan:
        return g, None
    m = b - (beta / alpha)[..., None] * dalpha
    C = 0.5 * (hess_alpha[..., :, :, None] * m[..., None, None, :]
               + hess_alpha[..., None, :, :] * m[..., :, None, None]
               + hess_alpha[..., :, None, :] * m[..., None, :, None])
    return g, C


def _h_y(spec, x, y):
    return Y_STEP * _F_raw(spec, x, y)


def _F2_batched(spec, x):
    xe = x[..., None, :]
    return lambda pts: _F_raw(spec, xe, pts) ** 2


def _g_fd(spec, x, y, with_cartan=True, richardson=False):
    h = _h_y(spec, x, y)
    f2 = _F2_batched(spec, x)
    g = 0.5 * _fd.derivative_tensor(f2, y, h, 2, richardson)
    C = 0.25 * _fd.derivative_tensor(f2, y, h, 3, richardson) if with_cartan else None
    return g, C


def metric_and_cartan(spec, x, y, with_cartan=True):
    """(g, C) without validation; internal workhorse."""
    x, y = _bcast(x, y)
    if spec.analytic:
        return _g_analytic(spec, x, y, with_cartan)
    return _g_fd(spec, x, y, with_cartan)


def metric_tensor(spec, x, y):
    x, y = _bcast(x, y)
    _require_nonzero(y)
    return metric_and_cartan(spec, x, y, with_cartan=False)[0]


def dual_of_vector(spec, x, y):
    """The Legendre map l(y)_i = g_ij(x, y) y^j = (1/2) dF^2/dy^i."""
    x, y = _bcast(x, y)
    fam = spec.family
    if spec.analytic:
        if fam == "euclidean":
            return y.copy()
        a = spec.a(x)
        ay = np.einsum("...ij,...j->...i", a, y)
        if fam == "riemannian":
            return ay
        b = spec.b(x)
        alpha = np.sqrt(np.einsum("...i,...i->...", y, ay))
        F = alpha + np.einsum("...i,...i->...", b, y)
        return F[..., None] * (ay / alpha[..., None] + b)
    h = _h_y(spec, x, y)
    return 0.5 * _fd.derivative_tensor(_F2_batched(spec, x), y, h, 1)


@dataclass
class FundamentalData:
    """Pointwise tensor package at (x, y).

    Attributes
    ----------
    F : ndarray (...,)
    g, g_inv : ndarray (..., n, n)
    C : ndarray (..., n, n, n)
        Cartan tensor, totally symmetric, C(y, ., .) = 0.
    h : ndarray (..., n, n)
        Angular metric g - l (x) l / F^2.
    """

    F: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    C: np.ndarray
    h: np.ndarray


def _check_positive_definite(g):
    eig = np.linalg.eigvalsh(g)
    lo = eig[..., 0]
    if np.any(~(lo > 0)):
        raise DegenerateMetricError(
            f"fundamental tensor not positive definite (min eigenvalue {np.nanmin(lo):.3g})",
            eigenvalues=lo)


def fundamental_tensor(spec: MetricSpec, x, y) -> FundamentalData:
    """g_ij = (1/2) d^2 F^2/dy^i dy^j, the Cartan tensor and the angular metric."""
    x, y = _bcast(x, y)
    _require_nonzero(y)
    check_randers_positive(spec, x)
    F = _F_raw(spec, x, y)
    g, C = metric_and_cartan(spec, x, y)
    _check_positive_definite(g)
    ell = np.einsum("...ij,...j->...i", g, y)
    h = g - ell[..., :, None] * ell[..., None, :] / (F**2)[..., None, None]
    return FundamentalData(F=F, g=g, g_inv=np.linalg.inv(g), C=C, h=h)


def angular_metric(spec, x, y):
    return fundamental_tensor(spec, x, y).h


def mixed_angular_metric(spec, x, V, f_grad, X, Y):
    """h_{V,grad f}(X, Y) = g_V(X, Y) - g_V(X, grad f) g_V(Y, grad f) / F_V^2(grad f)."""
    V = np.asarray(V, dtype=float)
    f_grad = np.asarray(f_grad, dtype=float)
    if np.any(np.all(V == 0, axis=-1)) or np.any(np.all(f_grad == 0, axis=-1)):
        raise ZeroVectorError("reference vectors V and grad f must be nonzero")
    g = metric_tensor(spec, x, V)

    def ip(u, v):
        return np.einsum("...i,...ij,...j->...", u, g, v)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return ip(X, Y) - ip(X, f_grad) * ip(Y, f_grad) / ip(f_grad, f_grad)


# ---------------------------------------------------------------------------
# horizontal (x) derivatives, spray, connections

def x_steps(spec) -> np.ndarray:
    return X_STEP * spec.domain.extent


def x_derivative(spec, fun, x, margin_stencils=1):
    """Central differences of ``fun(x')`` along every coordinate axis.

    Returns an array (..., n, *value_shape): the derivative axis sits right
    after the batch axes of ``x``.
    """
    dom = spec.domain
    hx = x_steps(spec)
    dom.check_stencil(x, margin_stencils * hx)
    n = x.shape[-1]
    parts = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = hx[k]
        parts.append((fun(dom.wrap(x + e)) - fun(dom.wrap(x - e))) / (2 * hx[k]))
    return np.stack(parts, axis=x.ndim - 1)


@dataclass
class ConnectionData:
    """Spray coefficients G^i, nonlinear connection N^i_j and Chern Gamma^i_jk.

    Index layout: ``N[..., i, j] = N^i_j`` and ``Gamma[..., i, j, k] = Gamma^i_jk``.
    """

    G: np.ndarray
    N: np.ndarray
    Gamma: np.ndarray
    g: np.ndarray = field(repr=False, default=None)
    g_inv: np.ndarray = field(repr=False, default=None)
    C: np.ndarray = field(repr=False, default=None)
    dg: np.ndarray = field(repr=False, default=None)


def _connection(spec, x, y, margin_stencils=1) -> ConnectionData:
    x, y = _bcast(x, y)
    g, C = metric_and_cartan(spec, x, y)
    g_inv = np.linalg.inv(g)
    # dg[..., k, i, j] = d g_ij / dx^k at fixed y
    dg = x_derivative(spec, lambda xx: metric_and_cartan(spec, xx, y, with_cartan=False)[0],
                      x, margin_stencils)
    t1 = np.einsum("...klm,...m,...k->...l", dg, y, y)
    t2 = np.einsum("...lab,...a,...b->...l", dg, y, y)
    G = 0.25 * np.einsum("...il,...l->...i", g_inv, 2 * t1 - t2)
    A = (np.einsum("...k,...klj->...lj", y, dg)
         + np.einsum("...jlm,...m->...lj", dg, y)
         - np.einsum("...ljm,...m->...lj", dg, y))
    N = (-2 * np.einsum("...ia,...ajb,...b->...ij", g_inv, C, G)
         + 0.5 * np.einsum("...il,...lj->...ij", g_inv, A))
    # delta_k g_ab = dg_k,ab - 2 N^m_k C_abm
    dlg = dg - 2 * np.einsum("...mk,...abm->...kab", N, C)
    bracket = (np.einsum("...kjl->...ljk", dlg) + np.einsum("...jlk->...ljk", dlg)
               - dlg)
    Gamma = 0.5 * np.einsum("...il,...ljk->...ijk", g_inv, bracket)
    return ConnectionData(G=G, N=N, Gamma=Gamma, g=g, g_inv=g_inv, C=C, dg=dg)


def spray_and_connection(spec: MetricSpec, x, y) -> ConnectionData:
    """Geodesic spray G, nonlinear connection N = dG/dy and Chern connection Gamma.

    ``G^i = (1/4) g^il ([F^2]_{x^k y^l} y^k - [F^2]_{x^l})``; N is the exact
    y-derivative of that expression; Gamma follows from the torsion-free,
    almost g-compatible characterisation with delta_k = d_k - N^m_k d/dy^m.
    """
    x, y = _bcast(x, y)
    _require_nonzero(y)
    check_randers_positive(spec, x)
    return _connection(spec, x, y)


def spray(spec, x, y):
    """G^i(x, y) only (no validation, y = 0 allowed and mapped to G = 0)."""
    x, y = _bcast(x, y)
    if spec.x_independent:
        return np.zeros_like(y)
    zero = np.all(y == 0, axis=-1)
    if np.any(zero):
        ysafe = np.where(zero[..., None], 1.0, y)
        G = _connection(spec, x, ysafe).G
        return np.where(zero[..., None], 0.0, G)
    return _connection(spec, x, y).G


# ---------------------------------------------------------------------------
# Legendre duality

NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12


def _legendre_randers(a, b, xi):
    a_inv = np.linalg.inv(a)
    bs = np.einsum("...ij,...j->...i", a_inv, b)
    xs = np.einsum("...ij,...j->...i", a_inv, xi)
    b2 = np.einsum("...i,...i->...", b, bs)
    x2 = np.einsum("...i,...i->...", xi, xs)
    xb = np.einsum("...i,...i->...", xi, bs)
    one = 1.0 - b2
    root = np.sqrt(one * x2 + xb**2)
    Fstar = (root - xb) / one
    grad = ((one[..., None] * xs + xb[..., None] * bs) / root[..., None] - bs) / one[..., None]
    return Fstar[..., None] * grad


def _legendre_analytic(spec, x, xi):
    fam = spec.family
    if fam == "euclidean":
        return xi.copy()
    a = np.broadcast_to(spec.a(x), xi.shape + (xi.shape[-1],))
    if fam == "riemannian":
        return np.linalg.solve(a, xi[..., None])[..., 0]
    b = np.broadcast_to(spec.b(x), xi.shape)
    return _legendre_randers(a, b, xi)


def _legendre_newton(spec, x, xi, max_iter=NEWTON_MAX_ITER, tol=NEWTON_TOL):
    """Minimise the convex function (1/2) F^2(y) - xi(y) by damped Newton."""
    if spec.family in ("riemannian", "randers"):
        a = np.broadcast_to(spec.a(x), xi.shape + (xi.shape[-1],))
        y = np.linalg.solve(a, xi[..., None])[..., 0]
    else:
        y = xi.copy()

    def objective(yy):
        return 0.5 * _F_raw(spec, x, yy) ** 2 - np.einsum("...i,...i->...", xi, yy)

    scale = 1.0 + np.max(np.abs(xi), axis=-1)
    res = np.full(xi.shape[:-1], np.inf)
    for _ in range(max_iter):
        r = dual_of_vector(spec, x, y) - xi
        res = np.max(np.abs(r), axis=-1)
        active = res > tol * scale
        if not np.any(active):
            return y
        g = metric_and_cartan(spec, x, y, with_cartan=False)[0]
        step = np.linalg.solve(g, r[..., None])[..., 0]
        f0 = objective(y)
        t = np.ones(xi.shape[:-1])
        for _ in range(40):
            trial = y - t[..., None] * step
            ok = (objective(trial) <= f0 + 1e-14 * np.abs(f0)) | ~active
            if np.all(ok):
                break
            t = np.where(ok, t, 0.5 * t)
        y = np.where(active[..., None], y - t[..., None] * step, y)
    r = dual_of_vector(spec, x, y) - xi
    res = np.max(np.abs(r), axis=-1)
    if np.any(res > 1e3 * tol * scale):
        idx = np.unravel_index(int(np.argmax(res / scale)), res.shape) if res.ndim else ()
        raise LegendreError(
            f"Legendre Newton iteration did not converge (residual {np.max(res):.3e})",
            residual=float(np.max(res)), index=idx)
    return y


def legendre_transform(spec: MetricSpec, x, xi, method="auto"):
    """Vector y with g_ij(x, y) y^j = xi_i; xi = 0 maps to y = 0.

    Parameters
    ----------
    method : {"auto", "newton", "closed-form"}
        ``auto`` uses the closed forms for analytic built-in families and
        Newton iteration otherwise.
    """
    x, xi = _bcast(x, xi)
    zero = np.all(xi == 0, axis=-1)
    safe = np.where(zero[..., None], 1.0, xi) if np.any(zero) else xi
    use_closed = method == "closed-form" or (
        method == "auto" and spec.analytic and spec.family != "custom")
    if use_closed:
        check_randers_positive(spec, x)
        y = _legendre_analytic(spec, x, safe)
    else:
        y = _legendre_newton(spec, x, safe)
    if np.any(zero):
        y = np.where(zero[..., None], 0.0, y)
    return y


def dual_norm(spec, x, xi):
    """F*(x, xi) = F(x, legendre(xi)); 0 for xi = 0."""
    x, xi = _bcast(x, xi)
    if spec.analytic and spec.family == "euclidean":
        return np.sqrt(np.einsum("...i,...i->...", xi, xi))
    y = legendre_transform(spec, x, xi)
    zero = np.all(y == 0, axis=-1)
    F = _F_raw(spec, x, np.where(zero[..., None], 1.0, y))
    return np.where(zero, 0.0, F)


# ---------------------------------------------------------------------------
# sampled global invariants

@dataclass(frozen=True)
class SamplingResolution:
    """Sampling budget for suprema over points and directions.

    Attributes
    ----------
    points_per_axis : int
        Cell-centred grid of base points in the region.
    directions : int
        Directions per point on the indicatrix (at least 64).
    refine : bool
        Run Nelder-Mead from the best sample.
    seed : int
        Seed for random directions (n >= 4) and random frames.
    """

    points_per_axis: int = 3
    directions: int = 64
    refine: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.directions < 64:
            raise ValidationError("at least 64 directions per point are required")
        if self.points_per_axis < 1:
            raise ValidationError("points_per_axis must be positive")

    def as_dict(self):
        return {"points_per_axis": self.points_per_axis, "directions": self.directions,
                "refine": self.refine, "seed": self.seed}


def unit_directions(n, count, seed=0):
    """Euclidean-unit directions: uniform angles (n=2), Fibonacci sphere (n=3)."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        r = np.sqrt(1 - z**2)
        phi = np.pi * (1 + 5**0.5) * k
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    v = np.random.default_rng(seed).standard_normal((count, n))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _as_resolution(samples):
    if isinstance(samples, SamplingResolution):
        return samples
    if isinstance(samples, int):
        return SamplingResolution(directions=samples)
    if isinstance(samples, dict):
        return SamplingResolution(**samples)
    raise ValidationError(f"cannot interpret sampling resolution {samples!r}")


def _place(region, x):
    """Map an optimiser iterate back into the region."""
    if region.periodic:
        return region.wrap(x)
    lo, hi = region.lower_array, region.upper_array
    return np.clip(x, lo, hi)


def _refine(objective, z0, maxiter=400):
    """Maximise ``objective`` by Nelder-Mead from z0; returns the best value."""
    res = minimize(lambda z: -objective(z), z0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": maxiter})
    return -float(res.fun)


@dataclass
class InvariantEstimate:
    """A sampled lower bound (or upper bound, for infima) with its provenance."""

    value: float
    sampled: float
    resolution: dict
    argbest: list


def reversibility(spec: MetricSpec, region: ChartDomain, samples=64) -> InvariantEstimate:
    """rho = sup F(x, y) / F(x, -y), sampled and locally refined (a lower bound)."""
    res = _as_resolution(samples)
    n = spec.dim
    pts = region.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    X = pts[:, None, :]
    Y = dirs[None, :, :]
    ratio = _F_raw(spec, *_bcast(X, Y)) / _F_raw(spec, *_bcast(X, -Y))
    i, j = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    best = float(ratio[i, j])
    value = best
    if res.refine and spec.family not in ("euclidean", "riemannian"):
        def obj(z):
            xx = _place(region, z[:n])
            yy = z[n:]
            if not np.any(yy):
                return -np.inf
            return float(_F_raw(spec, xx, yy) / _F_raw(spec, xx, -yy))
        value = max(best, _refine(obj, np.concatenate([pts[i], dirs[j]])))
    return InvariantEstimate(value, best, res.as_dict(), [pts[i].tolist(), dirs[j].tolist()])


def _gram_per_reference(spec, pts, dirs):
    """Q[p, v, y] = g_(x_p, V_v)(Y_y, Y_y) / F^2(x_p, Y_y)."""
    X = pts[:, None, :]
    V = dirs[None, :, :]
    g = metric_and_cartan(spec, *_bcast(X, V), with_cartan=False)[0]      # (P, D, n, n)
    quad = np.einsum("yi,pvij,yj->pvy", dirs, g, dirs)
    F2 = _F_raw(spec, *_bcast(X, dirs[None, :, :])) ** 2                  # (P, D)
    return quad, F2


def uniform_constants(spec: MetricSpec, region, samples=64):
    """(kappa, kappa_star): max and min of g_V(y, y)/F^2(y) over sampled V, y."""
    res = _as_resolution(samples)
    n = spec.dim
    pts = region.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    quad, F2 = _gram_per_reference(spec, pts, dirs)
    ratio = quad / F2[:, None, :]
    imax = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    imin = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
    kmax, kmin = float(ratio[imax]), float(ratio[imin])
    vmax, vmin = kmax, kmin
    if res.refine and spec.family not in ("euclidean", "riemannian"):
        def obj(z, sign):
            xx = _place(region, z[:n])
            V, Y = z[n:2 * n], z[2 * n:]
            if not np.any(V) or not np.any(Y):
                return -np.inf
            g = metric_and_cartan(spec, xx, V, with_cartan=False)[0]
            return sign * float(Y @ g @ Y / _F_raw(spec, xx, Y) ** 2)
        z = np.concatenate([pts[imax[0]], dirs[imax[1]], dirs[imax[2]]])
        vmax = max(kmax, _refine(lambda zz: obj(zz, 1.0), z))
        z = np.concatenate([pts[imin[0]], dirs[imin[1]], dirs[imin[2]]])
        vmin = min(kmin, -_refine(lambda zz: obj(zz, -1.0), z))
    kappa = InvariantEstimate(vmax, kmax, res.as_dict(), [pts[imax[0]].tolist()])
    kappa_star = InvariantEstimate(vmin, kmin, res.as_dict(), [pts[imin[0]].tolist()])
    return kappa, kappa_star


def misalignment(spec: MetricSpec, region, samples=64) -> InvariantEstimate:
    """alpha = sup g_V(Y, Y) / g_W(Y, Y) over sampled x and direction triples."""
    res = _as_resolution(samples)
    n = spec.dim
    pts = region.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    quad, _ = _gram_per_reference(spec, pts, dirs)       # (P, V, Y)
    ratio = quad.max(axis=1) / quad.min(axis=1)            # (P, Y)
    p, y = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    best = float(ratio[p, y])
    value = best
    if res.refine and spec.family not in ("euclidean", "riemannian"):
        v = int(np.argmax(quad[p, :, y]))
        w = int(np.argmin(quad[p, :, y]))

        def obj(z):
            xx = _place(region, z[:n])
            V, W, Y = z[n:2 * n], z[2 * n:3 * n], z[3 * n:]
            if not (np.any(V) and np.any(W) and np.any(Y)):
                return -np.inf
            gV = metric_and_cartan(spec, xx, V, with_cartan=False)[0]
            gW = metric_and_cartan(spec, xx, W, with_cartan=False)[0]
            return float((Y @ gV @ Y) / (Y @ gW @ Y))
        z = np.concatenate([pts[p], dirs[v], dirs[w], dirs[y]])
        value = max(best, _refine(obj, z, maxiter=800))
    return InvariantEstimate(value, best, res.as_dict(), [pts[p].tolist(), dirs[y].tolist()])


@dataclass
class GlobalInvariants:
    """Sampled rho, kappa, kappa_star and alpha over a region.

    Suprema are sampled lower bounds and ``kappa_star`` a sampled upper bound
    of the infimum; ``resolution`` records the sampling budget.
    """

    rho: float
    kappa: float
    kappa_star: float
    alpha: float
    resolution: dict

    def as_dict(self):
        return {"rho": self.rho, "kappa": self.kappa, "kappa_star": self.kappa_star,
                "alpha": self.alpha, "resolution": self.resolution}


def global_invariants(spec, region, samples=64) -> GlobalInvariants:
    res = _as_resolution(samples)
    rho = reversibility(spec, region, res)
    kappa, kappa_star = uniform_constants(spec, region, res)
    alpha = misalignment(spec, region, res)
    return GlobalInvariants(rho.value, kappa.value, kappa_star.value, alpha.value, res.as_dict())


def validate_spec(spec: MetricSpec, samples=SamplingResolution(points_per_axis=4), tol=1e-8):
    """Check positivity, convexity and homogeneity on a sample grid.

    Raises
    ------
    NonPositiveMetricError, DegenerateMetricError, ValidationError
    """
    res = _as_resolution(samples)
    pts = spec.domain.sample_points(res.points_per_axis)
    dirs = unit_directions(spec.dim, res.directions, res.seed)
    X, Y = _bcast(pts[:, None, :], dirs[None, :, :])
    check_randers_positive(spec, pts)
    F = _F_raw(spec, X, Y)
    if np.any(~(F > 0)):
        raise NonPositiveMetricError("F is not positive on sampled directions")
    if spec.family == "custom":
        for k in (0.5, 2.0, 3.0):
            Fk = _F_raw(spec, X, k * Y)
            if np.max(np.abs(Fk - k * F) / F) > tol:
                raise ValidationError("custom_F is not positively 1-homogeneous in y")
    g = metric_and_cartan(spec, X, Y, with_cartan=False)[0]
    _check_positive_definite(g)
