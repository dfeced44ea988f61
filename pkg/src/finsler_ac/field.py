"""Lattice fields, the nonlinear Finsler Laplacian and the Allen-Cahn solver.

The discrete gradient D is the second-order central difference on a uniform
tensor lattice. Periodic boxes wrap; open boxes carry one ghost layer
holding fixed Dirichlet data. The Laplacian is defined as the exact negative
adjoint of D in the weighted node inner product,

    Delta_mu u = sigma^-1 * centred divergence of (sigma * grad u),

so that ``Delta_mu u + (1 - u^2) u`` is minus the (weighted) gradient of the
discrete energy and the explicit flow is a true descent scheme.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .domain import ChartDomain
from .errors import SolverError, ValidationError
from .measure import MeasureSpec
from .metric import (MetricSpec, _F_raw, _legendre_randers, check_randers_positive,
                     legendre_transform, metric_and_cartan, reverse_metric, spray_and_connection)

MIN_RESOLUTION = 16
MASK_FACTOR = 1e-10


# ---------------------------------------------------------------------------
# lattice and fields

def lattice_spacing(domain: ChartDomain, resolution) -> np.ndarray:
    res = np.asarray(resolution, dtype=float)
    if domain.periodic:
        return domain.extent / res
    return domain.extent / (res - 1)


def lattice_axes(domain: ChartDomain, resolution, pad=0):
    """Per-axis node coordinates, optionally with ``pad`` ghost layers."""
    h = lattice_spacing(domain, resolution)
    lo = domain.lower_array
    return [lo[k] + h[k] * np.arange(-pad, resolution[k] + pad) for k in range(domain.dim)]


def lattice_nodes(domain, resolution, pad=0) -> np.ndarray:
    axes = lattice_axes(domain, resolution, pad)
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass
class GridField:
    """Real values on the nodes of a uniform lattice over ``domain``.

    Parameters
    ----------
    domain : ChartDomain
    values : ndarray
        Shape = per-axis node counts (each >= 16).
    grad_mask_eps : float, optional
        Nodes with F*(du) <= eps are outside M_u. Defaults to
        ``1e-10 * (max u - min u) / min(h)``.
    boundary : callable, optional
        Dirichlet profile ``x (..., n) -> u`` for open boxes. It supplies the
        ghost layer; without it ghosts are extrapolated quadratically.
    """

    domain: ChartDomain
    values: np.ndarray
    grad_mask_eps: float | None = None
    boundary: Callable | None = dc_field(default=None, repr=False)
    _ghost_cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.domain.dim:
            raise ValidationError(
                f"values have {self.values.ndim} axes, domain has dimension {self.domain.dim}")
        if self.domain.dim > 3:
            raise ValidationError("lattices are limited to n <= 3")
        if min(self.values.shape) < MIN_RESOLUTION:
            raise ValidationError(f"resolution must be >= {MIN_RESOLUTION} per axis")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("grid values must be finite")

    @classmethod
    def from_function(cls, domain, resolution, fun, boundary=None, grad_mask_eps=None):
        if np.isscalar(resolution):
            resolution = (int(resolution),) * domain.dim
        pts = lattice_nodes(domain, resolution)
        vals = np.asarray(fun(pts), dtype=float)
        vals = np.broadcast_to(vals, tuple(resolution)).copy()
        out = cls(domain, vals, grad_mask_eps, boundary)
        if boundary is not None and not domain.periodic:
            # edge nodes are Dirichlet data, not unknowns
            edge = ~out.free_nodes()
            out.values[edge] = np.broadcast_to(np.asarray(boundary(pts), dtype=float), out.resolution)[edge]
        return out

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return lattice_spacing(self.domain, self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def nodes(self, pad=0) -> np.ndarray:
        return lattice_nodes(self.domain, self.resolution, pad)

    def with_values(self, values) -> "GridField":
        out = GridField(self.domain, values, self.grad_mask_eps, self.boundary)
        out._ghost_cache = self._ghost_cache
        return out

    def mask_threshold(self) -> float:
        if self.grad_mask_eps is not None:
            return float(self.grad_mask_eps)
        osc = float(np.ptp(self.values))
        return MASK_FACTOR * osc / float(np.min(self.spacing))

    def free_nodes(self) -> np.ndarray:
        """Boolean mask of unknowns: all nodes on a torus, interior nodes on a box."""
        free = np.ones(self.resolution, dtype=bool)
        if not self.domain.periodic:
            for k in range(self.domain.dim):
                idx = [slice(None)] * self.domain.dim
                idx[k] = 0
                free[tuple(idx)] = False
                idx[k] = -1
                free[tuple(idx)] = False
        return free

    def padded(self) -> np.ndarray:
        """Values with one ghost layer on every side."""
        if self.domain.periodic:
            return _pad_wrap(self.values)
        if self.boundary is not None:
            if "profile" not in self._ghost_cache:
                pts = self.nodes(pad=1)
                self._ghost_cache["profile"] = np.asarray(self.boundary(pts), dtype=float)
            out = self._ghost_cache["profile"].copy()
            out[(slice(1, -1),) * self.domain.dim] = self.values
            return out
        out = np.pad(self.values, 1, mode="constant")
        for k in range(self.domain.dim):
            out = np.moveaxis(out, k, 0)
            out[0] = 3 * out[1] - 3 * out[2] + out[3]
            out[-1] = 3 * out[-2] - 3 * out[-3] + out[-4]
            out = np.moveaxis(out, 0, k)
        return out

    def to_csv(self, path):
        n = self.domain.dim
        bounds = " ".join(f"{lo!r}:{hi!r}" for lo, hi in zip(self.domain.lower, self.domain.upper))
        with open(path, "w") as fh:
            fh.write(f"# dim {n}, res {' '.join(str(r) for r in self.resolution)}, "
                     f"bounds {bounds}, topology {self.domain.topology}\n")
            for v in self.values.ravel():
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "GridField":
        with open(path) as fh:
            header = fh.readline()
            vals = np.array([float(line) for line in fh if line.strip()])
        parts = dict(p.strip().split(" ", 1) for p in header.lstrip("# ").split(","))
        n = int(parts["dim"])
        res = tuple(int(r) for r in parts["res"].split())
        pairs = [b.split(":") for b in parts["bounds"].split()]
        dom = ChartDomain(n, parts["topology"].strip(), tuple(float(a) for a, _ in pairs),
                          tuple(float(b) for _, b in pairs))
        return cls(dom, vals.reshape(res))


def _pad_wrap(v):
    # manual wrap padding; np.pad is several times slower on small grids
    n = v.ndim
    out = np.empty(tuple(r + 2 for r in v.shape))
    out[(slice(1, -1),) * n] = v
    for k in range(n):
        dst = [slice(None)] * n
        src = [slice(None)] * n
        dst[k], src[k] = 0, -2
        out[tuple(dst)] = out[tuple(src)]
        dst[k], src[k] = -1, 1
        out[tuple(dst)] = out[tuple(src)]
    return out


def _centred(P, k, inv2h):
    n = P.ndim
    hi = [slice(1, -1)] * n
    lo = [slice(1, -1)] * n
    hi[k] = slice(2, None)
    lo[k] = slice(None, -2)
    return (P[tuple(hi)] - P[tuple(lo)]) * inv2h


def central_gradient(u: GridField) -> np.ndarray:
    """du by central differences; shape resolution + (n,)."""
    P = u.padded()
    inv2h = 0.5 / u.spacing
    out = np.empty(u.resolution + (u.domain.dim,))
    for k in range(u.domain.dim):
        out[..., k] = _centred(P, k, inv2h[k])
    return out


def central_divergence(flux, domain, spacing) -> np.ndarray:
    """sum_k d_k flux^k by central differences.

    Periodic boxes wrap; on open boxes only interior nodes get a value (the
    boundary rows are zero, they hold Dirichlet data).
    """
    n = domain.dim
    inv2h = 0.5 / np.asarray(spacing)
    if domain.periodic:
        out = _centred(_pad_wrap(flux[..., 0]), 0, inv2h[0])
        for k in range(1, n):
            out += _centred(_pad_wrap(flux[..., k]), k, inv2h[k])
        return out
    out = np.zeros(flux.shape[:-1])
    mid = (slice(1, -1),) * n
    for k in range(n):
        f = flux[..., k]
        hi = [slice(1, -1)] * n
        lo = [slice(1, -1)] * n
        hi[k] = slice(2, None)
        lo[k] = slice(None, -2)
        out[mid] += (f[tuple(hi)] - f[tuple(lo)]) * inv2h[k]
    return out


# ---------------------------------------------------------------------------
# node-wise metric evaluation with cached coefficients

class _NodeMetric:
    """Coefficient cache for one (spec, lattice) pair."""

    def __init__(self, spec: MetricSpec, u: GridField):
        self.spec = spec
        self.x = u.nodes()
        self.kind = "generic"
        if spec.analytic and spec.family == "euclidean":
            self.kind = "euclidean"
        elif spec.analytic and spec.family == "riemannian":
            self.kind = "riemannian"
            self.a = np.broadcast_to(spec.a(self.x), self.x.shape + (self.x.shape[-1],))
            self.a_inv = np.linalg.inv(self.a)
        elif spec.analytic and spec.family == "randers":
            check_randers_positive(spec, self.x)
            n = self.x.shape[-1]
            self.kind = "randers"
            self.a = np.broadcast_to(spec.a(self.x), self.x.shape + (n,))
            self.b = np.broadcast_to(spec.b(self.x), self.x.shape)

    def legendre(self, xi):
        if self.kind == "euclidean":
            return xi
        if self.kind == "riemannian":
            return np.einsum("...ij,...j->...i", self.a_inv, xi)
        if self.kind == "randers":
            zero = np.all(xi == 0, axis=-1)
            safe = np.where(zero[..., None], 1.0, xi) if np.any(zero) else xi
            y = _legendre_randers(self.a, self.b, safe)
            return np.where(zero[..., None], 0.0, y) if np.any(zero) else y
        return legendre_transform(self.spec, self.x, xi)

    def F(self, y):
        if self.kind == "euclidean":
            return np.sqrt(np.einsum("...i,...i->...", y, y))
        zero = np.all(y == 0, axis=-1)
        safe = np.where(zero[..., None], 1.0, y) if np.any(zero) else y
        return np.where(zero, 0.0, _F_raw(self.spec, self.x, safe))


_CACHE_KEY = "_node_metric"


def _node_metric(spec, u: GridField) -> _NodeMetric:
    key = (_CACHE_KEY, id(spec))
    nm = u._ghost_cache.get(key)
    if nm is None or nm.spec is not spec:
        nm = _NodeMetric(spec, u)
        u._ghost_cache[key] = nm
    return nm


def _sigma(mu: MeasureSpec, u: GridField):
    key = ("_sigma", id(mu))
    s = u._ghost_cache.get(key)
    if s is None or s[0] is not mu:
        s = (mu, mu.density(u.nodes()))
        u._ghost_cache[key] = s
    return s[1]


# ---------------------------------------------------------------------------
# gradient, Laplacian, Hessian

@dataclass
class GradientField:
    """du, the Legendre gradient grad u = l^-1(du), F(grad u) and the M_u mask."""

    du: np.ndarray
    grad: np.ndarray
    norm: np.ndarray
    mask: np.ndarray


def gradient_field(spec: MetricSpec, mu: MeasureSpec, u: GridField) -> GradientField:
    """Legendre gradient of u at every node; grad u = 0 off M_u.

    M_u is the set of nodes with F*(du) > ``u.mask_threshold()``. Legendre
    failures propagate as :class:`LegendreError` carrying the flat node index.
    """
    nm = _node_metric(spec, u)
    du = central_gradient(u)
    grad = nm.legendre(du)
    norm = nm.F(grad)
    mask = norm > u.mask_threshold()
    if not mask.all():
        grad = np.where(mask[..., None], grad, 0.0)
        norm = np.where(mask, norm, 0.0)
    return GradientField(du, grad, norm, mask)


def finsler_laplacian(spec: MetricSpec, mu: MeasureSpec, u: GridField, grad: GradientField = None):
    """Delta_mu u = sigma^-1 div(sigma grad u) as a GridField.

    The flux divergence is taken at every free node, including nodes outside
    M_u (their own flux is zero, neighbours may still contribute). Boundary
    rows of an open box are zero.
    """
    if grad is None:
        grad = gradient_field(spec, mu, u)
    if mu.constant:
        return u.with_values(central_divergence(grad.grad, u.domain, u.spacing))
    sigma = _sigma(mu, u)
    div = central_divergence(sigma[..., None] * grad.grad, u.domain, u.spacing)
    return u.with_values(div / sigma)


def linearized_laplacian(spec, mu, w: GridField, reference: np.ndarray, dw=None):
    """Delta^V w = sigma^-1 div(sigma g^{ij}(x, V) d_j w) for a fixed reference field V.

    Nodes where V = 0 carry zero flux.
    """
    if dw is None:
        dw = central_gradient(w)
    x = w.nodes()
    zero = np.all(reference == 0, axis=-1)
    Vs = np.where(zero[..., None], 1.0, reference)
    g, _ = metric_and_cartan(spec, x, Vs, with_cartan=False)
    g_inv = np.linalg.inv(g)
    vec = np.einsum("...ij,...j->...i", g_inv, dw)
    vec = np.where(zero[..., None], 0.0, vec)
    sigma = _sigma(mu, w)
    return w.with_values(central_divergence(sigma[..., None] * vec, w.domain, w.spacing) / sigma)


def second_differences(u: GridField) -> np.ndarray:
    """Symmetric matrix of second differences, shape resolution + (n, n)."""
    P = u.padded()
    h = u.spacing
    n = u.domain.dim
    res = u.resolution
    out = np.empty(res + (n, n))

    def shifted(offs):
        return P[tuple(slice(1 + o, 1 + o + r) for o, r in zip(offs, res))]

    for i in range(n):
        e = [0] * n
        e[i] = 1
        m = [-c for c in e]
        out[..., i, i] = (shifted(e) - 2 * u.values + shifted(m)) / h[i] ** 2
        for j in range(i + 1, n):
            pp = [0] * n
            pm = [0] * n
            mp = [0] * n
            mm = [0] * n
            pp[i], pp[j] = 1, 1
            pm[i], pm[j] = 1, -1
            mp[i], mp[j] = -1, 1
            mm[i], mm[j] = -1, -1
            val = (shifted(pp) - shifted(pm) - shifted(mp) + shifted(mm)) / (4 * h[i] * h[j])
            out[..., i, j] = val
            out[..., j, i] = val
    return out


@dataclass
class HessianField:
    """H_ij = d_i d_j u - Gamma^k_ij(x, grad u) d_k u on M_u (NaN elsewhere)."""

    H: np.ndarray
    mask: np.ndarray
    grad: GradientField


def hessian_field(spec: MetricSpec, u: GridField, mu: MeasureSpec = None) -> HessianField:
    from .measure import lebesgue
    grad = gradient_field(spec, mu or lebesgue(), u)
    D2 = second_differences(u)
    H = np.full(D2.shape, np.nan)
    m = grad.mask
    if np.any(m):
        if spec.x_independent:
            H[m] = D2[m]
        else:
            conn = spray_and_connection(spec, u.nodes()[m], grad.grad[m])
            H[m] = D2[m] - np.einsum("...kij,...k->...ij", conn.Gamma, grad.du[m])
    return HessianField(H, m, grad)


# ---------------------------------------------------------------------------
# energy and variations

def _weights(mu, u):
    key = ("_weights", id(mu))
    w = u._ghost_cache.get(key)
    if w is None or w[0] is not mu:
        w = (mu, _sigma(mu, u) * u.cell_volume)
        u._ghost_cache[key] = w
    return w[1]


def energy(spec: MetricSpec, mu: MeasureSpec, u: GridField, grad: GradientField = None) -> float:
    """J(u) = sum over nodes of [F^2(grad u)/2 + (1 - u^2)^2/4] sigma h^n.

    On M_u, F^2(grad u) = du(grad u) = F*(du)^2; off M_u the term is 0.
    """
    if grad is None:
        grad = gradient_field(spec, mu, u)
    kinetic = 0.5 * grad.norm**2
    potential = 0.25 * (1.0 - u.values**2) ** 2
    return float(np.sum((kinetic + potential) * _weights(mu, u)))


def first_variation(spec, mu, u: GridField, v: GridField) -> float:
    """d/dt J(u + t v) at t = 0: sum of [dv(grad u) - v u (1 - u^2)] sigma h^n.

    The ghost layer of v is zero (the Dirichlet data of u are held fixed).
    """
    grad = gradient_field(spec, mu, u)
    dv = central_gradient(_zero_ghost(v))
    integrand = np.einsum("...i,...i->...", dv, grad.grad) - v.values * u.values * (1 - u.values**2)
    return float(np.sum(integrand * _weights(mu, u)))


def _zero_ghost(v: GridField) -> GridField:
    if v.domain.periodic:
        return v
    return GridField(v.domain, v.values, v.grad_mask_eps, boundary=lambda x: np.zeros(x.shape[:-1]))


def difference_matrices(domain: ChartDomain, resolution):
    """Sparse central-difference matrices D_k acting on flattened node values.

    Ghost neighbours of an open box are dropped, which is the action on
    functions with zero ghost values.
    """
    res = tuple(resolution)
    h = lattice_spacing(domain, res)
    size = int(np.prod(res))
    idx = np.arange(size).reshape(res)
    mats = []
    for k in range(domain.dim):
        rows, cols, vals = [], [], []
        for sign in (1, -1):
            if domain.periodic:
                nb = np.roll(idx, -sign, axis=k)
                r = idx.ravel()
                c = nb.ravel()
            else:
                sl_r = [slice(None)] * len(res)
                sl_c = [slice(None)] * len(res)
                if sign == 1:
                    sl_r[k], sl_c[k] = slice(None, -1), slice(1, None)
                else:
                    sl_r[k], sl_c[k] = slice(1, None), slice(None, -1)
                r = idx[tuple(sl_r)].ravel()
                c = idx[tuple(sl_c)].ravel()
            rows.append(r)
            cols.append(c)
            vals.append(np.full(r.size, sign / (2 * h[k])))
        mats.append(sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(size, size)))
    return mats


def weak_defect(spec, mu, u: GridField, grad: GradientField = None) -> np.ndarray:
    """Signed defect int phi_j (1-u^2) u dmu - int dphi_j(grad u) dmu per nodal test function.

    Computed with explicit sparse matrices: ``int dphi_j(X) dmu = (D^T (w X))_j``.
    Non-free nodes (Dirichlet boundary) are set to 0.
    """
    if grad is None:
        grad = gradient_field(spec, mu, u)
    key = ("_dmats",)
    mats = u._ghost_cache.get(key)
    if mats is None:
        mats = difference_matrices(u.domain, u.resolution)
        u._ghost_cache[key] = mats
    w = _weights(mu, u).ravel()
    reaction = w * ((1 - u.values**2) * u.values).ravel()
    flux_term = np.zeros_like(reaction)
    for k, Dk in enumerate(mats):
        flux_term += Dk.T @ (w * grad.grad[..., k].ravel())
    out = (reaction - flux_term).reshape(u.resolution)
    out[~u.free_nodes()] = 0.0
    return out


def weak_residual(spec, mu, u: GridField) -> float:
    """max over nodal test functions of |weak defect|."""
    return float(np.max(np.abs(weak_defect(spec, mu, u))))


def strong_residual_field(spec, mu, u: GridField, grad: GradientField = None) -> np.ndarray:
    lap = finsler_laplacian(spec, mu, u, grad).values
    r = lap + (1 - u.values**2) * u.values
    if not u.domain.periodic:
        r[~u.free_nodes()] = 0.0
    return r


def strong_residual(spec, mu, u) -> float:
    return float(np.max(np.abs(strong_residual_field(spec, mu, u))))


def l2_norm(mu, u: GridField, values) -> float:
    return float(np.sqrt(np.sum(np.asarray(values) ** 2 * _weights(mu, u))))


def h1_norm(spec, mu, u: GridField) -> float:
    """||u||_L2 + ||F(grad u)||_L2 / 2 + ||Fbar(gradbar u)||_L2 / 2.

    The reverse term uses Fbar(gradbar u) = F(grad(-u)).
    """
    fwd = gradient_field(spec, mu, u).norm
    rev = gradient_field(spec, mu, u.with_values(-u.values)).norm
    return l2_norm(mu, u, u.values) + 0.5 * l2_norm(mu, u, fwd) + 0.5 * l2_norm(mu, u, rev)


def reverse_duality_check(spec, mu, u: GridField) -> float:
    """max |defect(u; F) + defect(-u; Fbar)| over nodes.

    The reverse-metric gradient is gradbar(-u) = -grad u, so the two signed
    weak defects are exact negatives; their sup norms then coincide.
    """
    d_fwd = weak_defect(spec, mu, u)
    ubar = GridField(u.domain, -u.values, u.grad_mask_eps,
                     None if u.boundary is None else (lambda x, f=u.boundary: -f(x)))
    d_rev = weak_defect(reverse_metric(spec), mu, ubar)
    return float(np.max(np.abs(d_fwd + d_rev)))


# ---------------------------------------------------------------------------
# solver

@dataclass(frozen=True)
class SolverConfig:
    """Explicit gradient-flow settings.

    Attributes
    ----------
    dt_initial : float or None
        Initial (and maximal) step; ``None`` means 0.2 h_min^2.
    dt_adapt : {"backtracking", "fixed"}
    residual_tol : float
        Stop once the strong residual drops below this value.
    max_steps : int
    clamp_positive : bool
        Reject steps that would make u non-positive, and require u0 > 0.
    """

    dt_initial: float | None = None
    dt_adapt: str = "backtracking"
    residual_tol: float = 1e-8
    max_steps: int = 200_000
    clamp_positive: bool = False

    def __post_init__(self):
        if self.dt_initial is not None and not self.dt_initial > 0:
            raise ValidationError("dt_initial must be positive")
        if not self.residual_tol > 0:
            raise ValidationError("residual_tol must be positive")
        if self.dt_adapt not in ("backtracking", "fixed"):
            raise ValidationError(f"dt_adapt must be 'backtracking' or 'fixed', got {self.dt_adapt!r}")
        if self.max_steps < 0:
            raise ValidationError("max_steps must be >= 0")

    def to_json(self):
        return {"dt_initial": self.dt_initial, "dt_adapt": self.dt_adapt,
                "residual_tol": self.residual_tol, "max_steps": self.max_steps,
                "clamp_positive": self.clamp_positive}

    @classmethod
    def from_json(cls, obj):
        allowed = {"dt_initial", "dt_adapt", "residual_tol", "max_steps", "clamp_positive"}
        extra = set(obj) - allowed
        if extra:
            raise ValidationError(f"unknown solver keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class ResidualReport:
    """Outcome of a solve (or of a residual evaluation, with steps = 0)."""

    strong_residual: float
    weak_residual: float
    energy_trace: list
    steps: int = 0
    converged: bool = False
    rejected_steps: int = 0
    dt_final: float = 0.0
    min_value: float = 0.0
    max_value: float = 0.0
    descent_slack: list = dc_field(default_factory=list)

    def energy_nonincreasing(self) -> bool:
        e = np.asarray(self.energy_trace)
        slack = np.asarray(self.descent_slack[1:]) if self.descent_slack else 0.0
        return bool(np.all(np.diff(e) <= slack))

    def to_json(self):
        return {"strong_residual": self.strong_residual, "weak_residual": self.weak_residual,
                "steps": self.steps, "converged": self.converged,
                "rejected_steps": self.rejected_steps, "dt_final": self.dt_final,
                "min_value": self.min_value, "max_value": self.max_value,
                "energy_initial": self.energy_trace[0] if self.energy_trace else None,
                "energy_final": self.energy_trace[-1] if self.energy_trace else None,
                "energy_trace_length": len(self.energy_trace)}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def residual_report(spec, mu, u: GridField) -> ResidualReport:
    grad = gradient_field(spec, mu, u)
    return ResidualReport(
        strong_residual=float(np.max(np.abs(strong_residual_field(spec, mu, u, grad)))),
        weak_residual=float(np.max(np.abs(weak_defect(spec, mu, u, grad)))),
        energy_trace=[energy(spec, mu, u, grad)],
        min_value=float(u.values.min()), max_value=float(u.values.max()))


def _roundoff_slack(J):
    # every energy term is non-negative, so J itself bounds the summed magnitudes
    return 8 * np.finfo(float).eps * abs(J)


def solve_allen_cahn(spec: MetricSpec, mu: MeasureSpec, u0: GridField,
                     config: SolverConfig = SolverConfig(), callback=None):
    """Gradient flow u <- u + dt (Delta u + (1 - u^2) u) with energy backtracking.

    A step is accepted when J does not increase beyond floating-point
    resolution; otherwise dt is halved. After 50 consecutive accepted steps
    dt is doubled, never above ``dt_initial``.

    Returns
    -------
    (GridField, ResidualReport)
        The last iterate; ``report.converged`` is False when ``max_steps``
        was exhausted.

    Raises
    ------
    SolverError
        If backtracking drives dt below 1e-14 dt_initial.
    """
    if config.clamp_positive and np.any(u0.values <= 0):
        raise ValidationError("clamp_positive requires u0 > 0")
    h = float(np.min(u0.spacing))
    dt_max = config.dt_initial if config.dt_initial is not None else 0.2 * h * h
    dt = dt_max
    free = u0.free_nodes()
    all_free = bool(free.all())
    u = u0
    grad = gradient_field(spec, mu, u)
    J = energy(spec, mu, u, grad)
    trace = [J]
    slack_trace = [0.0]
    lo, hi = float(u.values.min()), float(u.values.max())
    accepted_run = 0
    rejected = 0
    steps = 0
    converged = False

    def report(done):
        return ResidualReport(strong_residual=float(np.max(np.abs(r))),
                              weak_residual=float(np.max(np.abs(weak_defect(spec, mu, u, grad)))),
                              energy_trace=trace, steps=steps, converged=done,
                              rejected_steps=rejected, dt_final=dt, min_value=lo, max_value=hi,
                              descent_slack=slack_trace)

    while True:
        r = strong_residual_field(spec, mu, u, grad)
        if np.max(np.abs(r)) <= config.residual_tol:
            converged = True
            break
        if steps >= config.max_steps:
            break
        while True:
            trial_vals = u.values + dt * (r if all_free else np.where(free, r, 0.0))
            ok = not (config.clamp_positive and np.any(trial_vals <= 0))
            if ok:
                trial = u.with_values(trial_vals)
                trial_grad = gradient_field(spec, mu, trial)
                J_new = energy(spec, mu, trial, trial_grad)
                slack = _roundoff_slack(J)
                ok = config.dt_adapt == "fixed" or J_new <= J + slack
            if ok:
                break
            rejected += 1
            dt *= 0.5
            accepted_run = 0
            if dt < 1e-14 * dt_max:
                raise SolverError("time step underflow: energy increase not curable by backtracking",
                                  report=report(False), field=u)
        u, grad, J = trial, trial_grad, J_new
        steps += 1
        trace.append(J)
        slack_trace.append(slack)
        lo = min(lo, float(u.values.min()))
        hi = max(hi, float(u.values.max()))
        accepted_run += 1
        if accepted_run >= 50 and dt < dt_max:
            dt = min(2 * dt, dt_max)
            accepted_run = 0
        if callback is not None:
            callback(steps, u, J)
    return u, report(converged)


def _quadratic_laplacian_matrix(spec, mu, u: GridField):
    """Sparse matrix of the (linear) Laplacian of a quadratic metric on a torus."""
    nm = _node_metric(spec, u)
    if nm.kind not in ("euclidean", "riemannian"):
        raise ValidationError("Newton polishing needs a Euclidean or Riemannian metric")
    if not u.domain.periodic:
        raise ValidationError("Newton polishing is implemented on periodic boxes only")
    n = u.domain.dim
    mats = difference_matrices(u.domain, u.resolution)
    w = _weights(mu, u).ravel()
    a_inv = np.broadcast_to(np.eye(n), u.resolution + (n, n)) if nm.kind == "euclidean" else nm.a_inv
    L = sp.csr_matrix((w.size, w.size))
    for k in range(n):
        for j in range(n):
            coef = sp.diags(w * a_inv[..., k, j].ravel())
            L = L - mats[k].T @ coef @ mats[j]
    return sp.diags(1.0 / w) @ L


def newton_polish(spec, mu, u: GridField, tol=1e-11, max_iter=30, damping=1e-6):
    """Damped Newton iteration on the discrete equation Delta u + (1 - u^2) u = 0.

    Converges to the nearby discrete solution, including unstable ones
    (every non-constant solution on a torus is a saddle of the energy, so the
    gradient flow only passes near it). The Laplacian must be linear, i.e.
    the metric quadratic.

    Each step solves (J^T J + lam^2 I) v = J^T r with lam = damping * max|J|.
    Translation-invariant problems have (numerically) singular Jacobians, and
    the central stencil also lets even and odd sublattices drift apart; the
    damping keeps those modes from being excited by round-off.

    Returns
    -------
    (GridField, list of float)
        The polished field and the strong-residual history.
    """
    from scipy.sparse.linalg import spsolve
    L = _quadratic_laplacian_matrix(spec, mu, u)
    vals = u.values.ravel().copy()
    history = []
    for _ in range(max_iter):
        r = L @ vals + (1 - vals**2) * vals
        history.append(float(np.max(np.abs(r))))
        if history[-1] <= tol:
            return u.with_values(vals.reshape(u.resolution)), history
        J = (L + sp.diags(1 - 3 * vals**2)).tocsc()
        lam = damping * abs(J).max()
        normal = (J.T @ J + sp.identity(J.shape[0]) * lam**2).tocsc()
        vals = vals - spsolve(normal, J.T @ r)
    raise SolverError(f"Newton polishing did not reach {tol:g} (last residual {history[-1]:.3e})",
                      field=u.with_values(vals.reshape(u.resolution)))
