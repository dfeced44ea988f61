"""Spray geodesics, the exponential map and forward distance."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import GeodesicError, StencilOutOfDomainError, ValidationError
from .metric import MetricSpec, _F_raw, _bcast, _require_nonzero, eval_metric, spray, x_steps


def _accel(spec, x, v):
    return -2.0 * spray(spec, x, v)


def rk4_step(spec, x, v, dt):
    """One classical Runge-Kutta step of x' = v, v' = -2 G(x, v); batched."""
    k1x, k1v = v, _accel(spec, x, v)
    x2, v2 = x + 0.5 * dt * k1x, v + 0.5 * dt * k1v
    k2x, k2v = v2, _accel(spec, x2, v2)
    x3, v3 = x + 0.5 * dt * k2x, v + 0.5 * dt * k2v
    k3x, k3v = v3, _accel(spec, x3, v3)
    x4, v4 = x + dt * k3x, v + dt * k3v
    k4x, k4v = v4, _accel(spec, x4, v4)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


@dataclass
class GeodesicPath:
    """Samples (t, x(t), x'(t)) and the speed F(x, x') at each sample.

    ``truncated`` is set when the path left an open-box chart; samples stop
    at the last point inside.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    speed: np.ndarray
    truncated: bool = False

    @property
    def endpoint(self):
        return self.x[-1]

    def speed_drift(self) -> float:
        return float(np.max(np.abs(self.speed - self.speed[0])) / self.speed[0])

    def to_csv(self, path):
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["speed"])
            for t, x, s in zip(self.t, self.x, self.speed):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x] + [repr(float(s))])


def _margin(spec):
    return 2 * x_steps(spec)


def integrate_geodesic(spec: MetricSpec, x0, y0, t_max=1.0, steps=1000) -> GeodesicPath:
    """Integrate the spray ODE from (x0, y0) with fixed-step RK4."""
    x = np.asarray(x0, dtype=float)
    v = np.asarray(y0, dtype=float)
    _require_nonzero(v)
    if steps < 1 or t_max <= 0:
        raise ValidationError("need steps >= 1 and t_max > 0")
    dt = t_max / steps
    dom = spec.domain
    ts, xs, vs = [0.0], [x], [v]
    truncated = False
    for k in range(steps):
        if not dom.contains(x, _margin(spec)):
            truncated = True
            break
        try:
            x, v = rk4_step(spec, x, v, dt)
        except StencilOutOfDomainError:
            truncated = True
            break
        if not dom.contains(x, 0.0):
            truncated = True
            break
        ts.append((k + 1) * dt)
        xs.append(x)
        vs.append(v)
    X = np.array(xs)
    V = np.array(vs)
    speed = _F_raw(spec, dom.wrap(X), V)
    return GeodesicPath(np.array(ts), X, V, speed, truncated)


def exp_map(spec, x0, y0, steps=1000):
    """exp_x0(y0): geodesic endpoint at t = 1; exp(0) = x0."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if not np.any(y0):
        return x0.copy()
    if spec.x_independent:
        return x0 + y0
    path = integrate_geodesic(spec, x0, y0, 1.0, steps)
    if path.truncated:
        raise GeodesicError("geodesic left the chart before t = 1")
    return path.endpoint


@dataclass(frozen=True)
class ShootingConfig:
    """Shooting parameters for forward distance.

    Attributes
    ----------
    steps : int
        RK4 steps per shot.
    tol : float
        Endpoint-mismatch tolerance.
    starts : int
        Multi-start count for the Nelder-Mead fallback.
    max_newton : int
        Newton iterations before falling back to Nelder-Mead.
    """

    steps: int = 100
    tol: float = 1e-7
    starts: int = 8
    max_newton: int = 25


def _endpoints(spec, p, W, steps):
    """Geodesic endpoints exp_p(w) for a batch of initial velocities (m, n)."""
    x = np.broadcast_to(p, W.shape).copy()
    v = W.copy()
    dt = 1.0 / steps
    dom = spec.domain
    for _ in range(steps):
        x, v = rk4_step(spec, x, v, dt)
        if not np.all(dom.contains(x)):
            raise GeodesicError("shot left the chart")
    return x


def _newton_shoot(spec, p, q, config):
    w = q - p
    scale = max(np.linalg.norm(w), 1e-12)
    n = p.size
    prev = np.inf
    for _ in range(config.max_newton):
        eps = 1e-6 * scale
        W = np.vstack([w, w + eps * np.eye(n)])
        E = _endpoints(spec, p, W, config.steps)
        r = E[0] - q
        err = float(np.max(np.abs(r)))
        if err <= config.tol:
            return w
        if err > 10 * prev:
            return None
        prev = err
        J = (E[1:] - E[0]).T / eps
        try:
            w = w - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
    return None


def forward_distance(spec: MetricSpec, p, q, config: ShootingConfig = ShootingConfig()):
    """d(p, q) = inf of F-length over curves from p to q.

    Translation-invariant metrics use d = F(q - p) directly. Otherwise the
    initial velocity w with exp_p(w) = q is found by Newton shooting with a
    Nelder-Mead multi-start fallback, and d = F(p, w).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    if not np.any(d):
        return 0.0
    if spec.x_independent:
        return float(eval_metric(spec, p, d))
    try:
        best = _newton_shoot(spec, p, q, config)
    except (GeodesicError, StencilOutOfDomainError):
        best = None
    if best is None:
        best = _nelder_mead_shoot(spec, p, q, config)
    return float(eval_metric(spec, p, best))


def _nelder_mead_shoot(spec, p, q, config):
    d = q - p

    def mismatch2(w):
        try:
            end = _endpoints(spec, p, w[None, :], config.steps)[0]
        except (GeodesicError, StencilOutOfDomainError):
            return 1e6
        return float(np.sum((end - q) ** 2))

    rng = np.random.default_rng(0)
    cands = []
    for k in range(config.starts):
        w0 = d if k == 0 else d * (1 + 0.2 * rng.standard_normal()) \
            + 0.2 * np.linalg.norm(d) * rng.standard_normal(p.size)
        res = minimize(mismatch2, w0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-22, "maxiter": 4000})
        err = float(np.sqrt(res.fun))
        cands.append((err, res.x))
        if err <= config.tol:
            break
    err, w = min(cands, key=lambda c: c[0])
    if err > config.tol:
        raise GeodesicError(f"shooting failed: endpoint mismatch {err:.3e}")
    return w


@dataclass
class DistanceField:
    """Forward distance d(p, x) sampled at grid nodes."""

    origin: np.ndarray
    points: np.ndarray
    values: np.ndarray
    method: str
    failed: np.ndarray

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.failed))

    def to_csv(self, path):
        n = self.points.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(n)] + ["distance", "failed"])
            for x, d, f in zip(self.points.reshape(-1, n), self.values.ravel(), self.failed.ravel()):
                w.writerow([repr(float(c)) for c in x] + [repr(float(d)), int(f)])


def distance_field(spec, p, points, config: ShootingConfig = ShootingConfig()) -> DistanceField:
    """d(p, .) at every point of ``points`` (shape (..., n)).

    Shooting failures are recorded in ``failed`` (value NaN) rather than raised.
    """
    p = np.asarray(p, dtype=float)
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, pts.shape[-1])
    if spec.x_independent:
        diff = flat - p
        zero = np.all(diff == 0, axis=-1)
        vals = np.zeros(len(flat))
        if np.any(~zero):
            vals[~zero] = _F_raw(spec, *_bcast(p, diff[~zero]))
        return DistanceField(p, pts, vals.reshape(pts.shape[:-1]), "direct",
                             np.zeros(pts.shape[:-1], dtype=bool))
    vals = np.empty(len(flat))
    failed = np.zeros(len(flat), dtype=bool)
    for i, q in enumerate(flat):
        try:
            vals[i] = forward_distance(spec, p, q, config)
        except GeodesicError:
            vals[i] = np.nan
            failed[i] = True
    return DistanceField(p, pts, vals.reshape(pts.shape[:-1]), "shooting",
                         failed.reshape(pts.shape[:-1]))
