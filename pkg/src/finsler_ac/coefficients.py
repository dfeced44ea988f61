"""Coefficient fields a(x) (Riemannian part) and b(x) (Randers drift).

Each field is a callable on batched points ``x`` of shape (..., n) that also
carries a JSON description, so metric specifications round-trip through
configuration files.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

TWO_PI = 2.0 * np.pi


class CoefficientField:
    """A callable coefficient together with its serialisable description.

    Parameters
    ----------
    fun : callable
        Batched evaluator ``x (..., n) -> (..., n, n)`` or ``(..., n)``.
    description : str, list or dict
        JSON form accepted by :func:`matrix_field_from_json` or
        :func:`covector_field_from_json`.
    constant : bool
        True when the value does not depend on x.
    identity : bool
        True for the identity matrix (enables fast paths).
    """

    def __init__(self, fun, description, constant=False, identity=False):
        self._fun = fun
        self.description = description
        self.constant = constant
        self.identity = identity

    def __call__(self, x):
        return self._fun(np.asarray(x, dtype=float))

    def __repr__(self):
        return f"CoefficientField({self.description!r})"


# matrices ------------------------------------------------------------------

def identity_matrix(n):
    eye = np.eye(n)

    def fun(x):
        return np.broadcast_to(eye, x.shape[:-1] + (n, n))
    return CoefficientField(fun, "identity", constant=True, identity=True)


def constant_matrix(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("constant matrix must be square")
    if not np.allclose(m, m.T):
        raise ValidationError("matrix coefficient must be symmetric")

    def fun(x):
        return np.broadcast_to(m, x.shape[:-1] + m.shape)
    return CoefficientField(fun, {"constant": m.tolist()}, constant=True,
                            identity=bool(np.array_equal(m, np.eye(len(m)))))


def sphere_matrix():
    """Round unit sphere in polar coordinates (x1 = colatitude, x2 = longitude)."""
    def fun(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.sin(x[..., 0]) ** 2
        return out
    return CoefficientField(fun, "sphere")


def conformal_matrix(n, amplitude=0.1, wavenumber=1.0, axis=0):
    """exp(2 phi) I with phi = amplitude * sin(2 pi wavenumber x[axis])."""
    eye = np.eye(n)

    def fun(x):
        phi = amplitude * np.sin(TWO_PI * wavenumber * x[..., axis])
        return np.exp(2 * phi)[..., None, None] * eye
    desc = {"preset": "conformal", "amplitude": amplitude,
            "wavenumber": wavenumber, "axis": axis}
    return CoefficientField(fun, desc)


def _poly_terms(terms, shape):
    parsed = []
    for t in terms:
        if set(t) != {"coef", "powers"}:
            raise ValidationError("polynomial terms need exactly 'coef' and 'powers'")
        coef = np.asarray(t["coef"], dtype=float)
        if coef.shape != shape:
            raise ValidationError(f"polynomial coefficient shape {coef.shape} != {shape}")
        parsed.append((coef, np.asarray(t["powers"], dtype=int)))
    return parsed


def polynomial_matrix(n, terms):
    """a(x) = sum_k coef_k * prod_i x_i^powers_k[i]."""
    parsed = _poly_terms(terms, (n, n))
    for coef, _ in parsed:
        if not np.allclose(coef, coef.T):
            raise ValidationError("polynomial matrix coefficients must be symmetric")

    def fun(x):
        out = np.zeros(x.shape[:-1] + (n, n))
        for coef, powers in parsed:
            mono = np.prod(x ** powers, axis=-1)
            out = out + mono[..., None, None] * coef
        return out
    constant = all(not p.any() for _, p in parsed)
    return CoefficientField(fun, {"polynomial": terms}, constant=constant)


def matrix_field_from_json(obj, n):
    if obj == "identity":
        return identity_matrix(n)
    if obj == "sphere":
        if n != 2:
            raise ValidationError("the sphere chart preset is two-dimensional")
        return sphere_matrix()
    if isinstance(obj, list):
        return constant_matrix(obj)
    if isinstance(obj, dict):
        if set(obj) == {"constant"}:
            return constant_matrix(obj["constant"])
        if set(obj) == {"polynomial"}:
            return polynomial_matrix(n, obj["polynomial"])
        if obj.get("preset") == "conformal":
            extra = set(obj) - {"preset", "amplitude", "wavenumber", "axis"}
            if extra:
                raise ValidationError(f"unknown conformal keys: {sorted(extra)}")
            return conformal_matrix(n, float(obj.get("amplitude", 0.1)),
                                    float(obj.get("wavenumber", 1.0)), int(obj.get("axis", 0)))
    raise ValidationError(f"unknown matrix coefficient {obj!r}")


# covectors -----------------------------------------------------------------

def constant_covector(b):
    b = np.asarray(b, dtype=float)

    def fun(x):
        return np.broadcast_to(b, x.shape[:-1] + b.shape)
    return CoefficientField(fun, b.tolist(), constant=True)


def sine_covector(constant, amplitude, wavenumber=1.0, axis=0):
    """b(x) = constant + amplitude * sin(2 pi wavenumber x[axis])."""
    c = np.asarray(constant, dtype=float)
    amp = np.asarray(amplitude, dtype=float)

    def fun(x):
        s = np.sin(TWO_PI * wavenumber * x[..., axis])
        return c + s[..., None] * amp
    desc = {"preset": "sine", "constant": c.tolist(), "amplitude": amp.tolist(),
            "wavenumber": wavenumber, "axis": axis}
    return CoefficientField(fun, desc)


def polynomial_covector(n, terms):
    parsed = _poly_terms(terms, (n,))

    def fun(x):
        out = np.zeros(x.shape[:-1] + (n,))
        for coef, powers in parsed:
            out = out + np.prod(x ** powers, axis=-1)[..., None] * coef
        return out
    constant = all(not p.any() for _, p in parsed)
    return CoefficientField(fun, {"polynomial": terms}, constant=constant)


def covector_field_from_json(obj, n):
    if isinstance(obj, list):
        if len(obj) != n:
            raise ValidationError(f"drift covector needs {n} entries")
        return constant_covector(obj)
    if isinstance(obj, dict):
        if set(obj) == {"polynomial"}:
            return polynomial_covector(n, obj["polynomial"])
        if obj.get("preset") == "sine":
            extra = set(obj) - {"preset", "constant", "amplitude", "wavenumber", "axis"}
            if extra:
                raise ValidationError(f"unknown sine keys: {sorted(extra)}")
            return sine_covector(obj["constant"], obj["amplitude"],
                                 float(obj.get("wavenumber", 1.0)), int(obj.get("axis", 0)))
    raise ValidationError(f"unknown covector coefficient {obj!r}")
