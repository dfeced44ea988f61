"""Smooth positive densities sigma(x) defining d mu = sigma dx."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MeasureSpec:
    """Density of the measure with respect to coordinate Lebesgue measure.

    Parameters
    ----------
    sigma : callable
        Batched ``x (..., n) -> sigma (...)``, strictly positive.
    log_sigma_grad : callable, optional
        Analytic gradient of log sigma; finite differences are used otherwise.
    description : str or dict
        JSON form for configuration round trips.
    """

    sigma: Callable
    log_sigma_grad: Callable | None = None
    description: object = "custom"
    constant: bool = False

    def density(self, x):
        s = np.asarray(self.sigma(np.asarray(x, dtype=float)), dtype=float)
        if np.any(~(s > 0)):
            raise ValidationError("measure density must be positive")
        return s

    def log_density(self, x):
        return np.log(self.density(x))

    def grad_log_density(self, x, h=1e-5):
        x = np.asarray(x, dtype=float)
        if self.log_sigma_grad is not None:
            return np.asarray(self.log_sigma_grad(x), dtype=float)
        if self.constant:
            return np.zeros_like(x)
        parts = []
        for k in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[k] = h
            parts.append((self.log_density(x + e) - self.log_density(x - e)) / (2 * h))
        return np.stack(parts, axis=-1)

    def to_json(self):
        return self.description


def lebesgue() -> MeasureSpec:
    return MeasureSpec(sigma=lambda x: np.ones(np.shape(x)[:-1]),
                       log_sigma_grad=lambda x: np.zeros_like(x),
                       description="lebesgue", constant=True)


def gaussian(center=None, scale=1.0) -> MeasureSpec:
    """sigma = exp(-|x - center|^2 / (2 scale^2))."""
    def centred(x):
        c = 0.0 if center is None else np.asarray(center, dtype=float)
        return np.asarray(x, dtype=float) - c

    desc = {"preset": "gaussian", "scale": scale}
    if center is not None:
        desc["center"] = list(center)
    return MeasureSpec(
        sigma=lambda x: np.exp(-np.sum(centred(x) ** 2, axis=-1) / (2 * scale**2)),
        log_sigma_grad=lambda x: -centred(x) / scale**2,
        description=desc)


def measure_from_json(obj) -> MeasureSpec:
    if obj == "lebesgue":
        return lebesgue()
    if obj == "gaussian":
        return gaussian()
    if isinstance(obj, dict) and obj.get("preset") == "gaussian":
        extra = set(obj) - {"preset", "center", "scale"}
        if extra:
            raise ValidationError(f"unknown gaussian keys: {sorted(extra)}")
        return gaussian(obj.get("center"), float(obj.get("scale", 1.0)))
    raise ValidationError(f"unknown measure {obj!r}")
