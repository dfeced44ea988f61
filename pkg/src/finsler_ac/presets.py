"""Named metric, measure and domain presets."""
from __future__ import annotations

import numpy as np

from .coefficients import conformal_matrix, constant_covector, identity_matrix, sine_covector, sphere_matrix
from .domain import ChartDomain
from .errors import ValidationError
from .measure import gaussian, lebesgue
from .metric import MetricSpec


def unit_torus(n=2) -> ChartDomain:
    return ChartDomain(n, "periodic-box", (0.0,) * n, (1.0,) * n)


def sphere_domain() -> ChartDomain:
    # colatitude kept away from the poles; longitude long enough for a full turn
    return ChartDomain(2, "open-box", (0.2, -1.0), (np.pi - 0.2, 8.0))


def euclidean_plane(domain=None, derivative_mode="analytic") -> MetricSpec:
    return MetricSpec("euclidean", domain or unit_torus(), derivative_mode=derivative_mode,
                      name="euclidean")


def randers_const_b(c=0.5, domain=None, derivative_mode="analytic") -> MetricSpec:
    """Minkowski-Randers norm |y| + c y^1 (locally Minkowski, Berwald)."""
    dom = domain or unit_torus()
    b = np.zeros(dom.dim)
    b[0] = c
    return MetricSpec("randers", dom, a=identity_matrix(dom.dim), b=constant_covector(b),
                      derivative_mode=derivative_mode, name="randers-const-b")


def sphere_chart(derivative_mode="analytic") -> MetricSpec:
    return MetricSpec("riemannian", sphere_domain(), a=sphere_matrix(),
                      derivative_mode=derivative_mode, name="sphere-chart")


def conformal_torus(amplitude=0.1, domain=None, derivative_mode="analytic") -> MetricSpec:
    """exp(2 phi) I with phi = amplitude sin(2 pi x^1) on a flat torus."""
    dom = domain or unit_torus()
    return MetricSpec("riemannian", dom, a=conformal_matrix(dom.dim, amplitude),
                      derivative_mode=derivative_mode, name="conformal-torus")


def randers_torus(constant=(0.3, 0.0), amplitude=(0.0, 0.1), domain=None,
                  derivative_mode="analytic") -> MetricSpec:
    """|y| + b(x) y with b = constant + amplitude sin(2 pi x^1)."""
    dom = domain or unit_torus()
    return MetricSpec("randers", dom, a=identity_matrix(dom.dim),
                      b=sine_covector(constant, amplitude),
                      derivative_mode=derivative_mode, name="randers-torus")


METRIC_PRESETS = {
    "euclidean": euclidean_plane,
    "randers-const-b": randers_const_b,
    "sphere-chart": sphere_chart,
    "conformal-torus": conformal_torus,
    "randers-torus": randers_torus,
}

MEASURE_PRESETS = {
    "lebesgue": lebesgue,
    "gaussian": gaussian,
}


def metric_preset(name, domain=None) -> MetricSpec:
    try:
        factory = METRIC_PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown metric preset {name!r}") from None
    if name == "sphere-chart":
        if domain is not None and domain != sphere_domain():
            raise ValidationError("the sphere-chart preset fixes its own domain")
        return factory()
    return factory(domain=domain)


def measure_preset(name):
    try:
        return MEASURE_PRESETS[name]()
    except KeyError:
        raise ValidationError(f"unknown measure preset {name!r}") from None
