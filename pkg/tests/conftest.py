import json
from pathlib import Path

import numpy as np
import pytest

FROZEN = Path(__file__).parent / "oracles" / "frozen"


def load_frozen(name):
    return json.loads((FROZEN / name).read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SQRT2 = np.sqrt(2.0)


def kink(x):
    return np.tanh(x[..., 0] / SQRT2)


_KINK_CACHE = {}


def solve_kink(h, tol=1e-9):
    """Converged 1D kink on [-6, 6] with Dirichlet data tanh(+-6/sqrt 2), cached per h."""
    from finsler_ac.domain import ChartDomain
    from finsler_ac.field import GridField, SolverConfig, solve_allen_cahn
    from finsler_ac.measure import lebesgue
    from finsler_ac.presets import euclidean_plane

    key = (h, tol)
    if key not in _KINK_CACHE:
        dom = ChartDomain(1, "open-box", (-6.0,), (6.0,))
        spec, mu = euclidean_plane(domain=dom), lebesgue()
        res = int(round(12 / h)) + 1
        u0 = GridField.from_function(dom, res, kink, boundary=kink)
        u, rep = solve_allen_cahn(spec, mu, u0, SolverConfig(dt_initial=h * h, residual_tol=tol))
        _KINK_CACHE[key] = (spec, mu, u, rep)
    return _KINK_CACHE[key]
