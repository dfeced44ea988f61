"""Configuration-driven experiment runner.

A config is one JSON document (or the name of a built-in experiment preset,
see ``finsler-ac presets``). Unknown keys are rejected. Example::

    {
      "experiment": "liouville",
      "metric": "euclidean",
      "measure": "lebesgue",
      "domain": {"dim": 2, "topology": "periodic-box", "lower": [0, 0], "upper": [1, 1]},
      "grid": {"resolution": [128, 128]},
      "initial": {"profile": "product-sine", "offset": 0.5, "amplitude": 0.3},
      "solver": {"dt_over_h2": 0.9, "residual_tol": 2e-05, "clamp_positive": true},
      "tolerance": 1e-4
    }

``solver.dt_over_h2`` sets the time step relative to the finest spacing
(explicit stability needs roughly dt < h^2 in 2D).

Exit codes: 0 success, 2 validation failure, 3 numerical failure (a partial
report is still written).
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .curvature import distortion_s_curvature, ricci, weighted_ricci
from .domain import ChartDomain
from .errors import FinslerError, SolverError, ValidationError
from .estimator import (EstimateParams, THEOREMS, cutoff_constants, h_functional, lemma8_residual,
                        lemma9_gap, liouville_check, measure_inputs, verify_estimate)
from .field import GridField, SolverConfig, newton_polish, residual_report, solve_allen_cahn
from .measure import measure_from_json
from .metric import MetricSpec, SamplingResolution, _F_raw, unit_directions
from .presets import MEASURE_PRESETS, METRIC_PRESETS, metric_preset

EXPERIMENTS = ("curvature-table", "solve", "verify-theorem1", "verify-theorem2", "liouville", "lemma-checks")

TOP_KEYS = {"experiment", "metric", "measure", "domain", "grid", "initial", "boundary", "solver",
            "polish", "params", "theorem", "ball", "sampling", "tolerance", "seed", "reference",
            "calibration", "description"}

MAX_NODES = 2_000_000

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# built-in experiment configs

EXPERIMENT_PRESETS = {
    "liouville": {
        "description": "flat torus, u0 in (0, 1], clamped flow converges to u = 1",
        "experiment": "liouville",
        "metric": "euclidean",
        "measure": "lebesgue",
        "domain": {"dim": 2, "topology": "periodic-box", "lower": [0.0, 0.0], "upper": [1.0, 1.0]},
        "grid": {"resolution": [128, 128]},
        "initial": {"profile": "product-sine", "offset": 0.5, "amplitude": 0.3},
        "solver": {"dt_over_h2": 0.9, "residual_tol": 2e-5, "clamp_positive": True},
        "tolerance": 1e-4,
    },
    "kink": {
        "description": "1D kink on [-6, 6] with Dirichlet data tanh(+-6/sqrt 2)",
        "experiment": "solve",
        "metric": "euclidean",
        "measure": "lebesgue",
        "domain": {"dim": 1, "topology": "open-box", "lower": [-6.0], "upper": [6.0]},
        "grid": {"h": 0.05},
        "initial": {"profile": "tanh", "width": 1.0},
        "boundary": "kink",
        "reference": "kink",
        "solver": {"dt_over_h2": 1.0, "residual_tol": 1e-9},
    },
    "curvature-table": {
        "description": "constant Randers metric: flag, Ricci and S-curvature samples (S = 0)",
        "experiment": "curvature-table",
        "metric": "randers-const-b",
        "measure": "lebesgue",
        "params": {"N": 3.0},
        "sampling": {"points_per_axis": 3, "directions": 64},
    },
    "verify-theorem1": {
        "description": "conformal torus exp(2 phi) I, phi = 0.1 sin(2 pi x1); compact case-1 estimate",
        "experiment": "verify-theorem1",
        "metric": "conformal-torus",
        "measure": "lebesgue",
        "grid": {"resolution": [48, 48]},
        "initial": {"profile": "product-sine", "offset": 0.5, "amplitude": 0.3},
        "solver": {"dt_over_h2": 0.7, "residual_tol": 1e-6, "clamp_positive": True},
        "params": {"N": 3.0, "epsilon": 0.5, "q": 0.2},
        "theorem": "T1-case1",
        "sampling": {"points_per_axis": 16, "directions": 64},
    },
    "verify-theorem2": {
        "description": "Euclidean box with Gaussian measure and Dirichlet data 0.5; ball estimate around 0",
        "experiment": "verify-theorem2",
        "metric": "euclidean",
        "measure": {"preset": "gaussian", "scale": 1.0},
        "domain": {"dim": 2, "topology": "open-box", "lower": [-2.0, -2.0], "upper": [2.0, 2.0]},
        "grid": {"resolution": [41, 41]},
        "initial": {"profile": "constant", "value": 0.5},
        "boundary": "constant",
        "solver": {"dt_over_h2": 0.9, "residual_tol": 1e-8, "clamp_positive": True},
        "params": {"N": 3.0, "epsilon": 0.5, "q": 0.2},
        "theorem": "T2-case1",
        "ball": {"center": [0.0, 0.0], "R": 0.9},
        "sampling": {"points_per_axis": 8, "directions": 64},
    },
    "lemma-checks": {
        "description": "kink-antikink saddle on a long conformal torus; w-equation and H inequality",
        "experiment": "lemma-checks",
        "metric": "conformal-torus",
        "measure": "lebesgue",
        "domain": {"dim": 2, "topology": "periodic-box", "lower": [0.0, 0.0], "upper": [8.0, 0.5]},
        "grid": {"resolution": [128, 16]},
        "initial": {"profile": "cosine", "period": 8.0, "shift": 2.0},
        "solver": {"dt_over_h2": 0.9, "residual_tol": 1e-3, "max_steps": 40000},
        "polish": True,
        "params": {"N": 4.0, "epsilon": 0.5, "q": 0.40824829046386296, "s": 0.6666666666666666},
        "calibration": {"metric": "euclidean"},
    },
    "randers-duality": {
        "description": "Randers torus solve; weak defects of u under F and -u under the reverse metric",
        "experiment": "solve",
        "metric": "randers-torus",
        "measure": "lebesgue",
        "grid": {"resolution": [32, 32]},
        "initial": {"profile": "product-sine", "offset": 0.5, "amplitude": 0.3},
        "solver": {"dt_over_h2": 0.4, "residual_tol": 1e-6, "clamp_positive": True},
    },
}


# ---------------------------------------------------------------------------
# config parsing

def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where} must be a JSON object")
    extra = set(obj) - set(allowed)
    if extra:
        raise ValidationError(f"unknown {where} keys: {sorted(extra)}")


def load_config(source) -> dict:
    """Parse a config path, preset name or dict into a raw (unvalidated) dict."""
    if isinstance(source, dict):
        return copy.deepcopy(source)
    if str(source) in EXPERIMENT_PRESETS:
        return copy.deepcopy(EXPERIMENT_PRESETS[str(source)])
    path = Path(source)
    if not path.is_file():
        raise ValidationError(f"config {source!r} is neither a file nor a preset name")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None


def _build_metric(obj, domain):
    if isinstance(obj, str):
        return metric_preset(obj, domain)
    _check_keys(obj, {"preset", "family", "a", "b", "derivative_mode"}, "metric")
    if "preset" in obj:
        if set(obj) - {"preset"}:
            raise ValidationError("a metric preset takes no further keys")
        return metric_preset(obj["preset"], domain)
    return MetricSpec.from_json(obj, domain)


def _default_domain(metric_obj):
    name = metric_obj if isinstance(metric_obj, str) else metric_obj.get("preset")
    if name is not None:
        return metric_preset(name).domain
    raise ValidationError("a domain is required for non-preset metrics")


def _resolution(grid, domain):
    _check_keys(grid, {"resolution", "h"}, "grid")
    if ("resolution" in grid) == ("h" in grid):
        raise ValidationError("grid needs exactly one of 'resolution' or 'h'")
    if "resolution" in grid:
        res = grid["resolution"]
        res = [int(res)] * domain.dim if np.isscalar(res) else [int(r) for r in res]
    else:
        h = float(grid["h"])
        if not h > 0:
            raise ValidationError("grid spacing h must be positive")
        cells = domain.extent / h
        if np.any(np.abs(cells - np.round(cells)) > 1e-9 * cells):
            raise ValidationError(f"h = {h} does not divide the domain extent")
        cells = np.round(cells).astype(int)
        res = [int(c) if domain.periodic else int(c) + 1 for c in cells]
    if len(res) != domain.dim:
        raise ValidationError("resolution must have one entry per dimension")
    if int(np.prod(res)) > MAX_NODES:
        raise ValidationError(f"resolution {res} exceeds the node budget {MAX_NODES}")
    return tuple(res)


INITIAL_PROFILES = ("constant", "product-sine", "tanh", "cosine")


def _initial_function(obj, domain):
    if obj is None:
        raise ValidationError("this experiment needs an 'initial' profile")
    _check_keys(obj, {"profile", "value", "offset", "amplitude", "width", "period", "shift"}, "initial")
    kind = obj.get("profile")
    if kind == "constant":
        v = float(obj.get("value", 1.0))
        return lambda x: np.full(x.shape[:-1], v)
    if kind == "product-sine":
        off, amp = float(obj.get("offset", 0.5)), float(obj.get("amplitude", 0.3))
        L = domain.extent

        def fun(x):
            out = np.ones(x.shape[:-1])
            for k in range(domain.dim):
                out = out * np.sin(2 * np.pi * (x[..., k] - domain.lower[k]) / L[k])
            return off + amp * out
        return fun
    if kind == "tanh":
        width = float(obj.get("width", 1.0))
        return lambda x: np.tanh(x[..., 0] / width)
    if kind == "cosine":
        period = float(obj.get("period", domain.extent[0]))
        shift = float(obj.get("shift", 0.0))
        return lambda x: np.cos(2 * np.pi * (x[..., 0] - shift) / period)
    raise ValidationError(f"unknown initial profile {kind!r}; choose from {INITIAL_PROFILES}")


def kink_profile(x):
    return np.tanh(x[..., 0] / SQRT2)


def _boundary_function(kind, initial, domain):
    if kind is None:
        return None
    if domain.periodic:
        raise ValidationError("boundary data only apply to open boxes")
    if kind == "kink":
        return kink_profile
    if kind == "constant":
        # hold the initial constant on the boundary
        return initial
    raise ValidationError(f"unknown boundary kind {kind!r}")


class Experiment:
    """A validated config: the built objects plus the resolved JSON echo."""

    def __init__(self, raw: dict):
        _check_keys(raw, TOP_KEYS, "config")
        self.raw = raw
        kind = raw.get("experiment")
        if kind not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {kind!r}; choose from {list(EXPERIMENTS)}")
        self.kind = kind
        if "metric" not in raw:
            raise ValidationError("config needs a metric")
        self.domain = (ChartDomain.from_dict(raw["domain"]) if "domain" in raw
                       else _default_domain(raw["metric"]))
        self.metric = _build_metric(raw["metric"], self.domain)
        self.measure = measure_from_json(raw.get("measure", "lebesgue"))
        self.seed = int(raw.get("seed", 0))
        samp = dict(raw.get("sampling", {}))
        _check_keys(samp, {"points_per_axis", "directions", "refine", "seed"}, "sampling")
        samp.setdefault("seed", self.seed)
        self.sampling = SamplingResolution(**samp)
        self.params = EstimateParams.from_json(raw["params"]) if "params" in raw else None
        self.polish = bool(raw.get("polish", False))
        self.reference = raw.get("reference")
        if self.reference not in (None, "kink"):
            raise ValidationError(f"unknown reference solution {self.reference!r}")
        needs_field = kind != "curvature-table"
        if needs_field:
            if "grid" not in raw:
                raise ValidationError("this experiment needs a grid")
            self.resolution = _resolution(raw["grid"], self.domain)
            self.initial = _initial_function(raw.get("initial"), self.domain)
            self.boundary = _boundary_function(raw.get("boundary"), self.initial, self.domain)
            solver = dict(raw.get("solver", {}))
            factor = solver.pop("dt_over_h2", None)
            if factor is not None:
                if "dt_initial" in solver:
                    raise ValidationError("give at most one of solver.dt_initial and solver.dt_over_h2")
                h = float(np.min(self.initial_field().spacing))
                solver["dt_initial"] = float(factor) * h * h
            self.solver = SolverConfig.from_json(solver)
        if kind in ("verify-theorem1", "verify-theorem2", "lemma-checks") and self.params is None:
            raise ValidationError(f"{kind} needs params (at least N)")
        if kind == "curvature-table" and self.params is None:
            raise ValidationError("curvature-table needs params.N for the weighted Ricci column")
        self.theorem = raw.get("theorem")
        if kind.startswith("verify"):
            want = "T1" if kind == "verify-theorem1" else "T2"
            if self.theorem not in THEOREMS or not self.theorem.startswith(want):
                raise ValidationError(f"{kind} needs theorem in {[t for t in THEOREMS if t.startswith(want)]}")
        if kind == "verify-theorem2":
            ball = raw.get("ball")
            _check_keys(ball or {}, {"center", "R"}, "ball")
            if not ball or "center" not in ball or "R" not in ball:
                raise ValidationError("verify-theorem2 needs ball.center and ball.R")
            self.center = np.asarray(ball["center"], dtype=float)
            self.R = float(ball["R"])
            if self.center.shape != (self.domain.dim,):
                raise ValidationError("ball.center has the wrong dimension")
        self.tolerance = float(raw.get("tolerance", 1e-4))
        self.calibration = raw.get("calibration")
        if self.calibration is not None:
            _check_keys(self.calibration, {"metric"}, "calibration")

    def resolved(self) -> dict:
        """Config echo with every default filled in."""
        out = {"experiment": self.kind, "metric": self.metric.to_json(),
               "metric_name": self.metric.name, "domain": self.domain.to_dict(),
               "measure": self.measure.to_json(), "seed": self.seed,
               "sampling": self.sampling.as_dict(), "polish": self.polish,
               "reference": self.reference}
        if hasattr(self, "resolution"):
            out["grid"] = {"resolution": list(self.resolution),
                           "spacing": [float(h) for h in GridField.from_function(
                               self.domain, self.resolution, lambda x: np.zeros(x.shape[:-1])).spacing]}
            out["initial"] = self.raw.get("initial")
            out["boundary"] = self.raw.get("boundary")
            out["solver"] = self.solver.to_json()
        if self.params is not None:
            out["params"] = self.params.to_json()
        for key in ("theorem", "ball", "calibration", "description"):
            if key in self.raw:
                out[key] = self.raw[key]
        if self.kind == "liouville":
            out["tolerance"] = self.tolerance
        c1, c2 = cutoff_constants()
        out["cutoff_constants_numeric"] = {"C1": c1, "C2": c2}
        return out

    def initial_field(self, resolution=None) -> GridField:
        res = resolution or self.resolution
        return GridField.from_function(self.domain, res, self.initial, boundary=self.boundary)


# ---------------------------------------------------------------------------
# experiment bodies

class _Run:
    def __init__(self, exp: Experiment, out: Path):
        self.exp = exp
        self.out = out
        self.timings = {}
        self.outputs = []
        self.verdicts = {}
        self.results = {}

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = run.timings.get(name, 0.0) + time.perf_counter() - self.t
        return _Timer()

    def emit(self, name):
        path = self.out / name
        self.outputs.append(name)
        return path

    def write_csv(self, name, header, rows):
        path = self.emit(name)
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def solve(self, spec=None, resolution=None, tag=""):
        exp = self.exp
        spec = spec or exp.metric
        u0 = exp.initial_field(resolution)
        with self.stage("solve" + tag):
            try:
                u, rep = solve_allen_cahn(spec, exp.measure, u0, exp.solver)
            except SolverError as exc:
                if exc.report is not None:
                    self.results["solver" + tag] = exc.report.to_json()
                raise
        self.results["solver" + tag] = rep.to_json()
        if exp.polish:
            with self.stage("polish" + tag):
                u, hist = newton_polish(spec, exp.measure, u)
            self.results["polish" + tag] = {"residual_history": hist}
            rep_after = residual_report(spec, exp.measure, u)
            self.results["solver" + tag]["polished_strong_residual"] = rep_after.strong_residual
        return u, rep


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _energy_csv(run, rep, name="energy_trace.csv"):
    run.write_csv(name, ["step", "energy"], enumerate(rep.energy_trace))


def _kink_error(u):
    return float(np.max(np.abs(u.values - kink_profile(u.nodes()))))


def run_solve(run: _Run):
    exp = run.exp
    u, rep = run.solve()
    u.to_csv(run.emit("field.csv"))
    _energy_csv(run, rep)
    from .field import reverse_duality_check, weak_residual
    from .metric import reverse_metric
    ubar = u.with_values(-u.values)
    ubar.boundary = None if u.boundary is None else (lambda x, f=u.boundary: -f(x))
    ubar._ghost_cache = {}
    with run.stage("residuals"):
        run.results["residual"] = residual_report(exp.metric, exp.measure, u).to_json()
        run.results["reverse_duality"] = {
            "weak_residual_forward": weak_residual(exp.metric, exp.measure, u),
            "weak_residual_reverse": weak_residual(reverse_metric(exp.metric), exp.measure, ubar),
            "max_defect_sum": reverse_duality_check(exp.metric, exp.measure, u),
        }
    if exp.reference == "kink":
        run.results["sup_error_vs_kink"] = _kink_error(u)
    run.verdicts["converged"] = bool(rep.converged)
    run.verdicts["energy_nonincreasing"] = rep.energy_nonincreasing()
    return u


def run_liouville(run: _Run):
    exp = run.exp
    u, rep = run.solve()
    _energy_csv(run, rep)
    u.to_csv(run.emit("field.csv"))
    with run.stage("liouville"):
        v = liouville_check(exp.metric, exp.measure, u, exp.tolerance,
                            N=(exp.params.N if exp.params else None),
                            gate_tol=max(10 * exp.solver.residual_tol, 1e-12), samples=exp.sampling)
    run.results["liouville"] = v.to_json()
    run.verdicts["liouville"] = v.verdict
    run.verdicts["energy_nonincreasing"] = rep.energy_nonincreasing()


def run_verify(run: _Run):
    exp = run.exp
    u, rep = run.solve()
    _energy_csv(run, rep)
    with run.stage("measure"):
        inputs = measure_inputs(exp.metric, exp.measure, exp.params, exp.domain, exp.sampling,
                                with_k0=exp.kind == "verify-theorem2")
    with run.stage("estimate"):
        kw = {}
        if exp.kind == "verify-theorem2":
            kw = {"R": exp.R, "center": exp.center}
        report = verify_estimate(exp.metric, exp.measure, u, exp.params, exp.theorem,
                                 gate_tol=max(10 * exp.solver.residual_tol, 1e-12), inputs=inputs, **kw)
    run.results["estimate"] = report.to_json()
    run.verdicts[exp.theorem] = bool(report.passed)
    hf = h_functional(exp.metric, exp.measure, u, replace(exp.params, s=report.params["s"]))
    nodes = u.nodes().reshape(-1, exp.domain.dim)
    lhs = hf.H_normalized.values.ravel()
    mask = hf.mask.ravel()
    rows = ([i, *x, l, report.rhs_bound, m] for i, (x, l, m) in enumerate(zip(nodes, lhs, mask)))
    run.write_csv("lhs_rhs.csv", ["node", *[f"x{k + 1}" for k in range(exp.domain.dim)],
                                  "H_normalized", "rhs_bound", "in_M_u"], rows)


def run_curvature_table(run: _Run):
    exp = run.exp
    spec, mu = exp.metric, exp.measure
    res = exp.sampling
    n = spec.dim
    pts = exp.domain.sample_points(res.points_per_axis)
    dirs = unit_directions(n, res.directions, res.seed)
    X = np.broadcast_to(pts[:, None, :], (len(pts), len(dirs), n)).reshape(-1, n)
    Y = np.broadcast_to(dirs[None], (len(pts), len(dirs), n)).reshape(-1, n)
    Y = Y / _F_raw(spec, X, Y)[..., None]
    with run.stage("curvature"):
        ric = ricci(spec, X, Y)
        wc = distortion_s_curvature(spec, mu, X, Y)
        ricN = weighted_ricci(spec, mu, exp.params.N, X, Y)
    header = [f"x{k + 1}" for k in range(n)] + [f"y{k + 1}" for k in range(n)] + \
        ["ricci", "tau", "S", "S_dot", "ricci_N"]
    rows = (list(x) + list(y) + [r, t, s, sd, rn]
            for x, y, r, t, s, sd, rn in zip(X, Y, ric, wc.tau, wc.S, wc.S_dot, ricN))
    run.write_csv("curvature_table.csv", header, rows)
    run.results["curvature"] = {
        "samples": int(len(X)), "ricci_min": float(ric.min()), "ricci_max": float(ric.max()),
        "ricci_N_min": float(ricN.min()), "max_abs_S": float(np.max(np.abs(wc.S))),
        "max_abs_S_dot": float(np.max(np.abs(wc.S_dot))),
    }
    run.verdicts["table_written"] = True


def _gap_stats(l9):
    return {"min_gap": l9.min_gap, "mask_nodes": int(l9.mask.sum()),
            "term_max_abs": {k: float(np.nanmax(np.abs(v))) if not l9.empty else 0.0
                             for k, v in l9.terms.items()}}


def run_lemma_checks(run: _Run):
    """w-equation residual and H-inequality gap, with a C h^2 slack from a Euclidean twin.

    The slack constant C is a Richardson estimate of the discretization
    error of the gap on the Euclidean twin: max |gap_h - gap_{h/2}| at
    shared nodes divided by (h^2 - h^2/4).
    """
    exp = run.exp
    params = exp.params
    u, rep = run.solve()
    u.to_csv(run.emit("field.csv"))
    with run.stage("lemma8"):
        l8 = lemma8_residual(exp.metric, exp.measure, u, params.q)
    with run.stage("lemma9"):
        l9 = lemma9_gap(exp.metric, exp.measure, u, params)
    h = float(np.max(u.spacing))
    run.results["lemma8"] = {"sup_residual": l8.sup_residual, "sup_assembly_gap": l8.sup_assembly_gap,
                             "empty": l8.empty, "mask_nodes": int(l8.mask.sum())}
    run.results["lemma9"] = _gap_stats(l9)
    run.results["lemma9"]["empty"] = l9.empty
    nodes = u.nodes().reshape(-1, exp.domain.dim)
    rows = ([i, *x, g] for i, (x, g) in enumerate(zip(nodes, l9.gap.ravel())) if np.isfinite(g))
    run.write_csv("lemma9_gap.csv", ["node", *[f"x{k + 1}" for k in range(exp.domain.dim)], "gap"], rows)
    if exp.calibration is not None:
        twin = _build_metric(exp.calibration["metric"], exp.domain)
        fine = tuple(2 * r if exp.domain.periodic else 2 * r - 1 for r in exp.resolution)
        uc, _ = run.solve(twin, tag="_calibration_coarse")
        uf, _ = run.solve(twin, fine, tag="_calibration_fine")
        with run.stage("calibration"):
            gc = lemma9_gap(twin, exp.measure, uc, params)
            gf = lemma9_gap(twin, exp.measure, uf, params)
            C = richardson_constant(gc.gap, gf.gap, float(np.max(uc.spacing)))
        tol = C * h * h
        run.results["calibration"] = {"C": C, "euclidean_min_gap_coarse": gc.min_gap,
                                      "euclidean_min_gap_fine": gf.min_gap, "slack": tol}
        run.verdicts["lemma9_gap_within_slack"] = bool(l9.empty or l9.min_gap >= -tol)
    run.verdicts["lemma8_computed"] = not l8.empty


def richardson_constant(gap_coarse, gap_fine, h):
    """max |gap_h - gap_{h/2}| over shared nodes / (h^2 - h^2 / 4)."""
    sub = gap_fine[tuple(slice(None, None, 2) for _ in gap_fine.shape)]
    if sub.shape != gap_coarse.shape:
        raise ValidationError("calibration lattices are not nested")
    diff = np.abs(sub - gap_coarse)
    if not np.any(np.isfinite(diff)):
        return 0.0
    return float(np.nanmax(diff) / (0.75 * h * h))


BODIES = {
    "solve": run_solve,
    "liouville": run_liouville,
    "verify-theorem1": run_verify,
    "verify-theorem2": run_verify,
    "curvature-table": run_curvature_table,
    "lemma-checks": run_lemma_checks,
}


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def run(config, out_dir) -> dict:
    """Execute one experiment; writes report.json and timings.json into ``out_dir``.

    Returns the report dict. Validation problems raise ValidationError before
    anything is written; numerical failures write a partial report with
    ``status = "numerical-failure"`` and re-raise.
    """
    exp = Experiment(load_config(config))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(exp, out)
    status, error = "ok", None
    try:
        BODIES[exp.kind](r)
    except ValidationError:
        raise
    except FinslerError as exc:
        status, error = "numerical-failure", f"{type(exc).__name__}: {exc}"
    report = _to_builtin({
        "version": __version__,
        "status": status,
        "error": error,
        "config": exp.resolved(),
        "results": r.results,
        "verdicts": r.verdicts,
        "outputs": sorted(r.outputs + ["report.json", "timings.json"]),
    })
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "timings.json").write_text(json.dumps({k: round(v, 6) for k, v in r.timings.items()},
                                                 indent=2, sort_keys=True) + "\n")
    if status != "ok":
        raise _NumericalFailure(error, report)
    return report


class _NumericalFailure(FinslerError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# convergence study

def convergence_study(config, h_list, out_dir=None):
    """Per-h residual and error table, observed orders and a monotonicity flag.

    Rows: h, resolution, steps, strong residual, sup error (against the kink
    when ``reference`` is "kink", else against the finest run at shared nodes).
    """
    raw = load_config(config)
    if raw.get("experiment") not in ("solve", "liouville", "lemma-checks"):
        raise ValidationError("convergence studies need a field experiment")
    base = dict(raw)
    base["experiment"] = "solve"
    rows = []
    fields = []
    for h in h_list:
        cfg = dict(base)
        cfg["grid"] = {"h": float(h)}
        exp = Experiment(cfg)
        u0 = exp.initial_field()
        u, rep = solve_allen_cahn(exp.metric, exp.measure, u0, exp.solver)
        if exp.polish:
            u, _ = newton_polish(exp.metric, exp.measure, u)
        strong = residual_report(exp.metric, exp.measure, u).strong_residual
        err = _kink_error(u) if exp.reference == "kink" else None
        rows.append({"h": float(h), "resolution": list(u.resolution), "steps": rep.steps,
                     "strong_residual": strong, "sup_error": err})
        fields.append(u)
    if rows and rows[0]["sup_error"] is None:
        finest = fields[int(np.argmin(h_list))]
        for row, u in zip(rows, fields):
            row["sup_error"] = _nested_difference(u, finest)
    orders = []
    for a, b in zip(rows, rows[1:]):
        ea, eb = a["sup_error"], b["sup_error"]
        if ea > 0 and eb > 0 and a["h"] != b["h"]:
            orders.append(math.log(ea / eb) / math.log(a["h"] / b["h"]))
        else:
            orders.append(None)
    for row, o in zip(rows[1:], orders):
        row["order"] = o
    rows[0]["order"] = None
    errs = [r["sup_error"] for r in rows]
    ordered = sorted(zip([r["h"] for r in rows], errs), reverse=True)
    monotone = all(e1 >= e2 for (_, e1), (_, e2) in zip(ordered, ordered[1:]))
    hs = np.log([r["h"] for r in rows])
    es = np.array(errs, dtype=float)
    fitted = None
    if len(rows) >= 2 and np.all(es > 0):
        fitted = float(np.polyfit(hs, np.log(es), 1)[0])
    study = {"rows": rows, "fitted_order": fitted, "monotone": monotone,
             "warning": None if monotone else "non-monotone error under refinement"}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w") as fh:
            fh.write("h,resolution,steps,strong_residual,sup_error,order\n")
            for r in rows:
                fh.write(",".join([_fmt(r["h"]), "x".join(map(str, r["resolution"])), str(r["steps"]),
                                   _fmt(r["strong_residual"]), _fmt(r["sup_error"]),
                                   "" if r["order"] is None else _fmt(r["order"])]) + "\n")
        (out / "convergence.json").write_text(json.dumps(_to_builtin(study), indent=2, sort_keys=True) + "\n")
    return study


def _nested_difference(u, finest):
    """sup |u - finest| at shared nodes; 0 for the finest run itself."""
    if u.resolution == finest.resolution:
        return 0.0
    step = []
    for rc, rf in zip(u.resolution, finest.resolution):
        if u.domain.periodic:
            ratio = rf // rc
            ok = rf == ratio * rc
        else:
            ratio = (rf - 1) // (rc - 1)
            ok = rf - 1 == ratio * (rc - 1)
        if not ok:
            raise ValidationError("h values must give nested lattices")
        step.append(ratio)
    sub = finest.values[tuple(slice(None, None, s) for s in step)]
    return float(np.max(np.abs(sub - u.values)))


# ---------------------------------------------------------------------------
# entry point

def list_presets() -> str:
    lines = ["metric presets:"]
    lines += [f"  {name}" for name in METRIC_PRESETS]
    lines.append("measure presets:")
    lines += [f"  {name}" for name in MEASURE_PRESETS]
    lines.append("experiments:")
    lines += [f"  {name}" for name in EXPERIMENTS]
    lines.append("experiment configs (usable in place of a config path):")
    lines += [f"  {name}: {cfg['description']}" for name, cfg in EXPERIMENT_PRESETS.items()]
    return "\n".join(lines)


def _parse_h(text):
    try:
        hs = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad h list {text!r}") from None
    if not hs or any(h <= 0 for h in hs):
        raise argparse.ArgumentTypeError("h values must be positive")
    return hs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="finsler-ac", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("config", help="config JSON path or experiment preset name")
    p_run.add_argument("--out", required=True, help="output directory")
    sub.add_parser("presets", help="list built-in presets")
    p_conv = sub.add_parser("converge", help="grid refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--h", required=True, type=_parse_h, help="comma-separated spacings")
    p_conv.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    if args.command == "presets":
        print(list_presets())
        return 0
    try:
        if args.command == "run":
            report = run(args.config, args.out)
            print(json.dumps(report["verdicts"], sort_keys=True))
            return 0
        study = convergence_study(args.config, args.h, args.out)
        for row in study["rows"]:
            print(f"h={row['h']:<10g} residual={row['strong_residual']:.3e} "
                  f"error={row['sup_error']:.3e} order={row['order']}")
        print(f"fitted order {study['fitted_order']}")
        if study["warning"]:
            print(f"warning: {study['warning']}", file=sys.stderr)
        return 0
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except _NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FinslerError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
