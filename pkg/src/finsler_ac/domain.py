"""Coordinate charts: periodic or open boxes in R^n."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StencilOutOfDomainError, ValidationError

TOPOLOGIES = ("periodic-box", "open-box")


@dataclass(frozen=True)
class ChartDomain:
    """An axis-aligned box, either a flat torus or an open subset of R^n.

    Parameters
    ----------
    dim : int
    topology : {"periodic-box", "open-box"}
    lower, upper : sequence of float
        Per-axis bounds; for a periodic box the period is ``upper - lower``.
    """

    dim: int
    topology: str
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValidationError(f"dim must be a positive integer, got {self.dim}")
        if self.topology not in TOPOLOGIES:
            raise ValidationError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if len(lower) != self.dim or len(upper) != self.dim:
            raise ValidationError("lower/upper must have one entry per axis")
        if any(lo >= hi for lo, hi in zip(lower, upper)):
            raise ValidationError("lower < upper required on every axis")

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic-box"

    @property
    def lower_array(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def upper_array(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def extent(self) -> np.ndarray:
        return self.upper_array - self.lower_array

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def wrap(self, x):
        """Map coordinates into the fundamental box (identity for open boxes)."""
        if not self.periodic:
            return x
        lo = self.lower_array
        return lo + np.mod(x - lo, self.extent)

    def contains(self, x, margin=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.periodic:
            return np.ones(x.shape[:-1], dtype=bool)
        m = np.asarray(margin, dtype=float)
        return np.all((x - m >= self.lower_array) & (x + m <= self.upper_array), axis=-1)

    def check_stencil(self, x, margin):
        """Raise if a stencil of half-width ``margin`` around x leaves an open box."""
        if self.periodic:
            return
        if not np.all(self.contains(x, margin)):
            raise StencilOutOfDomainError(
                "finite-difference stencil leaves the open-box chart "
                f"(half-width {np.max(margin):.3g}); move the point further inside")

    def sample_points(self, per_axis: int) -> np.ndarray:
        """Cell-centred tensor grid of ``per_axis**dim`` points, shape (P, dim)."""
        axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis
                for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "topology": self.topology,
                "lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, obj) -> "ChartDomain":
        allowed = {"dim", "topology", "lower", "upper"}
        unknown = set(obj) - allowed
        if unknown:
            raise ValidationError(f"unknown domain keys: {sorted(unknown)}")
        missing = allowed - set(obj)
        if missing:
            raise ValidationError(f"missing domain keys: {sorted(missing)}")
        return cls(int(obj["dim"]), obj["topology"], tuple(obj["lower"]), tuple(obj["upper"]))
