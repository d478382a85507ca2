"""Element-wise constant coefficient fields.

Every field is sampled once per triangle.  Smooth fields are evaluated at
the centroid; grid and composite fields must align with the mesh lattice
so that each triangle sees exactly one value.

Fields serialise to a small JSON document ``{variant, parameters, values}``.
"""
from dataclasses import dataclass, field
import json

import numpy as np

from .errors import AlignmentError, AssumptionViolation, ParameterError

DEFAULT_SEED = 20150821

# Smooth expressions by id; parameters are passed as keyword arguments.
SMOOTH_EXPRESSIONS = {
    # offset + amplitude * sin(frequency * x1); defaults give 1 + sin(10 x1)
    "sin_x1": (lambda x, y, offset=1.0, amplitude=1.0, frequency=10.0:
               offset + amplitude * np.sin(frequency * x)),
    "sin_x1_x2": (lambda x, y, offset=1.0, amplitude=1.0, frequency=10.0:
                  offset + amplitude * np.sin(frequency * x) * np.sin(frequency * y)),
}


def _on_lattice(coords, level, tol=1e-9):
    scaled = np.asarray(coords, dtype=float) * 2 ** level
    return np.all(np.abs(scaled - np.round(scaled)) <= tol)


@dataclass(frozen=True)
class Constant:
    value: float

    def evaluate(self, mesh):
        return np.full(mesh.n_triangles, float(self.value))

    def to_dict(self):
        return {"variant": "constant", "parameters": {"value": self.value}, "values": None}


@dataclass(frozen=True)
class Smooth:
    expression: str
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.expression not in SMOOTH_EXPRESSIONS:
            raise ParameterError(f"unknown smooth expression {self.expression!r}")

    def __hash__(self):
        return hash((self.expression, tuple(sorted(self.parameters.items()))))

    def __call__(self, x, y):
        return SMOOTH_EXPRESSIONS[self.expression](x, y, **self.parameters)

    def evaluate(self, mesh):
        c = mesh.centroids
        return np.asarray(self(c[:, 0], c[:, 1]), dtype=float)

    def to_dict(self):
        return {"variant": "smooth",
                "parameters": {"expression": self.expression, **self.parameters},
                "values": None}


@dataclass(frozen=True, eq=False)
class PiecewiseGrid:
    """Values on an n x n grid of cells, ``values[row, col]`` with rows along x2."""
    n: int
    values: np.ndarray

    def __eq__(self, other):
        return (isinstance(other, PiecewiseGrid) and self.n == other.n
                and np.array_equal(self.values, other.values))

    def evaluate(self, mesh):
        if mesh.n % self.n:
            raise AlignmentError(
                f"{self.n}x{self.n} data grid does not align with level-{mesh.level} mesh")
        c = mesh.centroids
        col = np.floor(c[:, 0] * self.n).astype(np.int64)
        row = np.floor(c[:, 1] * self.n).astype(np.int64)
        return np.asarray(self.values, dtype=float)[row, col]

    def to_dict(self):
        return {"variant": "piecewise_grid", "parameters": {"n": self.n},
                "values": np.asarray(self.values).tolist()}


@dataclass(frozen=True)
class InclusionPattern:
    periods: int = 8
    inclusion_fraction: float = 0.5

    def __post_init__(self):
        if self.periods < 1:
            raise ParameterError("periods must be >= 1")
        if not 0.0 < self.inclusion_fraction < 1.0:
            raise ParameterError("inclusion_fraction must lie in (0, 1)")

    def edges(self):
        """Sorted inclusion edge coordinates along one axis."""
        lo = 0.5 * (1.0 - self.inclusion_fraction)
        hi = 0.5 * (1.0 + self.inclusion_fraction)
        k = np.arange(self.periods)
        return np.sort(np.concatenate([(k + lo), (k + hi), k]) / self.periods)

    def contains(self, x, y):
        lo = 0.5 * (1.0 - self.inclusion_fraction)
        hi = 0.5 * (1.0 + self.inclusion_fraction)
        u = np.mod(x * self.periods, 1.0)
        v = np.mod(y * self.periods, 1.0)
        return (u > lo) & (u < hi) & (v > lo) & (v < hi)


@dataclass(frozen=True)
class Composite:
    background: float
    inclusion: float
    pattern: InclusionPattern = field(default_factory=InclusionPattern)

    def evaluate(self, mesh):
        if not _on_lattice(self.pattern.edges(), mesh.level):
            raise AlignmentError(
                f"inclusion pattern {self.pattern} does not align with level-{mesh.level} mesh")
        c = mesh.centroids
        inside = self.pattern.contains(c[:, 0], c[:, 1])
        return np.where(inside, float(self.inclusion), float(self.background))

    def to_dict(self):
        return {"variant": "composite",
                "parameters": {"background": self.background, "inclusion": self.inclusion,
                               "periods": self.pattern.periods,
                               "inclusion_fraction": self.pattern.inclusion_fraction},
                "values": None}


@dataclass(frozen=True)
class RandomGridSpec:
    n: int = 64
    low: float = 0.003
    high: float = 1.0
    seed: int = DEFAULT_SEED


def make_random_grid(spec):
    """i.i.d. uniform cell values from numpy's PCG64 generator seeded with ``spec.seed``.

    PCG64 and ``Generator.uniform`` produce identical streams on all
    platforms, so a seed pins the field bit for bit.
    """
    if spec.n < 1:
        raise ParameterError("random grid needs n >= 1")
    if not spec.low < spec.high:
        raise ParameterError(f"need low < high, got [{spec.low}, {spec.high}]")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    values = rng.uniform(spec.low, spec.high, size=(spec.n, spec.n))
    values.setflags(write=False)
    return PiecewiseGrid(spec.n, values)


def make_composite(background, inclusion, pattern=None):
    return Composite(float(background), float(inclusion), pattern or InclusionPattern())


def eval_per_element(field, mesh):
    """Value of ``field`` on every triangle of ``mesh``."""
    values = field.evaluate(mesh)
    if not np.all(np.isfinite(values)):
        raise AssumptionViolation("field has non-finite values")
    return values


def check_diffusion(values):
    """Raise unless all values are finite and strictly positive."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise AssumptionViolation(
            f"diffusion coefficient must be finite and > 0 (min {np.min(values)!r})")
    return values


def field_from_dict(doc):
    variant = doc.get("variant")
    p = dict(doc.get("parameters") or {})
    if variant == "constant":
        return Constant(float(p["value"]))
    if variant == "smooth":
        expr = p.pop("expression")
        return Smooth(expr, {k: float(v) for k, v in p.items()})
    if variant == "piecewise_grid":
        values = np.asarray(doc["values"], dtype=float)
        n = int(p.get("n", values.shape[0]))
        if values.shape != (n, n):
            raise ParameterError(f"piecewise_grid values must be {n}x{n}")
        return PiecewiseGrid(n, values)
    if variant == "composite":
        pattern = InclusionPattern(int(p.get("periods", 8)),
                                   float(p.get("inclusion_fraction", 0.5)))
        return Composite(float(p["background"]), float(p["inclusion"]), pattern)
    if variant == "random_grid":
        return make_random_grid(RandomGridSpec(int(p.get("n", 64)), float(p.get("low", 0.003)),
                                               float(p.get("high", 1.0)),
                                               int(p.get("seed", DEFAULT_SEED))))
    raise ParameterError(f"unknown field variant {variant!r}")


def save_field(field, path):
    with open(path, "w") as f:
        json.dump(field.to_dict(), f)


def load_field(path):
    with open(path) as f:
        return field_from_dict(json.load(f))
