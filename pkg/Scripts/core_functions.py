"""Grid and piecewise-linear function calculus.

Everything else in pjflow is built on two carriers:

* ``GridFunction`` - samples on a uniform grid of a truncated line window
  ``Line(a, b)`` (n points including both ends) or of the unit circle
  ``Circle()`` identified with [0, 1) (n points, spacing 1/n).
* ``PiecewiseLinearFn`` - exact breakpoint/value representation on the line
  with affine tails.

The line is truncated to a window; functions meant as Lie algebra elements must
decay at the left edge (|f(a)| <= DECAY_TOL). Decay at the right edge is not
required. All values are immutable once constructed.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, simpson, trapezoid
from scipy.interpolate import PchipInterpolator, make_interp_spline

from errors import (
    DomainMismatchError,
    InvalidInputError,
    MonotonicityError,
    UnsupportedDomainError,
)

logger = logging.getLogger(__name__)

DECAY_TOL = 1e-10
MIN_SAMPLES = 4
# relative padding of the domain when checking the range of an inner map
RANGE_PAD = 1e-9
FLOAT_FORMAT = "%.17g"
SPLINE_DEGREE = 5


@dataclass(frozen=True)
class Line:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.a >= self.b:
            raise InvalidInputError(f"line window needs finite a < b, got ({self.a}, {self.b})")

    def describe(self) -> str:
        return f"line {self.a:.17g} {self.b:.17g}"


@dataclass(frozen=True)
class Circle:
    def describe(self) -> str:
        return "circle"


Domain = Union[Line, Circle]


def parse_domain(text: str) -> Domain:
    """Parse 'line a b' or 'circle'"""
    parts = text.split()
    if parts == ["circle"]:
        return Circle()
    if len(parts) == 3 and parts[0] == "line":
        return Line(float(parts[1]), float(parts[2]))
    raise InvalidInputError(f"cannot parse domain {text!r}")


class Quadrature(Enum):
    TRAPEZOID = "trapezoid"
    SIMPSON = "simpson"


@dataclass(frozen=True)
class QuadratureRule:
    kind: Quadrature = Quadrature.TRAPEZOID
    tolerance: float = 1e-8

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidInputError("quadrature tolerance must be positive")


TRAPEZOID = QuadratureRule()


class Interpolation(Enum):
    PCHIP = "pchip"
    LINEAR = "linear"
    # smooth but not shape-preserving; for resampling smooth fields that get differentiated again
    SPLINE = "spline"


@dataclass(frozen=True, eq=False)
class GridFunction:
    domain: Domain
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidInputError("grid values must be one-dimensional")
        if values.size < MIN_SAMPLES:
            raise InvalidInputError(f"need at least {MIN_SAMPLES} samples, got {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(cls, domain: Domain, n: int, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(domain, np.broadcast_to(fn(grid_points(domain, n)), (n,)))

    @classmethod
    def zeros(cls, domain: Domain, n: int) -> "GridFunction":
        return cls(domain, np.zeros(n))

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return grid_spacing(self.domain, self.n)

    @property
    def x(self) -> np.ndarray:
        return grid_points(self.domain, self.n)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.domain, values)

    def same_grid(self, other: "GridFunction") -> bool:
        return self.domain == other.domain and self.n == other.n

    def check_finite(self) -> "GridFunction":
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise InvalidInputError(f"non-finite sample at index {bad[0]}")
        return self

    def check_left_decay(self, tol: float = DECAY_TOL) -> "GridFunction":
        """Lie algebra elements on the line must vanish at the left edge"""
        if isinstance(self.domain, Line) and abs(self.values[0]) > tol:
            raise InvalidInputError(
                f"function does not decay at the left window edge: |f(a)| = {abs(self.values[0]):.3e} > {tol:.1e}"
            )
        return self

    def _operand(self, other):
        if isinstance(other, GridFunction):
            if not self.same_grid(other):
                raise DomainMismatchError("grid functions live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._operand(other))

    def __rsub__(self, other):
        return self.with_values(self._operand(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._operand(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._operand(other))

    def __neg__(self):
        return self.with_values(-self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "value": self.values})

    def to_dict(self) -> dict:
        return {"domain": self.domain.describe(), "n": self.n, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "GridFunction":
        values = np.asarray(data["values"], dtype=float)
        if values.size != int(data["n"]):
            raise InvalidInputError(f"n={data['n']} but {values.size} values given")
        return cls(parse_domain(data["domain"]), values)


def grid_points(domain: Domain, n: int) -> np.ndarray:
    if isinstance(domain, Line):
        return np.linspace(domain.a, domain.b, n)
    return np.arange(n) / n


def grid_spacing(domain: Domain, n: int) -> float:
    if isinstance(domain, Line):
        return (domain.b - domain.a) / (n - 1)
    return 1.0 / n


# ---------------------------------------------------------------------------
# Quadrature, norms, derivatives
# ---------------------------------------------------------------------------

def integrate(f: GridFunction, rule: QuadratureRule = TRAPEZOID) -> float:
    """Integral of f over its domain (periodic trapezoid on the circle)"""
    if isinstance(f.domain, Circle):
        return float(f.h * np.sum(f.values))
    if rule.kind is Quadrature.SIMPSON:
        if f.n % 2 == 0:
            raise InvalidInputError("Simpson quadrature on the line needs an odd number of samples")
        return float(simpson(f.values, dx=f.h))
    return float(trapezoid(f.values, dx=f.h))


def integrate_power(f: GridFunction, r: float, rule: QuadratureRule = TRAPEZOID) -> float:
    """Raw integral of |f|^r for any real r > 0"""
    if not r > 0:
        raise InvalidInputError(f"power must be positive, got {r}")
    return integrate(f.with_values(np.abs(f.values) ** r), rule)


def lp_norm(f: GridFunction, r: float, rule: QuadratureRule = TRAPEZOID) -> float:
    f.check_finite()
    if not r >= 1:
        raise InvalidInputError(f"L^r norms need r >= 1, got {r}")
    scale = float(np.max(np.abs(f.values)))
    if np.isinf(r) or scale == 0.0:
        return scale
    # normalising by the max keeps |f|^r representable for large r
    return scale * integrate_power(f / scale, r, rule) ** (1.0 / r)


def derivative(f: GridFunction) -> GridFunction:
    """Second-order central differences; one-sided at line ends, cyclic on the circle"""
    if isinstance(f.domain, Circle):
        return f.with_values((np.roll(f.values, -1) - np.roll(f.values, 1)) / (2.0 * f.h))
    return f.with_values(np.gradient(f.values, f.h, edge_order=2))


def cumulative_integral(f: GridFunction, check_decay: bool = True, decay_tol: float = DECAY_TOL) -> GridFunction:
    """F(x) = int_a^x f, standing in for int_{-inf}^x on the truncated line"""
    if not isinstance(f.domain, Line):
        raise UnsupportedDomainError("cumulative integral from -infinity needs a line domain")
    if check_decay:
        f.check_left_decay(decay_tol)
    return f.with_values(cumulative_trapezoid(f.values, dx=f.h, initial=0.0))


def cumulative_integral_periodic(f: GridFunction) -> Tuple[GridFunction, float]:
    """F(x) = int_0^x f on the circle, plus the integral over the full period"""
    if not isinstance(f.domain, Circle):
        raise UnsupportedDomainError("periodic cumulative integral needs a circle domain")
    closed = np.append(f.values, f.values[0])
    running = cumulative_trapezoid(closed, dx=f.h, initial=0.0)
    return f.with_values(running[:-1]), float(running[-1])


# ---------------------------------------------------------------------------
# Interpolation, inversion, composition
# ---------------------------------------------------------------------------

def first_non_increasing(values: np.ndarray) -> int:
    """Index of the first sample that fails to exceed its predecessor, -1 if none"""
    bad = np.flatnonzero(np.diff(values) <= 0)
    return int(bad[0]) + 1 if bad.size else -1


def check_strictly_increasing(values: np.ndarray, what: str = "samples") -> None:
    index = first_non_increasing(values)
    if index >= 0:
        raise MonotonicityError(f"{what} are not strictly increasing", index)


def interpolate(xp: np.ndarray, fp: np.ndarray, x: np.ndarray,
                kind: Interpolation = Interpolation.PCHIP) -> np.ndarray:
    """Interpolation with constant extension outside [xp[0], xp[-1]].

    LINEAR and PCHIP are shape-preserving. SPLINE is an interpolating spline of
    degree SPLINE_DEGREE: its error is small enough that the resampled field
    survives repeated finite differencing, but it can overshoot at kinks.
    """
    x = np.clip(x, xp[0], xp[-1])
    if kind is Interpolation.LINEAR:
        return np.interp(x, xp, fp)
    if kind is Interpolation.SPLINE:
        return make_interp_spline(xp, fp, k=min(SPLINE_DEGREE, len(xp) - 1))(x)
    return PchipInterpolator(xp, fp, extrapolate=False)(x)


def invert_monotone(phi: GridFunction, kind: Interpolation = Interpolation.PCHIP) -> GridFunction:
    """Inverse of a strictly increasing grid map, sampled on its image.

    On the line the result lives on Line(phi[0], phi[-1]) with the same n. On
    the circle phi must be a lift normalised by phi(0) = 0 with phi(1) = 1
    implied; the inverse is sampled on the same circle grid.
    """
    phi.check_finite()
    check_strictly_increasing(phi.values, "map samples")
    if isinstance(phi.domain, Line):
        image = Line(float(phi.values[0]), float(phi.values[-1]))
        y = grid_points(image, phi.n)
        psi = interpolate(phi.values, phi.x, y, kind)
        # node inversion is exact at both ends
        psi[0], psi[-1] = phi.domain.a, phi.domain.b
        return GridFunction(image, psi)
    if phi.values[0] != 0.0 or phi.values[-1] >= 1.0:
        raise UnsupportedDomainError("circle maps must be lifts with phi(0) = 0 and phi < 1 on [0, 1)")
    xp = np.append(phi.values, 1.0)
    fp = np.append(phi.x, 1.0)
    return phi.with_values(interpolate(xp, fp, phi.x, kind))


def compose(f: GridFunction, phi: GridFunction, kind: Interpolation = Interpolation.PCHIP) -> GridFunction:
    """Samples of f(phi(x)) on the grid of phi"""
    if type(f.domain) is not type(phi.domain):
        raise DomainMismatchError("compose needs both functions on the same grid family")
    phi.check_finite()
    if isinstance(f.domain, Circle):
        xp = np.append(f.x, 1.0)
        fp = np.append(f.values, f.values[0])
        return phi.with_values(interpolate(xp, fp, np.mod(phi.values, 1.0), kind))
    a, b = f.domain.a, f.domain.b
    pad = RANGE_PAD * (b - a)
    lo, hi = float(np.min(phi.values)), float(np.max(phi.values))
    if lo < a - pad or hi > b + pad:
        raise DomainMismatchError(f"range [{lo:.6g}, {hi:.6g}] of inner map leaves window [{a:.6g}, {b:.6g}]")
    return phi.with_values(interpolate(f.x, f.values, phi.values, kind))


# ---------------------------------------------------------------------------
# Piecewise-linear functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseLinearFn:
    """Continuous piecewise-linear function on the line with affine tails"""

    breakpoints: np.ndarray
    node_values: np.ndarray
    left_tail_slope: float = 0.0
    right_tail_slope: float = 0.0

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        v = np.array(self.node_values, dtype=float)
        if b.ndim != 1 or b.size < 1 or b.shape != v.shape:
            raise InvalidInputError("need matching one-dimensional breakpoints and node values")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))
                and np.isfinite(self.left_tail_slope) and np.isfinite(self.right_tail_slope)):
            raise InvalidInputError("piecewise-linear data must be finite")
        check_strictly_increasing(b, "breakpoints")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "node_values", v)
        object.__setattr__(self, "left_tail_slope", float(self.left_tail_slope))
        object.__setattr__(self, "right_tail_slope", float(self.right_tail_slope))

    @classmethod
    def canonical(cls, breakpoints, node_values, left_tail_slope=0.0, right_tail_slope=0.0,
                  rtol: float = 1e-14) -> "PiecewiseLinearFn":
        """Build with adjacent equal-slope pieces merged"""
        raw = cls(breakpoints, node_values, left_tail_slope, right_tail_slope)
        slopes = raw.all_slopes
        scale = max(1.0, float(np.max(np.abs(slopes))))
        keep = ~np.isclose(slopes[:-1], slopes[1:], rtol=0.0, atol=rtol * scale)
        if not keep.any():
            keep[0] = True
        return cls(raw.breakpoints[keep], raw.node_values[keep], left_tail_slope, right_tail_slope)

    @property
    def slopes(self) -> np.ndarray:
        """Slopes of the bounded segments"""
        return np.diff(self.node_values) / np.diff(self.breakpoints)

    @property
    def all_slopes(self) -> np.ndarray:
        return np.concatenate(([self.left_tail_slope], self.slopes, [self.right_tail_slope]))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        b, v = self.breakpoints, self.node_values
        y = np.interp(x, b, v)
        y = np.where(x < b[0], v[0] + self.left_tail_slope * (x - b[0]), y)
        return np.where(x > b[-1], v[-1] + self.right_tail_slope * (x - b[-1]), y)

    def structurally_equal(self, other: "PiecewiseLinearFn", atol: float = 0.0) -> bool:
        if self.breakpoints.shape != other.breakpoints.shape:
            return False
        return (np.allclose(self.breakpoints, other.breakpoints, rtol=0.0, atol=atol)
                and np.allclose(self.node_values, other.node_values, rtol=0.0, atol=atol)
                and abs(self.left_tail_slope - other.left_tail_slope) <= atol
                and abs(self.right_tail_slope - other.right_tail_slope) <= atol)

    def to_dict(self) -> dict:
        return {
            "breakpoints": self.breakpoints.tolist(),
            "node_values": self.node_values.tolist(),
            "left_tail_slope": self.left_tail_slope,
            "right_tail_slope": self.right_tail_slope,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PiecewiseLinearFn":
        return cls(data["breakpoints"], data["node_values"],
                   data.get("left_tail_slope", 0.0), data.get("right_tail_slope", 0.0))


def pl_to_grid(p: PiecewiseLinearFn, domain: Domain, n: int) -> GridFunction:
    """Exact sampling of a piecewise-linear function"""
    if not isinstance(domain, Line):
        raise UnsupportedDomainError("piecewise-linear functions live on the line")
    if p.breakpoints[0] < domain.a or p.breakpoints[-1] > domain.b:
        logger.warning("window [%g, %g] does not cover all breakpoints", domain.a, domain.b)
    return GridFunction.sample(domain, n, p)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_grid_csv(f: GridFunction, path) -> Path:
    """CSV with a '# domain=... n=...' header line and x,value rows"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        handle.write(f"# domain={f.domain.describe()} n={f.n}\n")
        f.to_frame().to_csv(handle, index=False, float_format=FLOAT_FORMAT)
    return path


def read_grid_csv(path) -> GridFunction:
    with open(path) as handle:
        header = handle.readline().strip()
    if not header.startswith("# domain=") or " n=" not in header:
        raise InvalidInputError(f"{path}: missing '# domain=... n=...' header")
    domain_text, n_text = header[len("# domain="):].rsplit(" n=", 1)
    df = pd.read_csv(path, skiprows=1, float_precision="round_trip")
    if len(df) != int(n_text):
        raise InvalidInputError(f"{path}: header says n={n_text} but found {len(df)} rows")
    return GridFunction(parse_domain(domain_text), df["value"].to_numpy())


def write_grid_json(f: GridFunction, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(f.to_dict()))
    return path


def read_grid_json(path) -> GridFunction:
    return GridFunction.from_dict(json.loads(Path(path).read_text()))
