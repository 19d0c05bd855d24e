"""Non-periodic r-Hunter-Saxton flows.

The map Phi(phi) = r (phi_x^(1/r) - 1) sends Diff_{-inf}(R) with the
right-invariant W^{1,r} Finsler metric isometrically onto the open convex set
{f > -r} of flat L^r space. Geodesics from the identity are therefore straight
lines t*u0' in the image, which gives the closed form

    phi(t, x) = x + int_{-inf}^x ((1 + t u0'/r)^r - 1)

valid for every r != 0 up to the blow-up time, and phi_x = exp(t u0') in the
r = inf limit. This module evaluates that flow on truncated line grids and
provides the derived quantities: Eulerian velocity, blow-up time, completion
limit, Finsler norm and energy, geodesic distance, boundary-value geodesics and
residuals of the Lagrangian and Eulerian equations.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from core_functions import (
    DECAY_TOL,
    FLOAT_FORMAT,
    GridFunction,
    Interpolation,
    Line,
    check_strictly_increasing,
    cumulative_integral,
    derivative,
    integrate,
    interpolate,
    lp_norm,
)
from errors import (
    BlowUpError,
    InsufficientDataError,
    InvalidInputError,
    MonotonicityError,
    NoBlowUpError,
    OutOfImageError,
)

logger = logging.getLogger(__name__)

INF = float("inf")


def lambda_from_r(r: float) -> float:
    return 0.0 if np.isinf(r) else 1.0 / r


def r_from_lambda(lam: float) -> float:
    return INF if lam == 0 else 1.0 / lam


def json_number(value):
    """Floats for JSON manifests; infinities become strings, NaN becomes null"""
    value = float(value)
    if np.isnan(value):
        return None
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Diffeo:
    """Orientation-preserving map of the line window, phi(x) - x -> 0 at the left edge"""

    phi: GridFunction
    phi_x: Optional[GridFunction] = None
    decay_tol: float = DECAY_TOL

    def __post_init__(self):
        if not isinstance(self.phi.domain, Line):
            raise InvalidInputError("Diffeo needs a line domain")
        self.phi.check_finite()
        check_strictly_increasing(self.phi.values, "diffeomorphism samples")
        phi_x = derivative(self.phi) if self.phi_x is None else self.phi_x
        if not phi_x.same_grid(self.phi):
            raise InvalidInputError("phi_x must live on the grid of phi")
        bad = np.flatnonzero(~(phi_x.values > 0))
        if bad.size:
            raise MonotonicityError("phi_x is not strictly positive", int(bad[0]))
        if abs(self.phi.values[0] - self.phi.domain.a) > self.decay_tol:
            raise InvalidInputError("phi(x) - x does not vanish at the left window edge")
        object.__setattr__(self, "phi_x", phi_x)

    @classmethod
    def identity(cls, domain: Line, n: int) -> "Diffeo":
        return cls(GridFunction.sample(domain, n, lambda x: x), GridFunction(domain, np.ones(n)))

    @property
    def domain(self) -> Line:
        return self.phi.domain

    @property
    def x(self) -> np.ndarray:
        return self.phi.x

    @property
    def displacement(self) -> GridFunction:
        return self.phi - self.x


@dataclass(frozen=True, eq=False)
class CompletionMap:
    """Limit map at the blow-up time: nondecreasing, phi_x may vanish"""

    phi: GridFunction
    phi_x: GridFunction
    time: float

    @property
    def invertible(self) -> bool:
        return bool(np.min(self.phi_x.values) > 0)


@dataclass(frozen=True, eq=False)
class FlowParams:
    r: float
    times: np.ndarray

    def __post_init__(self):
        r = float(self.r)
        if r == 0 or np.isnan(r) or r == -INF:
            raise InvalidInputError(f"r must be a nonzero real or +inf, got {self.r}")
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1 or not np.all(np.isfinite(times)):
            raise InvalidInputError("times must be a non-empty array of finite values")
        if times[0] != 0.0:
            raise InvalidInputError("times must start at 0")
        check_strictly_increasing(times, "sample times")
        times.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_lambda(cls, lam: float, times) -> "FlowParams":
        return cls(r_from_lambda(lam), times)

    @property
    def lam(self) -> float:
        return lambda_from_r(self.r)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time samples of a flow: maps, Eulerian velocities or both"""

    params: FlowParams
    diffeos: Optional[tuple] = None
    velocities: Optional[tuple] = None
    phi_t: Optional[tuple] = None
    slopes: Optional[tuple] = None
    diagnostics: pd.DataFrame = field(default_factory=pd.DataFrame)
    blowup_time: float = INF
    u0: Optional[GridFunction] = None
    unique_minimizer: Optional[bool] = None
    sphere: Optional[tuple] = None
    stop_reason: Optional[str] = None

    def __post_init__(self):
        if self.diffeos is None and self.velocities is None:
            raise InvalidInputError("a trajectory needs maps or velocities")

    @property
    def times(self) -> np.ndarray:
        return self.params.times

    def __len__(self) -> int:
        return len(self.diffeos if self.diffeos is not None else self.velocities)

    def grid(self, time_index: int = 0) -> GridFunction:
        if self.diffeos is not None:
            return self.diffeos[time_index].phi
        return self.velocities[time_index]

    def require_diffeos(self) -> tuple:
        if self.diffeos is None:
            raise InsufficientDataError("trajectory carries no maps")
        return self.diffeos

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns t, x, phi, phi_x, u, u_x"""
        frames = []
        for k, t in enumerate(self.times):
            grid = self.grid(k)
            diffeo = self.diffeos[k] if self.diffeos is not None else None
            u = self.velocities[k] if self.velocities is not None else None
            frames.append(pd.DataFrame({
                "t": np.full(grid.n, t),
                "x": grid.x,
                "phi": diffeo.phi.values if diffeo is not None else np.nan,
                "phi_x": diffeo.phi_x.values if diffeo is not None else np.nan,
                "u": u.values if u is not None else np.nan,
                "u_x": derivative(u).values if u is not None else np.nan,
            }))
        return pd.concat(frames, ignore_index=True)

    def manifest(self) -> dict:
        diagnostics = [
            {key: json_number(value) for key, value in row.items()}
            for row in self.diagnostics.to_dict(orient="records")
        ]
        return {
            "r": json_number(self.params.r),
            "lambda": json_number(self.params.lam),
            "times": [json_number(t) for t in self.times],
            "blowup_time": json_number(self.blowup_time),
            "domain": self.grid().domain.describe(),
            "n": self.grid().n,
            "unique_minimizer": self.unique_minimizer,
            "stop_reason": self.stop_reason,
            "diagnostics": diagnostics,
        }


def write_trajectory(traj: Trajectory, out_dir, stem: str = "trajectory") -> Path:
    """trajectory.csv (17 significant digits) next to manifest.json"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    traj.to_frame().to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %s (%d samples)", csv_path, len(traj))
    return csv_path


# ---------------------------------------------------------------------------
# Power helpers
# ---------------------------------------------------------------------------

def _flow_base(t: float, slope: np.ndarray, r: float) -> np.ndarray:
    base = 1.0 + t * slope / r
    bad = np.flatnonzero(~(base > 0))
    if bad.size:
        raise BlowUpError(f"1 + t u0'/r is not positive at index {bad[0]} for t = {t:.17g}",
                          blowup_time_from_slopes(slope, r))
    return base


def _real_power(base: np.ndarray, p: float) -> np.ndarray:
    # base > 0 is enforced by the callers
    return np.exp(p * np.log(base))


def _phi_x(t: float, slope: np.ndarray, r: float) -> np.ndarray:
    if np.isinf(r):
        return np.exp(t * slope)
    return _real_power(_flow_base(t, slope, r), r)


def _phi_tx(t: float, slope: np.ndarray, r: float) -> np.ndarray:
    if np.isinf(r):
        return slope * np.exp(t * slope)
    return slope * _real_power(_flow_base(t, slope, r), r - 1.0)


def _eulerian_slope(t: float, slope: np.ndarray, r: float) -> np.ndarray:
    if np.isinf(r):
        return slope.copy()
    return slope / _flow_base(t, slope, r)


def _labelled_norm(slope: np.ndarray, weight: np.ndarray, like: GridFunction, r: float) -> float:
    """(int |s|^r w)^(1/r): the L^r norm of an Eulerian field written in particle labels"""
    if np.isinf(r):
        return float(np.max(np.abs(slope)))
    if r < 0:
        return np.nan
    scale = float(np.max(np.abs(slope)))
    if scale == 0.0:
        return 0.0
    return scale * integrate(like.with_values(np.abs(slope / scale) ** r * weight)) ** (1.0 / r)


# ---------------------------------------------------------------------------
# Isometry
# ---------------------------------------------------------------------------

def _check_isometry_exponent(r: float, allow_sub_unit: bool) -> None:
    if np.isinf(r) and r > 0:
        return
    if not r > 0:
        raise InvalidInputError(f"the isometry needs r > 0, got {r}")
    if r < 1:
        if not allow_sub_unit:
            raise InvalidInputError(f"r = {r} < 1: pass allow_sub_unit=True for experiments outside the Finsler range")
        logger.warning("using the isometry with r = %g < 1; L^r is not a normed space there", r)


def phi_map(phi: Diffeo, r: float, allow_sub_unit: bool = False) -> GridFunction:
    """Phi(phi) = r (phi_x^(1/r) - 1); log(phi_x) for r = inf"""
    _check_isometry_exponent(r, allow_sub_unit)
    log_phi_x = np.log(phi.phi_x.values)
    if np.isinf(r):
        return phi.phi_x.with_values(log_phi_x)
    return phi.phi_x.with_values(r * np.expm1(log_phi_x / r))


def phi_inverse_map(f: GridFunction, r: float, allow_sub_unit: bool = False) -> Diffeo:
    """phi(x) = x + int_{-inf}^x ((f/r + 1)^r - 1)"""
    _check_isometry_exponent(r, allow_sub_unit)
    if not isinstance(f.domain, Line):
        raise InvalidInputError("phi_inverse_map needs a line domain")
    f.check_finite().check_left_decay()
    if np.isinf(r):
        phi_x = np.exp(f.values)
    else:
        bad = np.flatnonzero(~(f.values > -r))
        if bad.size:
            raise OutOfImageError(f"f <= -r at index {bad[0]}: outside the image of the isometry")
        phi_x = np.exp(r * np.log1p(f.values / r))
    phi = f.x + cumulative_integral(f.with_values(phi_x - 1.0), check_decay=False).values
    return Diffeo(f.with_values(phi), f.with_values(phi_x))


# ---------------------------------------------------------------------------
# Blow-up
# ---------------------------------------------------------------------------

def blowup_time_from_slopes(slope: np.ndarray, r: float) -> float:
    if np.isinf(r):
        return INF
    if r > 0:
        lowest = float(np.min(slope))
        return INF if lowest >= 0 else -r / lowest
    highest = float(np.max(slope))
    return INF if highest <= 0 else abs(r) / highest


def blowup_time(u0: GridFunction, r: float) -> float:
    """T* = -r / inf u0' for r > 0, |r| / sup u0' for r < 0, inf when no blow-up.

    The infimum is taken over grid samples of u0', which can only be less
    extreme than the true infimum, so the grid value is an upper bound on the
    true T*; it converges under refinement.
    """
    if r == 0 or np.isnan(r):
        raise InvalidInputError("r must be nonzero")
    u0.check_finite()
    return blowup_time_from_slopes(derivative(u0).values, r)


def continue_to_blowup(u0: GridFunction, r: float) -> CompletionMap:
    """Limit map at t = T*, an element of the metric completion Mon(R)"""
    if not r > 0:
        raise InvalidInputError("for r < 0 phi_x diverges at T*; the completion limit needs r > 0")
    u0.check_finite().check_left_decay()
    slope = derivative(u0).values
    T = blowup_time_from_slopes(slope, r)
    if np.isinf(T):
        raise NoBlowUpError("u0' >= 0 everywhere: the flow exists for all time")
    base = np.maximum(1.0 + T * slope / r, 0.0)
    phi_x = base ** r
    phi = u0.x + cumulative_integral(u0.with_values(phi_x - 1.0), check_decay=False).values
    logger.info("completion limit at T* = %.6g, min phi_x = %.3e", T, phi_x.min())
    return CompletionMap(u0.with_values(phi), u0.with_values(phi_x), T)


def in_completion(phi: Union[GridFunction, Diffeo, CompletionMap], tol: float = DECAY_TOL) -> bool:
    """Discrete membership in Mon(R): finite, nondecreasing, phi(x) - x -> 0 at the left edge"""
    grid = phi if isinstance(phi, GridFunction) else phi.phi
    if not isinstance(grid.domain, Line):
        return False
    values = grid.values
    if not np.all(np.isfinite(values)):
        return False
    if np.any(np.diff(values) < -tol):
        return False
    return bool(abs(values[0] - grid.domain.a) <= tol)


# ---------------------------------------------------------------------------
# Exact flow
# ---------------------------------------------------------------------------

def exact_flow(u0: GridFunction, params: FlowParams,
               kind: Interpolation = Interpolation.SPLINE) -> Trajectory:
    """Closed-form geodesic from the identity with initial velocity u0.

    Eulerian velocities are phi_t resampled at phi^-1 with `kind`; the default
    spline keeps them accurate through the third x-derivative. Pass LINEAR or
    PCHIP for initial data with kinks.
    """
    if not isinstance(u0.domain, Line):
        raise InvalidInputError("exact_flow needs a line domain")
    u0.check_finite().check_left_decay()
    r = params.r
    slope = derivative(u0).values
    T = blowup_time_from_slopes(slope, r)
    if params.times[-1] >= T:
        raise BlowUpError(f"requested time {params.times[-1]:.17g} reaches the blow-up time", T)

    x = u0.x
    diffeos, phi_ts, slopes, velocities, rows = [], [], [], [], []
    for t in params.times:
        phi_x = _phi_x(t, slope, r)
        if r == 1:
            # (1 + t u0') - 1 integrates to t u0 exactly
            phi = x + t * u0.values
            phi_t = u0.values.copy()
        else:
            phi = x + cumulative_integral(u0.with_values(phi_x - 1.0), check_decay=False).values
            phi_t = u0.values + cumulative_integral(
                u0.with_values(_phi_tx(t, slope, r) - slope), check_decay=False).values
        s = _eulerian_slope(t, slope, r)
        diffeo = Diffeo(u0.with_values(phi), u0.with_values(phi_x))
        velocity = u0 if t == 0 else u0.with_values(interpolate(phi, phi_t, x, kind))
        diffeos.append(diffeo)
        phi_ts.append(u0.with_values(phi_t))
        slopes.append(u0.with_values(s))
        velocities.append(velocity)
        rows.append({
            "t": t,
            "finsler_speed": _labelled_norm(s, phi_x, u0, r),
            "min_phi_x": float(phi_x.min()),
            "max_phi_x": float(phi_x.max()),
        })
    logger.info("exact flow r=%g: %d samples up to t=%g (T* = %g)", r, len(params.times), params.times[-1], T)
    return Trajectory(params, tuple(diffeos), tuple(velocities), tuple(phi_ts), tuple(slopes),
                      pd.DataFrame(rows), T, u0)


def eulerian_velocity(traj: Trajectory, time_index: int) -> GridFunction:
    """u(t, .) = phi_t(t, phi^{-1}(t, .)) on the fixed window grid"""
    if traj.velocities is None:
        raise InsufficientDataError("trajectory carries no velocities")
    return traj.velocities[time_index]


def velocity_slope(traj: Trajectory, time_index: int, labels: str = "lagrangian",
                   kind: Interpolation = Interpolation.PCHIP) -> GridFunction:
    """u_x at time t: u_x(t, phi(t, x)) on particle labels, or u_x(t, y) on the fixed grid"""
    if traj.slopes is None:
        raise InsufficientDataError("trajectory carries no slopes")
    s = traj.slopes[time_index]
    if labels == "lagrangian":
        return s
    if labels == "eulerian":
        phi = traj.require_diffeos()[time_index].phi
        return s.with_values(interpolate(phi.values, s.values, s.x, kind))
    raise InvalidInputError(f"labels must be 'lagrangian' or 'eulerian', got {labels!r}")


# ---------------------------------------------------------------------------
# Metric quantities
# ---------------------------------------------------------------------------

def finsler_norm(phi, h: GridFunction, r: float) -> float:
    """F_phi(h) = (int phi_x^(1-r) |h_x|^r)^(1/r); works for line and circle maps"""
    if not r >= 1:
        raise InvalidInputError(f"the Finsler norm needs r >= 1, got {r}")
    if not h.same_grid(phi.phi):
        raise InvalidInputError("tangent vector and map live on different grids")
    h_x = derivative(h).values
    phi_x = phi.phi_x.values
    if np.isinf(r):
        return float(np.max(np.abs(h_x / phi_x)))
    return lp_norm(h.with_values(h_x * phi_x ** (1.0 / r - 1.0)), r)


def energy(traj: Trajectory, r: Optional[float] = None) -> float:
    """E_r = int_0^1 int |phi_tx / phi_x|^r phi_x dx dt after rescaling time to [0, 1]"""
    r = traj.params.r if r is None else r
    if len(traj) < 2:
        raise InsufficientDataError("energy needs at least two time samples")
    if np.isinf(r) or not r > 0:
        raise InvalidInputError(f"energy is defined for finite r > 0, got {r}")
    if r < 1:
        logger.warning("energy with r = %g < 1 has no Finsler interpretation", r)
    times = traj.times
    phi_x = np.stack([d.phi_x.values for d in traj.require_diffeos()])
    phi_tx = np.gradient(phi_x, times, axis=0, edge_order=2 if len(times) > 2 else 1)
    like = traj.diffeos[0].phi_x
    density = np.array([
        integrate(like.with_values(np.abs(q / w) ** r * w)) for q, w in zip(phi_tx, phi_x)
    ])
    duration = times[-1] - times[0]
    return float(trapezoid(density, times) * duration ** (r - 1.0))


def geodesic_distance(phi0: Diffeo, phi1: Diffeo, r: float) -> float:
    """dist(phi0, phi1) = || Phi(phi0) - Phi(phi1) ||_{L^r}"""
    if not r >= 1:
        raise InvalidInputError(f"geodesic distance needs r >= 1, got {r}")
    return lp_norm(phi_map(phi0, r) - phi_map(phi1, r), r)


def bvp_geodesic(phi0: Diffeo, phi1: Diffeo, r: float, times,
                 kind: Interpolation = Interpolation.SPLINE) -> Trajectory:
    """Minimizing geodesic from phi0 to phi1: the straight segment in the image, pulled back"""
    if not r >= 1:
        raise InvalidInputError(f"boundary value geodesics need r >= 1, got {r}")
    if not phi0.phi.same_grid(phi1.phi):
        raise InvalidInputError("endpoints live on different grids")
    params = FlowParams(r, times)
    unique = bool(r > 1)
    if not unique:
        logger.warning("r = 1: the straight segment is minimizing but not the unique minimizer")

    f0, f1 = phi_map(phi0, r), phi_map(phi1, r)
    direction = f1 - f0
    duration = params.times[-1]
    x = phi0.x
    diffeos, phi_ts, velocities, rows = [], [], [], []
    for t in params.times:
        s = t / duration if duration > 0 else 0.0
        f = (1.0 - s) * f0 + s * f1
        if s == 0.0:
            diffeo = phi0
        elif s == 1.0:
            diffeo = phi1
        else:
            diffeo = phi_inverse_map(f, r)
        # d/ds phi_x along the segment
        weight = np.exp(f.values) if np.isinf(r) else np.exp((r - 1.0) * np.log1p(f.values / r))
        tangent = cumulative_integral(f.with_values(weight * direction.values), check_decay=False)
        phi_t = tangent / duration if duration > 0 else tangent * 0.0
        diffeos.append(diffeo)
        phi_ts.append(phi_t)
        velocities.append(phi_t.with_values(interpolate(diffeo.phi.values, phi_t.values, x, kind)))
        rows.append({
            "t": t,
            "finsler_speed": finsler_norm(diffeo, phi_t, r),
            "min_phi_x": float(diffeo.phi_x.values.min()),
            "max_phi_x": float(diffeo.phi_x.values.max()),
        })
    return Trajectory(params, tuple(diffeos), tuple(velocities), tuple(phi_ts),
                      diagnostics=pd.DataFrame(rows), unique_minimizer=unique)


def path_length(traj: Trajectory) -> float:
    """Trapezoid-in-time integral of the recorded Finsler speed"""
    speed = traj.diagnostics["finsler_speed"].to_numpy()
    return float(np.sum(0.5 * (speed[1:] + speed[:-1]) * np.diff(traj.times)))


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _interior(array: np.ndarray, edge: int = 3) -> np.ndarray:
    return array[1:-1, edge:-edge]


def lagrangian_residual(traj: Trajectory, lam: float) -> float:
    """max |d/dt(phi_tx/phi_x) + lam (phi_tx/phi_x)^2| over interior times.

    Both time differences are second order, one-sided at the ends. With five
    or more samples the two outermost times on each side are dropped, since
    the outer difference there sees one-sided inner values; with three or four
    only the first and last are.
    """
    if len(traj) < 3:
        raise InsufficientDataError("the Lagrangian residual needs at least three time samples")
    times = traj.times
    phi_x = np.stack([d.phi_x.values for d in traj.require_diffeos()])
    q = np.gradient(phi_x, times, axis=0, edge_order=2) / phi_x
    residual = np.gradient(q, times, axis=0, edge_order=2) + lam * q ** 2
    trim = 2 if len(traj) >= 5 else 1
    return float(np.max(np.abs(residual[trim:-trim])))


def pj_residual(u_traj: Union[Trajectory, Sequence[GridFunction]], lam: float,
                times: Optional[Sequence[float]] = None, form: str = "differentiated") -> float:
    """Interior max-norm residual of the lambda-PJ equation on the fixed grid.

    form="differentiated": u_txx + (1 + 2 lam) u_x u_xx + u u_xxx
    form="integrated":     u_tx + u u_xx + lam u_x^2

    A Trajectory contributes its Eulerian velocities and sample times.
    Spatial derivatives are repeated central differences, so the third one
    amplifies sampling noise by h^-3: read the value as convergence under
    refinement of n and dt together.
    """
    if form not in ("differentiated", "integrated"):
        raise InvalidInputError(f"unknown residual form {form!r}")
    if isinstance(u_traj, Trajectory):
        if u_traj.velocities is None:
            raise InsufficientDataError("trajectory carries no velocities")
        times = u_traj.times
        u_traj = u_traj.velocities
    if times is None:
        raise InvalidInputError("sample times are required for a sequence of velocities")
    times = np.asarray(times, dtype=float)
    if len(u_traj) < 3 or len(times) != len(u_traj):
        raise InsufficientDataError("the PJ residual needs at least three matching time samples")

    u = np.stack([g.values for g in u_traj])
    d1 = np.stack([derivative(g).values for g in u_traj])
    like = u_traj[0]
    d2 = np.stack([derivative(like.with_values(row)).values for row in d1])
    if form == "integrated":
        residual = np.gradient(d1, times, axis=0, edge_order=2) + u * d2 + lam * d1 ** 2
    else:
        d3 = np.stack([derivative(like.with_values(row)).values for row in d2])
        residual = np.gradient(d2, times, axis=0, edge_order=2) + (1 + 2 * lam) * d1 * d2 + u * d3
    return float(np.max(np.abs(_interior(residual))))
