"""Method-of-lines integrator for the nonlocal Eulerian form of r-HS.

Integrating u_tx + u u_xx + u_x^2 / r = 0 once from the left edge gives

    u_t = -u u_x + (1 - 1/r) int_a^x u_x^2

which is solved here with classical RK4 in time. It shares no code path with
the closed-form flows apart from the cumulative trapezoid, so agreement with
them is a genuine check of the time dynamics.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from core_functions import (
    GridFunction,
    Interpolation,
    Line,
    check_strictly_increasing,
    cumulative_integral,
    derivative,
    grid_points,
    interpolate,
    lp_norm,
)
from errors import BlowUpError, ConfigError, InvalidInputError, ShockError
from nonperiodic_flow import FlowParams, Trajectory, blowup_time, lambda_from_r

logger = logging.getLogger(__name__)

CFL = 0.4
SAFETY_MARGIN = 0.9
BOUNDARY_TOL = 1e-4


class Scheme(Enum):
    RK4 = "rk4"


class Spatial(Enum):
    CENTRAL = "central"
    UPWIND = "upwind"


@dataclass(frozen=True)
class IntegratorConfig:
    n: Optional[int] = None
    dt: float = 1e-3
    scheme: Scheme = Scheme.RK4
    spatial: Spatial = Spatial.CENTRAL
    cfl: float = CFL
    boundary_tol: float = BOUNDARY_TOL

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if not self.cfl > 0:
            raise ConfigError(f"CFL number must be positive, got {self.cfl}")
        if self.n is not None and self.n < 4:
            raise ConfigError(f"need at least 4 grid points, got {self.n}")
        try:
            object.__setattr__(self, "scheme", Scheme(self.scheme))
            object.__setattr__(self, "spatial", Spatial(self.spatial))
        except ValueError as e:
            raise ConfigError(str(e)) from e


def _upwind_slope(u: np.ndarray, h: float) -> np.ndarray:
    backward = np.empty_like(u)
    forward = np.empty_like(u)
    backward[1:] = (u[1:] - u[:-1]) / h
    forward[:-1] = backward[1:]
    backward[0] = forward[0] = (u[1] - u[0]) / h
    forward[-1] = backward[-1]
    return np.where(u > 0, backward, forward)


class NonlocalTransport:
    """Right-hand side -u u_x + coefficient * int_a^x u_x^2 on a fixed line grid"""

    def __init__(self, like: GridFunction, r: float, spatial: Spatial):
        self.like = like
        self.h = like.h
        self.coefficient = 1.0 - lambda_from_r(r)
        self.spatial = spatial

    def slope(self, u: np.ndarray) -> np.ndarray:
        if self.spatial is Spatial.UPWIND:
            return _upwind_slope(u, self.h)
        return derivative(self.like.with_values(u)).values

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u_x = self.slope(u)
        rhs = -u * u_x
        if self.coefficient != 0.0:
            rhs = rhs + self.coefficient * cumulative_integral(
                self.like.with_values(u_x ** 2), check_decay=False).values
        return rhs

    def rk4(self, u: np.ndarray, step: float) -> np.ndarray:
        k1 = self(u)
        k2 = self(u + 0.5 * step * k1)
        k3 = self(u + 0.5 * step * k2)
        k4 = self(u + step * k3)
        return u + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _resample(u0: GridFunction, n: int) -> GridFunction:
    if n == u0.n:
        return u0
    logger.info("resampling initial velocity from %d to %d points", u0.n, n)
    return GridFunction(u0.domain, interpolate(u0.x, u0.values, grid_points(u0.domain, n)))


def _slope_norm(u_x: GridFunction, r: float) -> float:
    return lp_norm(u_x, r) if r >= 1 else math.nan


def integrate_nonlocal(u0: GridFunction, r: float, t_end: float, cfg: IntegratorConfig = IntegratorConfig(),
                       times: Optional[Sequence[float]] = None) -> Trajectory:
    """RK4 method-of-lines solution, sampled at `times` (default 0 and t_end)"""
    if not isinstance(u0.domain, Line):
        raise InvalidInputError("integrate_nonlocal needs a line domain")
    u0.check_finite().check_left_decay()
    u0 = _resample(u0, cfg.n or u0.n)
    times = np.array([0.0, t_end] if times is None else times, dtype=float)
    if times[-1] != t_end:
        raise InvalidInputError("sample times must end at t_end")
    params = FlowParams(r, times)

    T = blowup_time(u0, r)
    if t_end >= SAFETY_MARGIN * T:
        raise BlowUpError(f"t_end = {t_end:.6g} exceeds {SAFETY_MARGIN} of the blow-up time", T)

    h = u0.h
    peak = float(np.max(np.abs(u0.values)))
    if peak > 0 and cfg.dt > cfg.cfl * h / peak:
        raise ConfigError(f"dt = {cfg.dt:.3e} violates the CFL bound {cfg.cfl * h / peak:.3e}")

    rhs = NonlocalTransport(u0, r, cfg.spatial)
    u = u0.values.copy()
    snapshots, rows = [u0], []
    warned = False
    stop_reason = None

    def record(t: float, values: np.ndarray) -> None:
        slope = u0.with_values(rhs.slope(values))
        rows.append({
            "t": t,
            "max_abs_u": float(np.max(np.abs(values))),
            "max_abs_u_x": float(np.max(np.abs(slope.values))),
            "slope_norm": _slope_norm(slope, r),
        })

    record(0.0, u)
    t = 0.0
    total_steps = 0
    for target in times[1:]:
        steps = max(1, math.ceil((target - t) / cfg.dt - 1e-9))
        step = (target - t) / steps
        start = t
        for j in range(1, steps + 1):
            u = rhs.rk4(u, step)
            total_steps += 1
            if not np.all(np.isfinite(u)):
                stop_reason = f"non-finite values at t = {start + j * step:.6g}"
                break
            peak = float(np.max(np.abs(u)))
            if not warned and peak > 0 and step > cfg.cfl * h / peak:
                logger.warning("CFL bound violated at t = %.6g (max|u| = %.3g)", start + j * step, peak)
                warned = True
            steepest = float(np.max(np.abs(rhs.slope(u))))
            if steepest > 1.0 / cfg.boundary_tol:
                stop_reason = f"max|u_x| = {steepest:.3e} exceeded {1.0 / cfg.boundary_tol:.1e} at t = {start + j * step:.6g}"
                t = start + j * step
                snapshots.append(u0.with_values(u))
                record(t, u)
                break
        if stop_reason is not None:
            logger.warning("integration stopped early: %s", stop_reason)
            break
        t = float(target)
        snapshots.append(u0.with_values(u))
        record(t, u)

    reached = np.array([row["t"] for row in rows])
    logger.info("nonlocal integrator r=%g: %d RK4 steps, reached t=%g", r, total_steps, reached[-1])
    return Trajectory(FlowParams(params.r, reached), velocities=tuple(snapshots),
                      diagnostics=pd.DataFrame(rows), blowup_time=T, u0=u0, stop_reason=stop_reason)


def burgers_characteristics(u0: GridFunction, t: float, kind: Interpolation = Interpolation.SPLINE) -> GridFunction:
    """u(t, x + t u0(x)) = u0(x), resampled to the grid of u0"""
    if not isinstance(u0.domain, Line):
        raise InvalidInputError("burgers_characteristics needs a line domain")
    if t < 0:
        raise InvalidInputError("characteristics are traced forward in time only")
    u0.check_finite()
    lowest = float(np.min(derivative(u0).values))
    if 1.0 + t * lowest <= 0:
        raise ShockError(f"characteristics cross before t = {t:.6g}", -1.0 / lowest)
    if t == 0:
        return u0
    feet = u0.x + t * u0.values
    check_strictly_increasing(feet, "characteristic feet")
    return u0.with_values(interpolate(feet, u0.values, u0.x, kind))
