"""Exact flows of piecewise-linear initial velocities.

Piecewise-linear diffeomorphisms of the line form a totally geodesic family:
a velocity u0 with constant slope c_i on segment i generates

    phi_x(t) = (1 + t c_i / r)^r       (exp(t c_i) for r = inf)

on the same segment, so phi stays piecewise linear with the Lagrangian
breakpoints b_i fixed. Everything here is per-segment arithmetic, no grids,
which makes these flows machine-precision oracles for the grid pipeline.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from core_functions import PiecewiseLinearFn
from errors import BlowUpError, InvalidInputError
from nonperiodic_flow import INF, blowup_time_from_slopes, json_number

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PLState:
    velocity0: PiecewiseLinearFn
    r: float

    def __post_init__(self):
        r = float(self.r)
        if r == 0 or np.isnan(r) or r == -INF:
            raise InvalidInputError(f"r must be a nonzero real or +inf, got {self.r}")
        u = self.velocity0
        if u.left_tail_slope != 0.0 or u.node_values[0] != 0.0:
            raise InvalidInputError("initial velocity must vanish identically left of the first breakpoint")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "velocity0", PiecewiseLinearFn.canonical(
            u.breakpoints, u.node_values, u.left_tail_slope, u.right_tail_slope))

    @property
    def slopes(self) -> np.ndarray:
        """Segment slopes c_i followed by the right tail slope"""
        return np.append(self.velocity0.slopes, self.velocity0.right_tail_slope)


def hat(b0: float, b1: float, b2: float, amplitude: float = 1.0) -> PiecewiseLinearFn:
    """0 at b0, amplitude at b1, 0 at b2, zero tails"""
    return PiecewiseLinearFn([b0, b1, b2], [0.0, amplitude, 0.0])


def pl_blowup_time(state: PLState) -> float:
    return blowup_time_from_slopes(state.slopes, state.r)


def _stretch(state: PLState, t: float) -> np.ndarray:
    """Per-piece phi_x: segments then the right tail"""
    c, r = state.slopes, state.r
    if np.isinf(r):
        return np.exp(t * c)
    return np.exp(r * np.log(1.0 + t * c / r))


def _check_time(state: PLState, t: float) -> None:
    if t < 0:
        raise InvalidInputError("PL flows are evaluated for t >= 0")
    T = pl_blowup_time(state)
    if t >= T:
        raise BlowUpError(f"t = {t:.17g} reaches the blow-up time", T)


def pl_exact_flow(state: PLState, t: float) -> PiecewiseLinearFn:
    """The diffeomorphism phi(t) with the Lagrangian breakpoints of u0"""
    _check_time(state, t)
    b = state.velocity0.breakpoints
    stretch = _stretch(state, t)
    nodes = b[0] + np.concatenate(([0.0], np.cumsum(stretch[:-1] * np.diff(b))))
    return PiecewiseLinearFn(b, nodes, left_tail_slope=1.0, right_tail_slope=stretch[-1])


def pl_eulerian_velocity(state: PLState, t: float) -> PiecewiseLinearFn:
    """u(t) with breakpoints moved to phi(t, b_i) and slopes c_i / (1 + t c_i / r)"""
    _check_time(state, t)
    if t == 0:
        return state.velocity0
    c, r = state.slopes, state.r
    slopes = c.copy() if np.isinf(r) else c / (1.0 + t * c / r)
    moved = pl_exact_flow(state, t).node_values
    values = np.concatenate(([0.0], np.cumsum(slopes[:-1] * np.diff(moved))))
    return PiecewiseLinearFn(moved, values, left_tail_slope=0.0, right_tail_slope=slopes[-1])


def pl_slope_norm(state: PLState, t: float) -> float:
    """(sum_i |u_x|^r * Eulerian segment length)^(1/r), constant in t"""
    u = pl_eulerian_velocity(state, t)
    r = state.r
    slopes = np.abs(u.slopes)
    if np.isinf(r):
        return float(slopes.max(initial=0.0))
    return float(np.sum(slopes ** r * np.diff(u.breakpoints)) ** (1.0 / r))


def pl_to_json(p: PiecewiseLinearFn, r: float, t: float) -> dict:
    return {
        "breakpoints": p.breakpoints.tolist(),
        "node_values": p.node_values.tolist(),
        "left_tail_slope": p.left_tail_slope,
        "right_tail_slope": p.right_tail_slope,
        "r": json_number(r),
        "t": t,
    }


def write_pl_json(p: PiecewiseLinearFn, r: float, t: float, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(pl_to_json(p, r, t), indent=2))
    return path
