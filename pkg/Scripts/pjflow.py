import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from multiprocessing import Pool
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from dotenv import load_dotenv
from scipy.stats import linregress

sys.path.append(os.path.dirname(os.path.abspath(__file__)))
from core_functions import (
    FLOAT_FORMAT,
    Circle,
    GridFunction,
    Line,
    PiecewiseLinearFn,
    derivative,
    lp_norm,
    pl_to_grid,
    read_grid_csv,
    read_grid_json,
)
from errors import BlowUpError, BoundaryError, ConfigError, InvalidInputError, PJFlowError, ShockError
from nonperiodic_flow import (
    INF,
    Diffeo,
    FlowParams,
    blowup_time,
    bvp_geodesic,
    continue_to_blowup,
    exact_flow,
    geodesic_distance,
    in_completion,
    json_number,
    lagrangian_residual,
    path_length,
    pj_residual,
    r_from_lambda,
    write_trajectory,
)
from pde_crosscheck import IntegratorConfig, burgers_characteristics, integrate_nonlocal
from periodic_flow import periodic_geodesic
from pl_flow import PLState, hat, pl_blowup_time, pl_eulerian_velocity, pl_exact_flow, pl_to_json

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(message)s',
    datefmt='%H:%M:%S'
)
logger = logging.getLogger(__name__)

COMMANDS = ("flow", "blowup", "distance", "bvp", "periodic", "crosscheck", "limit-sweep", "pl")
DEFAULT_INIT = {"periodic": "sine", "pl": "hat"}
DEFAULT_RS = (2, 4, 8, 16, 32, 64, 128, 256)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_NUMERICAL = 4

CONFIG_KEYS = {
    "command", "r", "lambda", "init", "window", "n", "t_end", "dt", "samples",
    "times", "out", "rs", "from_init", "residuals", "spatial",
}


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    command: str
    r: Optional[float] = None
    lam: Optional[float] = None
    init: Optional[str] = None
    window: Tuple[float, float] = (-8.0, 8.0)
    n: int = 2048
    t_end: float = 1.0
    dt: float = 1e-3
    samples: int = 11
    times: Optional[List[float]] = None
    out: str = "out"
    rs: List[float] = field(default_factory=lambda: list(DEFAULT_RS))
    from_init: Optional[str] = None
    residuals: bool = False
    spatial: str = "central"

    @property
    def exponent(self) -> float:
        """r, with lambda = 1/r and lambda = 0 meaning r = inf"""
        if self.r is not None:
            return self.r
        if self.lam is not None:
            return r_from_lambda(self.lam)
        raise ConfigError("exactly one of r and lambda is required")

    @property
    def initial(self) -> str:
        return self.init or DEFAULT_INIT.get(self.command, "gaussian")

    def sample_times(self) -> np.ndarray:
        if self.times is not None:
            return np.asarray(self.times, dtype=float)
        return np.linspace(0.0, self.t_end, max(2, self.samples))


def _number(value, name: str, problems: List[str]) -> Optional[float]:
    try:
        return float(value)
    except (TypeError, ValueError):
        problems.append(f"{name} must be a number or 'inf', got {value!r}")
        return None


def check_mapping(data) -> List[str]:
    """Schema violations of a scenario mapping, empty when valid"""
    if not isinstance(data, dict):
        return ["config must be a mapping of scenario keys"]
    problems = [f"unknown key {key!r}" for key in sorted(set(data) - CONFIG_KEYS)]

    command = data.get("command")
    if command is not None and command not in COMMANDS:
        problems.append(f"command must be one of {', '.join(COMMANDS)}, got {command!r}")

    has_r, has_lam = data.get("r") is not None, data.get("lambda") is not None
    if has_r and has_lam:
        problems.append("exactly one of r and lambda may be given, not both")
    elif not (has_r or has_lam) and command not in (None, "limit-sweep"):
        problems.append("exactly one of r and lambda is required")
    if has_r:
        r = _number(data["r"], "r", problems)
        if r is not None and (r == 0 or math.isnan(r) or r == -INF):
            problems.append(f"r must be a nonzero real or inf, got {data['r']!r}")
    if has_lam:
        lam = _number(data["lambda"], "lambda", problems)
        if lam is not None and not math.isfinite(lam):
            problems.append(f"lambda must be finite, got {data['lambda']!r}")

    if "window" in data:
        window = data["window"]
        if not (isinstance(window, (list, tuple)) and len(window) == 2):
            problems.append("window must be a pair [a, b]")
        else:
            a, b = (_number(v, "window", problems) for v in window)
            if a is not None and b is not None and not a < b:
                problems.append(f"window needs a < b, got {window}")
    if "n" in data and (not isinstance(data["n"], int) or data["n"] < 4):
        problems.append(f"n must be an integer >= 4, got {data['n']!r}")
    if "samples" in data and (not isinstance(data["samples"], int) or data["samples"] < 2):
        problems.append(f"samples must be an integer >= 2, got {data['samples']!r}")
    for key in ("t_end", "dt"):
        if key in data:
            value = _number(data[key], key, problems)
            if value is not None and not (value > 0 and math.isfinite(value)):
                problems.append(f"{key} must be positive and finite, got {data[key]!r}")
    if "times" in data:
        times = data["times"]
        if not isinstance(times, list) or len(times) < 1 or times[0] != 0:
            problems.append("times must be a list starting at 0")
    if "rs" in data and not (isinstance(data["rs"], list) and len(data["rs"]) >= 2):
        problems.append("rs must be a list of at least two exponents")
    if "spatial" in data and data["spatial"] not in ("central", "upwind"):
        problems.append(f"spatial must be 'central' or 'upwind', got {data['spatial']!r}")
    for key in ("init", "from_init"):
        if data.get(key) is not None:
            kind = str(data[key]).split(":", 1)[0]
            if kind not in ("gaussian", "hat", "sine", "file"):
                problems.append(f"{key} must be gaussian, hat, sine or file:PATH, got {data[key]!r}")
    return problems


def validate_config(path) -> List[str]:
    """Read a JSON or YAML scenario file and report violations without running anything"""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        return [f"cannot parse {path}: {e}"]
    return check_mapping(data)


def scenario_from_mapping(data: dict, command: Optional[str] = None) -> Scenario:
    problems = check_mapping(data)
    if problems:
        raise ConfigError("; ".join(problems))
    values = dict(data)
    command = command or values.pop("command", None)
    values.pop("command", None)
    if command is None:
        raise ConfigError("no command given")
    if "lambda" in values:
        values["lam"] = float(values.pop("lambda"))
    if values.get("r") is not None:
        values["r"] = float(values["r"])
    if "window" in values:
        values["window"] = tuple(float(v) for v in values["window"])
    for key in ("t_end", "dt"):
        if key in values:
            values[key] = float(values[key])
    if "rs" in values:
        values["rs"] = [float(v) for v in values["rs"]]
    return Scenario(command=command, **values)


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InitialData:
    u0: GridFunction
    pl: Optional[PiecewiseLinearFn] = None


def _parameters(text: str, defaults: Sequence[float]) -> List[float]:
    _, _, rest = text.partition(":")
    given = [float(v) for v in rest.split(",") if v.strip()] if rest else []
    if len(given) > len(defaults):
        raise ConfigError(f"too many parameters in {text!r}")
    return given + list(defaults[len(given):])


def parse_init(text: str, domain, n: int) -> InitialData:
    kind = text.split(":", 1)[0]
    if kind == "file":
        path = text.split(":", 1)[1]
        try:
            u0 = read_grid_json(path) if path.endswith(".json") else read_grid_csv(path)
        except (OSError, ValueError, KeyError, InvalidInputError) as e:
            raise ConfigError(f"cannot read initial data from {path}: {e}")
        return InitialData(u0)
    try:
        if kind == "gaussian":
            center, width, amplitude = _parameters(text, (0.0, 1.0, 1.0))
            return InitialData(GridFunction.sample(
                domain, n, lambda x: amplitude * np.exp(-((x - center) / width) ** 2)))
        if kind == "hat":
            b0, b1, b2, amplitude = _parameters(text, (0.0, 1.0, 2.0, 1.0))
            pl = hat(b0, b1, b2, amplitude)
            return InitialData(pl_to_grid(pl, domain, n), pl)
        if kind == "sine":
            k, amplitude = _parameters(text, (1.0, 1.0 / (2.0 * np.pi)))
            return InitialData(GridFunction.sample(domain, n, lambda x: amplitude * np.sin(2.0 * np.pi * k * x)))
    except ValueError as e:
        raise ConfigError(f"bad initial data {text!r}: {e}")
    raise ConfigError(f"unknown initial data {text!r}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _write_manifest(out_dir: Path, data: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(data, indent=2, allow_nan=False) + "\n")
    logger.info("wrote %s", path)
    return path


def _line_data(scenario: Scenario, text: Optional[str] = None) -> InitialData:
    return parse_init(text or scenario.initial, Line(*scenario.window), scenario.n)


def _end_map(u0: GridFunction, r: float, t: float) -> Diffeo:
    return exact_flow(u0, FlowParams(r, [0.0, t])).diffeos[-1]


def _thread_count() -> int:
    value = os.getenv("PJFLOW_THREADS", "1")
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"PJFLOW_THREADS must be an integer, got {value!r}")
    return max(1, threads)


def run_flow(scenario: Scenario, out_dir: Path) -> dict:
    r = scenario.exponent
    traj = exact_flow(_line_data(scenario).u0, FlowParams(r, scenario.sample_times()))
    write_trajectory(traj, out_dir)
    manifest = traj.manifest()
    if scenario.residuals and len(traj) < 3:
        logger.warning("residuals need at least three sample times, got %d", len(traj))
        manifest["residuals"] = None
    elif scenario.residuals:
        manifest["residuals"] = {
            "lagrangian": json_number(lagrangian_residual(traj, traj.params.lam)),
            "pj": json_number(pj_residual(traj, traj.params.lam)),
        }
    return manifest


def run_blowup(scenario: Scenario, out_dir: Path) -> dict:
    r = scenario.exponent
    data = _line_data(scenario)
    T = pl_blowup_time(PLState(data.pl, r)) if data.pl is not None else blowup_time(data.u0, r)
    manifest = {"r": json_number(r), "blowup_time": json_number(T), "exact": data.pl is not None}
    if r > 0 and math.isfinite(T):
        limit = continue_to_blowup(data.u0, r)
        pd.DataFrame({"x": limit.phi.x, "phi": limit.phi.values, "phi_x": limit.phi_x.values}).to_csv(
            out_dir / "completion.csv", index=False, float_format=FLOAT_FORMAT)
        manifest["completion"] = {
            "in_completion": in_completion(limit),
            "invertible": limit.invertible,
            "min_phi_x": json_number(limit.phi_x.values.min()),
        }
    return manifest


def _endpoints(scenario: Scenario) -> Tuple[Diffeo, Diffeo, GridFunction, float]:
    r = scenario.exponent
    u0 = _line_data(scenario).u0
    target = _end_map(u0, r, scenario.t_end)
    if scenario.from_init is None:
        start = Diffeo.identity(Line(*scenario.window), scenario.n)
    else:
        start = _end_map(_line_data(scenario, scenario.from_init).u0, r, scenario.t_end)
    return start, target, u0, r


def run_distance(scenario: Scenario, out_dir: Path) -> dict:
    start, target, u0, r = _endpoints(scenario)
    manifest = {"r": json_number(r), "t_end": scenario.t_end,
                "distance": json_number(geodesic_distance(start, target, r))}
    if scenario.from_init is None:
        manifest["t_end_times_slope_norm"] = json_number(scenario.t_end * lp_norm(derivative(u0), r))
    return manifest


def run_bvp(scenario: Scenario, out_dir: Path) -> dict:
    start, target, _, r = _endpoints(scenario)
    traj = bvp_geodesic(start, target, r, scenario.sample_times())
    write_trajectory(traj, out_dir)
    manifest = traj.manifest()
    manifest["distance"] = json_number(geodesic_distance(start, target, r))
    manifest["path_length"] = json_number(path_length(traj))
    return manifest


def run_periodic(scenario: Scenario, out_dir: Path) -> dict:
    r = scenario.exponent
    u0 = parse_init(scenario.initial, Circle(), scenario.n).u0
    traj = periodic_geodesic(u0, r, scenario.sample_times(), scenario.dt)
    write_trajectory(traj, out_dir)
    return traj.manifest()


def run_crosscheck(scenario: Scenario, out_dir: Path) -> dict:
    r = scenario.exponent
    u0 = _line_data(scenario).u0
    times = scenario.sample_times()
    cfg = IntegratorConfig(dt=scenario.dt, spatial=scenario.spatial)
    numeric = integrate_nonlocal(u0, r, float(times[-1]), cfg, times)
    exact = exact_flow(u0, FlowParams(r, numeric.times))
    rows = []
    for k, t in enumerate(numeric.times):
        row = {"t": t, "max_error": float(np.max(np.abs(numeric.velocities[k].values - exact.velocities[k].values)))}
        if r == 1:
            burgers = burgers_characteristics(u0, t)
            row["burgers_error"] = float(np.max(np.abs(numeric.velocities[k].values - burgers.values)))
        rows.append(row)
    table = pd.DataFrame(rows)
    write_trajectory(numeric, out_dir)
    table.to_csv(out_dir / "crosscheck.csv", index=False, float_format=FLOAT_FORMAT)
    manifest = numeric.manifest()
    manifest["max_error"] = json_number(table["max_error"].max())
    return manifest


def _limit_row(job) -> dict:
    u0, r, t, limit_phi = job
    phi = _end_map(u0, r, t).phi.values
    return {"r": r, "max_error": float(np.max(np.abs(phi - limit_phi)))}


def run_limit_sweep(scenario: Scenario, out_dir: Path) -> dict:
    u0 = _line_data(scenario).u0
    t = scenario.t_end
    limit_phi = _end_map(u0, INF, t).phi.values
    jobs = [(u0, float(r), t, limit_phi) for r in scenario.rs]
    threads = min(_thread_count(), len(jobs))
    if threads > 1:
        with Pool(threads) as pool:
            rows = pool.map(_limit_row, jobs)
    else:
        rows = [_limit_row(job) for job in jobs]
    table = pd.DataFrame(rows)
    table.to_csv(out_dir / "limit_sweep.csv", index=False, float_format=FLOAT_FORMAT)
    fit = linregress(np.log(table["r"]), np.log(table["max_error"]))
    logger.info("limit sweep over %d exponents: log-log slope %.4f", len(table), fit.slope)
    return {"t": t, "rs": [json_number(r) for r in table["r"]], "slope": json_number(fit.slope),
            "intercept": json_number(fit.intercept)}


def run_pl(scenario: Scenario, out_dir: Path) -> dict:
    r = scenario.exponent
    data = _line_data(scenario)
    if data.pl is None:
        raise ConfigError("the pl command needs piecewise-linear initial data (hat:...)")
    state = PLState(data.pl, r)
    T = pl_blowup_time(state)
    samples, frames = [], []
    domain = Line(*scenario.window)
    for t in scenario.sample_times():
        phi = pl_exact_flow(state, t)
        u = pl_eulerian_velocity(state, t)
        samples.append({"t": t, "phi": pl_to_json(phi, r, t), "u": pl_to_json(u, r, t)})
        phi_grid = pl_to_grid(phi, domain, scenario.n)
        frames.append(pd.DataFrame({
            "t": np.full(scenario.n, t),
            "x": phi_grid.x,
            "phi": phi_grid.values,
            "u": pl_to_grid(u, domain, scenario.n).values,
        }))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "pl_flow.json").write_text(json.dumps(
        {"r": json_number(r), "blowup_time": json_number(T), "samples": samples}, indent=2) + "\n")
    pd.concat(frames, ignore_index=True).to_csv(out_dir / "trajectory.csv", index=False, float_format=FLOAT_FORMAT)
    return {"r": json_number(r), "blowup_time": json_number(T), "samples": len(samples)}


RUNNERS = {
    "flow": run_flow,
    "blowup": run_blowup,
    "distance": run_distance,
    "bvp": run_bvp,
    "periodic": run_periodic,
    "crosscheck": run_crosscheck,
    "limit-sweep": run_limit_sweep,
    "pl": run_pl,
}


def run(scenario: Scenario) -> int:
    """Execute one scenario, write its files and return the process exit status"""
    out_dir = Path(scenario.out)
    logger.info("Starting pjflow %s", scenario.command)
    logger.info("=" * 50)
    try:
        if scenario.command not in RUNNERS:
            raise ConfigError(f"unknown command {scenario.command!r}")
        if scenario.command != "limit-sweep" and (scenario.r is None) == (scenario.lam is None):
            raise ConfigError("exactly one of r and lambda is required")
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = RUNNERS[scenario.command](scenario, out_dir)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (BlowUpError, BoundaryError, ShockError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        failure = {"command": scenario.command, "status": type(e).__name__, "message": str(e)}
        if isinstance(e, BlowUpError):
            failure["blowup_time"] = json_number(e.blowup_time)
        elif isinstance(e, BoundaryError):
            failure["hitting_time"] = json_number(e.hitting_time)
        else:
            failure["crossing_time"] = json_number(e.time)
        _write_manifest(out_dir, failure)
        return EXIT_BLOWUP
    except PJFlowError as e:
        logger.error("%s: %s", type(e).__name__, e)
        _write_manifest(out_dir, {"command": scenario.command, "status": type(e).__name__, "message": str(e)})
        return EXIT_NUMERICAL
    manifest = {"command": scenario.command, "status": "ok", **manifest}
    _write_manifest(out_dir, manifest)
    logger.info("=" * 50)
    logger.info("SUCCESS: %s written to %s", scenario.command, out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

def _exponent_arg(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pjflow", description="Exact and numerical flows of the r-Hunter-Saxton equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON or YAML scenario file; flags override its values")
        exponent = cmd.add_mutually_exclusive_group()
        exponent.add_argument("--r", type=_exponent_arg, help="exponent r (nonzero real or inf)")
        exponent.add_argument("--lambda", dest="lam", type=_exponent_arg, help="lambda = 1/r")
        cmd.add_argument("--init", help="gaussian[:c,w,a] | hat[:b0,b1,b2,a] | sine[:k,a] | file:PATH")
        cmd.add_argument("--window", nargs=2, type=float, metavar=("A", "B"))
        cmd.add_argument("--n", type=int)
        cmd.add_argument("--t-end", dest="t_end", type=float)
        cmd.add_argument("--t", dest="t_end", type=float, help="alias of --t-end")
        cmd.add_argument("--dt", type=float)
        cmd.add_argument("--samples", type=int, help="number of equally spaced output times")
        cmd.add_argument("--out", help="output directory")
        cmd.add_argument("--rs", type=_float_list, help="comma-separated exponents for limit-sweep")
        cmd.add_argument("--from-init", dest="from_init", help="initial data of the starting map (distance, bvp)")
        cmd.add_argument("--residuals", action="store_true", default=None)
        cmd.add_argument("--spatial", choices=("central", "upwind"))
    validate = sub.add_parser("validate", help="check a scenario file without running it")
    validate.add_argument("config")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    if args.command == "validate":
        try:
            problems = validate_config(args.config)
        except OSError as e:
            logger.error("cannot read %s: %s", args.config, e)
            return EXIT_CONFIG
        for problem in problems:
            logger.info("violation: %s", problem)
        if not problems:
            logger.info("OK")
        return EXIT_OK if not problems else EXIT_CONFIG

    try:
        data = {}
        if args.config:
            data = yaml.safe_load(Path(args.config).read_text()) or {}
        scenario = scenario_from_mapping(merge_flags(data, args), args.command)
    except (OSError, yaml.YAMLError, ConfigError) as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    return run(scenario)


def merge_flags(data, args: argparse.Namespace):
    """Config file values with the command-line flags laid over them"""
    if not isinstance(data, dict):
        return data
    merged = dict(data)
    merged["command"] = args.command
    for f in fields(Scenario):
        value = getattr(args, f.name, None)
        if f.name == "command" or value is None:
            continue
        key = "lambda" if f.name == "lam" else f.name
        merged[key] = list(value) if f.name == "window" else value
    # a flag exponent replaces the file's exponent of either kind
    if args.r is not None:
        merged.pop("lambda", None)
    elif args.lam is not None:
        merged.pop("r", None)
    return merged


if __name__ == "__main__":
    sys.exit(main())
