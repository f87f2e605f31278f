"""Command-line entry point: simulate, certify grids, sweep horizons.

Runs are configured from an optional flat key-value file plus flag
overrides (flags win).  All floating-point output uses 17 significant
digits so emitted files reparse to bit-identical values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BackupCbfError, ConfigError
from .filtering import FilterConfig, certify_membership
from .sim import (Scenario, SimResult, double_integrator_scenario,
                  simulate_closed_loop, spacecraft_scenario)

MODES = ("simulate", "certify-grid", "sweep-T", "compare")
FORMATS = ("csv", "json-summary")

_KNOWN_KEYS = {
    "scenario", "mode", "xi", "grid.horizon", "grid.dt", "gains.alpha",
    "gains.alpha_b", "spacecraft.k_b", "sim.x0", "sim.horizon", "sim.dt",
    "sim.seed", "out.dir", "out.formats", "sweep.horizons",
}

OUT_DIR_ENV = "BACKUPCBF_OUT_DIR"


def fmt(value: float) -> str:
    """17-significant-digit decimal; round-trips any double exactly."""
    return format(float(value), ".17g")


@dataclass
class RunConfig:
    scenario: str = "double_integrator"
    mode: str = "simulate"
    out_dir: Path = Path("out")
    formats: Tuple[str, ...] = FORMATS
    xi: Optional[float] = None
    horizon: Optional[float] = None
    dt: Optional[float] = None
    alpha: Optional[float] = None
    alpha_b: Optional[float] = None
    k_b: Optional[float] = None
    x0: Optional[Tuple[float, ...]] = None
    sim_horizon: Optional[float] = None
    sim_dt: Optional[float] = None
    seed: Optional[int] = None
    sweep_horizons: Tuple[float, ...] = (0.5, 0.75, 1.0, 1.25)
    horizon_explicit: bool = False
    dt_explicit: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.scenario not in ("double_integrator", "spacecraft"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for f in self.formats:
            if f not in FORMATS:
                raise ConfigError(f"unknown output format {f!r}")
        if self.k_b is not None and self.scenario != "spacecraft":
            raise ConfigError("spacecraft.k_b only applies to the spacecraft scenario")
        if (self.horizon_explicit and self.dt_explicit):
            ratio = self.horizon / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                raise ConfigError(
                    f"backup horizon T={self.horizon} is not an integer "
                    f"multiple of dt={self.dt} (T/dt={ratio})")


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def load_config_file(path: Path) -> RunConfig:
    """Parse a flat ``key = value`` file; unknown keys are rejected."""
    cfg = RunConfig()
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        try:
            _apply_key(cfg, key, value)
        except (ValueError, ConfigError) as err:
            raise ConfigError(f"bad value for {key!r}: {err}", line=lineno)
    return cfg


def _apply_key(cfg: RunConfig, key: str, value: str) -> None:
    if key == "scenario":
        cfg.scenario = value
    elif key == "mode":
        cfg.mode = value
    elif key == "xi":
        cfg.xi = float(value)
    elif key == "grid.horizon":
        cfg.horizon = float(value)
        cfg.horizon_explicit = True
    elif key == "grid.dt":
        cfg.dt = float(value)
        cfg.dt_explicit = True
    elif key == "gains.alpha":
        cfg.alpha = float(value)
    elif key == "gains.alpha_b":
        cfg.alpha_b = float(value)
    elif key == "spacecraft.k_b":
        cfg.k_b = float(value)
    elif key == "sim.x0":
        cfg.x0 = _parse_floats(value)
    elif key == "sim.horizon":
        cfg.sim_horizon = float(value)
    elif key == "sim.dt":
        cfg.sim_dt = float(value)
    elif key == "sim.seed":
        cfg.seed = int(value)
    elif key == "out.dir":
        cfg.out_dir = Path(value)
    elif key == "out.formats":
        cfg.formats = tuple(v.strip() for v in value.split(","))
    elif key == "sweep.horizons":
        cfg.sweep_horizons = _parse_floats(value)


def build_scenario(cfg: RunConfig, horizon: Optional[float] = None) -> Scenario:
    kwargs = {}
    if cfg.xi is not None:
        kwargs["xi"] = cfg.xi
    if horizon is not None:
        kwargs["horizon"] = horizon
    elif cfg.horizon is not None:
        kwargs["horizon"] = cfg.horizon
    if cfg.dt is not None:
        kwargs["dt"] = cfg.dt
    if cfg.alpha is not None:
        kwargs["alpha"] = cfg.alpha
    if cfg.alpha_b is not None:
        kwargs["alpha_b"] = cfg.alpha_b
    if cfg.x0 is not None:
        kwargs["x0"] = np.array(cfg.x0)
    if cfg.sim_horizon is not None:
        kwargs["sim_horizon"] = cfg.sim_horizon
    if cfg.sim_dt is not None:
        kwargs["sim_dt"] = cfg.sim_dt
    if cfg.seed is not None:
        kwargs["seed"] = cfg.seed
    if cfg.scenario == "spacecraft":
        if cfg.k_b is not None:
            kwargs["k_b"] = cfg.k_b
        return spacecraft_scenario(**kwargs)
    return double_integrator_scenario(**kwargs)


def write_trajectory_csv(result: SimResult, path: Path) -> None:
    n = result.states.shape[1]
    m = result.u_safe.shape[1]
    header = (["t"] + [f"x{i+1}" for i in range(n)]
              + [f"up{j+1}" for j in range(m)] + [f"u{j+1}" for j in range(m)]
              + ["mode", "h", "min_margin", "cert", "qp_iters", "step_us"])
    lines = [",".join(header)]
    for k in range(result.t.shape[0]):
        cells = [fmt(result.t[k])]
        cells += [fmt(v) for v in result.states[k]]
        cells += [fmt(v) for v in result.u_primary[k]]
        cells += [fmt(v) for v in result.u_safe[k]]
        cells.append(result.mode[k])
        cells += [fmt(result.h[k]), fmt(result.min_margin[k])]
        cells.append(result.cert[k])
        cells.append(str(int(result.qp_iterations[k])))
        cells.append(fmt(result.step_us[k]))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path: Path, scenario: str = "",
                        robust: bool = True) -> SimResult:
    """Reparse an emitted trajectory CSV into a SimResult."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    n = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    m = sum(1 for c in header if c.startswith("up") and c[2:].isdigit())
    rows = [line.split(",") for line in lines[1:] if line]
    t = np.array([float(r[0]) for r in rows])
    states = np.array([[float(v) for v in r[1:1 + n]] for r in rows])
    u_p = np.array([[float(v) for v in r[1 + n:1 + n + m]] for r in rows])
    u = np.array([[float(v) for v in r[1 + n + m:1 + n + 2 * m]] for r in rows])
    base = 1 + n + 2 * m
    mode = [r[base] for r in rows]
    h = np.array([float(r[base + 1]) for r in rows])
    min_margin = np.array([float(r[base + 2]) for r in rows])
    cert = [r[base + 3] for r in rows]
    qp_iters = np.array([int(r[base + 4]) for r in rows], dtype=int)
    step_us = np.array([float(r[base + 5]) for r in rows])
    sim_dt = float(t[1] - t[0]) if t.shape[0] > 1 else 0.0
    return SimResult(scenario=scenario, robust=robust, sim_dt=sim_dt, t=t,
                     states=states, u_primary=u_p, u_safe=u, mode=mode, h=h,
                     min_margin=min_margin, cert=cert,
                     qp_iterations=qp_iters, step_us=step_us)


def _write_summary(summary: Dict, path: Path) -> None:
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _region_rows(scenario: Scenario) -> List[str]:
    if not scenario.certify_axes:
        raise ConfigError(f"scenario {scenario.name} declares no certification grid")
    cfg = FilterConfig.for_scenario(scenario)
    n = scenario.model.state_dim
    header = ([f"x{i+1}" for i in range(n)]
              + ["cert", "traj_margin", "min_terminal_margin"])
    lines = [",".join(header)]
    axes = scenario.certify_axes
    grids = [np.linspace(ax.lo, ax.hi, ax.num) for ax in axes]
    mesh = np.meshgrid(*grids, indexing="ij")
    points = np.stack([g.ravel() for g in mesh], axis=-1)
    for point in points:
        x = np.zeros(n)
        for ax, value in zip(axes, point):
            x[ax.dim] = value
        cert = certify_membership(x, scenario, cfg)
        cells = [fmt(v) for v in x]
        cells += [cert.status, fmt(cert.trajectory_margin),
                  fmt(float(np.min(cert.terminal_margins)))]
        lines.append(",".join(cells))
    return lines


def _run_simulate(cfg: RunConfig, robust: bool, label: str) -> Dict:
    scenario = build_scenario(cfg)
    result = simulate_closed_loop(scenario, robust=robust)
    stem = f"{scenario.name}_{label}"
    if "csv" in cfg.formats:
        write_trajectory_csv(result, cfg.out_dir / f"{stem}_trajectory.csv")
    summary = result.summary()
    if "json-summary" in cfg.formats:
        _write_summary(summary, cfg.out_dir / f"{stem}_summary.json")
    return summary


def run(cfg: RunConfig) -> int:
    """Execute one configured run; returns a process exit status."""
    cfg.validate()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.mode == "simulate":
        summary = _run_simulate(cfg, robust=True, label="robust")
        print(f"min_h={summary['min_h']:.6g} violations={summary['violation_count']} "
              f"fallbacks={summary['fallback_count']}")
        return 0

    if cfg.mode == "compare":
        with ThreadPoolExecutor(max_workers=2) as pool:
            robust_f = pool.submit(_run_simulate, cfg, True, "robust")
            standard_f = pool.submit(_run_simulate, cfg, False, "standard")
            robust_s, standard_s = robust_f.result(), standard_f.result()
        combined = {
            "scenario": cfg.scenario,
            "robust": robust_s,
            "standard": standard_s,
            "comparison": {
                "robust_min_h": robust_s["min_h"],
                "standard_min_h": standard_s["min_h"],
                "robust_safe": robust_s["min_h"] >= 0.0,
                "standard_violates": standard_s["min_h"] < 0.0,
            },
        }
        if "json-summary" in cfg.formats:
            _write_summary(combined, cfg.out_dir / f"{cfg.scenario}_compare_summary.json")
        print(f"robust min_h={robust_s['min_h']:.6g} "
              f"standard min_h={standard_s['min_h']:.6g}")
        return 0

    if cfg.mode == "certify-grid":
        scenario = build_scenario(cfg)
        lines = _region_rows(scenario)
        path = cfg.out_dir / f"{cfg.scenario}_region_T{scenario.grid.horizon:g}.csv"
        path.write_text("\n".join(lines) + "\n")
        inside = sum(1 for line in lines[1:] if ",inside_Ci," in line)
        print(f"T={scenario.grid.horizon:g}: {inside}/{len(lines) - 1} cells inside")
        return 0

    # sweep-T
    horizons = cfg.sweep_horizons
    scenarios = [build_scenario(cfg, horizon=T) for T in horizons]
    with ThreadPoolExecutor(max_workers=min(4, len(scenarios))) as pool:
        all_lines = list(pool.map(_region_rows, scenarios))
    for T, scenario, lines in zip(horizons, scenarios, all_lines):
        path = cfg.out_dir / f"{cfg.scenario}_region_T{T:g}.csv"
        path.write_text("\n".join(lines) + "\n")
        inside = sum(1 for line in lines[1:] if ",inside_Ci," in line)
        print(f"T={T:g}: {inside}/{len(lines) - 1} cells inside")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backupcbf",
        description="Safety-filtered closed-loop simulation and set certification")
    parser.add_argument("--config", type=Path, help="key=value config file")
    parser.add_argument("--scenario", choices=["double_integrator", "spacecraft"])
    parser.add_argument("--mode", choices=list(MODES))
    parser.add_argument("--xi", type=float, help="disturbance bound override")
    parser.add_argument("--T", type=float, dest="horizon",
                        help="backup horizon override")
    parser.add_argument("--dt", type=float, help="backup flow step override")
    parser.add_argument("--alpha", type=float, help="trajectory class-K gain")
    parser.add_argument("--alpha-b", type=float, help="terminal class-K gain")
    parser.add_argument("--k-b", type=float, help="spacecraft backup damping gain")
    parser.add_argument("--x0", type=str, help="comma-separated initial state")
    parser.add_argument("--horizon", type=float, dest="sim_horizon",
                        help="simulation horizon override")
    parser.add_argument("--sim-dt", type=float, help="simulation step override")
    parser.add_argument("--seed", type=int, help="disturbance seed")
    parser.add_argument("--out-dir", type=Path, help="output directory")
    parser.add_argument("--formats", type=str,
                        help="comma-separated subset of: csv,json-summary")
    parser.add_argument("--sweep-T", type=str, dest="sweep_horizons",
                        help="comma-separated horizons for sweep-T mode")
    return parser


def _merge_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.mode is not None:
        cfg.mode = args.mode
    if args.xi is not None:
        cfg.xi = args.xi
    if args.horizon is not None:
        cfg.horizon = args.horizon
        cfg.horizon_explicit = True
    if args.dt is not None:
        cfg.dt = args.dt
        cfg.dt_explicit = True
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.alpha_b is not None:
        cfg.alpha_b = args.alpha_b
    if args.k_b is not None:
        cfg.k_b = args.k_b
    if args.x0 is not None:
        cfg.x0 = _parse_floats(args.x0)
    if args.sim_horizon is not None:
        cfg.sim_horizon = args.sim_horizon
    if args.sim_dt is not None:
        cfg.sim_dt = args.sim_dt
    if args.seed is not None:
        cfg.seed = args.seed
    if os.environ.get(OUT_DIR_ENV):
        cfg.out_dir = Path(os.environ[OUT_DIR_ENV])
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.formats is not None:
        cfg.formats = tuple(v.strip() for v in args.formats.split(","))
    if args.sweep_horizons is not None:
        cfg.sweep_horizons = _parse_floats(args.sweep_horizons)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config_file(args.config) if args.config else RunConfig()
        cfg = _merge_flags(cfg, args)
        return run(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except BackupCbfError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
