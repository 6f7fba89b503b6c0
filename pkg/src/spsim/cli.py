"""Command-line orchestration: sweeps, interferometer tables, MC checks.

Four commands share one flat JSON config (flags override config keys):

  coherence    sweep a source parameter, tabulate the integrated coherences
  hom-delay    interfere two sources versus temporal delay
  mz           five-peak pattern of the doubly-excited interferometer
  mc-validate  quantum-jump estimates against the deterministic pipeline

Every run can write a JSON manifest next to the output (config echo,
library versions, seeds, wall time).  The data files themselves contain
nothing volatile, so a rerun with the same config and seed reproduces
them byte for byte; the manifest is the one file allowed to differ.

Exit codes: 0 success, 1 bad config, 2 numerical failure, 3 validation
failure in mc-validate.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import __version__
from .coherence import (
    SplitterSpec,
    coherence_summary,
    delay_shift,
    delay_steps,
    hom_cross_general,
    mz_five_peaks,
)
from .dynamics import (
    TimeGrid,
    calibrate_amplitude,
    evolve,
    g1_grid,
    g2_grid,
    mean_photon_number,
    pulse_window,
    refine_for_rates,
)
from .errors import ConfigError, EstimateError, SimulationError
from .model import add_dephasing, gaussian_pulse, ladder_system, \
    lambda_system, two_level_system
from .trajectories import photocount_distribution, photocount_g2_stats, \
    run_trajectories

SYSTEMS = ("two_level", "ladder", "lambda")
SWEEP_AXES = ("fwhm", "area", "dephasing", "delay")
# level whose phase noise scrambles the emitted coherence, per system
_DEPHASE_LEVEL = {"two_level": 1, "ladder": 1, "lambda": 2}


@dataclass(frozen=True)
class RunConfig:
    """Flat, JSON-serializable description of one run."""

    system: str = "two_level"
    gamma: float = 1.0        # two-level emission rate
    gamma_12: float = 1.0     # cascade emission rate
    gamma_13: float = 0.0     # Raman spontaneous-loss rate
    gamma_23: float = 1.0     # Raman emission rate
    gamma_d: float = 0.0      # pure dephasing rate
    detuning: float = 0.0
    fwhm: float = 0.1
    amplitude: float | None = None
    area: float | None = None
    calibrate: bool = True
    target: float = 1.0
    center: float | None = None
    grid_t: float | None = None
    grid_n: int | None = None
    sweep: str | None = None  # "axis:lo:hi:n"
    trials: int = 20000
    seed: int = 1
    eta: float = 1.0
    t_r: float | None = None
    n_periods: int | None = None
    splitter_t1: float = 0.5
    splitter_r1: float = 0.5
    splitter_t2: float = 0.5
    splitter_r2: float = 0.5
    system_b: dict | None = None  # field overrides for the second source
    out: str | None = None
    format: str = "csv"

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; pick one of {SYSTEMS}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        chosen = [name for name, val in
                  (("amplitude", self.amplitude), ("area", self.area))
                  if val is not None]
        if self.calibrate and chosen:
            raise ConfigError(f"calibrate conflicts with explicit {chosen[0]}")
        if len(chosen) == 2:
            raise ConfigError("amplitude and area are mutually exclusive")
        if not self.calibrate and not chosen:
            raise ConfigError("need amplitude, area, or calibrate")
        if self.fwhm <= 0.0:
            raise ConfigError(f"fwhm must be positive, got {self.fwhm}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.sweep is not None:
            parse_sweep(self.sweep)
        if self.system_b is not None:
            bad = set(self.system_b) - {f.name for f in fields(self)}
            if bad:
                raise ConfigError(f"unknown system_b keys: {sorted(bad)}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def overridden(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def parse_sweep(spec: str) -> tuple:
    """Parse "axis:lo:hi:n" into (axis, lo, hi, n)."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ConfigError(f"sweep must be AXIS:LO:HI:N, got {spec!r}")
    axis = parts[0]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis {axis!r} not one of {SWEEP_AXES}")
    try:
        lo, hi = float(parts[1]), float(parts[2])
        n = int(parts[3])
    except ValueError as exc:
        raise ConfigError(f"bad sweep range in {spec!r}") from exc
    if n < 1 or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError(f"sweep needs finite bounds and n >= 1, got {spec!r}")
    if axis != "delay" and (lo <= 0.0 and axis != "dephasing" or hi < lo):
        raise ConfigError(f"sweep range must be positive and ordered: {spec!r}")
    return axis, lo, hi, n


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update(overrides)
    return RunConfig.from_dict(data)


def emission_gamma(cfg: RunConfig) -> float:
    return {"two_level": cfg.gamma, "ladder": cfg.gamma_12,
            "lambda": cfg.gamma_23}[cfg.system]


def build_window(cfg: RunConfig, pad_before: float = 0.0,
                 pad_after: float = 0.0) -> tuple:
    """(pulse center, grid) for the configured source."""
    if cfg.grid_t is not None or cfg.grid_n is not None:
        if cfg.grid_t is None or cfg.grid_n is None or cfg.center is None:
            raise ConfigError("explicit grids need grid_t, grid_n, and center")
        return cfg.center, TimeGrid(0.0, cfg.grid_t, cfg.grid_n)
    center, grid = pulse_window(cfg.fwhm, emission_gamma(cfg))
    if cfg.center is not None:
        center = cfg.center
    if pad_before or pad_after:
        center += pad_before
        t_end = grid.t_end + pad_before + pad_after
        n = max(grid.n, int(np.ceil(t_end / grid.dt)) + 1)
        grid = TimeGrid(0.0, t_end, n)
    return center, grid


def build_source(cfg: RunConfig, amplitude: float, center: float):
    pulse = gaussian_pulse(amplitude, center, cfg.fwhm)
    if cfg.system == "two_level":
        system = two_level_system(gamma=cfg.gamma, detuning=cfg.detuning,
                                  pulse=pulse)
    elif cfg.system == "ladder":
        system = ladder_system(gamma=cfg.gamma_12, pump=pulse)
    else:
        system = lambda_system(gamma_emission=cfg.gamma_23,
                               gamma_spont=cfg.gamma_13,
                               detuning=cfg.detuning, pulse=pulse)
    if cfg.gamma_d > 0.0:
        system = add_dephasing(system, _DEPHASE_LEVEL[cfg.system], cfg.gamma_d)
    return system


def resolve_amplitude(cfg: RunConfig, center: float, grid: TimeGrid) -> float:
    if cfg.amplitude is not None:
        return cfg.amplitude
    if cfg.area is not None:
        unit = gaussian_pulse(1.0, center, cfg.fwhm).area()
        return cfg.area / unit
    base = build_source(cfg, 1.0, center)
    return calibrate_amplitude(base, cfg.target, grid=grid)


def coherence_point(cfg: RunConfig) -> dict:
    """One fully-evaluated source: calibration, grids, scalar summary."""
    center, grid = build_window(cfg)
    amplitude = resolve_amplitude(cfg, center, grid)
    system = build_source(cfg, amplitude, center)
    traj = evolve(system, grid)
    mean = mean_photon_number(system, traj)
    g1 = g1_grid(system, grid)
    g2 = g2_grid(system, grid)
    summary = coherence_summary(g1, g2, mean)
    return {"amplitude": amplitude, "grid": grid, "center": center,
            "system": system, "summary": summary, "g1": g1, "g2": g2}


SUMMARY_COLUMNS = ("mean_photons", "g2_zero", "g1sq_zero", "g2_hom", "g2_mz")


def _sweep_values(cfg: RunConfig, allowed: tuple) -> tuple:
    if cfg.sweep is None:
        return None, []
    axis, lo, hi, n = parse_sweep(cfg.sweep)
    if axis not in allowed:
        raise ConfigError(f"sweep axis {axis!r} not usable here; "
                          f"allowed: {allowed}")
    return axis, list(np.linspace(lo, hi, n))


def _apply_axis(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "fwhm":
        return cfg.overridden(fwhm=float(value))
    if axis == "dephasing":
        return cfg.overridden(gamma_d=float(value))
    if axis == "area":
        return cfg.overridden(area=float(value), amplitude=None, calibrate=False)
    raise ConfigError(f"axis {axis!r} cannot parametrize a single source")


def cmd_coherence(cfg: RunConfig) -> tuple:
    """Sweep table of integrated coherences; error rows keep the run alive."""
    axis, values = _sweep_values(cfg, ("fwhm", "area", "dephasing"))
    if axis is None:
        axis, values = "fwhm", [cfg.fwhm]
    rows = []
    for value in values:
        row = {"axis": axis, "value": float(value)}
        try:
            point = coherence_point(_apply_axis(cfg, axis, value))
            summary = point["summary"]
            summary.validate(tol=1e-9)
            row.update({k: getattr(summary, k) for k in SUMMARY_COLUMNS})
            row["status"] = "ok"
        except SimulationError as exc:
            row.update({k: None for k in SUMMARY_COLUMNS})
            row["status"] = f"error: {exc}"
        rows.append(row)
    header = ("axis", "value") + SUMMARY_COLUMNS + ("status",)
    return header, rows


def cmd_hom_delay(cfg: RunConfig) -> tuple:
    """Two-source interference versus delay of source B."""
    if cfg.sweep is None:
        raise ConfigError("hom-delay needs a sweep of the form delay:LO:HI:N")
    axis, lo, hi, n = parse_sweep(cfg.sweep)
    if axis != "delay":
        raise ConfigError("hom-delay sweeps the 'delay' axis only")
    cfg_b = cfg if not cfg.system_b else cfg.overridden(**cfg.system_b)

    pad_before = max(0.0, -lo)
    pad_after = max(0.0, hi)
    wide = max(cfg.fwhm, cfg_b.fwhm)
    base = cfg.overridden(fwhm=wide)
    center, grid = build_window(base, pad_before=pad_before, pad_after=pad_after)

    def prepare(c: RunConfig) -> tuple:
        amp = resolve_amplitude(c, center, grid)
        system = build_source(c, amp, center)
        traj = evolve(system, grid)
        mean = mean_photon_number(system, traj)
        return g1_grid(system, grid), g2_grid(system, grid), mean

    g1a, g2a, mean_a = prepare(cfg)
    g1b, g2b, mean_b = prepare(cfg_b)

    rows = []
    for value in np.linspace(lo, hi, n):
        steps = delay_steps(grid, float(value))
        row = {"delay": float(steps * grid.dt), "steps": steps}
        try:
            hom = hom_cross_general(g1a, delay_shift(g1b, steps),
                                    g2a, delay_shift(g2b, steps),
                                    mean_a, mean_b)
            row["g2_hom"] = hom
            row["status"] = "ok"
        except SimulationError as exc:
            row["g2_hom"] = None
            row["status"] = f"error: {exc}"
        rows.append(row)
    return ("delay", "steps", "g2_hom", "status"), rows


def cmd_mz(cfg: RunConfig) -> tuple:
    """Five-peak coincidence pattern for the configured source."""
    splitter = SplitterSpec(cfg.splitter_t1, cfg.splitter_r1,
                            cfg.splitter_t2, cfg.splitter_r2)
    point = coherence_point(cfg)
    summary = point["summary"]
    pattern = mz_five_peaks(summary.g2_zero, summary.g1sq_zero, splitter)
    rows = [{"n": k, "amplitude": pattern.peak(k), "status": "ok"}
            for k in range(-2, 3)]
    return ("n", "amplitude", "status"), rows


def cmd_mc_validate(cfg: RunConfig) -> tuple:
    """Monte Carlo versus deterministic pipeline at 3 standard errors."""
    point = coherence_point(cfg)
    system, grid = point["system"], point["grid"]
    summary = point["summary"]

    mc_grid = refine_for_rates(grid, system)
    records = run_trajectories(system, mc_grid, cfg.trials, cfg.seed)
    dist = photocount_distribution(records, cfg.eta, seed=cfg.seed)
    try:
        mc_g2, se_g2 = photocount_g2_stats(dist)
    except EstimateError:
        mc_g2, se_g2 = 0.0, 0.0
    counts = np.array([len(r.clicks) for r in records], dtype=float)
    mc_mean = float(counts.mean())
    se_mean = float(counts.std(ddof=1) / np.sqrt(len(counts))) if len(counts) > 1 else 0.0
    # eta thins the photocount mean but cancels in g2
    qrt_mean = summary.mean_photons

    def verdict(delta: float, sigma: float) -> str:
        return "PASS" if abs(delta) <= 3.0 * sigma + 1e-8 else "FAIL"

    rows = [
        {"quantity": "g2_zero", "deterministic": summary.g2_zero,
         "mc": mc_g2, "sigma": se_g2,
         "verdict": verdict(mc_g2 - summary.g2_zero, se_g2)},
        {"quantity": "mean_photons", "deterministic": qrt_mean,
         "mc": mc_mean, "sigma": se_mean,
         "verdict": verdict(mc_mean - qrt_mean, se_mean)},
    ]
    return ("quantity", "deterministic", "mc", "sigma", "verdict"), rows


# ---------------------------------------------------------------------------
# output plumbing


def _plain(value):
    """Demote numpy scalars; a NaN anywhere in a table is a hard error."""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            raise EstimateError("refusing to write NaN into a result table")
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def _format_cell(value) -> str:
    value = _plain(value)
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def render_csv(header: tuple, rows: list) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(col)) for col in header))
    return "\n".join(lines) + "\n"


def render_json(header: tuple, rows: list) -> str:
    clean = [{k: _plain(v) for k, v in row.items()} for row in rows]
    return json.dumps({"columns": list(header), "rows": clean},
                      indent=2, sort_keys=True) + "\n"


def write_output(cfg: RunConfig, header: tuple, rows: list) -> str:
    text = render_csv(header, rows) if cfg.format == "csv" \
        else render_json(header, rows)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    return text


def write_manifest(cfg: RunConfig, command: str, wall_time: float) -> None:
    if cfg.out is None:
        return
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "version": __version__,
        "numpy": np.__version__,
        "python": sys.version.split()[0],
        "seed": cfg.seed,
        "trials": cfg.trials,
        "wall_time_s": round(wall_time, 3),
        "output": cfg.out,
    }
    with open(cfg.out + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# argument parsing


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--system", choices=SYSTEMS)
    parser.add_argument("--fwhm", type=float)
    parser.add_argument("--area", type=float)
    parser.add_argument("--calibrate", action="store_true", default=None)
    parser.add_argument("--sweep", metavar="AXIS:LO:HI:N")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--out", metavar="PATH")
    parser.add_argument("--format", choices=("csv", "json"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spsim",
        description="Pulsed single-photon source simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("coherence", "sweep integrated coherences of one source"),
        ("hom-delay", "two-source interference versus delay"),
        ("mz", "five-peak interferometer pattern"),
        ("mc-validate", "Monte Carlo versus deterministic comparison"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common_flags(p)
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    overrides = {}
    for key in ("system", "fwhm", "area", "trials", "seed", "eta",
                "out", "format", "sweep"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    if args.calibrate:
        overrides["calibrate"] = True
        overrides["amplitude"] = None
        overrides["area"] = None
    elif "area" in overrides:
        overrides["calibrate"] = False
    return overrides


_COMMANDS = {
    "coherence": cmd_coherence,
    "hom-delay": cmd_hom_delay,
    "mz": cmd_mz,
    "mc-validate": cmd_mc_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        cfg = load_config(args.config, _overrides_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        header, rows = _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SimulationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    write_output(cfg, header, rows)
    write_manifest(cfg, args.command, time.monotonic() - started)
    statuses = [row.get("status", "") for row in rows]
    if statuses and all(s.startswith("error") for s in statuses):
        return 2
    if any(row.get("verdict") == "FAIL" for row in rows):
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
