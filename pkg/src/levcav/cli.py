"""Command-line front end: coupling sweeps, virtual spectrograms and fits.

Subcommands::

    levcav init-config PATH       write a two-particle starting configuration
    levcav couple ...             closed-form sweeps (CSV)
    levcav spectrogram ...        virtual power ramp, spectrogram and fits
    levcav campaign ...           spectrogram plus fit per grid point (CSV)
    levcav estimate ...           short-range couplings against the resolution floor

Every run writes ``manifest.json`` into its output directory. Exit codes:
0 success, 1 invalid input, 2 numerical failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    CalibrationError,
    FitError,
    calibrate_powers_from_x,
    fit_avoided_crossing,
    resolvability,
    track_modes,
)
from .coupling import (
    coulomb_coupling_estimate,
    detuning_sweep,
    distance_sweep,
    effective_coupling,
    optical_binding_estimate,
    pair_couplings,
    phase_sweep,
    write_sweep_csv,
)
from .dynamics import StabilityError, StepSizeError
from .experiment import (
    cavity_axis_polarization,
    make_power_ramp,
    run_detuning_campaign,
    run_distance_campaign,
    run_phase_campaign,
    write_campaign_csv,
    reference_config,
    place_pair,
    run_spectrogram,
    write_spectrogram,
)
from .params import AXES, TWO_PI, ConfigError, ShortRangeWarning, load_config, save_config

OUT_ENV = "LEVCAV_OUT"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr, flush=True)
        raise SystemExit(EXIT_INPUT)


@dataclass
class RunManifest:
    command: str
    config_path: str | None
    seed: int | None
    output_dir: str
    tool_version: str
    started_utc: str
    finished_utc: str | None = None
    status: str = "pending"
    exit_code: int | None = None
    arguments: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def write(self, directory: Path) -> Path:
        path = directory / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:count`` with inclusive endpoints."""
    parts = text.split(":")
    if len(parts) != 3:
        raise InputError(f"grid {text!r} must look like start:stop:count")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError as exc:
        raise InputError(f"grid {text!r}: {exc}") from None
    if count < 1:
        raise InputError(f"grid {text!r}: count must be >= 1")
    if count == 1 and start != stop:
        raise InputError(f"grid {text!r}: a single point needs start == stop")
    return np.linspace(start, stop, count)


def _say(line: str) -> None:
    print(line, flush=True)


def _load(path):
    if path is None:
        return reference_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortRangeWarning)
        return load_config(path)


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "levcav-out")


# -- commands -----------------------------------------------------------------

def cmd_init_config(args, manifest):
    cfg = reference_config(detuning_hz=args.detuning * 1e6)
    lam = cfg.cavity.wavelength
    if args.phase is not None or args.separation is not None:
        y1 = cfg.particles[0].position if args.phase is None else args.phase * lam / TWO_PI
        sep = 4 * lam if args.separation is None else args.separation * lam
        cfg = place_pair(cfg, y1, y1 + sep)
    if args.charges:
        cfg = cfg.replace_particle(0, charge=args.charges).replace_particle(1, charge=args.charges)
    if args.polarization == "cavity-axis":
        cfg = cavity_axis_polarization(cfg)
    path = Path(args.path)
    save_config(cfg, path)
    manifest.outputs.append(str(path))
    _say(f"wrote {path}")


def cmd_couple(args, manifest, cfg, out: Path):
    if args.detuning is not None:
        result = detuning_sweep(cfg, parse_grid(args.detuning) * 1e6 * TWO_PI)
    elif args.distance is not None:
        result = distance_sweep(cfg, parse_grid(args.distance) * 1e-6)
    else:
        result = phase_sweep(cfg, parse_grid(args.phase))
    path = out / f"couple_{result.variable}.csv"
    write_sweep_csv(result, path)
    manifest.outputs.append(path.name)
    _say(f"{result.variable}: {len(result.values)} rows -> {path}")


def _write_tracks(tracks, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "axis", "branch", "center_hz", "width_hz", "height", "sigma_hz"])
        for tr in tracks:
            for i in range(len(tr)):
                w.writerow([
                    f"{tr.times[i]:.12g}", tr.axis or "", tr.branch, f"{tr.centers[i] / TWO_PI:.12g}",
                    f"{tr.widths[i] / TWO_PI:.12g}", f"{tr.heights[i]:.12g}", f"{tr.sigmas[i] / TWO_PI:.12g}",
                ])


def cmd_spectrogram(args, manifest, cfg, out: Path):
    if len(cfg.particles) != 2:
        raise InputError("the power ramp needs exactly two particles")
    axes = tuple(a.strip() for a in args.axes.split(",") if a.strip())
    if any(a not in AXES for a in axes) or "x" not in axes:
        raise InputError("--axes must list axes among x,y,z and include x (power calibration)")
    schedule = make_power_ramp(args.center * 1e-3, args.span * 1e-3, args.steps, args.steps * args.hold * 1e-3)
    spec = run_spectrogram(cfg, schedule, mode=args.mode, axes=axes, seed=args.seed)
    meta, matrix = write_spectrogram(spec, out / "spectrogram")
    tracks = track_modes(spec)
    _write_tracks(tracks, out / "tracks.csv")
    manifest.outputs += [meta.name, matrix.name, "tracks.csv"]
    cal = calibrate_powers_from_x(tracks, cfg)
    entries = []
    for axis in axes:
        try:
            fit = fit_avoided_crossing(tracks, cfg, axis, cal, split=args.split)
        except FitError as exc:
            entries.append({"axis": axis, "error": str(exc)})
            _say(f"{axis}: fit failed: {exc}")
            continue
        entries.append(fit.to_dict())
        lo, hi = fit.interval(3.0)
        verdict = "resolved" if fit.resolved else "unresolved"
        if fit.near_floor:
            verdict += " (near floor)"
        _say(
            f"{axis}: splitting {fit.splitting / TWO_PI / 1e3:.4f} kHz "
            f"+- {fit.sigma_splitting / TWO_PI / 1e3:.4f} kHz (3 s.d. [{lo / TWO_PI / 1e3:.4f}, "
            f"{hi / TWO_PI / 1e3:.4f}]), floor {fit.floor / TWO_PI / 1e3:.4f} kHz, {verdict}"
        )
    (out / "fit.json").write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n")
    manifest.outputs.append("fit.json")


def cmd_campaign(args, manifest, cfg, out: Path):
    if len(cfg.particles) != 2:
        raise InputError("campaigns need exactly two particles")
    schedule = make_power_ramp(args.center * 1e-3, args.span * 1e-3, args.steps, args.steps * args.hold * 1e-3)
    opts = dict(mode=args.mode, seed=args.seed, workers=args.workers)
    if args.detuning is not None:
        result = run_detuning_campaign(cfg, parse_grid(args.detuning) * 1e6 * TWO_PI, schedule, **opts)
    elif args.distance is not None:
        result = run_distance_campaign(cfg, parse_grid(args.distance) * 1e-6, schedule, **opts)
    else:
        result = run_phase_campaign(cfg, parse_grid(args.phase), schedule, **opts)
    path = out / f"campaign_{result.variable}.csv"
    write_campaign_csv(result, path)
    manifest.outputs.append(path.name)
    for row in result.rows:
        if row.error is not None:
            _say(f"{result.variable} = {row.value:.6g}: failed: {row.error}")
            continue
        parts = [
            f"{axis} {fit.splitting / TWO_PI / 1e3:.4f} +- {3 * fit.sigma_splitting / TWO_PI / 1e3:.4f} kHz (3 s.d.)"
            + ("" if fit.resolved else " unresolved")
            for axis, fit in row.fits.items()
        ]
        _say(f"{result.variable} = {row.value:.6g}: " + ", ".join(parts))


def cmd_estimate(args, manifest, cfg, out: Path):
    if len(cfg.particles) != 2:
        raise InputError("the estimate needs exactly two particles")
    p1, p2 = cfg.particles
    d = cfg.distance
    if not d > 0:
        raise InputError("particle separation must be > 0")
    axis = args.axis
    omega = 0.5 * (p1.freq(axis) + p2.freq(axis))
    g_c = abs(coulomb_coupling_estimate(p1, p2, d, omega))
    g_o = abs(optical_binding_estimate(p1, p2, d, omega, cfg.cavity))
    g1, g2, om = pair_couplings(cfg, axis)
    g_cav = abs(effective_coupling(g1, g2, om, cfg.cavity).G)
    width = 0.5 * (p1.gas_damping + p2.gas_damping)
    report = {
        "axis": axis,
        "distance_m": d,
        "G_coulomb_hz": g_c / TWO_PI,
        "G_optical_binding_hz": g_o / TWO_PI,
        "G_cavity_hz": g_cav / TWO_PI,
        "peak_width_hz": width / TWO_PI,
        "floor_hz": 0.25 * width / TWO_PI,
        "verdicts": {},
    }
    for name, G in (("coulomb", g_c), ("optical_binding", g_o), ("cavity", g_cav)):
        res = resolvability(2 * G, width)
        verdict = "below floor" if not res.resolved else ("near floor" if res.near_floor else "above floor")
        report["verdicts"][name] = verdict
        _say(f"{name}: G/2pi = {G / TWO_PI / 1e3:.4f} kHz, floor {res.floor / TWO_PI / 1e3:.4f} kHz: {verdict}")
    (out / "estimate.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    manifest.outputs.append("estimate.json")


# -- entry point --------------------------------------------------------------

NUMERIC_ERRORS = (StabilityError, StepSizeError, FitError, np.linalg.LinAlgError, ArithmeticError)
_LABELS = {EXIT_INPUT: "error", EXIT_NUMERIC: "numerical failure", EXIT_IO: "I/O failure"}


def _fail(exc, code: int) -> int:
    print(f"{_LABELS[code]}: {exc}", file=sys.stderr, flush=True)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="levcav", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"levcav {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=False):
        p.add_argument("--config", help="TOML configuration (default: built-in two-particle setup)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./levcav-out)")
        p.add_argument("--dry-run", action="store_true", help="validate and print the manifest only")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("init-config", help="write a starting configuration")
    p.add_argument("path")
    p.add_argument("--detuning", type=float, default=1.2, help="cavity detuning in MHz")
    p.add_argument("--phase", type=float, help="standing-wave phase of particle 1 (rad)")
    p.add_argument("--separation", type=float, help="particle separation in wavelengths")
    p.add_argument("--charges", type=int, default=0, help="elementary charges per particle")
    p.add_argument("--polarization", choices=("standard", "cavity-axis"), default="standard")
    p.add_argument("--out", help=argparse.SUPPRESS)
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("couple", help="closed-form coupling sweeps")
    common(p)
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--detuning", metavar="START:STOP:N", help="detuning grid in MHz")
    grid.add_argument("--distance", metavar="START:STOP:N", help="separation grid in micrometres")
    grid.add_argument("--phase", metavar="START:STOP:N", help="phase grid in radians")

    p = sub.add_parser("spectrogram", help="virtual power ramp with fits")
    common(p, seed=True)
    p.add_argument("--mode", choices=("analytic", "stochastic"), default="analytic")
    p.add_argument("--center", type=float, default=130.0, help="ramp centre power in mW")
    p.add_argument("--span", type=float, default=40.0, help="ramp span in mW")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--hold", type=float, default=40.0, help="hold time per step in ms")
    p.add_argument("--axes", default="x,y,z")
    p.add_argument("--split", default="symmetric", help="symmetric, fit, or a ratio |g1|/|g2|")

    p = sub.add_parser("campaign", help="spectrogram and fit at every grid point")
    common(p, seed=True)
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--detuning", metavar="START:STOP:N", help="detuning grid in MHz")
    grid.add_argument("--distance", metavar="START:STOP:N", help="separation grid in micrometres")
    grid.add_argument("--phase", metavar="START:STOP:N", help="phase grid in radians")
    p.add_argument("--mode", choices=("analytic", "stochastic"), default="analytic")
    p.add_argument("--center", type=float, default=130.0, help="ramp centre power in mW")
    p.add_argument("--span", type=float, default=40.0, help="ramp span in mW")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--hold", type=float, default=40.0, help="hold time per step in ms")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("estimate", help="short-range couplings against the resolution floor")
    common(p)
    p.add_argument("--axis", choices=AXES, default="y")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "split", None) not in (None, "symmetric", "fit"):
        try:
            args.split = float(args.split)
        except ValueError:
            parser.error("--split must be symmetric, fit or a number")
    out = Path(args.path).parent if args.command == "init-config" else _out_dir(args)
    manifest = RunManifest(
        command=args.command,
        config_path=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        output_dir=str(out),
        tool_version=__version__,
        started_utc=_now(),
        arguments={k: v for k, v in vars(args).items() if k not in ("command", "dry_run")},
    )
    try:
        if args.command != "init-config":
            cfg = _load(args.config)
            if args.command in ("couple", "campaign"):
                for g in (args.detuning, args.distance, args.phase):
                    if g is not None:
                        parse_grid(g)
        if args.dry_run:
            print(json.dumps(asdict(manifest), indent=1, sort_keys=True), flush=True)
            return EXIT_OK
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, InputError, ValueError) as exc:
        return _fail(exc, EXIT_NUMERIC if isinstance(exc, CalibrationError) else EXIT_INPUT)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    code = EXIT_OK
    try:
        if args.command == "init-config":
            cmd_init_config(args, manifest)
        elif args.command == "couple":
            cmd_couple(args, manifest, cfg, out)
        elif args.command == "spectrogram":
            cmd_spectrogram(args, manifest, cfg, out)
        elif args.command == "campaign":
            cmd_campaign(args, manifest, cfg, out)
        else:
            cmd_estimate(args, manifest, cfg, out)
    except CalibrationError as exc:
        code = _fail(exc, EXIT_NUMERIC)
    except (ConfigError, InputError, ValueError) as exc:
        code = _fail(exc, EXIT_INPUT)
    except NUMERIC_ERRORS as exc:
        code = _fail(exc, EXIT_NUMERIC)
    except OSError as exc:
        code = _fail(exc, EXIT_IO)
    manifest.finished_utc = _now()
    manifest.status = "ok" if code == EXIT_OK else "failed"
    manifest.exit_code = code
    try:
        manifest.write(out)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    return code


if __name__ == "__main__":
    sys.exit(main())
