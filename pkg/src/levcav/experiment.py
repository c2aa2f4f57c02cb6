"""Virtual power-ramp experiments.

A ramp is a sequence of stepped holds at fixed tweezer powers. For each
hold the heterodyne spectrum of the anti-Stokes sidebands is produced
either analytically (noise-free normal-mode Lorentzians of the effective
two-mode model) or stochastically (exact-discretization simulation of the
full particle-cavity model followed by Welch averaging with a Hann window).
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from . import dynamics
from .coupling import calibrate_coupling_scale, crossing_model, particle_coupling, self_energy
from .params import (
    AXES,
    HBAR,
    KB,
    TWO_PI,
    CavitySpec,
    NoiseSpec,
    ParticleSpec,
    SystemConfig,
    axis_index,
    phase_from_position,
    validate_config,
)


@dataclass(frozen=True)
class RampSchedule:
    """Stepped linear power ramp; ``p1[k]``, ``p2[k]`` are held for ``duration / steps``."""

    duration: float
    steps: int
    p1: np.ndarray
    p2: np.ndarray
    differential: bool = True

    @property
    def hold(self) -> float:
        return self.duration / self.steps

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.hold

    def powers(self, k: int) -> tuple[float, float]:
        return float(self.p1[k]), float(self.p2[k])


def make_power_ramp(
    p_center: float, span: float, steps: int = 200, duration: float | None = None
) -> RampSchedule:
    """Antisymmetric linear ramp: P1 runs down from p_center + span/2, P2 mirrors it.

    Step ``k`` holds P1 = p_center + span * (1/2 - k/steps), so for even
    ``steps`` the powers are equal exactly at ``k = steps // 2``. The default
    duration gives 40 ms holds.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not p_center - span / 2 > 0:
        raise ValueError("ramp would reach non-positive power")
    frac = 0.5 - np.arange(steps) / steps
    p1 = p_center + span * frac
    p2 = p_center - span * frac
    if np.any(p1 <= 0) or np.any(p2 <= 0):
        raise ValueError("ramp would reach non-positive power")
    if duration is None:
        duration = 40e-3 * steps
    return RampSchedule(float(duration), int(steps), p1, p2, True)


@dataclass(frozen=True)
class SpectrogramData:
    """Anti-Stokes spectrogram: ``psd[time, frequency]`` (two-sided, per Hz)."""

    time_bins: np.ndarray
    frequency_bins: np.ndarray
    psd: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.psd.shape != (len(self.time_bins), len(self.frequency_bins)):
            raise ValueError("psd shape does not match the bins")


def axis_windows(config: SystemConfig, schedule: RampSchedule, axes: Sequence[str]) -> dict:
    """Non-overlapping frequency windows (rad/s) enclosing each axis's tracks.

    The spans cover the bare frequencies and the shifted normal modes along
    the ramp; boundaries sit halfway between neighbouring spans.
    """
    spans = {}
    for axis in axes:
        freqs = [p.freq_at(axis, P) for p, P in zip(config.particles, (schedule.p1, schedule.p2))]
        if len(config.particles) == 2:
            _, _, tr = _pair_tracks(config, axis, schedule)
            freqs += [tr.lambda_minus, tr.lambda_plus]
        spans[axis] = (min(float(np.min(f)) for f in freqs), max(float(np.max(f)) for f in freqs))
    order = sorted(spans, key=lambda a: spans[a][0])
    windows = {}
    for i, axis in enumerate(order):
        lo, hi = spans[axis]
        left = 0.3 * lo if i == 0 else 0.5 * (spans[order[i - 1]][1] + lo)
        right = 1.25 * hi if i == len(order) - 1 else 0.5 * (hi + spans[order[i + 1]][0])
        windows[axis] = (float(left), float(right))
    return windows


def _floor_level(config: SystemConfig) -> float:
    """Absolute detection floor: a fraction of particle 1's bare y peak height."""
    p = config.particles[0]
    occ = KB * config.noise.temperature / (HBAR * p.freq("y"))
    gamma = max(p.gas_damping, 1e-12)
    return config.noise.detection_floor * 4.0 * occ / gamma


def _lorentz(grid, center, width, area):
    return area * width / ((grid - center) ** 2 + 0.25 * width**2)


def _pair_tracks(config: SystemConfig, axis: str, schedule: RampSchedule):
    p1, p2 = config.particles[0], config.particles[1]
    cav = config.cavity
    omega1 = p1.freq_at(axis, schedule.p1)
    omega2 = p2.freq_at(axis, schedule.p2)
    g1 = particle_coupling(p1, axis, cav, cav.ref_power).g
    g2 = particle_coupling(p2, axis, cav, cav.ref_power).g
    tracks = crossing_model(
        omega1, omega2, schedule.p1 / cav.ref_power, schedule.p2 / cav.ref_power,
        g1, g2, cav, p1.gas_damping, p2.gas_damping,
    )
    return omega1, omega2, tracks


def analytic_rows(config: SystemConfig, schedule: RampSchedule, axes, grid) -> np.ndarray:
    """Noise-free spectrogram from the effective normal modes of each axis."""
    grid = np.asarray(grid, float)
    psd = np.full((schedule.steps, len(grid)), _floor_level(config))
    T = config.noise.temperature
    for axis in axes:
        eta2 = config.noise.imprint[axis_index(axis)] ** 2
        if len(config.particles) == 1:
            p = config.particles[0]
            om = p.freq_at(axis, schedule.p1)
            occ = KB * T / (HBAR * om)
            se_g = particle_coupling(p, axis, config.cavity, schedule.p1).g
            se = self_energy(se_g, om, config.cavity)
            width = p.gas_damping + se.damping
            area = eta2 * occ * p.gas_damping / width
            psd += _lorentz(grid[None], (om + se.shift)[:, None], width[:, None], area[:, None])
            continue
        omega1, omega2, tr = _pair_tracks(config, axis, schedule)
        p1, p2 = config.particles[0], config.particles[1]
        occ1 = KB * T / (HBAR * omega1)
        occ2 = KB * T / (HBAR * omega2)
        for lam, width, w1 in (
            (tr.lambda_minus, tr.width_minus, tr.weight1_minus),
            (tr.lambda_plus, tr.width_plus, tr.weight1_plus),
        ):
            heat = w1 * p1.gas_damping * occ1 + (1 - w1) * p2.gas_damping * occ2
            area = eta2 * heat / width
            psd += _lorentz(grid[None], lam[:, None], width[:, None], area[:, None])
    return psd


def stochastic_rows(
    config: SystemConfig,
    schedule: RampSchedule,
    axes,
    seed: int | None,
    sample_dt: float = 2e-6,
    nperseg: int = 4000,
    noverlap: int | None = None,
    band: tuple[float, float] | None = None,
    cavity_weight: float = 1.0,
):
    """Simulate the full model through the ramp and Welch-average each hold.

    Each axis gets an independent random stream derived from ``seed``. The
    state is carried across holds; the first ``settle`` part of every hold
    (five slowest damping times) is discarded before spectral estimation.
    """
    noverlap = nperseg // 2 if noverlap is None else noverlap
    fs = 1.0 / sample_dt
    streams = np.random.SeedSequence(seed).spawn(len(axes) + 1)
    freqs = np.fft.fftshift(np.fft.fftfreq(nperseg, sample_dt)) * TWO_PI
    keep = np.ones(len(freqs), bool)
    if band is not None:
        keep = (freqs >= band[0]) & (freqs <= band[1])
    psd = np.zeros((schedule.steps, int(keep.sum())))
    floor = _floor_level(config)
    gamma_min = min(p.gas_damping for p in config.particles)
    settle = 5.0 / max(gamma_min, 1e-12)
    n_hold = int(round(schedule.hold / sample_dt))
    n_settle = min(int(math.ceil(settle / sample_dt)), n_hold // 4)
    for a_i, axis in enumerate(axes):
        rng = np.random.default_rng(streams[a_i])
        eta = config.noise.imprint[axis_index(axis)]
        x = None
        for k in range(schedule.steps):
            powers = schedule.powers(k)[: len(config.particles)]
            model = dynamics.build_state_space(config, axis, powers=powers)
            limit = dynamics.max_step(model)
            decim = max(1, int(math.ceil(sample_dt / limit)))
            trace = dynamics.integrate_sde(
                model, n_hold * sample_dt, sample_dt / decim, decimate=decim, x0=x, rng=rng
            )
            x = trace.samples[-1]
            obs = dynamics.heterodyne_signal(model, imprint=eta, cavity_weight=cavity_weight)
            chans = trace.samples[n_settle:] @ obs.channels.T
            _, P = signal.welch(
                chans, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap,
                return_onesided=False, detrend=False, axis=0,
            )
            psd[k] += np.fft.fftshift(P.sum(axis=1))[keep]
    if floor > 0:
        # white detection noise; its Welch estimate has the same chi-square statistics
        rng = np.random.default_rng(streams[-1])
        n_seg = 1 + max(0, (n_hold - n_settle - nperseg) // (nperseg - noverlap))
        dof = 2 * n_seg
        psd += floor * rng.chisquare(dof, size=psd.shape) / dof
    return freqs[keep], psd


def run_spectrogram(
    config: SystemConfig,
    schedule: RampSchedule,
    mode: str = "analytic",
    axes: Sequence[str] = AXES,
    seed: int | None = None,
    grid=None,
    resolution: float = TWO_PI * 100.0,
    **stochastic_opts,
) -> SpectrogramData:
    """Spectrogram of the anti-Stokes sidebands along the ramp.

    ``mode`` is ``"analytic"`` (default, noise-free) or ``"stochastic"``.
    """
    if len(config.particles) > 2:
        raise NotImplementedError("power ramps are defined for one or two particles")
    windows = axis_windows(config, schedule, axes)
    lo = min(w[0] for w in windows.values())
    hi = max(w[1] for w in windows.values())
    meta = {
        "mode": mode,
        "axes": list(axes),
        "detuning_hz": config.cavity.detuning / TWO_PI,
        "distance_m": config.distance,
        "phases": [ph.phase for ph in config.phases()],
        "windows_hz": {a: [w[0] / TWO_PI, w[1] / TWO_PI] for a, w in windows.items()},
        "schedule": {
            "duration_s": schedule.duration,
            "steps": schedule.steps,
            "p1_w": [float(v) for v in schedule.p1],
            "p2_w": [float(v) for v in schedule.p2],
            "ramp": "stepped-hold",
        },
        "seed": seed,
    }
    if mode == "analytic":
        if grid is None:
            grid = np.arange(lo, hi, resolution)
        psd = analytic_rows(config, schedule, axes, grid)
        freqs = np.asarray(grid, float)
    elif mode == "stochastic":
        opts = dict(stochastic_opts)
        freqs, psd = stochastic_rows(config, schedule, axes, seed, band=(lo, hi), **opts)
        nperseg = opts.get("nperseg", 4000)
        meta["window"] = {
            "name": "hann",
            "nperseg": nperseg,
            "noverlap": opts.get("noverlap", nperseg // 2),
            "sample_dt_s": opts.get("sample_dt", 2e-6),
        }
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SpectrogramData(schedule.times.copy(), np.asarray(freqs), psd, meta)


# -- scenarios ----------------------------------------------------------------

def node_position(wavelength: float, k: int = 0) -> float:
    """Position of the k-th cavity intensity node."""
    return wavelength / 4.0 + k * wavelength / 2.0


def reference_config(detuning_hz: float = 1.2e6, separation: float | None = None) -> SystemConfig:
    """Two particles at cavity nodes with couplings calibrated to the reported values.

    The y coupling scale gives a 6.6 kHz splitting at 0.45 MHz detuning with
    both particles at nodes; the z scale gives G_zz/Omega_z = 0.238 with both
    particles at antinodes and 1.2 MHz detuning. The particles differ
    slightly in their y and z frequencies; x frequencies are identical so the
    x modes cross at equal power.
    """
    lam = 1550e-9
    sep = 4 * lam if separation is None else separation
    y1 = node_position(lam)
    p1 = ParticleSpec(position=y1, mech_freq=(TWO_PI * 59e3, TWO_PI * 78e3, TWO_PI * 25e3))
    p2 = ParticleSpec(position=y1 + sep, mech_freq=(TWO_PI * 59e3, TWO_PI * 79e3, TWO_PI * 25.5e3))
    cav = CavitySpec(detuning=TWO_PI * detuning_hz, wavelength=lam)
    base = validate_config([p1, p2], cav, NoiseSpec())
    g_y = calibrate_coupling_scale(base, "y", TWO_PI * 6.6e3, detuning=TWO_PI * 0.45e6)
    anti = validate_config(
        [replace(p1, position=0.0), replace(p2, position=4 * lam)], cav, NoiseSpec()
    )
    omega_z = 0.5 * (p1.freq("z") + p2.freq("z"))
    g_z = calibrate_coupling_scale(anti, "z", 2 * 0.238 * omega_z, detuning=TWO_PI * 1.2e6)
    return base.with_cavity(coupling_scale=(0.0, g_y, g_z))


def cavity_axis_polarization(config: SystemConfig) -> SystemConfig:
    """Tweezers polarized along the cavity axis: no coherent scattering into the mode."""
    return config.with_cavity(coupling_scale=(0.0, 0.0, 0.0))


def place_pair(config: SystemConfig, y1: float, y2: float) -> SystemConfig:
    particles = list(config.particles)
    particles[0] = replace(particles[0], position=y1)
    particles[1] = replace(particles[1], position=y2)
    return validate_config(particles, config.cavity, config.noise)


# -- campaigns ----------------------------------------------------------------

@dataclass
class CampaignRow:
    value: float
    fits: dict
    phases: tuple[float, ...] = ()
    spectrogram: SpectrogramData | None = None
    error: str | None = None


@dataclass
class SweepCampaignResult:
    variable: str
    grid: np.ndarray
    rows: list[CampaignRow]

    def splittings(self, axis: str) -> np.ndarray:
        return np.array(
            [r.fits[axis].splitting if r.error is None and axis in r.fits else np.nan for r in self.rows]
        )

    def sigmas(self, axis: str) -> np.ndarray:
        return np.array(
            [r.fits[axis].sigma_splitting if r.error is None and axis in r.fits else np.nan for r in self.rows]
        )


def _run_point(make_config, value, schedule, mode, fit_axes, seed, split, keep):
    from .analysis import analyze_spectrogram

    try:
        cfg = make_config(value)
        axes = tuple(dict.fromkeys(("x",) + tuple(fit_axes)))
        spec = run_spectrogram(cfg, schedule, mode=mode, axes=axes, seed=seed)
        fits = analyze_spectrogram(spec, cfg, fit_axes, split=split)
        phases = tuple(ph.phase for ph in cfg.phases())
        return CampaignRow(float(value), fits, phases, spec if keep else None)
    except Exception as exc:  # recorded per point, the campaign continues
        return CampaignRow(float(value), {}, (), None, f"{type(exc).__name__}: {exc}")


def _campaign(variable, values, make_config, schedule, mode, fit_axes, seed, split, workers, keep):
    values = np.asarray(values, float)
    args = [(make_config, v, schedule, mode, fit_axes, seed, split, keep) for v in values]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda a: _run_point(*a), args))
    else:
        rows = [_run_point(*a) for a in args]
    return SweepCampaignResult(variable, values, rows)


def run_detuning_campaign(
    config: SystemConfig,
    detunings: Sequence[float],
    schedule: RampSchedule,
    mode: str = "analytic",
    seed: int | None = None,
    workers: int = 1,
    keep_spectrograms: bool = False,
) -> SweepCampaignResult:
    """One spectrogram and y-axis fit per cavity detuning (rad/s)."""
    return _campaign(
        "detuning", detunings, lambda d: config.with_cavity(detuning=float(d)),
        schedule, mode, ("y",), seed, "symmetric", workers, keep_spectrograms,
    )


def run_distance_campaign(
    config: SystemConfig,
    distances: Sequence[float],
    schedule: RampSchedule,
    mode: str = "analytic",
    seed: int | None = None,
    workers: int = 1,
    keep_spectrograms: bool = False,
) -> SweepCampaignResult:
    """Particle 1 pinned at a node, particle 2 moved to ``y1 + d``.

    The per-particle couplings differ here, so the fit estimates both
    couplings from the data; the true phases only go into the metadata.
    """
    y1 = config.particles[0].position
    if abs(phase_from_position(y1, config.cavity.wavelength).phase - math.pi / 2) > 1e-9:
        raise ValueError("particle 1 must sit at a cavity node")
    return _campaign(
        "distance", distances, lambda d: place_pair(config, y1, y1 + float(d)),
        schedule, mode, ("y",), seed, "fit", workers, keep_spectrograms,
    )


def run_phase_campaign(
    config: SystemConfig,
    phases: Sequence[float],
    schedule: RampSchedule,
    mode: str = "analytic",
    seed: int | None = None,
    separation: float | None = None,
    workers: int = 1,
    keep_spectrograms: bool = False,
) -> SweepCampaignResult:
    """Both particles at the same phase (separation an integer number of wavelengths)."""
    lam = config.cavity.wavelength
    sep = 4 * lam if separation is None else separation
    if abs(sep / lam - round(sep / lam)) > 1e-9:
        raise ValueError("separation must be an integer multiple of the wavelength")

    def make(phi):
        y1 = float(phi) * lam / TWO_PI
        return place_pair(config, y1, y1 + sep)

    return _campaign(
        "phase", phases, make, schedule, mode, ("y", "z"), seed, "symmetric", workers, keep_spectrograms,
    )


# -- persistence --------------------------------------------------------------

def _hz12(x) -> float:
    # 12 significant digits survive the Hz <-> rad/s conversion, so a
    # read/write cycle reproduces the file byte for byte
    return float(f"{float(x):.12g}")


def write_spectrogram(spec: SpectrogramData, stem: str | Path) -> tuple[Path, Path]:
    """``<stem>.json`` (metadata and bins, Hz) plus ``<stem>.csv`` (one row per time bin)."""
    stem = Path(stem)
    meta_path, csv_path = stem.with_suffix(".json"), stem.with_suffix(".csv")
    meta = dict(spec.metadata)
    meta["time_bins_s"] = [_hz12(t) for t in spec.time_bins]
    meta["frequency_bins_hz"] = [_hz12(f / TWO_PI) for f in spec.frequency_bins]
    meta["matrix"] = csv_path.name
    meta_path.write_text(json.dumps(meta, indent=1, sort_keys=True))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in spec.psd:
            writer.writerow([repr(float(v)) for v in row])
    return meta_path, csv_path


def read_spectrogram(stem: str | Path) -> SpectrogramData:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    psd = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", ndmin=2)
    times = np.array(meta.pop("time_bins_s"))
    freqs = np.array(meta.pop("frequency_bins_hz")) * TWO_PI
    meta.pop("matrix", None)
    return SpectrogramData(times, freqs, psd, meta)


CAMPAIGN_EXTRA = ("sigma_hz_y", "sigma_hz_z", "resolved_y", "resolved_z", "status")


def write_campaign_csv(result: SweepCampaignResult, path: str | Path) -> None:
    """Sweep CSV schema plus fit uncertainties (one s.d.), verdicts and per-point status."""
    from .coupling import SWEEP_HEADER, _fmt as fmt

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(SWEEP_HEADER) + list(CAMPAIGN_EXTRA))
        for row in result.rows:
            fy, fz = row.fits.get("y"), row.fits.get("z")
            G = fy.G if fy is not None else (fz.G if fz is not None else complex("nan"))
            writer.writerow([
                result.variable,
                fmt(row.value),
                fmt(fy.splitting / TWO_PI) if fy else "nan",
                fmt(fz.splitting / TWO_PI) if fz else "nan",
                fmt(G.real / TWO_PI),
                fmt(G.imag / TWO_PI),
                fmt(fy.sigma_splitting / TWO_PI) if fy else "nan",
                fmt(fz.sigma_splitting / TWO_PI) if fz else "nan",
                str(fy.resolved) if fy else "",
                str(fz.resolved) if fz else "",
                "ok" if row.error is None else row.error,
            ])


def read_campaign_csv(path: str | Path) -> list[dict]:
    """Rows of a campaign CSV as dicts of strings, in file order."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
