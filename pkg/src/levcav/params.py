"""Domain types, unit conventions and configuration handling.

Internally every frequency is an angular frequency in rad/s and every other
quantity is SI. Anything read from or written to disk uses ordinary
frequencies in Hz (the "/2pi" values); the conversion happens in
:func:`load_config` and :func:`save_config` only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli_w
from scipy import constants

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

TWO_PI = 2.0 * math.pi
HBAR = constants.hbar
KB = constants.k
EPS0 = constants.epsilon_0
E_CHARGE = constants.e

AXES = ("x", "y", "z")


def axis_index(axis: str) -> int:
    try:
        return AXES.index(axis)
    except ValueError:
        raise ValueError(f"unknown axis {axis!r}, expected one of {AXES}") from None


def hz(omega):
    """Angular frequency (rad/s) to ordinary frequency (Hz)."""
    if isinstance(omega, (list, tuple)):
        omega = np.asarray(omega, float)
    return omega / TWO_PI


def rad(freq_hz):
    """Ordinary frequency (Hz) to angular frequency (rad/s)."""
    if isinstance(freq_hz, (list, tuple)):
        freq_hz = np.asarray(freq_hz, float)
    return freq_hz * TWO_PI


class ConfigError(ValueError):
    """Raised when one or more configuration fields are invalid.

    ``errors`` holds one ``(field, message)`` pair per failed check so callers
    can report every problem at once.
    """

    def __init__(self, errors: Sequence[tuple[str, str]]):
        self.errors = list(errors)
        lines = "; ".join(f"{name}: {msg}" for name, msg in self.errors)
        super().__init__(f"invalid configuration ({len(self.errors)} error(s)): {lines}")


class ShortRangeWarning(UserWarning):
    """Short-range (Coulomb / optical binding) coupling is above the fit resolution."""


@dataclass(frozen=True)
class ParticleSpec:
    """One levitated nanoparticle.

    ``mech_freq`` are the bare (x, y, z) angular frequencies at tweezer power
    ``power``. ``position`` is the coordinate along the cavity axis measured
    from a cavity intensity maximum.
    """

    radius: float = 75e-9
    density: float = 1850.0
    charge: int = 0
    power: float = 0.130
    position: float = 0.0
    mech_freq: tuple[float, float, float] = (TWO_PI * 59e3, TWO_PI * 78e3, TWO_PI * 25e3)
    gas_damping: float = TWO_PI * 0.6e3

    def freq(self, axis: str) -> float:
        return self.mech_freq[axis_index(axis)]

    def freq_at(self, axis: str, power):
        """Bare frequency along ``axis`` at another tweezer power."""
        return mech_freq_from_power(self.freq(axis), power, self.power)


@dataclass(frozen=True)
class CavitySpec:
    """Cavity mode seen by all particles.

    ``coupling_scale`` is the per-axis optomechanical coupling magnitude
    g_max (rad/s) for a particle at the ideal standing-wave position and at
    tweezer power ``ref_power``. ``length`` is stored as metadata only.
    """

    linewidth: float = TWO_PI * 600e3
    detuning: float = TWO_PI * 1.2e6
    wavelength: float = 1550e-9
    coupling_scale: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ref_power: float = 0.130
    length: float | None = 9.6e-3

    def scale(self, axis: str) -> float:
        return self.coupling_scale[axis_index(axis)]


@dataclass(frozen=True)
class NoiseSpec:
    """Bath and detection parameters.

    ``temperature`` sets the thermal force on each mechanical mode (photon
    recoil is folded into it). ``imprint`` weights the direct readout of each
    axis in the heterodyne signal; it has no back-action. ``detection_floor``
    is white detection noise relative to the peak height of a bare thermal
    mode.
    """

    temperature: float = 300.0
    imprint: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cavity_occupation: float = 0.0
    detection_floor: float = 1e-4


@dataclass(frozen=True)
class StandingWavePhase:
    """Distance to the nearest intensity maximum, expressed as a phase in [0, pi/2]."""

    phase: float

    def __post_init__(self):
        if not (0.0 <= self.phase <= math.pi / 2 + 1e-12):
            raise ConfigError([("phase", f"must lie in [0, pi/2], got {self.phase}")])


@dataclass(frozen=True)
class SystemConfig:
    """A validated set of particles, cavity and noise parameters."""

    particles: tuple[ParticleSpec, ...]
    cavity: CavitySpec
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    distance: float = 0.0
    warnings: tuple[str, ...] = ()

    def replace_particle(self, index: int, **changes) -> "SystemConfig":
        particles = list(self.particles)
        particles[index] = replace(particles[index], **changes)
        return validate_config(particles, self.cavity, self.noise)

    def with_cavity(self, **changes) -> "SystemConfig":
        return validate_config(self.particles, replace(self.cavity, **changes), self.noise)

    def phases(self) -> list[StandingWavePhase]:
        return [phase_from_position(p.position, self.cavity.wavelength) for p in self.particles]


def mass_from_spec(p: ParticleSpec) -> float:
    """Mass of a homogeneous sphere."""
    errors = []
    if not p.radius > 0:
        errors.append(("radius", "must be > 0"))
    if not p.density > 0:
        errors.append(("density", "must be > 0"))
    if errors:
        raise ConfigError(errors)
    return 4.0 / 3.0 * math.pi * p.radius**3 * p.density


def phase_from_position(y: float, wavelength: float) -> StandingWavePhase:
    """Fold ``2*pi*y/wavelength`` into [0, pi/2].

    The intensity cos^2(2*pi*y/wavelength) repeats every half wavelength and
    is mirror symmetric about each maximum, so the phase is taken modulo pi
    and reflected about pi/2.
    """
    if not wavelength > 0:
        raise ConfigError([("wavelength", "must be > 0")])
    theta = math.fmod(TWO_PI * y / wavelength, math.pi)
    theta = abs(theta)
    if theta > math.pi / 2:
        theta = math.pi - theta
    return StandingWavePhase(min(max(theta, 0.0), math.pi / 2))


def mech_freq_from_power(omega_ref, power, power_ref):
    """Scale a trap frequency with tweezer power, Omega proportional to sqrt(P)."""
    power = np.asarray(power, dtype=float)
    if np.any(power <= 0) or not power_ref > 0:
        raise ConfigError([("power", "tweezer powers must be > 0")])
    out = omega_ref * np.sqrt(power / power_ref)
    return float(out) if out.ndim == 0 else out


def _check_particle(i: int, p: ParticleSpec) -> list[tuple[str, str]]:
    pre = f"particle.{i + 1}"
    errors = []
    if not p.radius > 0:
        errors.append((f"{pre}.radius", "must be > 0"))
    if not p.density > 0:
        errors.append((f"{pre}.density", "must be > 0"))
    if not p.power > 0:
        errors.append((f"{pre}.power", "must be > 0"))
    if not p.gas_damping >= 0:
        errors.append((f"{pre}.gas_damping", "must be >= 0"))
    if int(p.charge) != p.charge:
        errors.append((f"{pre}.charge", "must be an integer number of elementary charges"))
    freqs = tuple(p.mech_freq)
    if len(freqs) != 3:
        errors.append((f"{pre}.mech_freq", "needs exactly three values (x, y, z)"))
    elif any(not f > 0 for f in freqs):
        errors.append((f"{pre}.mech_freq", "all frequencies must be > 0"))
    elif len(set(freqs)) != 3:
        errors.append((f"{pre}.mech_freq", "x, y and z frequencies must be distinct"))
    return errors


def validate_config(
    particles: Sequence[ParticleSpec],
    cavity: CavitySpec,
    noise: NoiseSpec | None = None,
) -> SystemConfig:
    """Check every invariant and attach the inter-particle distance.

    All failures are collected into a single :class:`ConfigError`. If the
    short-range Coulomb or optical-binding estimate exceeds the resolution
    floor set by the bare peak width, a :class:`ShortRangeWarning` is issued
    and recorded on the result.
    """
    noise = noise if noise is not None else NoiseSpec()
    particles = tuple(particles)
    errors: list[tuple[str, str]] = []
    if len(particles) < 1:
        errors.append(("particles", "at least one particle is required"))
    for i, p in enumerate(particles):
        errors.extend(_check_particle(i, p))
    if not cavity.linewidth > 0:
        errors.append(("linewidth", "must be > 0"))
    if not cavity.wavelength > 0:
        errors.append(("wavelength", "must be > 0"))
    if not cavity.ref_power > 0:
        errors.append(("ref_power", "must be > 0"))
    if len(cavity.coupling_scale) != 3 or any(not g >= 0 for g in cavity.coupling_scale):
        errors.append(("coupling_scale", "needs three values >= 0"))
    if not math.isfinite(cavity.detuning):
        errors.append(("detuning", "must be finite"))
    if not noise.temperature >= 0:
        errors.append(("temperature", "must be >= 0"))
    if not noise.detection_floor >= 0:
        errors.append(("detection_floor", "must be >= 0"))
    if len(noise.imprint) != 3:
        errors.append(("imprint", "needs three values (x, y, z)"))

    distance = 0.0
    if len(particles) >= 2:
        distance = abs(particles[0].position - particles[1].position)
        if distance == 0.0:
            errors.append(("position", "particles must not share a position (zero separation)"))
    if errors:
        raise ConfigError(errors)

    notes: list[str] = []
    if len(particles) >= 2:
        notes = _short_range_notes(particles, cavity, distance)
        for note in notes:
            warnings.warn(note, ShortRangeWarning, stacklevel=2)
    return SystemConfig(particles, cavity, noise, distance, tuple(notes))


def _short_range_notes(particles, cavity, distance) -> list[str]:
    from .coupling import coulomb_coupling_estimate, optical_binding_estimate

    p1, p2 = particles[0], particles[1]
    omega = 0.5 * (p1.freq("y") + p2.freq("y"))
    floor = 0.25 * min(p1.gas_damping, p2.gas_damping)
    notes = []
    g_c = coulomb_coupling_estimate(p1, p2, distance, omega)
    g_o = optical_binding_estimate(p1, p2, distance, omega, cavity)
    if floor > 0 and g_c > floor:
        notes.append(
            f"Coulomb coupling estimate {hz(g_c):.3g} Hz exceeds resolution floor {hz(floor):.3g} Hz"
        )
    if floor > 0 and g_o > floor:
        notes.append(
            f"optical binding estimate {hz(g_o):.3g} Hz exceeds resolution floor {hz(floor):.3g} Hz"
        )
    return notes


# -- configuration files ------------------------------------------------------

_FREQ_FIELDS_PARTICLE = ("mech_freq", "gas_damping")
_FREQ_FIELDS_CAVITY = ("linewidth", "detuning", "coupling_scale")


def _to_hz(value):
    if isinstance(value, (tuple, list)):
        return [float(v) / TWO_PI for v in value]
    return float(value) / TWO_PI


def _to_rad(value):
    if isinstance(value, (tuple, list)):
        return tuple(float(v) * TWO_PI for v in value)
    return float(value) * TWO_PI


def config_to_dict(config: SystemConfig) -> dict:
    """Plain-data form of a configuration, frequencies in Hz."""
    out: dict = {"particle": {}}
    for i, p in enumerate(config.particles):
        entry = {}
        for name in ParticleSpec.__dataclass_fields__:
            value = getattr(p, name)
            if name in _FREQ_FIELDS_PARTICLE:
                value = _to_hz(value)
            elif isinstance(value, tuple):
                value = list(value)
            entry[name] = value
        out["particle"][str(i + 1)] = entry
    cav = {}
    for name in CavitySpec.__dataclass_fields__:
        value = getattr(config.cavity, name)
        if value is None:
            continue
        if name in _FREQ_FIELDS_CAVITY:
            value = _to_hz(value)
        elif isinstance(value, tuple):
            value = list(value)
        cav[name] = value
    out["cavity"] = cav
    out["noise"] = {
        name: list(v) if isinstance(v, tuple) else v
        for name, v in ((n, getattr(config.noise, n)) for n in NoiseSpec.__dataclass_fields__)
    }
    return out


def config_from_dict(data: dict) -> SystemConfig:
    """Inverse of :func:`config_to_dict`; unknown keys are validation errors."""
    errors = []
    particles = []
    section = data.get("particle", {})
    for key in sorted(section, key=lambda k: int(k)):
        raw = dict(section[key])
        unknown = set(raw) - set(ParticleSpec.__dataclass_fields__)
        errors.extend((f"particle.{key}.{u}", "unknown field") for u in sorted(unknown))
        kwargs = {}
        for name, value in raw.items():
            if name in unknown:
                continue
            if name in _FREQ_FIELDS_PARTICLE:
                value = _to_rad(value)
            elif isinstance(value, list):
                value = tuple(value)
            kwargs[name] = value
        particles.append(ParticleSpec(**kwargs))
    raw_cav = dict(data.get("cavity", {}))
    unknown = set(raw_cav) - set(CavitySpec.__dataclass_fields__)
    errors.extend((f"cavity.{u}", "unknown field") for u in sorted(unknown))
    cav_kwargs = {}
    for name, value in raw_cav.items():
        if name in unknown:
            continue
        if name in _FREQ_FIELDS_CAVITY:
            value = _to_rad(value)
        elif isinstance(value, list):
            value = tuple(value)
        cav_kwargs[name] = value
    raw_noise = dict(data.get("noise", {}))
    unknown = set(raw_noise) - set(NoiseSpec.__dataclass_fields__)
    errors.extend((f"noise.{u}", "unknown field") for u in sorted(unknown))
    noise_kwargs = {
        k: tuple(v) if isinstance(v, list) else v for k, v in raw_noise.items() if k not in unknown
    }
    if errors:
        raise ConfigError(errors)
    return validate_config(particles, CavitySpec(**cav_kwargs), NoiseSpec(**noise_kwargs))


def load_config(path: str | Path) -> SystemConfig:
    """Read a TOML configuration with sections [particle.N], [cavity], [noise]."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)


def save_config(config: SystemConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(config_to_dict(config), fh)
