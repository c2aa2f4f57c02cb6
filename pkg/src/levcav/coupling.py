"""Closed-form coupling physics.

Single-particle coherent-scattering couplings, the cavity-mediated
particle-particle coupling obtained by eliminating the cavity mode, the
coupled normal modes, the optical spring/damping of each particle and
rough short-range (Coulomb, optical binding) comparison estimates.

Sign conventions: the cavity is detuned by ``Delta = omega_cav - omega_tw``
and for ``Delta > 0`` the optical spring softens the mechanical modes and
adds damping. Frequencies are angular (rad/s).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .params import (
    E_CHARGE,
    EPS0,
    TWO_PI,
    CavitySpec,
    ParticleSpec,
    ShortRangeWarning,
    StandingWavePhase,
    SystemConfig,
    axis_index,
    mass_from_spec,
    phase_from_position,
    validate_config,
)


@dataclass(frozen=True)
class OptoCoupling:
    """Coupling g_{i,mu} (rad/s) of one particle's mode ``axis`` to the cavity."""

    g: complex
    axis: str = "y"


@dataclass(frozen=True)
class EffectiveCoupling:
    """Cavity-mediated coupling G_{mu,mu} (rad/s) between two particles."""

    G: complex
    axis: str = "y"


@dataclass(frozen=True)
class NormalModes:
    lambda_minus: np.ndarray | float
    lambda_plus: np.ndarray | float

    @property
    def splitting(self):
        return self.lambda_plus - self.lambda_minus


@dataclass(frozen=True)
class SelfEnergy:
    """Optical spring shift (added to the bare frequency) and optical damping rate."""

    shift: np.ndarray | float
    damping: np.ndarray | float


def _g(value) -> complex:
    return value.g if isinstance(value, OptoCoupling) else value


def _G(value):
    return value.G if isinstance(value, EffectiveCoupling) else value


def single_particle_coupling(
    phi: StandingWavePhase | float, axis: str, power, cavity: CavitySpec
) -> OptoCoupling:
    """Coherent-scattering coupling at standing-wave phase ``phi``.

    Transverse axes (x, y) scale as sin(phi), the longitudinal z axis as
    cos(phi); all scale as sqrt(P / P_ref).
    """
    phase = phi.phase if isinstance(phi, StandingWavePhase) else float(phi)
    trig = math.cos(phase) if axis == "z" else math.sin(phase)
    axis_index(axis)
    g = cavity.scale(axis) * np.sqrt(np.asarray(power, float) / cavity.ref_power) * trig
    return OptoCoupling(float(g) if np.ndim(g) == 0 else g, axis)


def particle_coupling(particle: ParticleSpec, axis: str, cavity: CavitySpec, power=None) -> OptoCoupling:
    phi = phase_from_position(particle.position, cavity.wavelength)
    return single_particle_coupling(phi, axis, particle.power if power is None else power, cavity)


def effective_coupling(g1, g2, omega, cavity: CavitySpec) -> EffectiveCoupling:
    """Cavity-mediated coupling between two near-degenerate modes at ``omega``.

    G = g1 g2* / ((Delta + Omega) + i kappa/2) + g1* g2 / ((Delta - Omega) - i kappa/2)

    Works elementwise on arrays.
    """
    a, b = _g(g1), _g(g2)
    half = 0.5 * cavity.linewidth
    delta = cavity.detuning
    G = a * np.conj(b) / ((delta + omega) + 1j * half) + np.conj(a) * b / ((delta - omega) - 1j * half)
    axis = g1.axis if isinstance(g1, OptoCoupling) else "y"
    return EffectiveCoupling(complex(G) if np.ndim(G) == 0 else G, axis)


def cavity_response(omega, cavity: CavitySpec):
    """Mechanical self-energy per unit |g|^2 at frequency ``omega``."""
    half = 0.5 * cavity.linewidth
    delta = cavity.detuning
    return 1.0 / ((delta + omega) + 1j * half) + 1.0 / ((delta - omega) - 1j * half)


def self_energy(g, omega, cavity: CavitySpec) -> SelfEnergy:
    """Optical spring shift and damping of a single mode.

    With Sigma = |g|^2 * cavity_response(omega) the shifted frequency is
    ``omega + shift`` with ``shift = -Re Sigma`` and the added energy damping
    is ``2 Im Sigma``; both signs follow from the full linear model.
    """
    sigma = np.abs(_g(g)) ** 2 * cavity_response(omega, cavity)
    shift, damping = -np.real(sigma), 2.0 * np.imag(sigma)
    if np.ndim(sigma) == 0:
        shift, damping = float(shift), float(damping)
    return SelfEnergy(shift, damping)


def normal_mode_frequencies(omega1, omega2, G) -> NormalModes:
    """Normal modes of two coupled modes, lambda = mean +- sqrt(delta^2/4 + |G|^2).

    ``omega1`` and ``omega2`` should already include the optical spring shift.
    """
    omega1 = np.asarray(omega1, float)
    omega2 = np.asarray(omega2, float)
    mean = 0.5 * (omega1 + omega2)
    root = np.sqrt(0.25 * (omega1 - omega2) ** 2 + np.abs(_G(G)) ** 2)
    lo, hi = mean - root, mean + root
    if lo.ndim == 0:
        return NormalModes(float(lo), float(hi))
    return NormalModes(lo, hi)


def min_splitting(G):
    """Smallest normal-mode gap reached as the bare frequencies are swept: 2|G|."""
    return 2.0 * np.abs(_G(G))


# -- short-range comparison estimates ----------------------------------------

def coulomb_coupling_estimate(p1: ParticleSpec, p2: ParticleSpec, d: float, omega: float) -> float:
    """Coulomb coupling rate q1 q2 / (4 pi eps0 d^3 * 2 m Omega).

    Uses the linearized spring constant of the 1/d interaction and the
    geometric mean of the two masses. Scales as 1/d^3.
    """
    if not d > 0:
        raise ValueError("separation d must be > 0")
    m = math.sqrt(mass_from_spec(p1) * mass_from_spec(p2))
    k = p1.charge * p2.charge * E_CHARGE**2 / (4.0 * math.pi * EPS0 * d**3)
    return k / (2.0 * m * omega)


# Reference point for the optical-binding amplitude: two default particles
# (75 nm radius, 1850 kg/m^3, 130 mW) with Omega/2pi = 78 kHz at d = 3.5 * 1550 nm
# give 0.14 kHz.
_OB_REF_RADIUS = 75e-9
_OB_REF_WAVELENGTH = 1550e-9
_OB_REF_MASS = 4.0 / 3.0 * math.pi * _OB_REF_RADIUS**3 * 1850.0
_OB_CONSTANT = (
    TWO_PI * 0.14e3 * 2.0 * _OB_REF_MASS * (TWO_PI * 78e3) * (3.5 * _OB_REF_WAVELENGTH) / 0.130
)


def optical_binding_estimate(
    p1: ParticleSpec, p2: ParticleSpec, d: float, omega: float, cavity: CavitySpec
) -> float:
    """Envelope of the free-space optical-binding coupling rate, scaling as 1/d.

    The spring constant scales with the product of the polarizabilities
    (radius^3 each), the geometric-mean tweezer power and k^2; the amplitude
    is a single calibrated constant.
    """
    if not d > 0:
        raise ValueError("separation d must be > 0")
    m = math.sqrt(mass_from_spec(p1) * mass_from_spec(p2))
    size = (p1.radius * p2.radius / _OB_REF_RADIUS**2) ** 3
    k_ratio = (_OB_REF_WAVELENGTH / cavity.wavelength) ** 2
    stiffness = _OB_CONSTANT * size * k_ratio * math.sqrt(p1.power * p2.power) / d
    return stiffness / (2.0 * m * omega)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """Closed-form sweep of one control variable.

    ``G_y`` is the complex y-axis coupling; splittings are 2|G| per axis.
    """

    variable: str
    values: np.ndarray
    splitting_y: np.ndarray
    splitting_z: np.ndarray
    G_y: np.ndarray

    def rows(self):
        return list(zip(self.values, self.splitting_y, self.splitting_z, self.G_y))


def pair_couplings(config: SystemConfig, axis: str, positions=None, powers=None, cavity=None):
    """(g1, g2, Omega) for the first two particles of ``config``."""
    p1, p2 = config.particles[0], config.particles[1]
    y1, y2 = positions if positions is not None else (p1.position, p2.position)
    P1, P2 = powers if powers is not None else (p1.power, p2.power)
    cav = cavity or config.cavity
    g1 = single_particle_coupling(phase_from_position(y1, cav.wavelength), axis, P1, cav)
    g2 = single_particle_coupling(phase_from_position(y2, cav.wavelength), axis, P2, cav)
    omega = 0.5 * (p1.freq_at(axis, P1) + p2.freq_at(axis, P2))
    return g1, g2, omega


def _pair_G(config, axis, positions=None, cavity=None):
    g1, g2, omega = pair_couplings(config, axis, positions, cavity=cavity)
    return effective_coupling(g1, g2, omega, cavity or config.cavity).G


def detuning_sweep(config: SystemConfig, detunings: Sequence[float]) -> SweepResult:
    """2|G| versus cavity detuning at the configured particle positions."""
    from dataclasses import replace

    values = np.asarray(detunings, float)
    Gy, Gz = [], []
    for delta in values:
        cav = replace(config.cavity, detuning=float(delta))
        Gy.append(_pair_G(config, "y", cavity=cav))
        Gz.append(_pair_G(config, "z", cavity=cav))
    Gy, Gz = np.asarray(Gy, complex), np.asarray(Gz, complex)
    return SweepResult("detuning", values, min_splitting(Gy), min_splitting(Gz), Gy)


def _nearest_node_check(y, wavelength):
    phi = phase_from_position(y, wavelength).phase
    if abs(phi - math.pi / 2) > 1e-9:
        raise ValueError(f"particle 1 must sit at a cavity node (phase pi/2), got phase {phi:.6g}")


def distance_sweep(config: SystemConfig, distances: Sequence[float]) -> SweepResult:
    """2|G| with particle 1 held at a node and particle 2 at ``y1 + d``."""
    y1 = config.particles[0].position
    _nearest_node_check(y1, config.cavity.wavelength)
    values = np.asarray(distances, float)
    Gy = np.array([_pair_G(config, "y", (y1, y1 + d)) for d in values], complex)
    Gz = np.array([_pair_G(config, "z", (y1, y1 + d)) for d in values], complex)
    return SweepResult("distance", values, min_splitting(Gy), min_splitting(Gz), Gy)


def phase_sweep(config: SystemConfig, phases: Sequence[float], separation: float | None = None) -> SweepResult:
    """2|G_yy| and 2|G_zz| with both particles at the same standing-wave phase.

    The pair keeps a separation that is an integer number of wavelengths
    (default four) so that both particles see the same phase.
    """
    lam = config.cavity.wavelength
    sep = 4.0 * lam if separation is None else separation
    turns = sep / lam
    if abs(turns - round(turns)) > 1e-9:
        raise ValueError("separation must be an integer multiple of the wavelength")
    values = np.asarray(phases, float)
    Gy, Gz = [], []
    for phi in values:
        y1 = phi * lam / TWO_PI
        Gy.append(_pair_G(config, "y", (y1, y1 + sep)))
        Gz.append(_pair_G(config, "z", (y1, y1 + sep)))
    Gy, Gz = np.asarray(Gy, complex), np.asarray(Gz, complex)
    return SweepResult("phase", values, min_splitting(Gy), min_splitting(Gz), Gy)


@dataclass(frozen=True)
class SweepBand:
    """Pointwise range of a sweep over parameter uncertainties."""

    nominal: SweepResult
    y_low: np.ndarray
    y_high: np.ndarray
    z_low: np.ndarray
    z_high: np.ndarray


def sweep_band(sweep, config: SystemConfig, values: Sequence[float], ranges: dict, **kwargs) -> SweepBand:
    """Envelope of ``sweep(config, values)`` over user-supplied parameter ranges.

    ``ranges`` maps cavity fields (``linewidth``, ``detuning``, ``wavelength``,
    ``ref_power``) or ``"power"`` (both tweezers) to ``(low, high)``. The sweep
    is evaluated at the nominal point and at every corner of the box, which
    bounds the result when it is monotone in each parameter.
    """
    import itertools
    from dataclasses import replace

    nominal = sweep(config, values, **kwargs)
    names = sorted(ranges)
    ys, zs = [nominal.splitting_y], [nominal.splitting_z]
    for corner in itertools.product(*(ranges[n] for n in names)):
        changes = dict(zip(names, corner))
        power = changes.pop("power", None)
        particles = list(config.particles)
        if power is not None:
            particles = [replace(p, power=float(power)) for p in particles]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShortRangeWarning)
            cfg = validate_config(particles, replace(config.cavity, **changes), config.noise)
        res = sweep(cfg, values, **kwargs)
        ys.append(res.splitting_y)
        zs.append(res.splitting_z)
    ys, zs = np.array(ys), np.array(zs)
    return SweepBand(nominal, ys.min(0), ys.max(0), zs.min(0), zs.max(0))


def calibrate_coupling_scale(
    config: SystemConfig,
    axis: str,
    target_splitting: float,
    detuning: float | None = None,
) -> float:
    """g_max along ``axis`` that makes 2|G| equal ``target_splitting``.

    Evaluated at the configured positions and powers; G is quadratic in
    g_max so the solution is a square root.
    """
    from dataclasses import replace

    scale = list(config.cavity.coupling_scale)
    scale[axis_index(axis)] = 1.0
    cav = replace(
        config.cavity,
        coupling_scale=tuple(scale),
        detuning=config.cavity.detuning if detuning is None else detuning,
    )
    unit = min_splitting(_pair_G(config, axis, cavity=cav))
    if unit == 0:
        raise ValueError(f"{axis} coupling vanishes at the configured positions; cannot calibrate")
    return math.sqrt(target_splitting / unit)


# -- avoided-crossing forward model ------------------------------------------

@dataclass(frozen=True)
class CrossingTracks:
    """Normal-mode tracks of two coupled modes along a power ramp.

    Arrays run over ramp steps. ``width_*`` are energy damping rates (peak
    FWHM in rad/s); ``weight1_*`` is particle 1's share of each normal mode.
    """

    lambda_minus: np.ndarray
    lambda_plus: np.ndarray
    width_minus: np.ndarray
    width_plus: np.ndarray
    weight1_minus: np.ndarray
    weight1_plus: np.ndarray
    G: np.ndarray
    shifted1: np.ndarray
    shifted2: np.ndarray


def crossing_model(
    omega1,
    omega2,
    ratio1,
    ratio2,
    g1: float,
    g2: float,
    cavity: CavitySpec,
    gamma1: float = 0.0,
    gamma2: float = 0.0,
    exact: bool = True,
) -> CrossingTracks:
    """Normal modes along a ramp for couplings ``g1``, ``g2`` given at reference power.

    ``omega1``/``omega2`` are bare frequencies per step and ``ratio*`` the
    powers relative to the cavity reference power, so the instantaneous
    couplings are ``g_i * sqrt(ratio_i)``.

    With ``exact`` the tracks are the two mechanical eigenvalues of the
    linearized particle-cavity drift matrix, without rotating-wave or
    adiabatic approximations; widths are twice the decay rates. Otherwise
    each mode is shifted by its own optical spring, the pair is coupled with
    G evaluated at the mean frequency, and the widths are the
    participation-weighted damping rates. ``G``, ``shifted1`` and
    ``shifted2`` always hold the effective-model values.
    """
    omega1 = np.asarray(omega1, float)
    omega2 = np.asarray(omega2, float)
    c1 = g1 * np.sqrt(np.asarray(ratio1, float))
    c2 = g2 * np.sqrt(np.asarray(ratio2, float))
    se1 = self_energy(c1, omega1, cavity)
    se2 = self_energy(c2, omega2, cavity)
    w1 = omega1 + se1.shift
    w2 = omega2 + se2.shift
    G = effective_coupling(c1, c2, 0.5 * (omega1 + omega2), cavity).G
    if exact:
        lm, lp, wm, wp, am, ap = _exact_pair_modes(omega1, omega2, c1, c2, gamma1, gamma2, cavity)
        return CrossingTracks(
            *(np.atleast_1d(v) for v in (lm, lp, wm, wp, am, ap, G, w1, w2))
        )
    modes = normal_mode_frequencies(w1, w2, G)
    diff = 0.5 * (w1 - w2)
    root = np.sqrt(diff**2 + np.abs(G) ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(root > 0, diff / np.where(root > 0, root, 1.0), 0.0)
    weight1_plus = 0.5 * (1.0 + share)
    weight1_minus = 1.0 - weight1_plus
    damp1 = gamma1 + se1.damping
    damp2 = gamma2 + se2.damping
    width_plus = weight1_plus * damp1 + (1.0 - weight1_plus) * damp2
    width_minus = weight1_minus * damp1 + (1.0 - weight1_minus) * damp2
    return CrossingTracks(
        np.atleast_1d(modes.lambda_minus),
        np.atleast_1d(modes.lambda_plus),
        np.atleast_1d(width_minus),
        np.atleast_1d(width_plus),
        np.atleast_1d(weight1_minus),
        np.atleast_1d(weight1_plus),
        np.atleast_1d(G),
        np.atleast_1d(w1),
        np.atleast_1d(w2),
    )


def _exact_pair_modes(omega1, omega2, c1, c2, gamma1, gamma2, cavity: CavitySpec):
    """Mechanical eigenmodes of the two-particle plus cavity drift matrix, per step.

    State order is (q1, p1, q2, p2, X, Y). The two eigenvalues with positive
    frequency and the largest mechanical weight are the mechanical modes.
    """
    omega1, omega2, c1, c2 = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(v, float)) for v in (omega1, omega2, c1, c2))
    )
    n = omega1.size
    A = np.zeros((n, 6, 6))
    A[:, 0, 1], A[:, 1, 0], A[:, 1, 1] = omega1, -omega1, -gamma1
    A[:, 2, 3], A[:, 3, 2], A[:, 3, 3] = omega2, -omega2, -gamma2
    A[:, 4, 4] = A[:, 5, 5] = -0.5 * cavity.linewidth
    A[:, 4, 5], A[:, 5, 4] = cavity.detuning, -cavity.detuning
    A[:, 1, 4], A[:, 5, 0] = -2.0 * c1, -2.0 * c1
    A[:, 3, 4], A[:, 5, 2] = -2.0 * c2, -2.0 * c2
    ev, vec = np.linalg.eig(A)
    power = np.abs(vec) ** 2
    mech = power[:, :4, :].sum(axis=1) / power.sum(axis=1)
    score = np.where(ev.imag > 0, mech, -1.0)
    pick = np.argsort(-score, axis=1)[:, :2]
    rows = np.arange(n)[:, None]
    lam = ev[rows, pick]
    share1 = power[rows, 0, pick] + power[rows, 1, pick]
    share1 = share1 / (share1 + power[rows, 2, pick] + power[rows, 3, pick])
    order = np.argsort(lam.imag, axis=1)
    lam = np.take_along_axis(lam, order, axis=1)
    share1 = np.take_along_axis(share1, order, axis=1)
    return (
        lam[:, 0].imag, lam[:, 1].imag, -2.0 * lam[:, 0].real, -2.0 * lam[:, 1].real,
        share1[:, 0], share1[:, 1],
    )


# -- CSV ----------------------------------------------------------------------

SWEEP_HEADER = ("sweep_variable", "value_si", "splitting_hz_y", "splitting_hz_z", "G_real", "G_imag")


def _fmt(x: float) -> str:
    # 12 significant digits survive the Hz <-> rad/s conversion on re-reading,
    # so read/write cycles reproduce the file byte for byte
    return f"{float(x):.12g}"


def sweep_rows(result: SweepResult) -> list[list[str]]:
    rows = []
    for value, sy, sz, G in result.rows():
        rows.append(
            [result.variable, _fmt(value), _fmt(sy / TWO_PI), _fmt(sz / TWO_PI),
             _fmt(G.real / TWO_PI), _fmt(G.imag / TWO_PI)]
        )
    return rows


def write_sweep_csv(result: SweepResult, path: str | Path, extra: dict | None = None) -> None:
    """One row per grid point; splittings and G (y axis) in Hz."""
    header = list(SWEEP_HEADER)
    rows = sweep_rows(result)
    if extra:
        header += list(extra)
        for i, row in enumerate(rows):
            row += [str(extra[k][i]) for k in extra]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_sweep_csv(path: str | Path) -> SweepResult:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return SweepResult("", np.array([]), np.array([]), np.array([]), np.array([], complex))
    values = np.array([float(r["value_si"]) for r in rows])
    sy = np.array([float(r["splitting_hz_y"]) for r in rows]) * TWO_PI
    sz = np.array([float(r["splitting_hz_z"]) for r in rows]) * TWO_PI
    G = np.array([complex(float(r["G_real"]), float(r["G_imag"])) for r in rows]) * TWO_PI
    return SweepResult(rows[0]["sweep_variable"], values, sy, sz, G)
