"""Linearized Langevin dynamics of the particles' modes along one axis coupled to the cavity.

State ordering is ``q1, p1, q2, p2, ..., X, Y``: dimensionless mechanical
quadratures (position in units of sqrt(hbar / (m Omega))) followed by the
cavity quadratures. In the frame rotating at the tweezer frequency

    dq_i/dt = Omega_i p_i
    dp_i/dt = -Omega_i q_i - gamma_i p_i - 2 g_i X + thermal force
    dX/dt   = -kappa/2 X + Delta Y + input noise
    dY/dt   = -Delta X - kappa/2 Y - 2 sum_i g_i q_i + input noise

which is the classical form of H = Delta a^+a + sum Omega_i b_i^+b_i
+ sum g_i (a + a^+)(b_i + b_i^+).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, signal

from .coupling import effective_coupling, particle_coupling, self_energy
from .params import HBAR, KB, TWO_PI, CavitySpec, SystemConfig, mass_from_spec


class StabilityError(RuntimeError):
    """The drift matrix has an eigenvalue with positive real part."""


class StepSizeError(ValueError):
    """The integration step does not resolve the fastest time scale."""


@dataclass(frozen=True)
class StateSpaceModel:
    drift: np.ndarray
    diffusion: np.ndarray
    labels: tuple[str, ...]
    axis: str
    mech_freqs: np.ndarray
    dampings: np.ndarray
    couplings: np.ndarray
    cavity: CavitySpec | None
    position_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_particles(self) -> int:
        return len(self.mech_freqs)

    @property
    def has_cavity(self) -> bool:
        return self.cavity is not None

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class PSDCurve:
    """Power spectral density per Hz on an angular-frequency grid.

    One-sided for real observables, two-sided for complex ones.
    """

    frequencies: np.ndarray
    values: np.ndarray
    onesided: bool = True


@dataclass(frozen=True)
class TimeTrace:
    dt: float
    samples: np.ndarray
    labels: tuple[str, ...]
    seed: int | None

    def column(self, label: str) -> np.ndarray:
        return self.samples[:, self.labels.index(label)]


@dataclass(frozen=True)
class Observable:
    """Detection channels; the detected PSD is the sum of the channel PSDs."""

    channels: np.ndarray
    names: tuple[str, ...]


def build_state_space(
    config: SystemConfig,
    axis: str,
    powers=None,
    include_cavity: bool = True,
    check_stability: bool = True,
) -> StateSpaceModel:
    """Drift and diffusion matrices for the modes along ``axis``.

    ``powers`` overrides the tweezer powers (one per particle); frequencies
    and couplings follow the sqrt(P) law. Without the cavity the result is a
    set of independent damped oscillators.
    """
    particles = config.particles
    cavity = config.cavity
    n = len(particles)
    if powers is None:
        powers = [p.power for p in particles]
    omegas = np.array([p.freq_at(axis, P) for p, P in zip(particles, powers)], float)
    gammas = np.array([p.gas_damping for p in particles], float)
    if include_cavity:
        gs = np.array([particle_coupling(p, axis, cavity, P).g for p, P in zip(particles, powers)], float)
    else:
        gs = np.zeros(n)
    occupations = KB * config.noise.temperature / (HBAR * omegas)

    dim = 2 * n + (2 if include_cavity else 0)
    A = np.zeros((dim, dim))
    D = np.zeros((dim, dim))
    labels = []
    for i in range(n):
        q, p = 2 * i, 2 * i + 1
        labels += [f"q{i + 1}", f"p{i + 1}"]
        A[q, p] = omegas[i]
        A[p, q] = -omegas[i]
        A[p, p] = -gammas[i]
        D[p, p] = 2.0 * gammas[i] * occupations[i]
    if include_cavity:
        X, Y = 2 * n, 2 * n + 1
        labels += ["X", "Y"]
        half = 0.5 * cavity.linewidth
        A[X, X] = A[Y, Y] = -half
        A[X, Y] = cavity.detuning
        A[Y, X] = -cavity.detuning
        for i in range(n):
            A[2 * i + 1, X] = -2.0 * gs[i]
            A[Y, 2 * i] = -2.0 * gs[i]
        D[X, X] = D[Y, Y] = cavity.linewidth * (config.noise.cavity_occupation + 0.5)
    scales = np.array(
        [math.sqrt(HBAR / (mass_from_spec(p) * w)) for p, w in zip(particles, omegas)]
    )
    model = StateSpaceModel(
        A, D, tuple(labels), axis, omegas, gammas, gs, cavity if include_cavity else None, scales
    )
    if check_stability:
        ev = np.linalg.eigvals(A)
        worst = ev[np.argmax(ev.real)]
        if worst.real > 1e-9 * np.max(np.abs(ev)):
            raise StabilityError(f"unstable drift matrix: eigenvalue {worst:.6g} has positive real part")
    return model


def eigenfrequencies(model: StateSpaceModel) -> list[tuple[float, float]]:
    """(frequency, energy damping rate) of every oscillatory eigenmode, ascending."""
    ev = np.linalg.eigvals(model.drift)
    ev = ev[ev.imag > 0]
    out = sorted((float(e.imag), float(-2.0 * e.real)) for e in ev)
    return out


def mechanical_modes(model: StateSpaceModel) -> list[tuple[float, float]]:
    """Eigenmodes whose eigenvector lives mostly on the mechanical quadratures."""
    ev, vecs = np.linalg.eig(model.drift)
    nm = 2 * model.n_particles
    out = []
    for e, v in zip(ev, vecs.T):
        if e.imag <= 0:
            continue
        w = np.abs(v) ** 2
        if w[:nm].sum() > 0.5 * w.sum():
            out.append((float(e.imag), float(-2.0 * e.real)))
    return sorted(out)


def stationary_covariance(model: StateSpaceModel) -> np.ndarray:
    """Solution of A C + C A^T + D = 0."""
    C = linalg.solve_continuous_lyapunov(model.drift, -model.diffusion)
    return 0.5 * (C + C.T)


def _resolvent_rows(model: StateSpaceModel, rows: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """rows @ (i w I - A)^-1 for every w in grid; shape (len(grid), k, n)."""
    A = model.drift
    n = A.shape[0]
    eye = np.eye(n)
    mats = 1j * grid[:, None, None] * eye[None] - A[None]
    rhs = np.broadcast_to(rows.T.astype(complex), (len(grid),) + rows.T.shape)
    sol = np.linalg.solve(np.transpose(mats, (0, 2, 1)), rhs)
    return np.transpose(sol, (0, 2, 1))


def spectral_density_matrix(model: StateSpaceModel, grid) -> np.ndarray:
    """Two-sided S(w) = M D M^H with M = (i w I - A)^-1, shape (len(grid), n, n)."""
    grid = np.asarray(grid, float)
    n = model.drift.shape[0]
    M = _resolvent_rows(model, np.eye(n), grid)
    return M @ model.diffusion @ np.conj(np.transpose(M, (0, 2, 1)))


def psd_frequency_domain(model: StateSpaceModel, observable, grid) -> PSDCurve:
    """PSD of a linear observable of the state.

    ``observable`` is a state-vector of weights, a label, or an
    :class:`Observable` (channel PSDs are summed). Real observables give a
    one-sided PSD on a non-negative grid; complex ones a two-sided PSD.
    """
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    if isinstance(observable, str):
        rows = np.eye(len(model.labels))[[model.index(observable)]]
    elif isinstance(observable, Observable):
        rows = np.atleast_2d(observable.channels)
    else:
        rows = np.atleast_2d(np.asarray(observable))
    complex_obs = np.iscomplexobj(rows) and np.any(np.imag(rows) != 0)
    U = _resolvent_rows(model, rows, grid)
    vals = np.einsum("wki,ij,wkj->w", U, model.diffusion, np.conj(U)).real
    vals = np.maximum(vals, 0.0)
    if not complex_obs:
        if np.any(grid < 0):
            raise ValueError("one-sided PSD of a real observable needs a non-negative grid")
        vals = 2.0 * vals
    return PSDCurve(grid, vals, onesided=not complex_obs)


def heterodyne_signal(
    model: StateSpaceModel, imprint: float = 1.0, cavity_weight: float = 1.0
) -> Observable:
    """Detection channels of the heterodyne measurement.

    One channel per particle carries its direct motional imprint (no
    back-action), plus one channel for the field leaking out of the cavity.
    Channels are conjugated amplitudes so anti-Stokes sidebands land at
    positive frequency once the tweezer frequency is placed at zero.
    """
    n = len(model.labels)
    rows, names = [], []
    s = 1.0 / math.sqrt(2.0)
    for i in range(model.n_particles):
        row = np.zeros(n, complex)
        row[2 * i] = imprint * s
        row[2 * i + 1] = -1j * imprint * s
        rows.append(row)
        names.append(f"particle{i + 1}")
    if model.has_cavity and cavity_weight:
        row = np.zeros(n, complex)
        row[model.index("X")] = cavity_weight * s
        row[model.index("Y")] = -1j * cavity_weight * s
        rows.append(row)
        names.append("cavity")
    return Observable(np.array(rows), tuple(names))


# -- time domain --------------------------------------------------------------

def max_step(model: StateSpaceModel) -> float:
    """Largest step allowed by the 0.1 * min(2 pi / Omega_max, 1 / kappa) rule."""
    ev = np.linalg.eigvals(model.drift)
    omega_max = max(float(np.max(np.abs(ev.imag))), float(np.max(model.mech_freqs)))
    limit = TWO_PI / omega_max
    if model.has_cavity:
        limit = min(limit, 1.0 / model.cavity.linewidth)
    return 0.1 * limit


def discretize(A: np.ndarray, D: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact one-step propagator F = exp(A dt) and noise covariance Q.

    Van Loan's block exponential on a short sub-step, then doubled with
    Q(2h) = Q(h) + F(h) Q(h) F(h)^T; the block form alone overflows once
    the fastest decay times dt is large.
    """
    n = A.shape[0]
    norm = float(np.max(np.abs(np.linalg.eigvals(A)))) * dt
    halvings = max(0, math.ceil(math.log2(norm))) if norm > 1.0 else 0
    h = dt / 2**halvings
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = D
    M[n:, n:] = A.T
    E = linalg.expm(M * h)
    F = E[n:, n:].T
    Q = F @ E[:n, n:]
    for _ in range(halvings):
        Q = Q + F @ Q @ F.T
        F = F @ F
    return F, 0.5 * (Q + Q.T)


def _noise_factor(Q: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(Q)
    return U * np.sqrt(np.clip(w, 0.0, None))


class _Propagator:
    """Runs x_{k+1} = F x_k + w_k in the eigenbasis of F with a linear filter per mode."""

    def __init__(self, F: np.ndarray, Q: np.ndarray):
        self.F = F
        self.L = _noise_factor(Q)
        lam, V = np.linalg.eig(F)
        self.ok = np.linalg.cond(V) < 1e10
        self.lam, self.V = lam, V
        if self.ok:
            self.Vinv = np.linalg.inv(V)

    def run(self, x0: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """States x_1..x_N for standard-normal draws of shape (N, n)."""
        W = normals @ self.L.T
        if not self.ok:
            out = np.empty_like(W)
            x = x0.copy()
            for k in range(len(W)):
                x = self.F @ x + W[k]
                out[k] = x
            return out
        U = W @ self.Vinv.T
        z0 = self.Vinv @ x0
        Z = np.empty(U.shape, complex)
        for j, lam in enumerate(self.lam):
            Z[:, j], _ = signal.lfilter([1.0], [1.0, -lam], U[:, j], zi=[lam * z0[j]])
        return (Z @ self.V.T).real


def integrate_sde(
    model: StateSpaceModel,
    duration: float,
    dt: float,
    seed: int | None = None,
    decimate: int = 1,
    x0=None,
    rng: np.random.Generator | None = None,
) -> TimeTrace:
    """Sample the linear SDE with its exact discretization.

    ``dt`` must satisfy the step-size rule of :func:`max_step`. Recording
    every ``decimate``-th state uses the exact propagator over
    ``decimate * dt``, which is identical in distribution to stepping and
    discarding. Without ``x0`` the initial state is drawn from the stationary
    distribution. The same ``seed`` reproduces the trace bit for bit.
    """
    limit = max_step(model)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt = {dt:.3g} s exceeds the allowed step {limit:.3g} s")
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    step = dt * decimate
    n_out = int(round(duration / step))
    F, Q = discretize(model.drift, model.diffusion, step)
    if x0 is None:
        C = stationary_covariance(model)
        x0 = _noise_factor(C) @ rng.standard_normal(len(C))
    x0 = np.asarray(x0, float)
    prop = _Propagator(F, Q)
    states = prop.run(x0, rng.standard_normal((max(n_out - 1, 0), len(x0))))
    samples = np.vstack([x0[None], states])
    if not np.all(np.isfinite(samples)):
        raise FloatingPointError("non-finite samples in SDE integration")
    return TimeTrace(step, samples, model.labels, seed)


# -- effective-model reduction -----------------------------------------------

@dataclass(frozen=True)
class Reduction:
    shifted: np.ndarray
    G: complex
    adiabatic: bool
    warning: str | None = None


def effective_model_reduction(model: StateSpaceModel) -> Reduction:
    """Shifted frequencies and cavity-mediated G predicted for ``model``.

    The reduction assumes the cavity responds fast compared with the
    mechanics; a warning is attached when kappa or |Delta| is below five
    times the largest mechanical frequency.
    """
    if not model.has_cavity:
        return Reduction(model.mech_freqs.copy(), 0j, True)
    cav = model.cavity
    omegas = model.mech_freqs
    shifted = np.array([w + self_energy(g, w, cav).shift for g, w in zip(model.couplings, omegas)])
    G = 0j
    if model.n_particles >= 2:
        G = effective_coupling(model.couplings[0], model.couplings[1], 0.5 * (omegas[0] + omegas[1]), cav).G
    wmax = float(np.max(omegas))
    adiabatic = max(cav.linewidth, abs(cav.detuning)) >= 5.0 * wmax
    warning = None
    if not adiabatic:
        warning = "cavity not much faster than the mechanics; reduction is approximate"
    return Reduction(shifted, complex(G), adiabatic, warning)


def mechanical_gap(model: StateSpaceModel) -> float:
    """Difference of the two mechanical eigenfrequencies of a two-particle model."""
    modes = mechanical_modes(model)
    if len(modes) != 2:
        raise ValueError(f"expected two mechanical modes, found {len(modes)}")
    return modes[1][0] - modes[0][0]


# -- file formats -------------------------------------------------------------

_TRACE_MAGIC = b"LVCTRACE"


def write_time_trace(trace: TimeTrace, path: str | Path) -> None:
    """Binary columnar file: magic, uint32 header length, JSON header, float64 columns (LE)."""
    header = json.dumps(
        {
            "dt": trace.dt,
            "labels": list(trace.labels),
            "seed": trace.seed,
            "n_samples": int(trace.samples.shape[0]),
            "dtype": "<f8",
            "layout": "columnar",
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_TRACE_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(trace.samples.T, dtype="<f8").tobytes())


def read_time_trace(path: str | Path) -> TimeTrace:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_TRACE_MAGIC):
        raise ValueError(f"{path}: not a time-trace file")
    off = len(_TRACE_MAGIC)
    (hlen,) = struct.unpack("<I", blob[off : off + 4])
    header = json.loads(blob[off + 4 : off + 4 + hlen])
    data = np.frombuffer(blob[off + 4 + hlen :], dtype="<f8")
    cols = data.reshape(len(header["labels"]), header["n_samples"])
    return TimeTrace(header["dt"], cols.T.copy(), tuple(header["labels"]), header["seed"])


def write_psd_csv(curve: PSDCurve, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("frequency_hz,psd_value\n")
        for w, v in zip(curve.frequencies, curve.values):
            fh.write(f"{float(w) / TWO_PI!r},{float(v)!r}\n")
