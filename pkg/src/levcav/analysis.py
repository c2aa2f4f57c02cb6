"""Spectrogram analysis: peaks, tracks, power calibration and avoided-crossing fits.

Only peak positions are fitted. The crossing model has the coupling product
|g1 g2| as its single free parameter (or the two couplings separately when
requested); everything else comes from the configuration and from the
power calibration read off the uncoupled x modes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .coupling import cavity_response, crossing_model, effective_coupling
from .params import TWO_PI, SystemConfig


class CalibrationError(ValueError):
    """The x tracks needed for the power calibration are missing or unusable."""


class FitError(RuntimeError):
    """The avoided-crossing fit failed; ``diagnostics`` says why."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class Peak:
    center: float
    width: float
    height: float
    sigma: float = float("nan")


# -- peaks --------------------------------------------------------------------

def _grid_map(freqs, n):
    if freqs is None:
        return lambda i: np.asarray(i, float), 1.0
    freqs = np.asarray(freqs, float)
    idx = np.arange(n)
    return (lambda i: np.interp(i, idx, freqs)), float(np.median(np.diff(freqs))) if n > 1 else 1.0


def detect_peaks(
    row, min_prominence: float, freqs=None, log: bool = False, min_height: float | None = None
) -> list[Peak]:
    """Local maxima with at least ``min_prominence``; widths at half maximum.

    With ``log`` the prominence is measured in decades. ``min_height``
    rejects maxima below that multiple of the row median. Centers are refined
    by a parabola through the reciprocal of the three top samples, which is
    exact for a Lorentzian on a uniform grid. Units follow ``freqs``, or
    bin indices when it is omitted.
    """
    row = np.asarray(row, float)
    if row.size == 0:
        raise ValueError("empty row")
    data = np.log10(np.clip(row, np.finfo(float).tiny, None)) if log else row
    idx, _ = signal.find_peaks(data, prominence=min_prominence)
    if min_height is not None:
        idx = idx[row[idx] >= min_height * np.median(row)]
    if idx.size == 0:
        return []
    widths = signal.peak_widths(row, idx, rel_height=0.5)[0]
    to_freq, step = _grid_map(freqs, row.size)
    out = []
    for i, w in zip(idx, widths):
        c = float(i)
        if 0 < i < row.size - 1 and np.all(row[i - 1 : i + 2] > 0):
            a, b, d = 1.0 / row[i - 1], 1.0 / row[i], 1.0 / row[i + 1]
            curv = a - 2 * b + d
            if curv > 0:
                c = i + 0.5 * (a - d) / curv
        out.append(Peak(float(to_freq(c)), float(w * step), float(row[i])))
    return out


def _row_model(theta, grid, n):
    c = theta[0:n][:, None]
    logs = np.clip(theta[n:], -300.0, 300.0)
    gam = np.exp(logs[:n])[:, None]
    h = np.exp(logs[n : 2 * n])[:, None]
    b = float(np.exp(logs[2 * n]))
    z = (grid[None] - c) / (0.5 * gam)
    den = 1.0 + z * z
    L = h / den
    m = b + L.sum(axis=0)
    J = np.empty((grid.size, 3 * n + 1))
    J[:, 0:n] = (h * 2 * z / den**2 * (2.0 / gam)).T
    J[:, n : 2 * n] = (h * 2 * z * z / den**2).T
    J[:, 2 * n : 3 * n] = L.T
    J[:, 3 * n] = b
    return m, J


def _fit_row(grid, row, theta0, n, log):
    ok = row > 0
    if log:
        target = np.log(row[ok])
        g = grid[ok]

        def fun(th):
            with np.errstate(all="ignore"):
                r = np.log(_row_model(th, g, n)[0]) - target
            return np.where(np.isfinite(r), r, 1e6)

        def jac(th):
            with np.errstate(all="ignore"):
                m, J = _row_model(th, g, n)
                J = J / m[:, None]
            return np.where(np.isfinite(J), J, 0.0)
    else:
        norm = float(row.max())

        def fun(th):
            return (_row_model(th, grid, n)[0] - row) / norm

        def jac(th):
            return _row_model(th, grid, n)[1] / norm

    try:
        sol = optimize.least_squares(
            fun, theta0, jac=jac, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=300
        )
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(sol.x)):
        return None
    return sol


def _theta(centers, widths, heights, log_floor):
    return np.concatenate([centers, np.log(widths), np.log(heights), [log_floor]])


def refine_peaks(
    freqs, row, peaks: Sequence[Peak], log: bool = True, add_missing: bool = True, reach: float | None = None
) -> list[Peak]:
    """Joint multi-Lorentzian fit of a full row on a constant floor.

    Residuals are taken in log space by default, where Welch estimates have
    row-independent scatter. Center uncertainties come from the fit
    covariance scaled by the reduced chi-square. With ``add_missing``,
    components are added where the data clearly exceed the fit (peaks too
    weak to detect or hidden in an unresolved doublet) as long as each one
    cuts the chi-square substantially.
    With ``reach`` only bins within that many detected widths of a peak enter
    the fit, which is faster but gives up exactness on noise-free rows.
    """
    peaks = list(peaks)
    if not peaks:
        return []
    freqs = np.asarray(freqs, float)
    row = np.asarray(row, float)
    step = float(np.median(np.diff(freqs)))
    if reach is not None:
        near = np.zeros(freqs.size, bool)
        for p in peaks:
            near |= np.abs(freqs - p.center) <= reach * max(p.width, step)
        freqs, row = freqs[near], row[near]
    scale = freqs.mean()
    grid = (freqs - scale) / step
    floor0 = max(float(np.percentile(row, 10)), np.finfo(float).tiny * 1e10)
    n = len(peaks)
    theta0 = _theta(
        [(p.center - scale) / step for p in peaks],
        [max(p.width / step, 0.5) for p in peaks],
        [max(p.height - floor0, p.height * 1e-3) for p in peaks],
        math.log(floor0),
    )
    sol = _fit_row(grid, row, theta0, n, log)
    if sol is None:
        return [Peak(p.center, p.width, p.height, step) for p in peaks]
    if add_missing:
        sol, n = _add_missing(grid, row, sol, n, log)
    theta = sol.x
    r = sol.fun
    dof = max(r.size - theta.size, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.pinv(sol.jac.T @ sol.jac) * s2
        sig = np.sqrt(np.clip(np.diag(cov)[:n], 0.0, None)) * step
    except np.linalg.LinAlgError:
        sig = np.full(n, step)
    out = []
    for k in range(n):
        c = theta[k] * step + scale
        if not freqs[0] <= c <= freqs[-1]:
            continue
        out.append(Peak(float(c), float(math.exp(theta[n + k]) * step), float(math.exp(theta[2 * n + k])), float(sig[k])))
    return out


def _add_missing(grid, row, sol, n, log, threshold: float = 25.0, max_tries: int = 4):
    """Add components where the data stand clearly above the fitted model."""
    ok = row > 0 if log else np.ones(row.size, bool)
    g, data = grid[ok], row[ok]
    for _ in range(max_tries):
        r = sol.fun
        theta = sol.x
        c_old = float(r @ r)
        if c_old / max(r.size - theta.size, 1) < 1e-20:
            break
        excess = -r if log else -r * float(row.max())
        spread = 1.4826 * float(np.median(np.abs(r - np.median(r))))
        idx, _ = signal.find_peaks(excess, height=6.0 * spread if log else 0.0)
        if idx.size == 0:
            break
        i = idx[np.argmax(excess[idx])]
        model = np.exp(np.log(data[i]) + r[i]) if log else data[i] - excess[i]
        width = float(np.median(np.exp(theta[n : 2 * n])))
        height = max(data[i] - model, data[i] * 1e-3)
        cs = np.concatenate([theta[:n], [g[i]]])
        ws = np.concatenate([np.exp(theta[n : 2 * n]), [width]])
        hs = np.concatenate([np.exp(theta[2 * n : 3 * n]), [height]])
        trial = _fit_row(grid, row, _theta(cs, ws, np.maximum(hs, 1e-300), theta[-1]), n + 1, log)
        if trial is None:
            break
        c_new = float(trial.fun @ trial.fun)
        s2_new = c_new / max(trial.fun.size - trial.x.size, 1)
        if c_old - c_new > max(threshold * s2_new, 1e-3 * c_old) and c_new < 0.5 * c_old:
            sol, n = trial, n + 1
        else:
            break
    return sol, n


def extract_peaks(
    spec, min_prominence: float = 0.5, log: bool = True, refine: bool = True, min_height: float = 5.0
) -> list[list[Peak]]:
    """Peaks of every time bin of a spectrogram, in frequency units."""
    rows = []
    for row in spec.psd:
        found = detect_peaks(row, min_prominence, spec.frequency_bins, log=log, min_height=min_height)
        if refine:
            found = refine_peaks(spec.frequency_bins, row, found, log=log)
        rows.append(sorted(found, key=lambda p: p.center))
    return rows


# -- tracks -------------------------------------------------------------------

@dataclass
class PeakTrack:
    """One linked sequence of peaks; ``bins`` index the spectrogram time bins."""

    bins: np.ndarray
    times: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    heights: np.ndarray
    sigmas: np.ndarray
    axis: str | None = None
    branch: int = 0

    def __len__(self):
        return len(self.bins)

    @property
    def label(self) -> str:
        return f"{self.axis or '?'}{self.branch}"


def _label_tracks(tracks: list[PeakTrack], windows: dict | None):
    if windows:
        for t in tracks:
            med = float(np.median(t.centers))
            for axis, (lo, hi) in windows.items():
                if lo <= med < hi:
                    t.axis = axis
    for axis in {t.axis for t in tracks}:
        group = sorted((t for t in tracks if t.axis == axis), key=lambda t: (np.median(t.centers), t.bins[0]))
        for i, t in enumerate(group):
            t.branch = i


def track_modes(
    spec,
    peaks: list[list[Peak]] | None = None,
    max_jump: float = 3.0,
    max_gap: int = 10,
    min_length: int = 3,
    min_prominence: float = 0.5,
) -> list[PeakTrack]:
    """Link peaks across time bins into tracks.

    Each open track predicts its next center by a straight line through its
    last few points; peaks are assigned to predictions by minimum total
    distance and accepted within ``max_jump`` frequency bins. A track with no
    match for more than ``max_gap`` bins is closed, so a broken track comes
    back as separate segments. Rows are processed in time order whatever
    order the spectrogram stores them in.
    """
    order = np.argsort(spec.time_bins, kind="stable")
    times = np.asarray(spec.time_bins)[order]
    if peaks is None:
        peaks = extract_peaks(spec, min_prominence=min_prominence)
    peaks = [peaks[i] for i in order]
    step = float(np.median(np.diff(spec.frequency_bins)))
    tol = max_jump * step
    open_tracks: list[dict] = []
    closed: list[dict] = []
    for k, row in enumerate(peaks):
        still = []
        for tr in open_tracks:
            (closed if k - tr["bins"][-1] > max_gap else still).append(tr)
        open_tracks = still
        preds = []
        for tr in open_tracks:
            b = np.array(tr["bins"][-5:], float)
            c = np.array([p.center for p in tr["peaks"][-5:]])
            if len(b) >= 2:
                slope, icpt = np.polyfit(b, c, 1)
                preds.append(slope * k + icpt)
            else:
                preds.append(c[-1])
        used = set()
        if open_tracks and row:
            cost = np.abs(np.array(preds)[:, None] - np.array([p.center for p in row])[None])
            ri, ci = optimize.linear_sum_assignment(cost)
            for i, j in zip(ri, ci):
                if cost[i, j] <= tol:
                    open_tracks[i]["bins"].append(k)
                    open_tracks[i]["peaks"].append(row[j])
                    used.add(j)
        for j, p in enumerate(row):
            if j not in used:
                open_tracks.append({"bins": [k], "peaks": [p]})
    closed.extend(open_tracks)
    closed.sort(key=lambda tr: (tr["bins"][0], tr["peaks"][0].center))
    tracks = []
    for tr in closed:
        if len(tr["bins"]) < min_length:
            continue
        bins = np.array(tr["bins"])
        ps = tr["peaks"]
        tracks.append(PeakTrack(
            bins, times[bins],
            np.array([p.center for p in ps]), np.array([p.width for p in ps]),
            np.array([p.height for p in ps]), np.array([p.sigma for p in ps]),
        ))
    windows = spec.metadata.get("windows_hz") if isinstance(spec.metadata, dict) else None
    if windows:
        windows = {a: (w[0] * TWO_PI, w[1] * TWO_PI) for a, w in windows.items()}
    _label_tracks(tracks, windows)
    return tracks


def _axis_pairs(tracks: Sequence[PeakTrack], axis: str, min_length: int = 5):
    """Per time bin, the two strongest peaks of ``axis`` tracks (lower first)."""
    per_bin: dict[int, list] = {}
    for t in tracks:
        if t.axis != axis or len(t) < min_length:
            continue
        for i in range(len(t)):
            per_bin.setdefault(int(t.bins[i]), []).append(
                (t.centers[i], t.widths[i], t.heights[i], t.sigmas[i], t.times[i])
            )
    pairs, singles = {}, {}
    for b, pts in per_bin.items():
        if len(pts) >= 2:
            pts = sorted(pts, key=lambda p: -p[2])[:2]
            pairs[b] = sorted(pts, key=lambda p: p[0])
        else:
            singles[b] = pts[0]
    return pairs, singles


# -- power calibration --------------------------------------------------------

@dataclass(frozen=True)
class PowerCalibration:
    """Powers relative to the cavity reference power, linear in time."""

    coef1: tuple[float, float]
    coef2: tuple[float, float]
    crossing_time: float
    n_bins: int
    cov1: np.ndarray | None = None
    cov2: np.ndarray | None = None

    def covariance(self) -> np.ndarray:
        """Joint covariance of (coef1, coef2); zero when unknown."""
        C = np.zeros((4, 4))
        if self.cov1 is not None:
            C[:2, :2] = self.cov1
        if self.cov2 is not None:
            C[2:, 2:] = self.cov2
        return C

    def perturbed(self, delta) -> "PowerCalibration":
        d = np.asarray(delta, float)
        return PowerCalibration(
            (self.coef1[0] + d[0], self.coef1[1] + d[1]),
            (self.coef2[0] + d[2], self.coef2[1] + d[3]),
            self.crossing_time, self.n_bins, self.cov1, self.cov2,
        )

    def ratios(self, times) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(times, float)
        return self.coef1[0] + self.coef1[1] * t, self.coef2[0] + self.coef2[1] * t


def calibrate_powers_from_x(tracks: Sequence[PeakTrack], config: SystemConfig) -> PowerCalibration:
    """Tweezer powers from the uncoupled x modes, using Omega_x proportional to sqrt(P).

    Particle 1 is taken to start with the higher x frequency. The crossing
    time comes from the V-shaped difference of squared frequencies, which is
    linear in time on each side of the crossing for linear power ramps.
    """
    pairs, _ = _axis_pairs(tracks, "x")
    if len(pairs) < 6:
        raise CalibrationError("x tracks missing: need at least six bins with both x modes resolved")
    p1, p2 = config.particles[0], config.particles[1]
    ref = config.cavity.ref_power
    bins = sorted(pairs)
    t = np.array([pairs[b][0][4] for b in bins])
    lo = np.array([pairs[b][0][0] for b in bins])
    hi = np.array([pairs[b][1][0] for b in bins])
    a1, a2 = p1.freq("x") ** 2, p2.freq("x") ** 2
    # a damped oscillator peaks at sqrt(Omega^2 - gamma^2 / 4)
    d1, d2 = 0.25 * p1.gas_damping**2, 0.25 * p2.gas_damping**2
    best = None
    for m in range(1, len(t)):
        sign = np.where(np.arange(len(t)) < m, 1.0, -1.0)
        s1 = (np.where(sign > 0, hi, lo) ** 2 + d1) / a1
        s2 = (np.where(sign > 0, lo, hi) ** 2 + d2) / a2
        A = np.vstack([np.ones_like(t), t]).T
        c1, r1, *_ = np.linalg.lstsq(A, s1, rcond=None)
        c2, r2, *_ = np.linalg.lstsq(A, s2, rcond=None)
        resid = float(np.sum((A @ c1 - s1) ** 2) + np.sum((A @ c2 - s2) ** 2))
        if best is None or resid < best[0]:
            best = (resid, m, c1, c2)
    _, m, c1, c2 = best
    if m < 3 or len(t) - m < 3:
        raise CalibrationError("x tracks do not bracket the crossing")
    k1, k2 = p1.power / ref, p2.power / ref
    coef1 = (float(c1[0] * k1), float(c1[1] * k1))
    coef2 = (float(c2[0] * k2), float(c2[1] * k2))
    dslope = coef1[1] - coef2[1]
    tc = (coef2[0] - coef1[0]) / dslope if dslope != 0 else float("nan")
    sign = np.where(np.arange(len(t)) < m, 1.0, -1.0)
    A = np.vstack([np.ones_like(t), t]).T
    inv = np.linalg.inv(A.T @ A)
    covs = []
    for c, s_i, k in (
        (c1, (np.where(sign > 0, hi, lo) ** 2 + d1) / a1, k1),
        (c2, (np.where(sign > 0, lo, hi) ** 2 + d2) / a2, k2),
    ):
        r = A @ c - s_i
        covs.append(inv * float(r @ r) / max(len(t) - 2, 1) * k * k)
    return PowerCalibration(coef1, coef2, float(tc), len(t), covs[0], covs[1])


# -- resolvability ------------------------------------------------------------

@dataclass(frozen=True)
class Resolution:
    resolved: bool
    floor: float
    near_floor: bool


def resolvability(splitting: float, peak_width: float, near_factor: float = 1.25) -> Resolution:
    """Resolution floor of a quarter of the peak width on G = splitting / 2."""
    if peak_width < 0:
        raise ValueError("peak width must be >= 0")
    floor = 0.25 * peak_width
    G = 0.5 * splitting
    resolved = bool(G >= floor)
    return Resolution(resolved, floor, bool(resolved and G < near_factor * floor))


# -- avoided-crossing fit -----------------------------------------------------

@dataclass
class FitResult:
    axis: str
    coupling_product: float
    splitting: float
    sigma_product: float
    sigma_splitting: float
    resolved: bool
    residual: float
    n_bins_used: int
    peak_width: float
    floor: float
    near_floor: bool = False
    G: complex = 0j
    couplings_sq: tuple[float, float] = (0.0, 0.0)
    flags: list = field(default_factory=list)

    def interval(self, n_sigma: float = 3.0) -> tuple[float, float]:
        """Splitting interval; three s.d. is the reporting convention."""
        return max(self.splitting - n_sigma * self.sigma_splitting, 0.0), self.splitting + n_sigma * self.sigma_splitting

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "coupling_product_hz2": self.coupling_product / TWO_PI**2,
            "splitting_hz": self.splitting / TWO_PI,
            "sigma_hz": self.sigma_splitting / TWO_PI,
            "resolved": self.resolved,
            "residual": self.residual,
            "n_bins_used": self.n_bins_used,
        }


def write_fit_json(fits: dict | Sequence[FitResult], path: str | Path) -> None:
    items = list(fits.values()) if isinstance(fits, dict) else list(fits)
    Path(path).write_text(json.dumps([f.to_dict() for f in items], indent=1, sort_keys=True) + "\n")


def _reference_omega(config: SystemConfig, axis: str) -> float:
    ref = config.cavity.ref_power
    return 0.5 * (config.particles[0].freq_at(axis, ref) + config.particles[1].freq_at(axis, ref))


def fit_avoided_crossing(
    tracks: Sequence[PeakTrack],
    config: SystemConfig,
    axis: str,
    calibration: PowerCalibration | None = None,
    split: str | float = "symmetric",
    min_bins: int = 10,
    merge_fraction: float = 0.2,
) -> FitResult:
    """Weighted least-squares fit of the normal-mode tracks of ``axis``.

    ``split`` fixes how the product distributes over the particles:
    ``"symmetric"`` uses |g1| = |g2|, a number s uses |g1|/|g2| = s, and
    ``"fit"`` estimates g1^2 and g2^2 separately. Bins with a single peak or
    with the two peaks closer than ``merge_fraction`` of their width are
    left out. The splitting is 2|G| at the reference power.
    """
    if calibration is None:
        calibration = calibrate_powers_from_x(tracks, config)
    pairs, _ = _axis_pairs(tracks, axis)
    cav = config.cavity
    p1, p2 = config.particles[0], config.particles[1]
    rows = []
    for b in sorted(pairs):
        lo, hi = pairs[b]
        width = 0.5 * (lo[1] + hi[1])
        if hi[0] - lo[0] < merge_fraction * width:
            continue
        rows.append((lo[4], lo[0], hi[0], lo[3], hi[3], width))
    diag = {"axis": axis, "n_pairs": len(pairs), "n_unmerged": len(rows)}
    if len(rows) < min_bins:
        raise FitError(f"{axis}: only {len(rows)} bins with both branches resolved (need {min_bins})", diag)
    rows = np.array(rows)
    t, lo_c, hi_c = rows[:, 0], rows[:, 1], rows[:, 2]
    step = float(np.median(np.abs(np.diff(np.sort(np.concatenate([lo_c, hi_c]))))) or 1.0)
    floor_sigma = 1e-9 * max(step, 1.0)
    s_lo = np.where(np.isfinite(rows[:, 3]), np.maximum(rows[:, 3], floor_sigma), floor_sigma)
    s_hi = np.where(np.isfinite(rows[:, 4]), np.maximum(rows[:, 4], floor_sigma), floor_sigma)
    omega_ref = _reference_omega(config, axis)
    chi_ref = abs(cavity_response(omega_ref, cav))

    def gg(theta):
        if split == "fit":
            return math.sqrt(max(theta[0], 0.0)), math.sqrt(max(theta[1], 0.0))
        p = max(theta[0], 0.0)
        s = 1.0 if split == "symmetric" else float(split)
        return math.sqrt(p * s), math.sqrt(p / s)

    def make_resid(cal):
        r1, r2 = cal.ratios(t)
        if np.any(r1 <= 0) or np.any(r2 <= 0):
            raise FitError("calibrated powers are not positive", diag)
        om1 = p1.freq_at(axis, r1 * cav.ref_power)
        om2 = p2.freq_at(axis, r2 * cav.ref_power)

        def resid(theta):
            g1, g2 = gg(theta)
            tr = crossing_model(om1, om2, r1, r2, g1, g2, cav, p1.gas_damping, p2.gas_damping)
            return np.concatenate([(tr.lambda_minus - lo_c) / s_lo, (tr.lambda_plus - hi_c) / s_hi])

        return resid

    def solve(resid, x0, xs):
        return optimize.least_squares(
            resid, x0, bounds=(0.0, np.inf), x_scale=xs, method="trf",
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
        )

    resid = make_resid(calibration)
    # coarse start: scan |G| over a log grid
    gmax = 0.5 * omega_ref
    scan = np.geomspace(1e-6 * omega_ref, gmax, 80) / chi_ref
    if split == "fit":
        costs = [(float(np.sum(resid([a, b]) ** 2)), a, b) for a in scan[::4] for b in scan[::4]]
        costs.append((float(np.sum(resid([0.0, 0.0]) ** 2)), 0.0, 0.0))
        _, a0, b0 = min(costs)
        x0 = np.array([a0, b0])
    else:
        costs = [(float(np.sum(resid([p]) ** 2)), p) for p in scan]
        costs.append((float(np.sum(resid([0.0]) ** 2)), 0.0))
        x0 = np.array([min(costs)[1]])
    xs = np.maximum(x0, scan[0])
    try:
        sol = solve(resid, x0, xs)
    except ValueError as exc:
        raise FitError(f"{axis}: least squares failed: {exc}", diag) from exc
    diag.update(status=int(sol.status), message=sol.message, nfev=int(sol.nfev))
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise FitError(f"{axis}: fit did not converge ({sol.message})", diag)
    theta = sol.x
    n = 2 * len(rows)
    dof = max(n - theta.size, 1)
    chi2 = float(sol.fun @ sol.fun)
    s2 = chi2 / dof
    flags = []
    H = sol.jac.T @ sol.jac
    if np.linalg.cond(H) > 1e14 or np.any(np.diag(H) <= 0):
        cov = np.full((theta.size, theta.size), np.inf)
        flags.append("wide_sigma")
    else:
        cov = np.linalg.inv(H) * s2
    g1, g2 = gg(theta)
    product = g1 * g2
    if split == "fit":
        a1, a2 = theta
        grad = np.array([0.5 * math.sqrt(a2 / a1) if a1 > 0 else 0.0, 0.5 * math.sqrt(a1 / a2) if a2 > 0 else 0.0])
        var = float(grad @ cov @ grad) if np.all(np.isfinite(cov)) else float("inf")
        if product == 0 and np.all(np.isfinite(cov)):
            var = float(math.sqrt(max(cov[0, 0], 0.0) * max(cov[1, 1], 0.0)))
    else:
        var = float(cov[0, 0])
    # calibration uncertainty, propagated by refitting along its principal axes
    w, U = np.linalg.eigh(calibration.covariance())
    for lam_k, u in zip(w, U.T):
        if lam_k <= 0 or not np.isfinite(var):
            continue
        alt = solve(make_resid(calibration.perturbed(math.sqrt(lam_k) * u)), theta, np.maximum(theta, scan[0]))
        a, b = gg(alt.x)
        var += (a * b - product) ** 2
    sigma_p = math.sqrt(max(var, 0.0))
    G = complex(effective_coupling(g1, g2, omega_ref, cav).G)
    splitting = 2.0 * abs(G)
    sigma_split = 2.0 * chi_ref * sigma_p
    width = float(np.median(rows[:, 5]))
    res = resolvability(splitting, width)
    return FitResult(
        axis=axis,
        coupling_product=float(product),
        splitting=float(splitting),
        sigma_product=float(sigma_p),
        sigma_splitting=float(sigma_split),
        resolved=res.resolved,
        residual=float(s2),
        n_bins_used=int(len(rows)),
        peak_width=width,
        floor=res.floor,
        near_floor=res.near_floor,
        G=G,
        couplings_sq=(g1 * g1, g2 * g2),
        flags=flags,
    )


def analyze_spectrogram(
    spec,
    config: SystemConfig,
    axes: Sequence[str] = ("y",),
    split: str | float = "symmetric",
    min_prominence: float = 0.5,
) -> dict:
    """Peaks, tracks, x calibration and one crossing fit per requested axis."""
    tracks = track_modes(spec, min_prominence=min_prominence)
    cal = calibrate_powers_from_x(tracks, config)
    return {axis: fit_avoided_crossing(tracks, config, axis, cal, split=split) for axis in axes}
