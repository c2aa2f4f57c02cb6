import math

import numpy as np
import pytest
from scipy import signal

from levcav.coupling import effective_coupling, min_splitting
from levcav.dynamics import (
    StabilityError,
    StepSizeError,
    build_state_space,
    discretize,
    effective_model_reduction,
    eigenfrequencies,
    heterodyne_signal,
    integrate_sde,
    max_step,
    mechanical_gap,
    mechanical_modes,
    psd_frequency_domain,
    read_time_trace,
    spectral_density_matrix,
    stationary_covariance,
    write_psd_csv,
    write_time_trace,
)
from levcav.experiment import reference_config
from levcav.params import KB, TWO_PI, CavitySpec, ParticleSpec, mass_from_spec, validate_config

LAM = 1550e-9
W = (TWO_PI * 59e3, TWO_PI * 78e3, TWO_PI * 25e3)


def twin(delta_hz=1.2e6, g_hz=30e3, gamma_hz=600.0, y1=LAM / 4):
    """Two identical particles at the same standing-wave phase."""
    p = ParticleSpec(position=y1, mech_freq=W, gas_damping=TWO_PI * gamma_hz)
    cav = CavitySpec(detuning=TWO_PI * delta_hz, coupling_scale=(0.0, TWO_PI * g_hz, TWO_PI * g_hz))
    return validate_config([p, ParticleSpec(position=y1 + 4 * LAM, mech_freq=W, gas_damping=p.gas_damping)], cav)


def test_uncoupled_drift_is_block_diagonal():
    cfg = twin(g_hz=0.0)
    A = build_state_space(cfg, "y").drift
    assert np.all(A[:2, 2:] == 0) and np.all(A[2:4, :2] == 0) and np.all(A[2:4, 4:] == 0) and np.all(A[4:, :4] == 0)


def test_uncoupled_eigenfrequencies():
    cfg = twin(g_hz=0.0)
    m = build_state_space(cfg, "y")
    g = cfg.particles[0].gas_damping
    damped = math.sqrt(W[1] ** 2 - g**2 / 4)
    modes = mechanical_modes(m)
    assert len(modes) == 2
    for f, d in modes:
        assert f == pytest.approx(damped, rel=1e-10)
        assert d == pytest.approx(g, rel=1e-10)
    cavity = [e for e in eigenfrequencies(m) if e not in modes]
    assert cavity[0][0] == pytest.approx(cfg.cavity.detuning, rel=1e-12)
    assert cavity[0][1] == pytest.approx(cfg.cavity.linewidth, rel=1e-12)


def test_undamped_frequency_exact():
    p = ParticleSpec(gas_damping=0.0)
    m = build_state_space(validate_config([p], CavitySpec()), "x", include_cavity=False)
    assert eigenfrequencies(m)[0][0] == pytest.approx(p.freq("x"), rel=1e-12)


def test_dark_mode_decouples_from_cavity():
    m = build_state_space(twin(), "y")
    ev, vec = np.linalg.eig(m.drift)
    cav_weight = []
    for e, v in zip(ev, vec.T):
        if e.imag > 0:
            w = np.abs(v) ** 2
            if w[:4].sum() > 0.5 * w.sum():
                cav_weight.append(w[4:].sum() / w.sum())
    assert len(cav_weight) == 2
    assert min(cav_weight) < 1e-20
    assert max(cav_weight) > 1e-6
    dark = [e for e in ev if e.imag > 0 and abs(e.imag - W[1]) < TWO_PI * 1e3]
    assert any(abs(-2 * e.real - TWO_PI * 600) < 1e-6 * TWO_PI * 600 for e in dark)


@pytest.mark.parametrize("delta_hz", np.linspace(0.45e6, 2.5e6, 9))
def test_operating_range_is_stable(delta_hz):
    cfg = reference_config(delta_hz)
    for axis in "xyz":
        ev = np.linalg.eigvals(build_state_space(cfg, axis).drift)
        assert np.all(ev.real < 0)


def test_red_detuned_strong_coupling_is_unstable():
    with pytest.raises(StabilityError):
        build_state_space(twin(delta_hz=-80e3, g_hz=300e3), "y")


@pytest.mark.filterwarnings("ignore::levcav.params.ShortRangeWarning")
def test_cavity_cooling_broadens_y_modes():
    m = build_state_space(twin(delta_hz=0.45e6), "y")
    widths = sorted(d for _, d in mechanical_modes(m))
    assert widths[0] == pytest.approx(TWO_PI * 600, rel=1e-9)
    assert widths[1] > 1.5 * TWO_PI * 600
    single = twin(delta_hz=0.45e6).replace_particle(1, position=LAM / 2)
    assert mechanical_modes(build_state_space(single, "y"))[1][1] > TWO_PI * 600


def test_degenerate_gap_close_to_2G():
    cfg = twin(delta_hz=1.2e6)
    m = build_state_space(cfg, "y")
    g = m.couplings
    G = effective_coupling(g[0], g[1], W[1], cfg.cavity).G
    assert mechanical_gap(m) == pytest.approx(min_splitting(G), rel=0.05)


def test_gap_error_grows_with_coupling_over_frequency():
    errs = []
    for g_hz in (5e3, 20e3, 60e3):
        m = build_state_space(twin(g_hz=g_hz), "y")
        G = effective_coupling(m.couplings[0], m.couplings[1], W[1], m.cavity).G
        ratio = abs(G) / W[1]
        err = abs(mechanical_gap(m) / min_splitting(G) - 1)
        assert err <= 1.5 * ratio + 1e-4
        errs.append(err)
    assert errs[0] < errs[1] < errs[2]


def test_single_mode_lorentzian():
    p = ParticleSpec()
    m = build_state_space(validate_config([p], CavitySpec()), "x", include_cavity=False)
    w0, g = p.freq("x"), p.gas_damping
    grid = np.linspace(w0 - 20 * g, w0 + 20 * g, 40001)
    S = psd_frequency_domain(m, "q1", grid).values
    k = np.argmax(S)
    assert grid[k] == pytest.approx(math.sqrt(w0**2 - g**2 / 2), abs=grid[1] - grid[0])
    half = grid[S >= S[k] / 2]
    assert half[-1] - half[0] == pytest.approx(g, rel=0.01)


def test_psd_area_matches_variance():
    p = ParticleSpec(gas_damping=TWO_PI * 2e3)
    m = build_state_space(validate_config([p], CavitySpec()), "x", include_cavity=False)
    grid = np.linspace(0, 40 * p.freq("x"), 400001)
    S = psd_frequency_domain(m, "q1", grid).values
    area = np.trapezoid(S, grid / TWO_PI)
    assert area == pytest.approx(stationary_covariance(m)[0, 0], rel=2e-3)
    n = KB * 300 / (1.054571817e-34 * p.freq("x"))
    assert stationary_covariance(m)[0, 0] == pytest.approx(n, rel=1e-9)


@pytest.mark.filterwarnings("ignore::levcav.params.ShortRangeWarning")
def test_coupled_psd_shows_two_peaks_at_gap():
    cfg = twin(delta_hz=1.2e6, gamma_hz=100.0)
    m = build_state_space(cfg, "y")
    obs = heterodyne_signal(m, imprint=1.0, cavity_weight=0.0)
    grid = np.linspace(W[1] - TWO_PI * 8e3, W[1] + TWO_PI * 8e3, 16001)
    S = psd_frequency_domain(m, obs, grid).values
    peaks, _ = signal.find_peaks(S, prominence=S.max() * 1e-3)
    assert len(peaks) == 2
    assert grid[peaks[1]] - grid[peaks[0]] == pytest.approx(mechanical_gap(m), rel=1e-3)


def test_heterodyne_six_peaks():
    cfg = reference_config(1.2e6).replace_particle(1, mech_freq=(TWO_PI * 63e3, TWO_PI * 84e3, TWO_PI * 29e3))
    peaks, modes = [], []
    for axis in "xyz":
        m = build_state_space(cfg, axis)
        grid = TWO_PI * np.linspace(10e3, 100e3, 90001)
        S = psd_frequency_domain(m, heterodyne_signal(m), grid).values
        found, _ = signal.find_peaks(np.log(S), prominence=2.0)
        peaks += list(grid[found])
        modes += [f for f, _ in mechanical_modes(m)]
    bare = sorted(p.freq(a) for p in cfg.particles for a in "xyz")
    assert len(peaks) == 6
    np.testing.assert_allclose(sorted(peaks), sorted(modes), rtol=1e-4)
    # the optical spring pulls the cavity-coupled peaks by a few kHz
    np.testing.assert_allclose(sorted(peaks), bare, rtol=0.05)


def test_cavity_channel_scales_with_g_squared():
    grid = np.linspace(W[1] - TWO_PI * 3e3, W[1] + TWO_PI * 3e3, 601)

    def cav_psd(g_hz):
        cfg = twin(g_hz=g_hz)
        cfg = cfg.replace_particle(1, power=cfg.particles[1].power, position=cfg.particles[0].position + LAM / 4 + 4 * LAM)
        m = build_state_space(cfg, "y")
        return psd_frequency_domain(m, heterodyne_signal(m, imprint=0.0), grid).values

    small, big = cav_psd(1e3), cav_psd(2e3)
    k = np.argmax(small)
    assert big[k] / small[k] == pytest.approx(4.0, rel=0.01)


def test_cavity_axis_polarization_hides_mechanics():
    cfg = twin(g_hz=0.0)
    m = build_state_space(cfg, "y")
    grid = np.linspace(W[1] - TWO_PI * 3e3, W[1] + TWO_PI * 3e3, 61)
    S = psd_frequency_domain(m, heterodyne_signal(m, imprint=0.0), grid).values
    assert len(signal.find_peaks(S)[0]) == 0
    assert np.all(np.diff(S) > 0)


def test_cross_psd_vanishes_when_one_particle_uncoupled():
    cfg = twin()
    cfg = cfg.replace_particle(1, position=cfg.particles[1].position - LAM / 4)
    m = build_state_space(cfg, "y")
    assert m.couplings[1] == pytest.approx(0.0, abs=1e-9 * m.couplings[0])
    grid = np.linspace(W[1] - TWO_PI * 5e3, W[1] + TWO_PI * 5e3, 201)
    S = spectral_density_matrix(m, grid)
    cross = np.abs(S[:, 0, 2])
    auto = np.sqrt(np.abs(S[:, 0, 0] * S[:, 2, 2]))
    assert np.all(cross <= 1e-10 * auto)


def test_discretize_matches_lyapunov():
    m = build_state_space(twin(), "y")
    F, Q = discretize(m.drift, m.diffusion, 1e-3)
    C = stationary_covariance(m)
    np.testing.assert_allclose(F @ C @ F.T + Q, C, rtol=1e-7, atol=1e-9 * np.abs(C).max())


def test_integrate_is_deterministic_and_checks_step():
    m = build_state_space(twin(), "y")
    dt = max_step(m)
    a = integrate_sde(m, 2000 * dt, dt, seed=5)
    b = integrate_sde(m, 2000 * dt, dt, seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, integrate_sde(m, 2000 * dt, dt, seed=6).samples)
    with pytest.raises(StepSizeError):
        integrate_sde(m, 1e-3, 2 * dt, seed=0)


def test_time_domain_variance_matches_psd_integral():
    cfg = twin(gamma_hz=3000.0)
    m = build_state_space(cfg, "y")
    dt = max_step(m)
    tr = integrate_sde(m, 2.0, dt, seed=3, decimate=10)
    C = stationary_covariance(m)
    var = tr.samples.var(axis=0)
    # effective number of independent samples per component from the slowest decay
    n_eff = 2.0 * 0.5 * TWO_PI * 3000.0 * 2.0
    for i in range(len(var)):
        assert abs(var[i] - C[i, i]) <= 3 * C[i, i] * math.sqrt(2 / n_eff) + 1e-12 * C[i, i]


def test_reduction_bare_when_uncoupled():
    m = build_state_space(twin(g_hz=0.0), "y")
    red = effective_model_reduction(m)
    assert np.array_equal(red.shifted, m.mech_freqs)
    assert red.G == 0
    assert red.adiabatic


def test_reduction_warns_outside_adiabatic_regime():
    cfg = twin(delta_hz=150e3, g_hz=5e3).with_cavity(linewidth=TWO_PI * 200e3)
    red = effective_model_reduction(build_state_space(cfg, "y"))
    assert not red.adiabatic and red.warning


def test_reduction_degrades_as_detuning_nears_mechanics():
    errors = []
    for ratio in (40, 20, 10, 5, 3):
        cfg = twin(delta_hz=ratio * 78e3, g_hz=20e3)
        cfg = cfg.with_cavity(linewidth=TWO_PI * 100e3)
        m = build_state_space(cfg, "y")
        red = effective_model_reduction(m)
        errors.append(abs(mechanical_gap(m) - 2 * abs(red.G)) / (2 * abs(red.G)))
    assert all(b > a for a, b in zip(errors, errors[1:]))


def test_time_trace_round_trip(tmp_path):
    m = build_state_space(twin(), "y")
    tr = integrate_sde(m, 100 * max_step(m), max_step(m), seed=2)
    write_time_trace(tr, tmp_path / "t.bin")
    back = read_time_trace(tmp_path / "t.bin")
    assert np.array_equal(back.samples, tr.samples)
    assert back.labels == tr.labels and back.seed == 2 and back.dt == tr.dt


def test_psd_csv(tmp_path):
    m = build_state_space(twin(), "y")
    curve = psd_frequency_domain(m, "q1", np.linspace(0, 1e6, 11))
    write_psd_csv(curve, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "frequency_hz,psd_value" and len(lines) == 12
    assert np.all(curve.values >= 0)


def test_psd_rejects_unsorted_grid():
    m = build_state_space(twin(), "y")
    with pytest.raises(ValueError):
        psd_frequency_domain(m, "q1", [2.0, 1.0])


def test_position_scale_gives_equipartition_units():
    p = ParticleSpec()
    m = build_state_space(validate_config([p], CavitySpec()), "x", include_cavity=False)
    var_x = stationary_covariance(m)[0, 0] * m.position_scales[0] ** 2
    assert var_x == pytest.approx(KB * 300 / (mass_from_spec(p) * p.freq("x") ** 2), rel=1e-9)
