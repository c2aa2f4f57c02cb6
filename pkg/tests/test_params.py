import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levcav.params import (
    TWO_PI,
    CavitySpec,
    ConfigError,
    ParticleSpec,
    ShortRangeWarning,
    config_from_dict,
    config_to_dict,
    load_config,
    mass_from_spec,
    mech_freq_from_power,
    phase_from_position,
    save_config,
    validate_config,
)

LAM = 1550e-9


def pair(d=6e-6, **kw):
    return validate_config([ParticleSpec(position=0.0, **kw), ParticleSpec(position=d, **kw)], CavitySpec())


def test_mass_of_default_sphere():
    assert mass_from_spec(ParticleSpec()) == pytest.approx(3.27e-18, rel=2e-3)


def test_mass_scales_cubically():
    m = mass_from_spec(ParticleSpec(radius=50e-9))
    assert mass_from_spec(ParticleSpec(radius=100e-9)) == pytest.approx(8 * m, rel=1e-14)


@pytest.mark.parametrize("radius,density", [(0.0, 1850.0), (-1e-9, 1850.0), (75e-9, 0.0)])
def test_mass_rejects_degenerate_geometry(radius, density):
    with pytest.raises(ConfigError):
        mass_from_spec(ParticleSpec(radius=radius, density=density))


@pytest.mark.parametrize(
    "y,phi",
    [(0.0, 0.0), (LAM / 4, math.pi / 2), (3.1 * LAM, 0.2 * math.pi), (-0.1 * LAM, 0.2 * math.pi), (LAM / 2, 0.0)],
)
def test_phase_examples(y, phi):
    assert phase_from_position(y, LAM).phase == pytest.approx(phi, abs=1e-9)


@given(st.floats(-20 * LAM, 20 * LAM), st.integers(-40, 40))
def test_phase_half_wave_periodic(y, k):
    a = phase_from_position(y, LAM).phase
    b = phase_from_position(y + k * LAM / 2, LAM).phase
    assert a == pytest.approx(b, abs=1e-7)


@given(st.integers(-20, 20), st.floats(0, LAM / 2))
def test_phase_even_about_antinode(k, delta):
    y0 = k * LAM / 2
    assert phase_from_position(y0 + delta, LAM).phase == pytest.approx(
        phase_from_position(y0 - delta, LAM).phase, abs=1e-7
    )


@given(st.floats(-1e-4, 1e-4))
def test_phase_range(y):
    assert 0.0 <= phase_from_position(y, LAM).phase <= math.pi / 2


def test_phase_rejects_bad_wavelength():
    with pytest.raises(ConfigError):
        phase_from_position(0.0, 0.0)


def test_freq_from_power_examples():
    w = TWO_PI * 59e3
    assert mech_freq_from_power(w, 0.13, 0.13) == w
    assert mech_freq_from_power(w, 0.52, 0.13) == pytest.approx(2 * w, rel=1e-15)


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(1.01, 10.0))
def test_freq_from_power_monotone_and_homogeneous(p, pref, c):
    w = TWO_PI * 59e3
    assert mech_freq_from_power(w, c * p, pref) > mech_freq_from_power(w, p, pref)
    assert mech_freq_from_power(w, c * p, c * pref) == pytest.approx(mech_freq_from_power(w, p, pref), rel=1e-14)
    assert mech_freq_from_power(w, c * p, pref) == pytest.approx(math.sqrt(c) * mech_freq_from_power(w, p, pref), rel=1e-14)


def test_freq_from_power_rejects_zero():
    with pytest.raises(ConfigError):
        mech_freq_from_power(1.0, 0.0, 0.13)


def test_valid_pair_gets_distance():
    cfg = pair(6e-6)
    assert cfg.distance == pytest.approx(6e-6)


def test_negative_linewidth_names_field():
    with pytest.raises(ConfigError) as err:
        validate_config([ParticleSpec(), ParticleSpec(position=1e-6)], CavitySpec(linewidth=-1.0))
    assert "linewidth" in str(err.value)


def test_zero_separation_rejected():
    with pytest.raises(ConfigError) as err:
        validate_config([ParticleSpec(), ParticleSpec()], CavitySpec())
    assert "position" in str(err.value)


def test_errors_are_itemized():
    bad = ParticleSpec(radius=-1.0, power=0.0, mech_freq=(1.0, 1.0, 2.0))
    with pytest.raises(ConfigError) as err:
        validate_config([bad, ParticleSpec(position=1e-6)], CavitySpec(linewidth=0.0))
    names = {name for name, _ in err.value.errors}
    assert {"particle.1.radius", "particle.1.power", "particle.1.mech_freq", "linewidth"} <= names


def test_validation_idempotent():
    cfg = pair()
    again = validate_config(cfg.particles, cfg.cavity, cfg.noise)
    assert again == cfg


def test_short_range_warning_for_close_charged_pair():
    with pytest.warns(ShortRangeWarning):
        cfg = pair(0.5e-6, charge=50)
    assert cfg.warnings


def test_no_warning_at_typical_distance():
    with warnings.catch_warnings():
        warnings.simplefilter("error", ShortRangeWarning)
        pair(6e-6)


def test_config_file_round_trip(tmp_path):
    cfg = validate_config(
        [ParticleSpec(charge=3), ParticleSpec(position=4 * LAM, mech_freq=(TWO_PI * 60e3, TWO_PI * 80e3, TWO_PI * 26e3))],
        CavitySpec(coupling_scale=(0.0, TWO_PI * 3e4, TWO_PI * 6e4)),
    )
    path = tmp_path / "c.toml"
    save_config(cfg, path)
    text = path.read_text()
    assert "[particle.1]" in text and "[cavity]" in text and "[noise]" in text
    back = load_config(path)
    for a, b in zip(back.particles, cfg.particles):
        assert np.allclose(a.mech_freq, b.mech_freq, rtol=1e-14)
        assert a.charge == b.charge and a.position == b.position
    assert np.allclose(back.cavity.coupling_scale, cfg.cavity.coupling_scale, rtol=1e-14)
    assert back.cavity.linewidth == pytest.approx(cfg.cavity.linewidth, rel=1e-14)


def test_config_frequencies_stored_in_hz():
    data = config_to_dict(pair())
    assert data["cavity"]["linewidth"] == pytest.approx(600e3)
    assert data["particle"]["1"]["mech_freq"][0] == pytest.approx(59e3)


def test_unknown_key_rejected():
    data = config_to_dict(pair())
    data["cavity"]["finesse"] = 1.0
    with pytest.raises(ConfigError):
        config_from_dict(data)
