"""
How small a coupling can the spectrogram see
============================================

Peaks 0.6 kHz wide hide any splitting whose half-gap is under a quarter
of the width. Short-range couplings between the particles sit near that
line; the cavity-mediated one is well above it.
"""

import warnings
from levcav.coupling import calibrate_coupling_scale, coulomb_coupling_estimate, optical_binding_estimate
from levcav.experiment import reference_config, make_power_ramp, run_spectrogram
from levcav.analysis import analyze_spectrogram, resolvability
from levcav.params import TWO_PI, ShortRangeWarning

cfg = reference_config(1.2e6)
lam = cfg.cavity.wavelength
p1, p2 = cfg.particles
width = p1.gas_damping
print(f"peak width {width / TWO_PI:.0f} Hz, floor {0.25 * width / TWO_PI:.0f} Hz")

# 50 charges each at 3.5 wavelengths
with warnings.catch_warnings():
    warnings.simplefilter("ignore", ShortRangeWarning)
    charged = cfg.replace_particle(0, charge=50).replace_particle(1, charge=50)
q1, q2 = charged.particles
omega = 0.5 * (q1.freq("y") + q2.freq("y"))
for name, G in (
    ("Coulomb", coulomb_coupling_estimate(q1, q2, 3.5 * lam, omega)),
    ("optical binding", optical_binding_estimate(q1, q2, 3.5 * lam, omega, cfg.cavity)),
):
    r = resolvability(2 * abs(G), width)
    print(f"{name}: G/2pi = {abs(G) / TWO_PI:.0f} Hz, resolved {r.resolved}, near floor {r.near_floor}")

# inject a known coupling and measure it with thermal noise; a few replicas each
ramp = make_power_ramp(0.130, 0.040, 80)
for G_hz in (100.0, 500.0):
    g_y = calibrate_coupling_scale(cfg, "y", 2 * TWO_PI * G_hz)
    c = cfg.with_cavity(coupling_scale=(0.0, g_y, 0.0))
    for seed in range(3):
        fit = analyze_spectrogram(run_spectrogram(c, ramp, mode="stochastic", axes=("x", "y"), seed=seed), c)["y"]
        print(f"injected {G_hz:.0f} Hz, seed {seed}: measured G {fit.splitting / 2 / TWO_PI:.0f} Hz, resolved {fit.resolved}")
