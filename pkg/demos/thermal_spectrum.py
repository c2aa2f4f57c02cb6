"""
Thermal motion of a single trapped particle
===========================================

A gas-damped oscillator at room temperature, simulated step by step with
the exact discretization of its Langevin equation. The sample variance
lands on k_B T / (m Omega^2) and the Welch spectrum on the closed form.
"""

import numpy as np
from scipy import signal
from levcav.params import KB, TWO_PI, CavitySpec, ParticleSpec, mass_from_spec, validate_config
from levcav.dynamics import build_state_space, integrate_sde, max_step, psd_frequency_domain

p = ParticleSpec()
model = build_state_space(validate_config([p], CavitySpec()), "x", include_cavity=False)

# a million steps at the largest allowed step size
dt = max_step(model)
x = integrate_sde(model, 1e6 * dt, dt, seed=0).column("q1") * model.position_scales[0]
expected = KB * 300.0 / (mass_from_spec(p) * p.freq("x") ** 2)
print(f"rms {np.sqrt(x.var()) * 1e9:.3f} nm, equipartition {np.sqrt(expected) * 1e9:.3f} nm")

# 30 s sampled at 200 kHz, Hann windows of 4000 samples
trace = integrate_sde(model, 30.0, dt, seed=1, decimate=int(round(1 / (2e5 * dt))))
f, P = signal.welch(trace.column("q1"), fs=1 / trace.dt, nperseg=4000)
band = np.abs(TWO_PI * f - p.freq("x")) < 5 * p.gas_damping
ref = psd_frequency_domain(model, "q1", TWO_PI * f[band]).values
print(f"Welch vs closed form over the mechanical band: {np.linalg.norm(P[band] - ref) / np.linalg.norm(ref):.2%} L2")
k = np.argmax(P)
print(f"peak at {f[k] / 1e3:.2f} kHz, trap {p.freq('x') / TWO_PI / 1e3:.2f} kHz")
