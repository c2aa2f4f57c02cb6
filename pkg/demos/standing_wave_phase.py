"""
Where the particles sit in the standing wave
============================================

The coupling along y needs intensity gradient, the coupling along z needs
intensity. Moving both particles from an antinode to a node trades one for
the other.
"""

# closed-form sweeps are instant
import math
import numpy as np
from levcav.coupling import phase_sweep, distance_sweep
from levcav.experiment import reference_config, make_power_ramp, run_phase_campaign
from levcav.params import TWO_PI

cfg = reference_config(1.2e6)
lam = cfg.cavity.wavelength

phi = np.linspace(0, math.pi / 2, 7)
res = phase_sweep(cfg, phi)
for p, sy, sz in zip(phi, res.splitting_y, res.splitting_z):
    print(f"phase {p:.3f} rad: y {sy / TWO_PI / 1e3:6.3f} kHz, z {sz / TWO_PI / 1e3:6.3f} kHz")

# particle 1 at a node, particle 2 moved: the y coupling follows |cos(2 pi d / lambda)|
d = 4 * lam + np.array([0, 1 / 8, 1 / 4, 3 / 8, 1 / 2]) * lam
for dd, s in zip(d, distance_sweep(cfg, d).splitting_y):
    print(f"d = {dd / lam:.3f} lambda: y {s / TWO_PI / 1e3:.3f} kHz")

# the same three phases through the full measurement chain
ramp = make_power_ramp(0.130, 0.040, 100)
camp = run_phase_campaign(cfg, [0.0, math.pi / 4, math.pi / 2], ramp)
omega_z = 0.5 * sum(p.freq("z") for p in cfg.particles)
for row in camp.rows:
    y, z = row.fits["y"], row.fits["z"]
    print(f"phase {row.value:.3f}: y {y.splitting / TWO_PI / 1e3:.3f} kHz ({'resolved' if y.resolved else 'unresolved'}), "
          f"z {z.splitting / TWO_PI / 1e3:.3f} kHz ({'resolved' if z.resolved else 'unresolved'})")
print(f"G_zz / Omega_z at the antinode: {camp.rows[0].fits['z'].splitting / 2 / omega_z:.3f}")
