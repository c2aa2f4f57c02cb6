"""Cavity-mediated coupling between levitated nanoparticles: closed-form couplings,
linear dynamics, virtual power-ramp spectrograms and avoided-crossing fits."""

__version__ = "0.1.0"
