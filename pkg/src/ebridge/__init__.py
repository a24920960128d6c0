"""Energy-oriented diffusion bridge: trajectory, closed-form consistency
solver, training loop and numerical energy checks."""

__version__ = "0.1.0"
