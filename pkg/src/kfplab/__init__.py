"""Convergence-to-equilibrium laboratory for the kinetic Fokker-Planck equation on the torus."""
__version__ = "0.1.0"
