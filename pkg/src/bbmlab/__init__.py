"""Numerical laboratory for a planar branching Brownian motion whose
branching rate depends on the particle's angle: spectral theory of the
associated line operator, the time-singular killed diffusion, weighted
Brownian kernels with Monte Carlo cross-checks, and exact particle-system
simulators."""

__version__ = "0.1.0"
