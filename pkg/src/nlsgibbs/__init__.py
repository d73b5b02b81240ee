"""Gibbs-state expansions for the nonlinear Schroedinger equation on the torus.

Spectral kernels, interaction potentials, Wick-graph combinatorics, expansion
coefficients, a classical Monte Carlo oracle and a numerical acceptance harness.
"""

__version__ = "0.1.0"
