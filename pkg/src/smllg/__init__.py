"""Finite-element solver for the stochastic Maxwell-Landau-Lifshitz-Gilbert system.

Linear tangent-plane scheme for the magnetization (vector P1 elements),
lowest-order Nedelec elements for the magnetic field, Monte Carlo over
Wiener paths.
"""
__version__ = "0.1.0"
