"""Deterministic numerical suite for a quantum kinetic equation with
Pauli blocking near global equilibrium: collision operators, linearized
spectral analysis, transport coefficients, scaled kinetic time
integration, and the incompressible hydrodynamic-limit harness.
"""

__version__ = "0.1.0"
