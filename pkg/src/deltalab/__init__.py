"""Numerics for Schrödinger operators with random point interactions on Z³.

Submodules: :mod:`numerics` (shared linear algebra and quadrature),
:mod:`lattice`, :mod:`disorder`, :mod:`green` (the Γ matrix and Green's
functions), :mod:`decay`, :mod:`eigenmodes`, :mod:`transport` and
:mod:`cli`.
"""
__version__ = "0.1.0"

from .disorder import DisorderConfig, DisorderSpec, constant_config, empty_config, sample
from .green import EnergyPoint, GammaSystem, assemble_gamma, free_green, green_omega
from .lattice import LatticeWindow

__all__ = [
    "DisorderConfig", "DisorderSpec", "EnergyPoint", "GammaSystem", "LatticeWindow",
    "assemble_gamma", "constant_config", "empty_config", "free_green", "green_omega",
    "sample", "__version__",
]
