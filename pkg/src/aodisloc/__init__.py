"""Discrete dislocation energetics on FCC and triangular lattices.

Submodules: ``complex`` (cell complexes), ``forms`` (cochains and Hodge
theory), ``energy`` (the quadratic bond energy and its decomposition),
``grains`` (rotated grains and low-angle walls), ``fourier`` (Brillouin
zone quadratures), ``gibbs`` (Markov chain sampler) and ``cli``.
"""
__version__ = "0.1.0"

from .complex import (DIRICHLET, FCC3D, NEUMANN, PERIODIC, TRI2D, CellComplex, LatticeSpec,
                      build_complex, cohomology_dims)
from .forms import LatticeForm, PForm, SlipField, ChargeField, d, codifferential, hodge_decompose
from .energy import ao_energy, decompose_energy, relax, sigma_q

__all__ = [
    "DIRICHLET", "FCC3D", "NEUMANN", "PERIODIC", "TRI2D", "CellComplex", "LatticeSpec",
    "build_complex", "cohomology_dims", "LatticeForm", "PForm", "SlipField", "ChargeField",
    "d", "codifferential", "hodge_decompose", "ao_energy", "decompose_energy", "relax", "sigma_q",
]
