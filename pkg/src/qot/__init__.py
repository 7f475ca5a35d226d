"""Dynamical quantum optimal transport on finite-dimensional tracial algebras.

Modules
-------
algebra
    Block-matrix algebras, elements, densities and functional calculus.
bimodule
    *-homomorphisms, bimodule structures, joint spectra and superoperators.
gradient
    Quantum gradients, Laplacians, heat semigroups and commutation fits.
quasientropy
    Operator means, multiplication/division operators and quasi-entropies.
transport
    Discrete paths, energies and the transport distance solver.
riemann
    Metric geometry of a fixed-state slice (the solver's coordinates).
entropy_geometry
    Entropy Hessian, dissipation identities and curvature checks.
chains
    Finite towers of algebras with inclusions and restrictions.
examples
    Builders for the standard example classes.
cli
    Command-line front end.
"""
from .algebra import AlgebraDescriptor, AlgebraError, Density, Element
from .examples import build, shipped_examples
from .gradient import QuantumGradient
from .quasientropy import RepresentingFunction, logarithmic
from .transport import DiscretePath, TransportOptions, TransportResult, distance

__version__ = "0.1.0"

__all__ = [
    "AlgebraDescriptor", "AlgebraError", "Density", "Element", "QuantumGradient",
    "RepresentingFunction", "logarithmic", "DiscretePath", "TransportOptions", "TransportResult",
    "distance", "build", "shipped_examples",
]
