"""Continuum Potts-gas numerics: mean-field phase diagram, coarse-grained
free-energy minimization, transport bounds, restricted-ensemble Monte Carlo
and disagreement-coupling experiments."""

from . import meanfield

__version__ = "0.1.0"
__all__ = ["meanfield", "__version__"]
