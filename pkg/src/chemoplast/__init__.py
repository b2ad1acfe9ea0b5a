"""Chemo-elasto-plastic diffusion-deformation simulator for spherical particles."""

from .params import (DimensionlessParams, ParameterError, PhysicalParams,
                     nondimensionalize, redimensionalize)

__all__ = ["PhysicalParams", "DimensionlessParams", "ParameterError",
           "nondimensionalize", "redimensionalize"]
__version__ = "0.1.0"
