"""Gaussian random-field representations and multilevel MCMC for a plane-stress inverse problem."""

from mlmcmc.grid import Field, RectGrid

__version__ = "0.1.0"

__all__ = ["Field", "RectGrid", "__version__"]
