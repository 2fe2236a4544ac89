"""Bayesian multilevel estimation of census under-coverage from a post-enumeration survey."""

from .backend import NAME as BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
