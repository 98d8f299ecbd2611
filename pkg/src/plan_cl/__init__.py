"""Continual learning with proactively allocated low-rank adapters on small dense networks."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
