"""Discrete-event model of PBE-CC congestion control over cellular links."""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
