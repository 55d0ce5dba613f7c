"""Recurrent diffusive random walks on a strip: hierarchy, harmonic coordinates, Green functions and limit-theorem experiments."""
__version__ = "0.1.0"
