"""Causal-boosted self-attention sequential recommendation.

Modules: ``numerics`` (tensors, autodiff, expm), ``dataio``, ``model``,
``causal``, ``training``, ``evaluation``, ``scmlab`` and ``cli``.
"""

from .kernels import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
