"""Minimax decisions under prior ambiguity and likelihood misspecification.

Exponentially tilted risk criteria, Gaussian limit-experiment solutions,
a least-favourable-prior game solver and a Monte Carlo harness for
finite-sample plug-in rules.
"""

from __future__ import annotations

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = ["__version__"]
