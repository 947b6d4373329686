"""Solid-angle potentials of closed codimension-2 submanifolds.

The package evaluates the circle-valued potential of a closed oriented
curve in R^3 (or parametrized 2-torus in R^4), validates it against
closed-form circle oracles, and extracts level sets as triangle-meshed
Seifert surfaces with boundary on the input manifold.
"""

__version__ = "0.1.0"
