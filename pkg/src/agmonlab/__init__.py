"""Numerical laboratory for semi-classical magnetic Schroedinger operators.

Submodules are imported on demand so ``agmonlab.cli`` can pin BLAS thread
counts before numpy is loaded.
"""

__version__ = "0.1.0"

REPORT_SCHEMA = 1
