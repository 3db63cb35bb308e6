"""Generalized-Newtonian fluid in a domain bounded by a linearly elastic Koiter shell.

Submodules: ``geometry`` (reference surfaces, Hanzawa map), ``shell_energy``
(Koiter energy and modal bases), ``stress_law`` (shear-dependent stress),
``transform`` (pullback quadrature and Piola pushforward), ``compat_ops``
(regularizers and compatibility corrections), ``galerkin_core`` (coupled
Galerkin stepper and energy ledger), ``coupler`` (fixed point and
continuation) and ``cli``.
"""

from .errors import (CertificationFailure, ConfigurationError, DomainDegenerationError,
                     GeometryError, KfsiError, SolverError)

__version__ = "0.1.0"

__all__ = ["CertificationFailure", "ConfigurationError", "DomainDegenerationError",
           "GeometryError", "KfsiError", "SolverError", "__version__"]
